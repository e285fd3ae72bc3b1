// SPDX-License-Identifier: Apache-2.0
//
// Bidirectional transformer denoiser p(z0 | z_t) with timestep conditioning,
// its reverse-mode gradient, Adam, and checkpoints.
//
// Architecture: token embedding (V + 1 rows, the last for the mask), learned
// absolute positions, a sinusoidal timestep embedding projected by a linear
// layer (or a learned per-step table) added to every position, pre-norm
// residual blocks with multi-head self-attention (no causal mask) and a GELU
// feed-forward, final layer norm and a projection to V logits.
#ifndef ORDIFF_DENOISER_HPP_
#define ORDIFF_DENOISER_HPP_

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <functional>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>
#include <zlib.h>

#include "ordiff/corpus.hpp"
#include "ordiff/diffusion.hpp"
#include "ordiff/error.hpp"
#include "ordiff/schedule.hpp"
#include "ordiff/util.hpp"

namespace ordiff {

struct DenoiserConfig {
    int layers = 2;
    int model_dim = 64;
    int heads = 4;
    int ff_dim = 256;
    int vocab = 0;
    int max_len = 32;
    int T = 16;
    bool learned_time = false;
    double dropout = 0.0;
    std::uint64_t seed = 0;

    void validate() const {
        if (layers < 1 || model_dim < 1 || heads < 1 || ff_dim < 1 || vocab < 1 || max_len < 1 || T < 1)
            throw Error(Errc::bad_config, "all model sizes must be >= 1");
        if (model_dim % heads != 0) throw Error(Errc::bad_config, "model_dim must be divisible by heads");
        if (!(dropout >= 0.0 && dropout < 1.0)) throw Error(Errc::bad_config, "dropout must be in [0,1)");
    }

    bool operator==(const DenoiserConfig&) const = default;
};

inline void to_json(nlohmann::json& j, const DenoiserConfig& c) {
    j = {{"layers", c.layers}, {"model_dim", c.model_dim}, {"heads", c.heads}, {"ff_dim", c.ff_dim},
         {"vocab", c.vocab}, {"max_len", c.max_len}, {"T", c.T},
         {"time_embedding", c.learned_time ? "learned" : "sinusoidal"}, {"dropout", c.dropout}, {"seed", c.seed}};
}

inline void from_json(const nlohmann::json& j, DenoiserConfig& c) {
    DenoiserConfig d;
    c.layers = j.value("layers", d.layers);
    c.model_dim = j.value("model_dim", d.model_dim);
    c.heads = j.value("heads", d.heads);
    c.ff_dim = j.value("ff_dim", d.ff_dim);
    c.vocab = j.value("vocab", d.vocab);
    c.max_len = j.value("max_len", d.max_len);
    c.T = j.value("T", d.T);
    c.learned_time = j.value("time_embedding", std::string("sinusoidal")) == "learned";
    c.dropout = j.value("dropout", d.dropout);
    c.seed = j.value("seed", d.seed);
}

template <class S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <class S>
struct LayerParams {
    Mat<S> ln1_g, ln1_b, w_qkv, b_qkv, w_o, b_o, ln2_g, ln2_b, w_ff1, b_ff1, w_ff2, b_ff2;
};

/// Named tensors; shapes follow from the config alone. Row vectors are 1 x n.
template <class S>
struct Parameters {
    Mat<S> tok_emb, pos_emb, time_w, time_b, time_table;
    std::vector<LayerParams<S>> layers;
    Mat<S> lnf_g, lnf_b, w_out, b_out;

    /// Calls f(name, tensor) for every nonempty tensor in a fixed order.
    template <class Self, class F>
    static void visit_impl(Self& self, F&& f) {
        auto v = [&](const std::string& n, auto& m) {
            if (m.size() > 0) f(n, m);
        };
        v("tok_emb", self.tok_emb);
        v("pos_emb", self.pos_emb);
        v("time_w", self.time_w);
        v("time_b", self.time_b);
        v("time_table", self.time_table);
        for (std::size_t l = 0; l < self.layers.size(); ++l) {
            auto& L = self.layers[l];
            const std::string p = "layer" + std::to_string(l) + ".";
            v(p + "ln1_g", L.ln1_g);
            v(p + "ln1_b", L.ln1_b);
            v(p + "w_qkv", L.w_qkv);
            v(p + "b_qkv", L.b_qkv);
            v(p + "w_o", L.w_o);
            v(p + "b_o", L.b_o);
            v(p + "ln2_g", L.ln2_g);
            v(p + "ln2_b", L.ln2_b);
            v(p + "w_ff1", L.w_ff1);
            v(p + "b_ff1", L.b_ff1);
            v(p + "w_ff2", L.w_ff2);
            v(p + "b_ff2", L.b_ff2);
        }
        v("lnf_g", self.lnf_g);
        v("lnf_b", self.lnf_b);
        v("w_out", self.w_out);
        v("b_out", self.b_out);
    }
    template <class F> void visit(F&& f) { visit_impl(*this, std::forward<F>(f)); }
    template <class F> void visit(F&& f) const { visit_impl(*this, std::forward<F>(f)); }

    std::vector<Mat<S>*> tensors() {
        std::vector<Mat<S>*> out;
        visit([&](const std::string&, Mat<S>& m) { out.push_back(&m); });
        return out;
    }
    std::vector<const Mat<S>*> tensors() const {
        std::vector<const Mat<S>*> out;
        visit([&](const std::string&, const Mat<S>& m) { out.push_back(&m); });
        return out;
    }

    std::size_t count() const {
        std::size_t n = 0;
        visit([&](const std::string&, const Mat<S>& m) { n += static_cast<std::size_t>(m.size()); });
        return n;
    }

    Parameters zeros_like() const {
        Parameters z = *this;
        z.visit([](const std::string&, Mat<S>& m) { m.setZero(); });
        return z;
    }

    bool all_finite() const {
        bool ok = true;
        visit([&](const std::string&, const Mat<S>& m) { ok = ok && m.allFinite(); });
        return ok;
    }

    template <class S2>
    Parameters<S2> cast() const {
        Parameters<S2> out;
        auto src = tensors();
        out = shape_only<S2>();
        auto dst = out.tensors();
        for (std::size_t i = 0; i < src.size(); ++i) *dst[i] = src[i]->template cast<S2>();
        return out;
    }

    template <class S2>
    Parameters<S2> shape_only() const {
        Parameters<S2> out;
        auto sh = [](const Mat<S>& m) { return Mat<S2>(m.rows(), m.cols()); };
        out.tok_emb = sh(tok_emb);
        out.pos_emb = sh(pos_emb);
        out.time_w = sh(time_w);
        out.time_b = sh(time_b);
        out.time_table = sh(time_table);
        for (const auto& L : layers)
            out.layers.push_back({sh(L.ln1_g), sh(L.ln1_b), sh(L.w_qkv), sh(L.b_qkv), sh(L.w_o), sh(L.b_o),
                                  sh(L.ln2_g), sh(L.ln2_b), sh(L.w_ff1), sh(L.b_ff1), sh(L.w_ff2), sh(L.b_ff2)});
        out.lnf_g = sh(lnf_g);
        out.lnf_b = sh(lnf_b);
        out.w_out = sh(w_out);
        out.b_out = sh(b_out);
        return out;
    }
};

namespace detail {
template <class S>
Mat<S> normal_init(Eigen::Index rows, Eigen::Index cols, double scale, Rng& rng) {
    Mat<S> m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<S>(scale * standard_normal(rng));
    return m;
}
template <class S>
Mat<S> constant(Eigen::Index rows, Eigen::Index cols, S v) {
    return Mat<S>::Constant(rows, cols, v);
}
} // namespace detail

/// Deterministic per seed; weights ~ N(0, 1/fan_in) (embedding tables have
/// fan_in 1), biases zero, layer-norm gains one.
template <class S = float>
Parameters<S> init_parameters(const DenoiserConfig& cfg) {
    cfg.validate();
    Rng rng(cfg.seed);
    const int d = cfg.model_dim;
    const double s_d = 1.0 / std::sqrt(static_cast<double>(d));
    const double s_ff = 1.0 / std::sqrt(static_cast<double>(cfg.ff_dim));
    Parameters<S> p;
    p.tok_emb = detail::normal_init<S>(cfg.vocab + 1, d, 1.0, rng);
    p.pos_emb = detail::normal_init<S>(cfg.max_len, d, 1.0, rng);
    if (cfg.learned_time) {
        p.time_table = detail::normal_init<S>(cfg.T + 1, d, 1.0, rng);
    } else {
        p.time_w = detail::normal_init<S>(d, d, s_d, rng);
        p.time_b = detail::constant<S>(1, d, S(0));
    }
    for (int l = 0; l < cfg.layers; ++l) {
        LayerParams<S> L;
        L.ln1_g = detail::constant<S>(1, d, S(1));
        L.ln1_b = detail::constant<S>(1, d, S(0));
        L.w_qkv = detail::normal_init<S>(d, 3 * d, s_d, rng);
        L.b_qkv = detail::constant<S>(1, 3 * d, S(0));
        L.w_o = detail::normal_init<S>(d, d, s_d, rng);
        L.b_o = detail::constant<S>(1, d, S(0));
        L.ln2_g = detail::constant<S>(1, d, S(1));
        L.ln2_b = detail::constant<S>(1, d, S(0));
        L.w_ff1 = detail::normal_init<S>(d, cfg.ff_dim, s_d, rng);
        L.b_ff1 = detail::constant<S>(1, cfg.ff_dim, S(0));
        L.w_ff2 = detail::normal_init<S>(cfg.ff_dim, d, s_ff, rng);
        L.b_ff2 = detail::constant<S>(1, d, S(0));
        p.layers.push_back(std::move(L));
    }
    p.lnf_g = detail::constant<S>(1, d, S(1));
    p.lnf_b = detail::constant<S>(1, d, S(0));
    p.w_out = detail::normal_init<S>(d, cfg.vocab, s_d, rng);
    p.b_out = detail::constant<S>(1, cfg.vocab, S(0));
    return p;
}

/// Sinusoidal features of a timestep, 1 x dim.
template <class S>
Mat<S> timestep_features(int t, int dim) {
    Mat<S> f(1, dim);
    const int half = dim / 2;
    for (int k = 0; k < dim; ++k) {
        const int j = k < half ? k : k - half;
        const double freq = std::pow(10000.0, -2.0 * j / std::max(dim, 2));
        f(0, k) = static_cast<S>(k < half ? std::sin(t * freq) : std::cos(t * freq));
    }
    return f;
}

/// A batch for the training loss: clean sequences, their timesteps and the
/// corrupted inputs.
struct DiffusionBatch {
    std::vector<TokenSequence> z0;
    std::vector<int> t;
    std::vector<std::vector<int>> zt;
};

inline DiffusionBatch make_diffusion_batch(std::vector<TokenSequence> z0, const ScheduleTable& table, Rng& rng) {
    DiffusionBatch b;
    b.z0 = std::move(z0);
    for (const auto& s : b.z0) {
        const int t = 1 + static_cast<int>(uniform_index(rng, static_cast<std::size_t>(table.T)));
        b.t.push_back(t);
        b.zt.push_back(forward_sample(s.ids, t, table, rng));
    }
    return b;
}

template <class S>
struct LossGrad {
    double loss = 0.0; // nats per token
    Parameters<S> grads;
};

template <class S = float>
class Transformer {
public:
    Transformer(DenoiserConfig cfg, Parameters<S> params) : cfg_(std::move(cfg)), params_(std::move(params)) {
        cfg_.validate();
    }
    explicit Transformer(const DenoiserConfig& cfg) : Transformer(cfg, init_parameters<S>(cfg)) {}

    const DenoiserConfig& config() const noexcept { return cfg_; }
    const Parameters<S>& params() const noexcept { return params_; }
    Parameters<S>& params() noexcept { return params_; }

    /// Softmax over the V categories at every position.
    DenoiserOutput predict(std::span<const int> zt, int t) const {
        const std::vector<std::span<const int>> seqs{zt};
        const std::vector<int> ts{t};
        Cache cache;
        forward(seqs, ts, cache, nullptr);
        DenoiserOutput out;
        out.probs = cache.logits.template cast<double>();
        for (Eigen::Index i = 0; i < out.probs.rows(); ++i) {
            auto r = out.probs.row(i);
            r.array() -= r.maxCoeff();
            r = r.array().exp().matrix();
            r /= r.sum();
        }
        return out;
    }

    /// Stochastic NELBO of the batch (T-weighted masked-position terms per
    /// token) and its exact gradient.
    LossGrad<S> loss_grad(const DiffusionBatch& batch, const ScheduleTable& table, Rng* dropout_rng = nullptr) const {
        if (table.V != cfg_.vocab || table.T != cfg_.T)
            throw Error(Errc::incompatible_schedule, "schedule V/T differ from the model config");
        std::vector<std::span<const int>> seqs;
        std::size_t tokens = 0;
        for (std::size_t b = 0; b < batch.zt.size(); ++b) {
            seqs.emplace_back(batch.zt[b]);
            tokens += batch.zt[b].size();
        }
        Cache cache;
        forward(seqs, batch.t, cache, cfg_.dropout > 0.0 ? dropout_rng : nullptr);

        Mat<S> dlogits = Mat<S>::Zero(cache.logits.rows(), cache.logits.cols());
        double loss = 0.0;
        const double scale = static_cast<double>(table.T) / static_cast<double>(tokens);
        std::vector<double> p(static_cast<std::size_t>(cfg_.vocab)), g(static_cast<std::size_t>(cfg_.vocab));
        Eigen::Index row = 0;
        for (std::size_t b = 0; b < batch.zt.size(); ++b) {
            const int t = batch.t[b];
            for (std::size_t i = 0; i < batch.zt[b].size(); ++i, ++row) {
                if (batch.zt[b][i] != table.V) continue;
                // Softmax restricted to categories that can be masked at t.
                double mx = -std::numeric_limits<double>::infinity();
                for (int c = 0; c < cfg_.vocab; ++c)
                    if (table.at(t, c) > 0.0) mx = std::max(mx, static_cast<double>(cache.logits(row, c)));
                double z = 0.0;
                for (int c = 0; c < cfg_.vocab; ++c) {
                    const auto uc = static_cast<std::size_t>(c);
                    p[uc] = table.at(t, c) > 0.0 ? std::exp(static_cast<double>(cache.logits(row, c)) - mx) : 0.0;
                    z += p[uc];
                }
                for (auto& v : p) v /= z;
                const double kl = masked_position_kl(p, batch.z0[b].ids[i], t, table, g);
                loss += scale * kl;
                double pg = 0.0;
                for (int c = 0; c < cfg_.vocab; ++c) pg += p[static_cast<std::size_t>(c)] * g[static_cast<std::size_t>(c)];
                for (int c = 0; c < cfg_.vocab; ++c) {
                    const auto uc = static_cast<std::size_t>(c);
                    if (p[uc] > 0.0) dlogits(row, c) = static_cast<S>(scale * p[uc] * (g[uc] - pg));
                }
            }
        }
        if (!std::isfinite(loss)) throw Error(Errc::non_finite_loss, "loss is not finite");
        LossGrad<S> out{loss, params_.zeros_like()};
        backward(cache, dlogits, out.grads);
        return out;
    }

private:
    struct LayerCache {
        Mat<S> x_in, xhat1, h1, qkv, att, x_mid, xhat2, h2, u, g;
        Eigen::Matrix<S, Eigen::Dynamic, 1> rstd1, rstd2;
        std::vector<Mat<S>> probs; // per (sequence, head)
        Mat<S> drop_att, drop_ff;  // empty when dropout is off
    };
    struct Cache {
        std::vector<std::span<const int>> seqs;
        std::vector<int> ts;
        Eigen::Index L = 0, B = 0;
        std::vector<LayerCache> layers;
        Mat<S> x_final, xhatf, hf, logits;
        Eigen::Matrix<S, Eigen::Dynamic, 1> rstdf;
    };

    static constexpr double kLnEps = 1e-5;

    static void layer_norm(const Mat<S>& x, const Mat<S>& gain, const Mat<S>& bias, Mat<S>& xhat,
                           Eigen::Matrix<S, Eigen::Dynamic, 1>& rstd, Mat<S>& y) {
        const Eigen::Index n = x.rows(), d = x.cols();
        xhat.resize(n, d);
        rstd.resize(n);
        for (Eigen::Index i = 0; i < n; ++i) {
            const S mu = x.row(i).mean();
            const auto centered = (x.row(i).array() - mu).eval();
            const S var = centered.square().mean();
            rstd(i) = S(1) / std::sqrt(var + static_cast<S>(kLnEps));
            xhat.row(i) = centered * rstd(i);
        }
        y = (xhat.array().rowwise() * gain.row(0).array()).rowwise() + bias.row(0).array();
    }

    static Mat<S> layer_norm_backward(const Mat<S>& dy, const Mat<S>& xhat, const Eigen::Matrix<S, Eigen::Dynamic, 1>& rstd,
                                      const Mat<S>& gain, Mat<S>& dgain, Mat<S>& dbias) {
        dgain.row(0) += (dy.array() * xhat.array()).colwise().sum().matrix();
        dbias.row(0) += dy.colwise().sum();
        const Mat<S> dxhat = (dy.array().rowwise() * gain.row(0).array()).matrix();
        Mat<S> dx(dy.rows(), dy.cols());
        const S inv_d = S(1) / static_cast<S>(dy.cols());
        for (Eigen::Index i = 0; i < dy.rows(); ++i) {
            const S m1 = dxhat.row(i).sum() * inv_d;
            const S m2 = dxhat.row(i).dot(xhat.row(i)) * inv_d;
            dx.row(i) = rstd(i) * (dxhat.row(i).array() - m1 - xhat.row(i).array() * m2).matrix();
        }
        return dx;
    }

    static S gelu(S u) { return S(0.5) * u * (S(1) + std::erf(u * static_cast<S>(std::numbers::sqrt2 / 2))); }
    static S gelu_grad(S u) {
        const S cdf = S(0.5) * (S(1) + std::erf(u * static_cast<S>(std::numbers::sqrt2 / 2)));
        const S pdf = std::exp(S(-0.5) * u * u) * static_cast<S>(0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2);
        return cdf + u * pdf;
    }

    Mat<S> dropout_mask(Eigen::Index rows, Eigen::Index cols, Rng& rng) const {
        Mat<S> m(rows, cols);
        const S keep = static_cast<S>(1.0 / (1.0 - cfg_.dropout));
        for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = uniform01(rng) < cfg_.dropout ? S(0) : keep;
        return m;
    }

    void forward(const std::vector<std::span<const int>>& seqs, const std::vector<int>& ts, Cache& c, Rng* drop) const {
        const int d = cfg_.model_dim, H = cfg_.heads, dh = d / H;
        c.seqs = seqs;
        c.ts = ts;
        c.B = static_cast<Eigen::Index>(seqs.size());
        c.L = c.B ? static_cast<Eigen::Index>(seqs.front().size()) : 0;
        if (c.L > cfg_.max_len) throw Error(Errc::length_exceeded, "sequence longer than max_len");
        const Eigen::Index N = c.B * c.L;
        Mat<S> x(N, d);
        for (Eigen::Index b = 0; b < c.B; ++b) {
            if (static_cast<Eigen::Index>(seqs[static_cast<std::size_t>(b)].size()) != c.L)
                throw Error(Errc::shape_mismatch, "batch sequences must share a length");
            const int t = ts[static_cast<std::size_t>(b)];
            if (t < 0 || t > cfg_.T) throw Error(Errc::bad_timestep, "t=" + std::to_string(t));
            const Mat<S> temb = cfg_.learned_time ? Mat<S>(params_.time_table.row(t))
                                                  : Mat<S>(timestep_features<S>(t, d) * params_.time_w + params_.time_b);
            for (Eigen::Index i = 0; i < c.L; ++i) {
                const int id = seqs[static_cast<std::size_t>(b)][static_cast<std::size_t>(i)];
                if (id < 0 || id > cfg_.vocab) throw Error(Errc::unknown_id, "id " + std::to_string(id));
                x.row(b * c.L + i) = params_.tok_emb.row(id) + params_.pos_emb.row(i) + temb.row(0);
            }
        }
        const S scale = static_cast<S>(1.0 / std::sqrt(static_cast<double>(dh)));
        c.layers.resize(params_.layers.size());
        for (std::size_t l = 0; l < params_.layers.size(); ++l) {
            const auto& P = params_.layers[l];
            auto& lc = c.layers[l];
            lc.x_in = x;
            layer_norm(x, P.ln1_g, P.ln1_b, lc.xhat1, lc.rstd1, lc.h1);
            lc.qkv = (lc.h1 * P.w_qkv).rowwise() + P.b_qkv.row(0);
            lc.att.resize(N, d);
            lc.probs.resize(static_cast<std::size_t>(c.B * H));
            for (Eigen::Index b = 0; b < c.B; ++b) {
                for (int h = 0; h < H; ++h) {
                    const auto Q = lc.qkv.block(b * c.L, h * dh, c.L, dh);
                    const auto K = lc.qkv.block(b * c.L, d + h * dh, c.L, dh);
                    const auto V = lc.qkv.block(b * c.L, 2 * d + h * dh, c.L, dh);
                    Mat<S> A = (Q * K.transpose()) * scale;
                    for (Eigen::Index i = 0; i < A.rows(); ++i) {
                        auto r = A.row(i);
                        r.array() -= r.maxCoeff();
                        r = r.array().exp().matrix();
                        r /= r.sum();
                    }
                    lc.att.block(b * c.L, h * dh, c.L, dh) = A * V;
                    lc.probs[static_cast<std::size_t>(b * H + h)] = std::move(A);
                }
            }
            Mat<S> att_out = (lc.att * P.w_o).rowwise() + P.b_o.row(0);
            if (drop) {
                lc.drop_att = dropout_mask(N, d, *drop);
                att_out.array() *= lc.drop_att.array();
            }
            lc.x_mid = x + att_out;
            layer_norm(lc.x_mid, P.ln2_g, P.ln2_b, lc.xhat2, lc.rstd2, lc.h2);
            lc.u = (lc.h2 * P.w_ff1).rowwise() + P.b_ff1.row(0);
            lc.g = lc.u.unaryExpr([](S v) { return gelu(v); });
            Mat<S> ff_out = (lc.g * P.w_ff2).rowwise() + P.b_ff2.row(0);
            if (drop) {
                lc.drop_ff = dropout_mask(N, d, *drop);
                ff_out.array() *= lc.drop_ff.array();
            }
            x = lc.x_mid + ff_out;
        }
        c.x_final = x;
        layer_norm(x, params_.lnf_g, params_.lnf_b, c.xhatf, c.rstdf, c.hf);
        c.logits = (c.hf * params_.w_out).rowwise() + params_.b_out.row(0);
    }

    void backward(const Cache& c, const Mat<S>& dlogits, Parameters<S>& G) const {
        const int d = cfg_.model_dim, H = cfg_.heads, dh = d / H;
        const S scale = static_cast<S>(1.0 / std::sqrt(static_cast<double>(dh)));
        G.w_out.noalias() += c.hf.transpose() * dlogits;
        G.b_out.row(0) += dlogits.colwise().sum();
        Mat<S> dhf = dlogits * params_.w_out.transpose();
        Mat<S> dx = layer_norm_backward(dhf, c.xhatf, c.rstdf, params_.lnf_g, G.lnf_g, G.lnf_b);

        for (std::size_t l = params_.layers.size(); l-- > 0;) {
            const auto& P = params_.layers[l];
            auto& GL = G.layers[l];
            const auto& lc = c.layers[l];
            // Feed-forward branch.
            Mat<S> dff = dx;
            if (lc.drop_ff.size() > 0) dff.array() *= lc.drop_ff.array();
            GL.w_ff2.noalias() += lc.g.transpose() * dff;
            GL.b_ff2.row(0) += dff.colwise().sum();
            Mat<S> du = dff * P.w_ff2.transpose();
            du.array() *= lc.u.unaryExpr([](S v) { return gelu_grad(v); }).array();
            GL.w_ff1.noalias() += lc.h2.transpose() * du;
            GL.b_ff1.row(0) += du.colwise().sum();
            const Mat<S> dh2 = du * P.w_ff1.transpose();
            Mat<S> dx_mid = dx + layer_norm_backward(dh2, lc.xhat2, lc.rstd2, P.ln2_g, GL.ln2_g, GL.ln2_b);
            // Attention branch.
            Mat<S> datt_out = dx_mid;
            if (lc.drop_att.size() > 0) datt_out.array() *= lc.drop_att.array();
            GL.w_o.noalias() += lc.att.transpose() * datt_out;
            GL.b_o.row(0) += datt_out.colwise().sum();
            const Mat<S> datt = datt_out * P.w_o.transpose();
            Mat<S> dqkv(lc.qkv.rows(), lc.qkv.cols());
            for (Eigen::Index b = 0; b < c.B; ++b) {
                for (int h = 0; h < H; ++h) {
                    const auto Q = lc.qkv.block(b * c.L, h * dh, c.L, dh);
                    const auto K = lc.qkv.block(b * c.L, d + h * dh, c.L, dh);
                    const auto V = lc.qkv.block(b * c.L, 2 * d + h * dh, c.L, dh);
                    const Mat<S>& A = lc.probs[static_cast<std::size_t>(b * H + h)];
                    const auto dO = datt.block(b * c.L, h * dh, c.L, dh);
                    const Mat<S> dA = dO * V.transpose();
                    Mat<S> dS = A.array() * (dA.array().colwise() - (dA.array() * A.array()).rowwise().sum());
                    dS *= scale;
                    dqkv.block(b * c.L, h * dh, c.L, dh) = dS * K;
                    dqkv.block(b * c.L, d + h * dh, c.L, dh) = dS.transpose() * Q;
                    dqkv.block(b * c.L, 2 * d + h * dh, c.L, dh) = A.transpose() * dO;
                }
            }
            GL.w_qkv.noalias() += lc.h1.transpose() * dqkv;
            GL.b_qkv.row(0) += dqkv.colwise().sum();
            const Mat<S> dh1 = dqkv * P.w_qkv.transpose();
            dx = dx_mid + layer_norm_backward(dh1, lc.xhat1, lc.rstd1, P.ln1_g, GL.ln1_g, GL.ln1_b);
        }
        // Embeddings.
        for (Eigen::Index b = 0; b < c.B; ++b) {
            Mat<S> dtemb = Mat<S>::Zero(1, d);
            for (Eigen::Index i = 0; i < c.L; ++i) {
                const auto r = dx.row(b * c.L + i);
                G.tok_emb.row(c.seqs[static_cast<std::size_t>(b)][static_cast<std::size_t>(i)]) += r;
                G.pos_emb.row(i) += r;
                dtemb.row(0) += r;
            }
            const int t = c.ts[static_cast<std::size_t>(b)];
            if (cfg_.learned_time) {
                G.time_table.row(t) += dtemb.row(0);
            } else {
                G.time_w.noalias() += timestep_features<S>(t, d).transpose() * dtemb;
                G.time_b += dtemb;
            }
        }
    }

    DenoiserConfig cfg_;
    Parameters<S> params_;
};

/// Predicts the uniform distribution everywhere.
struct UniformDenoiser {
    int vocab = 1;
    DenoiserOutput predict(std::span<const int> zt, int) const {
        DenoiserOutput out;
        out.probs = Eigen::MatrixXd::Constant(static_cast<Eigen::Index>(zt.size()), vocab, 1.0 / vocab);
        return out;
    }
};

// ---------------------------------------------------------------------------
// Adam

template <class S>
struct OptState {
    Parameters<S> m, v;
    long step = 0;
    double lr = 3e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    static OptState for_params(const Parameters<S>& p, double lr = 3e-4) {
        OptState s;
        s.m = p.zeros_like();
        s.v = p.zeros_like();
        s.lr = lr;
        return s;
    }
};

/// One bias-corrected Adam update in place.
template <class S>
void opt_step(Parameters<S>& params, const Parameters<S>& grads, OptState<S>& st) {
    auto P = params.tensors();
    auto Gr = grads.tensors();
    auto M = st.m.tensors();
    auto Vv = st.v.tensors();
    if (P.size() != Gr.size() || P.size() != M.size() || P.size() != Vv.size())
        throw Error(Errc::shape_mismatch, "parameter, gradient and moment sets differ");
    for (std::size_t i = 0; i < P.size(); ++i)
        if (P[i]->rows() != Gr[i]->rows() || P[i]->cols() != Gr[i]->cols() || P[i]->rows() != M[i]->rows() ||
            P[i]->cols() != M[i]->cols() || P[i]->rows() != Vv[i]->rows() || P[i]->cols() != Vv[i]->cols())
            throw Error(Errc::shape_mismatch, "tensor " + std::to_string(i) + " shape differs");
    ++st.step;
    const double bc1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.step));
    const double bc2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.step));
    const S b1 = static_cast<S>(st.beta1), b2 = static_cast<S>(st.beta2);
    const S step_size = static_cast<S>(st.lr / bc1);
    const S inv_sqrt_bc2 = static_cast<S>(1.0 / std::sqrt(bc2));
    const S eps = static_cast<S>(st.eps);
    for (std::size_t i = 0; i < P.size(); ++i) {
        M[i]->array() = b1 * M[i]->array() + (S(1) - b1) * Gr[i]->array();
        Vv[i]->array() = b2 * Vv[i]->array() + (S(1) - b2) * Gr[i]->array().square();
        P[i]->array() -= step_size * M[i]->array() / (Vv[i]->array().sqrt() * inv_sqrt_bc2 + eps);
    }
}

template <class S>
double grad_norm(const Parameters<S>& g) {
    double s = 0.0;
    g.visit([&](const std::string&, const Mat<S>& m) { s += m.template cast<double>().squaredNorm(); });
    return std::sqrt(s);
}

template <class S>
void scale_grads(Parameters<S>& g, double factor) {
    g.visit([&](const std::string&, Mat<S>& m) { m *= static_cast<S>(factor); });
}

// ---------------------------------------------------------------------------
// Checkpoints: "ODCK", u32 version, u32 length + JSON metadata (model config
// under "model"), u32 tensor count, then per tensor (u32 name length, name,
// u32 rank, u32 dims..., f32 data), and a trailing CRC32 of everything
// before it.

inline constexpr std::uint32_t kCheckpointVersion = 1;

template <class S>
struct Checkpoint {
    nlohmann::json meta;
    DenoiserConfig config;
    Parameters<S> params;
    std::optional<OptState<S>> opt;
};

namespace detail {
inline void append_u32(std::string& buf, std::uint32_t v) { buf.append(reinterpret_cast<const char*>(&v), 4); }

class Reader {
public:
    explicit Reader(std::string_view data) : data_(data) {}
    std::uint32_t u32() {
        std::uint32_t v;
        std::memcpy(&v, take(4).data(), 4);
        return v;
    }
    std::string_view take(std::size_t n) {
        if (pos_ + n > data_.size()) throw Error(Errc::corrupt_file, "checkpoint truncated");
        auto out = data_.substr(pos_, n);
        pos_ += n;
        return out;
    }
    bool done() const { return pos_ == data_.size(); }

private:
    std::string_view data_;
    std::size_t pos_ = 0;
};

template <class S>
void append_tensor(std::string& buf, const std::string& name, const Mat<S>& m) {
    append_u32(buf, static_cast<std::uint32_t>(name.size()));
    buf += name;
    append_u32(buf, 2);
    append_u32(buf, static_cast<std::uint32_t>(m.rows()));
    append_u32(buf, static_cast<std::uint32_t>(m.cols()));
    for (Eigen::Index i = 0; i < m.size(); ++i) {
        const float f = static_cast<float>(m.data()[i]);
        buf.append(reinterpret_cast<const char*>(&f), 4);
    }
}
} // namespace detail

inline std::uint32_t crc32_of(std::string_view data) {
    return static_cast<std::uint32_t>(::crc32(0L, reinterpret_cast<const Bytef*>(data.data()), static_cast<uInt>(data.size())));
}

template <class S>
void save_checkpoint(const std::string& path, const DenoiserConfig& cfg, const Parameters<S>& params,
                     const OptState<S>* opt = nullptr, nlohmann::json extra = nlohmann::json::object()) {
    nlohmann::json meta = std::move(extra);
    meta["model"] = cfg;
    if (opt) meta["opt"] = {{"step", opt->step}, {"lr", opt->lr}, {"beta1", opt->beta1}, {"beta2", opt->beta2}, {"eps", opt->eps}};
    const std::string js = meta.dump();
    std::string buf = "ODCK";
    detail::append_u32(buf, kCheckpointVersion);
    detail::append_u32(buf, static_cast<std::uint32_t>(js.size()));
    buf += js;
    std::vector<std::pair<std::string, const Mat<S>*>> items;
    params.visit([&](const std::string& n, const Mat<S>& m) { items.emplace_back(n, &m); });
    if (opt) {
        opt->m.visit([&](const std::string& n, const Mat<S>& m) { items.emplace_back("adam.m/" + n, &m); });
        opt->v.visit([&](const std::string& n, const Mat<S>& m) { items.emplace_back("adam.v/" + n, &m); });
    }
    detail::append_u32(buf, static_cast<std::uint32_t>(items.size()));
    for (const auto& [n, m] : items) detail::append_tensor(buf, n, *m);
    detail::append_u32(buf, crc32_of(buf));
    std::ofstream os(path, std::ios::binary);
    if (!os || !os.write(buf.data(), static_cast<std::streamsize>(buf.size())))
        throw Error(Errc::io_error, "cannot write " + path);
}

/// Loads and verifies a checkpoint. When `expected` is given the embedded
/// model config must match it.
template <class S = float>
Checkpoint<S> load_checkpoint(const std::string& path, const DenoiserConfig* expected = nullptr) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw Error(Errc::io_error, "cannot read " + path);
    const std::string buf((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    if (buf.size() < 16 || buf.compare(0, 4, "ODCK") != 0) throw Error(Errc::corrupt_file, "bad checkpoint magic");
    std::uint32_t stored;
    std::memcpy(&stored, buf.data() + buf.size() - 4, 4);
    const std::string_view body(buf.data(), buf.size() - 4);
    if (crc32_of(body) != stored) throw Error(Errc::corrupt_file, "checksum mismatch");
    detail::Reader rd(body);
    rd.take(4);
    if (rd.u32() != kCheckpointVersion) throw Error(Errc::version_mismatch, "unsupported checkpoint version");
    Checkpoint<S> ck;
    const auto js = rd.take(rd.u32());
    try {
        ck.meta = nlohmann::json::parse(js);
        ck.config = ck.meta.at("model").template get<DenoiserConfig>();
    } catch (const nlohmann::json::exception& e) {
        throw Error(Errc::corrupt_file, std::string("metadata: ") + e.what());
    }
    if (expected && !(*expected == ck.config)) throw Error(Errc::version_mismatch, "checkpoint config differs from the requested model");
    ck.params = init_parameters<S>(ck.config);
    std::unordered_map<std::string, Mat<S>*> slots;
    ck.params.visit([&](const std::string& n, Mat<S>& m) { slots[n] = &m; });
    if (ck.meta.contains("opt")) {
        OptState<S> o = OptState<S>::for_params(ck.params);
        const auto& oj = ck.meta["opt"];
        o.step = oj.at("step").template get<long>();
        o.lr = oj.at("lr").template get<double>();
        o.beta1 = oj.at("beta1").template get<double>();
        o.beta2 = oj.at("beta2").template get<double>();
        o.eps = oj.at("eps").template get<double>();
        ck.opt = std::move(o);
        ck.opt->m.visit([&](const std::string& n, Mat<S>& m) { slots["adam.m/" + n] = &m; });
        ck.opt->v.visit([&](const std::string& n, Mat<S>& m) { slots["adam.v/" + n] = &m; });
    }
    const auto count = rd.u32();
    if (count != slots.size()) throw Error(Errc::corrupt_file, "tensor count mismatch");
    for (std::uint32_t k = 0; k < count; ++k) {
        const std::string name(rd.take(rd.u32()));
        auto it = slots.find(name);
        if (it == slots.end()) throw Error(Errc::corrupt_file, "unexpected tensor " + name);
        if (rd.u32() != 2) throw Error(Errc::corrupt_file, "tensor rank");
        const auto rows = rd.u32(), cols = rd.u32();
        Mat<S>& m = *it->second;
        if (rows != m.rows() || cols != m.cols()) throw Error(Errc::corrupt_file, "tensor shape for " + name);
        const auto raw = rd.take(static_cast<std::size_t>(rows) * cols * 4);
        for (Eigen::Index i = 0; i < m.size(); ++i) {
            float f;
            std::memcpy(&f, raw.data() + 4 * i, 4);
            m.data()[i] = static_cast<S>(f);
        }
    }
    if (!rd.done()) throw Error(Errc::corrupt_file, "trailing bytes");
    return ck;
}

} // namespace ordiff

#endif // ORDIFF_DENOISER_HPP_
