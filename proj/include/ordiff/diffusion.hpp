// SPDX-License-Identifier: Apache-2.0
//
// Ordered absorbing diffusion: forward corruption, the closed-form posterior,
// the reverse step built from a denoiser's p(z0 | z_t), the per-step ELBO
// terms and their assembly.
//
// Posterior of the absorbing family. With marginals q(z_t = M | z0 = c) =
// m_t(c), a position masked at t was masked at t-1 with probability
// m_{t-1}(c) / m_t(c) and still held c otherwise. A position unmasked at t
// was unmasked at t-1 too (the mask is absorbing), so its posterior and the
// reverse step are both point masses on the same token and its KL is zero.
//
// Factorization. The forward process, the posterior and the reverse step all
// factorize over positions given (z0, z_t) and the denoiser output, so the
// per-step ELBO term is a sum of per-position KLs. The expectation over z_t
// only couples positions through the denoiser's input; nelbo_full therefore
// enumerates the joint mask patterns of the positions whose mask probability
// is strictly inside (0,1) and falls back to Monte Carlo over z_t when there
// are too many of them.
#ifndef ORDIFF_DIFFUSION_HPP_
#define ORDIFF_DIFFUSION_HPP_

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <numbers>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "ordiff/corpus.hpp"
#include "ordiff/error.hpp"
#include "ordiff/schedule.hpp"
#include "ordiff/util.hpp"

namespace ordiff {

/// Per-position categorical p(z0 | z_t) over the V real categories.
struct DenoiserOutput {
    Eigen::MatrixXd probs; // length x V
};

template <class M>
concept Denoiser = requires(const M& model, std::span<const int> zt, int t) {
    { model.predict(zt, t) } -> std::convertible_to<DenoiserOutput>;
};

inline void check_timestep(int t, const ScheduleTable& table, int lo = 0) {
    if (t < lo || t > table.T)
        throw Error(Errc::bad_timestep, "t=" + std::to_string(t) + " outside [" + std::to_string(lo) + ", " + std::to_string(table.T) + "]");
}

/// Replaces each token c by the mask with probability m_t(c), independently.
inline std::vector<int> forward_sample(std::span<const int> z0, int t, const ScheduleTable& table, Rng& rng) {
    check_timestep(t, table);
    std::vector<int> zt(z0.begin(), z0.end());
    for (auto& z : zt) {
        if (z < 0 || z >= table.V) throw Error(Errc::unknown_id, "id " + std::to_string(z));
        if (uniform01(rng) < table.at(t, z)) z = table.V;
    }
    return zt;
}

struct TwoPoint {
    double stay_masked = 0.0; // P(z_{t-1} = mask)
    double reveal = 0.0;      // P(z_{t-1} = z0)
};

/// q(z_{t-1} | z_t = mask, z0 = c).
inline TwoPoint posterior_step(int c, int t, const ScheduleTable& table) {
    check_timestep(t, table, 1);
    const double mt = table.at(t, c);
    if (!(mt > 0.0)) throw Error(Errc::division_by_zero_mask, "category " + std::to_string(c) + " cannot be masked at t=" + std::to_string(t));
    const double mprev = table.at(t - 1, c);
    return {mprev / mt, (mt - mprev) / mt};
}

namespace detail {
// phat renormalized over {c : m_t(c) > 0}. Returns false on empty support
// or zero mass there.
inline bool support_renormalize(std::span<const double> phat, int t, const ScheduleTable& table, std::vector<double>& out) {
    out.assign(phat.size(), 0.0);
    double z = 0.0;
    for (std::size_t c = 0; c < phat.size(); ++c)
        if (table.at(t, static_cast<int>(c)) > 0.0) z += phat[c];
    if (!(z > 0.0)) return false;
    for (std::size_t c = 0; c < phat.size(); ++c)
        if (table.at(t, static_cast<int>(c)) > 0.0) out[c] = phat[c] / z;
    return true;
}

inline std::vector<double> row_of(const DenoiserOutput& out, Eigen::Index i) {
    std::vector<double> r(static_cast<std::size_t>(out.probs.cols()));
    for (Eigen::Index c = 0; c < out.probs.cols(); ++c) r[static_cast<std::size_t>(c)] = out.probs(i, c);
    return r;
}
} // namespace detail

/// p(z_{t-1} | z_t) at one position: index V is the mask.
inline std::vector<double> reverse_step_dist(std::span<const double> phat, int zt_pos, int t, const ScheduleTable& table) {
    check_timestep(t, table, 1);
    if (phat.size() != static_cast<std::size_t>(table.V)) throw Error(Errc::shape_mismatch, "denoiser row has wrong width");
    std::vector<double> out(static_cast<std::size_t>(table.V) + 1, 0.0);
    if (zt_pos != table.V) {
        out.at(static_cast<std::size_t>(zt_pos)) = 1.0;
        return out;
    }
    std::vector<double> p;
    if (!detail::support_renormalize(phat, t, table, p))
        throw Error(Errc::empty_support, "no maskable category carries denoiser mass at t=" + std::to_string(t));
    double stay = 0.0;
    for (int c = 0; c < table.V; ++c) {
        const auto uc = static_cast<std::size_t>(c);
        if (p[uc] == 0.0) continue;
        const double mt = table.at(t, c), mprev = table.at(t - 1, c);
        out[uc] = p[uc] * (mt - mprev) / mt;
        stay += p[uc] * mprev / mt;
    }
    out.back() = stay;
    return out;
}

/// KL(q(z_{t-1} | z_t, z0) || p(z_{t-1} | z_t)) at a masked position with
/// true category c, as a function of the support-renormalized prediction p.
/// With a = (m_t - m_{t-1}) / m_t and b = m_{t-1} / m_t:
///     KL = -a_c log p_c + b_c (log b_c - log sum_j p_j b_j).
/// At t = 1 this is the reconstruction term -log p_c. When `grad` is
/// nonempty it receives dKL/dp (zero outside the support).
inline double masked_position_kl(std::span<const double> p, int c, int t, const ScheduleTable& table,
                                 std::span<double> grad = {}) {
    const auto uc = static_cast<std::size_t>(c);
    const double mt = table.at(t, c);
    if (!(mt > 0.0)) throw Error(Errc::division_by_zero_mask, "masked position of unmaskable category");
    const double ac = (mt - table.at(t - 1, c)) / mt;
    const double bc = table.at(t - 1, c) / mt;
    double kl = 0.0;
    if (ac > 0.0) kl -= ac * std::log(p[uc]);
    double pm = 0.0;
    if (bc > 0.0) {
        for (int j = 0; j < table.V; ++j) {
            const double mj = table.at(t, j);
            if (mj > 0.0) pm += p[static_cast<std::size_t>(j)] * table.at(t - 1, j) / mj;
        }
        kl += bc * (std::log(bc) - std::log(pm));
    }
    if (!grad.empty()) {
        std::ranges::fill(grad, 0.0);
        if (ac > 0.0) grad[uc] -= ac / p[uc];
        if (bc > 0.0)
            for (int j = 0; j < table.V; ++j) {
                const double mj = table.at(t, j);
                if (mj > 0.0) grad[static_cast<std::size_t>(j)] -= bc * (table.at(t - 1, j) / mj) / pm;
            }
    }
    return kl;
}

/// Per-position KL for step t >= 2; zero at unmasked positions.
inline std::vector<double> kl_step(std::span<const int> z0, std::span<const int> zt, int t, const DenoiserOutput& phat,
                                   const ScheduleTable& table) {
    check_timestep(t, table, 1);
    if (z0.size() != zt.size() || static_cast<Eigen::Index>(z0.size()) != phat.probs.rows())
        throw Error(Errc::shape_mismatch, "sequence and denoiser lengths differ");
    std::vector<double> out(z0.size(), 0.0), p;
    for (std::size_t i = 0; i < z0.size(); ++i) {
        if (zt[i] != table.V) continue;
        const auto row = detail::row_of(phat, static_cast<Eigen::Index>(i));
        if (!detail::support_renormalize(row, t, table, p)) {
            out[i] = std::numeric_limits<double>::infinity();
            continue;
        }
        out[i] = masked_position_kl(p, z0[i], t, table);
    }
    return out;
}

/// -log p(z0 | z1) summed over masked positions; +inf when the denoiser
/// gives the true category zero mass.
inline double recon_term(std::span<const int> z0, std::span<const int> z1, const DenoiserOutput& phat,
                         const ScheduleTable& table) {
    double total = 0.0;
    for (double v : kl_step(z0, z1, 1, phat, table)) total += v;
    return total;
}

/// KL(q(z_T | z0) || p(z_T)) with p(z_T) the all-mask point mass: zero once
/// row T is all ones.
inline double prior_kl(std::span<const int> zT, const ScheduleTable& table) {
    for (int z : zT)
        if (z != table.V) throw Error(Errc::not_fully_masked, "real token at t=T");
    for (int c = 0; c < table.V; ++c)
        if (table.at(table.T, c) != 1.0) throw Error(Errc::not_fully_masked, "schedule row T is not all ones");
    return 0.0;
}

struct ElboBreakdown {
    double prior_kl = 0.0;
    double step_kl = 0.0;          // sum over t = 2..T
    std::vector<double> kl_per_t;  // index t; [1] holds the reconstruction term
    double recon = 0.0;            // -log p(z0 | z1), nats
    double total_nelbo = 0.0;      // prior_kl + step_kl + recon
    std::size_t tokens = 0;

    double bits_per_token() const {
        return tokens ? total_nelbo / (std::numbers::ln2 * static_cast<double>(tokens)) : 0.0;
    }
    double perplexity() const { return std::exp2(bits_per_token()); }

    ElboBreakdown& operator+=(const ElboBreakdown& o) {
        prior_kl += o.prior_kl;
        step_kl += o.step_kl;
        recon += o.recon;
        total_nelbo += o.total_nelbo;
        tokens += o.tokens;
        if (kl_per_t.size() < o.kl_per_t.size()) kl_per_t.resize(o.kl_per_t.size(), 0.0);
        for (std::size_t t = 0; t < o.kl_per_t.size(); ++t) kl_per_t[t] += o.kl_per_t[t];
        return *this;
    }
};

struct NelboOptions {
    int exact_limit = 10;       // enumerate z_t exactly up to 2^exact_limit patterns
    int mc_samples = 1;         // z_t draws per step otherwise
    std::uint64_t seed = 0;
    unsigned threads = 1;
};

/// Sum of masked-position terms at step t for a given z_t.
template <Denoiser Model>
double step_term(std::span<const int> z0, std::span<const int> zt, int t, const Model& model, const ScheduleTable& table) {
    bool any = false;
    for (int z : zt) any |= z == table.V;
    if (!any) return 0.0;
    const DenoiserOutput phat = model.predict(zt, t);
    double total = 0.0;
    for (double v : kl_step(z0, zt, t, phat, table)) total += v;
    return total;
}

/// Negative ELBO of one sequence with the prior KL at T, KLs for t = 2..T
/// and the reconstruction at t = 1.
template <Denoiser Model>
ElboBreakdown nelbo_full(std::span<const int> z0, const Model& model, const ScheduleTable& table,
                         const NelboOptions& opt = {}) {
    ElboBreakdown out;
    out.tokens = z0.size();
    out.kl_per_t.assign(static_cast<std::size_t>(table.T) + 1, 0.0);
    std::vector<int> zt(z0.size());
    for (int t = 1; t <= table.T; ++t) {
        std::vector<std::size_t> branching;
        for (std::size_t i = 0; i < z0.size(); ++i) {
            const double m = table.at(t, z0[i]);
            zt[i] = m >= 1.0 ? table.V : z0[i];
            if (m > 0.0 && m < 1.0) branching.push_back(i);
        }
        double expected = 0.0;
        if (static_cast<int>(branching.size()) <= opt.exact_limit) {
            const std::uint64_t patterns = std::uint64_t{1} << branching.size();
            for (std::uint64_t bits = 0; bits < patterns; ++bits) {
                double w = 1.0;
                for (std::size_t k = 0; k < branching.size(); ++k) {
                    const std::size_t i = branching[k];
                    const double m = table.at(t, z0[i]);
                    const bool masked = (bits >> k) & 1U;
                    zt[i] = masked ? table.V : z0[i];
                    w *= masked ? m : 1.0 - m;
                }
                if (w > 0.0) expected += w * step_term(z0, zt, t, model, table);
            }
        } else {
            Rng rng(derive_seed(opt.seed, static_cast<std::uint64_t>(t)));
            for (int s = 0; s < opt.mc_samples; ++s) {
                const auto sample = forward_sample(z0, t, table, rng);
                expected += step_term(z0, sample, t, model, table);
            }
            expected /= opt.mc_samples;
        }
        out.kl_per_t[static_cast<std::size_t>(t)] = expected;
        if (t == 1)
            out.recon = expected;
        else
            out.step_kl += expected;
    }
    std::vector<int> all_mask(z0.size(), table.V);
    out.prior_kl = prior_kl(all_mask, table);
    out.total_nelbo = out.prior_kl + out.step_kl + out.recon;
    return out;
}

/// Summed breakdown over a set of sequences. Sequence i uses the seed
/// derived from (opt.seed, i), so the result does not depend on batching
/// or on the thread count.
template <Denoiser Model>
ElboBreakdown nelbo_full(std::span<const TokenSequence> seqs, const Model& model, const ScheduleTable& table,
                         const NelboOptions& opt = {}, std::size_t first_index = 0) {
    std::vector<ElboBreakdown> parts(seqs.size());
    parallel_for(seqs.size(), opt.threads, [&](std::size_t i) {
        NelboOptions o = opt;
        o.seed = derive_seed(opt.seed, first_index + i);
        parts[i] = nelbo_full(std::span<const int>(seqs[i].ids), model, table, o);
    });
    ElboBreakdown total;
    for (const auto& p : parts) total += p;
    return total;
}

/// One-draw unbiased estimate of the NELBO (nats) of one sequence: t is
/// uniform on {1..T} and the drawn term is weighted by T, so the mean over
/// t equals the exact sum of the T terms (the prior term is identically 0).
template <Denoiser Model>
double nelbo_stochastic_nats(std::span<const int> z0, const Model& model, const ScheduleTable& table, Rng& rng) {
    const int t = 1 + static_cast<int>(uniform_index(rng, static_cast<std::size_t>(table.T)));
    const auto zt = forward_sample(z0, t, table, rng);
    return static_cast<double>(table.T) * step_term(z0, zt, t, model, table);
}

/// Bits per token of the stochastic estimator over a batch.
template <Denoiser Model>
double nelbo_stochastic(std::span<const TokenSequence> batch, const Model& model, const ScheduleTable& table, Rng& rng) {
    double nats = 0.0;
    std::size_t tokens = 0;
    for (const auto& s : batch) {
        nats += nelbo_stochastic_nats(std::span<const int>(s.ids), model, table, rng);
        tokens += s.length();
    }
    return tokens ? nats / (std::numbers::ln2 * static_cast<double>(tokens)) : 0.0;
}

// ---------------------------------------------------------------------------
// Ancestral sampling

struct Trajectory {
    TokenSequence sample;
    std::vector<std::pair<int, std::vector<int>>> snapshots; // (t, z_t), descending t
};

inline int sample_categorical(std::span<const double> p, Rng& rng) {
    double u = uniform01(rng), acc = 0.0;
    int last = -1;
    for (std::size_t k = 0; k < p.size(); ++k) {
        if (p[k] <= 0.0) continue;
        acc += p[k];
        last = static_cast<int>(k);
        if (u < acc) return last;
    }
    return last;
}

/// `record` holds the timesteps to snapshot (any order); T and 0 are valid.
template <Denoiser Model>
Trajectory generate(const Model& model, const ScheduleTable& table, std::size_t length, Rng& rng,
                    const std::vector<int>& record = {}) {
    auto want = [&](int t) { return std::ranges::find(record, t) != record.end(); };
    Trajectory out;
    std::vector<int> z(length, table.V);
    if (want(table.T)) out.snapshots.emplace_back(table.T, z);
    for (int t = table.T; t >= 1; --t) {
        bool any = false;
        for (int v : z) any |= v == table.V;
        if (any) {
            const DenoiserOutput phat = model.predict(z, t);
            for (std::size_t i = 0; i < length; ++i) {
                if (z[i] != table.V) continue;
                const auto dist = reverse_step_dist(detail::row_of(phat, static_cast<Eigen::Index>(i)), table.V, t, table);
                z[i] = sample_categorical(dist, rng);
            }
        }
        if (want(t - 1)) out.snapshots.emplace_back(t - 1, z);
    }
    if (std::ranges::find(z, table.V) != z.end()) throw Error(Errc::mask_residue, "mask left at t=0");
    out.sample.ids = std::move(z);
    return out;
}

/// `count` evenly spaced timesteps from T down to 0 (count >= 2).
inline std::vector<int> even_timesteps(int T, int count) {
    if (count < 2) throw Error(Errc::bad_config, "need at least two snapshots");
    std::vector<int> out;
    for (int k = 0; k < count; ++k)
        out.push_back(static_cast<int>(std::lround(T - static_cast<double>(k) * T / (count - 1))));
    return out;
}

// ---------------------------------------------------------------------------
// Trajectory-enumeration oracle for tiny instances.
//
// Builds q(z_{1:T} | z0) from the one-step forward kernels, forms the reverse
// step from p(z_{t-1} | z_t) = sum_x q(z_{t-1} | z_t, x) p'(x | z_t) with the
// posterior obtained by Bayes on materialized kernel products, and sums
// E_q[log p(z_{0:T}) - log q(z_{1:T} | z0)] over every latent trajectory.

namespace oracle {

struct Limits {
    std::size_t max_len = 3;
    int max_vocab = 5;
    int max_T = 4;
};

class Enumerator {
public:
    explicit Enumerator(const ScheduleTable& table) : table_(table), S_(table.V + 1) {
        // kernel_[t][a][b] = q(z_t = b | z_{t-1} = a); marg_[t][x][a] = q(z_t = a | z0 = x).
        kernel_.assign(static_cast<std::size_t>(table.T) + 1, Mat(S_, Vec(S_, 0.0)));
        for (int t = 1; t <= table.T; ++t) {
            auto& K = kernel_[static_cast<std::size_t>(t)];
            for (int c = 0; c < table.V; ++c) {
                const double prev = table.at(t - 1, c);
                const double beta = prev < 1.0 ? (table.at(t, c) - prev) / (1.0 - prev) : 1.0;
                K[c][c] = 1.0 - beta;
                K[c][table.V] = beta;
            }
            K[table.V][table.V] = 1.0;
        }
        marg_.assign(static_cast<std::size_t>(table.T) + 1, Mat(S_, Vec(S_, 0.0)));
        for (int x = 0; x < S_; ++x) marg_[0][x][x] = 1.0;
        for (int t = 1; t <= table.T; ++t)
            for (int x = 0; x < S_; ++x)
                for (int a = 0; a < S_; ++a)
                    for (int b = 0; b < S_; ++b)
                        marg_[t][x][b] += marg_[t - 1][x][a] * kernel_[t][a][b];
    }

    double kernel(int t, int a, int b) const { return kernel_[static_cast<std::size_t>(t)][a][b]; }

    /// p(z_{t-1} = a | z_t = b) for one position.
    std::vector<double> reverse(std::span<const double> phat, int b, int t) const {
        std::vector<double> w(static_cast<std::size_t>(table_.V), 0.0);
        double z = 0.0;
        for (int x = 0; x < table_.V; ++x) {
            if (marg_[t][x][b] > 0.0) {
                w[static_cast<std::size_t>(x)] = phat[static_cast<std::size_t>(x)];
                z += w[static_cast<std::size_t>(x)];
            }
        }
        std::vector<double> out(static_cast<std::size_t>(S_), 0.0);
        for (int x = 0; x < table_.V; ++x) {
            if (w[static_cast<std::size_t>(x)] == 0.0) continue;
            const double px = w[static_cast<std::size_t>(x)] / z;
            for (int a = 0; a < S_; ++a) {
                const double post = kernel_[t][a][b] * marg_[t - 1][x][a] / marg_[t][x][b];
                out[static_cast<std::size_t>(a)] += post * px;
            }
        }
        return out;
    }

private:
    using Vec = std::vector<double>;
    using Mat = std::vector<Vec>;
    const ScheduleTable& table_;
    int S_;
    std::vector<Mat> kernel_;
    std::vector<Mat> marg_;
};

inline void check_limits(std::size_t len, const ScheduleTable& table, const Limits& lim) {
    if (len > lim.max_len || table.V > lim.max_vocab || table.T > lim.max_T)
        throw Error(Errc::too_large, "instance too large to enumerate");
}

template <Denoiser Model>
double log_reverse(const Enumerator& en, const Model& model, std::span<const int> prev, std::span<const int> cur, int t) {
    const DenoiserOutput phat = model.predict(cur, t);
    double lp = 0.0;
    for (std::size_t i = 0; i < cur.size(); ++i) {
        const auto row = detail::row_of(phat, static_cast<Eigen::Index>(i));
        const auto dist = en.reverse(row, cur[i], t);
        lp += std::log(dist[static_cast<std::size_t>(prev[i])]);
    }
    return lp;
}

/// Exact negative ELBO (nats) by summing over all forward trajectories.
template <Denoiser Model>
double enumerate_elbo_oracle(std::span<const int> z0, const Model& model, const ScheduleTable& table, const Limits& lim = {}) {
    check_limits(z0.size(), table, lim);
    const Enumerator en(table);
    const int S = table.V + 1;
    std::size_t states = 1;
    for (std::size_t i = 0; i < z0.size(); ++i) states *= static_cast<std::size_t>(S);
    auto decode_state = [&](std::size_t code) {
        std::vector<int> z(z0.size());
        for (std::size_t i = 0; i < z.size(); ++i, code /= static_cast<std::size_t>(S)) z[i] = static_cast<int>(code % static_cast<std::size_t>(S));
        return z;
    };

    double elbo = 0.0;
    // Depth-first over z_1..z_T carrying q(path) and the running log ratio.
    std::function<void(int, const std::vector<int>&, double, double)> walk =
        [&](int t, const std::vector<int>& prev, double qpath, double logratio) {
            if (t > table.T) {
                // log p(z_T): point mass on all-mask.
                const bool all_mask = std::ranges::all_of(prev, [&](int v) { return v == table.V; });
                const double lp_T = all_mask ? 0.0 : -std::numeric_limits<double>::infinity();
                elbo += qpath * (logratio + lp_T);
                return;
            }
            for (std::size_t code = 0; code < states; ++code) {
                const auto cur = decode_state(code);
                double qstep = 1.0;
                for (std::size_t i = 0; i < cur.size() && qstep > 0.0; ++i) qstep *= en.kernel(t, prev[i], cur[i]);
                if (qstep <= 0.0) continue;
                const double lp = log_reverse(en, model, prev, cur, t);
                walk(t + 1, cur, qpath * qstep, logratio + lp - std::log(qstep));
            }
        };
    walk(1, std::vector<int>(z0.begin(), z0.end()), 1.0, 0.0);
    return -elbo;
}

/// Exact -log p(z0) under the model's reverse chain started from all-mask.
template <Denoiser Model>
double exact_nll(std::span<const int> z0, const Model& model, const ScheduleTable& table, const Limits& lim = {}) {
    check_limits(z0.size(), table, lim);
    const Enumerator en(table);
    const int S = table.V + 1;
    std::size_t states = 1;
    for (std::size_t i = 0; i < z0.size(); ++i) states *= static_cast<std::size_t>(S);
    auto decode_state = [&](std::size_t code) {
        std::vector<int> z(z0.size());
        for (std::size_t i = 0; i < z.size(); ++i, code /= static_cast<std::size_t>(S)) z[i] = static_cast<int>(code % static_cast<std::size_t>(S));
        return z;
    };
    std::vector<double> dist(states, 0.0);
    dist[states - 1] = 1.0; // all-mask is the largest code
    for (int t = table.T; t >= 1; --t) {
        std::vector<double> next(states, 0.0);
        for (std::size_t code = 0; code < states; ++code) {
            if (dist[code] == 0.0) continue;
            const auto cur = decode_state(code);
            const DenoiserOutput phat = model.predict(cur, t);
            std::vector<std::vector<double>> per_pos;
            for (std::size_t i = 0; i < cur.size(); ++i)
                per_pos.push_back(en.reverse(detail::row_of(phat, static_cast<Eigen::Index>(i)), cur[i], t));
            for (std::size_t to = 0; to < states; ++to) {
                const auto prev = decode_state(to);
                double p = dist[code];
                for (std::size_t i = 0; i < prev.size() && p > 0.0; ++i) p *= per_pos[i][static_cast<std::size_t>(prev[i])];
                next[to] += p;
            }
        }
        dist = std::move(next);
    }
    std::size_t code = 0;
    for (std::size_t i = z0.size(); i-- > 0;) code = code * static_cast<std::size_t>(S) + static_cast<std::size_t>(z0[i]);
    return -std::log(dist[code]);
}

} // namespace oracle

using oracle::enumerate_elbo_oracle;

} // namespace ordiff

#endif // ORDIFF_DIFFUSION_HPP_
