// SPDX-License-Identifier: Apache-2.0
//
// Exact posterior p(z0 | z_t) for the toy language, by forward-backward over
// the anchor chain. A masked position holding category x has likelihood
// m_t(x), a revealed one has 1 - m_t(x) if it matches and 0 otherwise.
#ifndef ORDIFF_TOY_ORACLE_HPP_
#define ORDIFF_TOY_ORACLE_HPP_

#include <array>
#include <cmath>
#include <limits>
#include <span>
#include <vector>

#include "ordiff/corpus.hpp"
#include "ordiff/diffusion.hpp"
#include "ordiff/error.hpp"
#include "ordiff/schedule.hpp"

namespace ordiff {

class ToyOracle {
public:
    /// `lenient` replaces the zero-probability error with the local rule
    /// (anchors uniform unless revealed, fills from revealed neighbors), so
    /// sampling can finish from states no valid sequence produces.
    explicit ToyOracle(const ScheduleTable& table, bool lenient = false) : table_(&table), lenient_(lenient) {
        if (table.V != toy::kVocabSize) throw Error(Errc::non_toy_input, "toy oracle needs the 6-symbol vocabulary");
    }

    DenoiserOutput predict(std::span<const int> zt, int t) const {
        const auto n = zt.size();
        if (n < 3 || n % 2 == 0) throw Error(Errc::non_toy_input, "toy sequences have odd length >= 3");
        check_timestep(t, *table_);
        if (!lenient_) return exact(zt, t);
        try {
            return exact(zt, t);
        } catch (const Error& e) {
            if (e.code() != Errc::non_toy_input) throw;
            return local(zt);
        }
    }

private:
    DenoiserOutput exact(std::span<const int> zt, int t) const {
        const auto n = zt.size();
        const std::size_t K = n / 2 + 1;
        constexpr std::array<int, 2> anchors{toy::a, toy::b};

        auto lik = [&](std::size_t pos, int x) {
            const int z = zt[pos];
            const double m = table_->at(t, x);
            if (z == table_->V) return m;
            if (z < 0 || z > table_->V) throw Error(Errc::non_toy_input, "id out of range");
            return z == x ? 1.0 - m : 0.0;
        };
        auto unary = [&](std::size_t k, int s) { return 0.5 * lik(2 * k, anchors[static_cast<std::size_t>(s)]); };
        auto pair = [&](std::size_t k, int s1, int s2) {
            return lik(2 * k - 1, toy::fill(anchors[static_cast<std::size_t>(s1)], anchors[static_cast<std::size_t>(s2)]));
        };

        std::vector<std::array<double, 2>> alpha(K), beta(K);
        for (int s = 0; s < 2; ++s) alpha[0][static_cast<std::size_t>(s)] = unary(0, s);
        normalize(alpha[0]);
        for (std::size_t k = 1; k < K; ++k) {
            for (int s = 0; s < 2; ++s) {
                double acc = 0.0;
                for (int r = 0; r < 2; ++r) acc += alpha[k - 1][static_cast<std::size_t>(r)] * pair(k, r, s);
                alpha[k][static_cast<std::size_t>(s)] = acc * unary(k, s);
            }
            normalize(alpha[k]);
        }
        beta[K - 1] = {1.0, 1.0};
        for (std::size_t k = K - 1; k-- > 0;) {
            for (int r = 0; r < 2; ++r) {
                double acc = 0.0;
                for (int s = 0; s < 2; ++s) acc += pair(k + 1, r, s) * unary(k + 1, s) * beta[k + 1][static_cast<std::size_t>(s)];
                beta[k][static_cast<std::size_t>(r)] = acc;
            }
            normalize(beta[k]);
        }

        DenoiserOutput out;
        out.probs = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), table_->V);
        for (std::size_t k = 0; k < K; ++k) {
            std::array<double, 2> w{alpha[k][0] * beta[k][0], alpha[k][1] * beta[k][1]};
            normalize(w);
            for (int s = 0; s < 2; ++s)
                out.probs(static_cast<Eigen::Index>(2 * k), anchors[static_cast<std::size_t>(s)]) = w[static_cast<std::size_t>(s)];
        }
        for (std::size_t k = 1; k < K; ++k) {
            double z = 0.0;
            std::array<double, 4> w{};
            for (int r = 0; r < 2; ++r)
                for (int s = 0; s < 2; ++s) {
                    const double v = alpha[k - 1][static_cast<std::size_t>(r)] * pair(k, r, s) * unary(k, s) *
                                     beta[k][static_cast<std::size_t>(s)];
                    w[static_cast<std::size_t>(2 * r + s)] = v;
                    z += v;
                }
            if (!(z > 0.0)) throw Error(Errc::non_toy_input, "observation has zero probability under the toy language");
            for (int r = 0; r < 2; ++r)
                for (int s = 0; s < 2; ++s)
                    out.probs(static_cast<Eigen::Index>(2 * k - 1),
                              toy::fill(anchors[static_cast<std::size_t>(r)], anchors[static_cast<std::size_t>(s)])) +=
                        w[static_cast<std::size_t>(2 * r + s)] / z;
        }
        return out;
    }

    DenoiserOutput local(std::span<const int> zt) const {
        const auto n = zt.size();
        const int M = table_->V;
        DenoiserOutput out;
        out.probs = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), table_->V);
        auto anchor_dist = [&](std::size_t pos) {
            const int z = zt[pos];
            if (z == toy::a) return std::array<double, 2>{1.0, 0.0};
            if (z == toy::b) return std::array<double, 2>{0.0, 1.0};
            if (z == M) return std::array<double, 2>{0.5, 0.5};
            throw Error(Errc::non_toy_input, "fill symbol at an anchor position");
        };
        constexpr std::array<int, 2> anchors{toy::a, toy::b};
        for (std::size_t i = 0; i < n; ++i) {
            const auto row = static_cast<Eigen::Index>(i);
            if (i % 2 == 0) {
                const auto d = anchor_dist(i);
                out.probs(row, toy::a) = d[0];
                out.probs(row, toy::b) = d[1];
                continue;
            }
            const auto l = anchor_dist(i - 1), r = anchor_dist(i + 1);
            for (int u = 0; u < 2; ++u)
                for (int v = 0; v < 2; ++v)
                    out.probs(row, toy::fill(anchors[static_cast<std::size_t>(u)], anchors[static_cast<std::size_t>(v)])) +=
                        l[static_cast<std::size_t>(u)] * r[static_cast<std::size_t>(v)];
        }
        return out;
    }

    static void normalize(std::array<double, 2>& v) {
        const double z = v[0] + v[1];
        if (!(z > 0.0)) throw Error(Errc::non_toy_input, "observation has zero probability under the toy language");
        v[0] /= z;
        v[1] /= z;
    }

    const ScheduleTable* table_;
    bool lenient_ = false;
};

/// -log p(z0) under the toy language: (number of anchors) * log 2 when valid.
inline double toy_log_loss(std::span<const int> z0) {
    if (toy_violations(z0) != 0 || z0.size() % 2 == 0) return std::numeric_limits<double>::infinity();
    return static_cast<double>(z0.size() / 2 + 1) * std::log(2.0);
}

} // namespace ordiff

#endif // ORDIFF_TOY_ORACLE_HPP_
