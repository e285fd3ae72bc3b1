// SPDX-License-Identifier: Apache-2.0
//
// Mutual-information schedule with sequential destruction.
//
// For a mask vector m over categories with marginal p, the retained
// information ratio is
//
//     r(m) = sum_c p_c m_c log(p_c m_c / P_M) / sum_c p_c log p_c,
//     P_M  = sum_c p_c m_c,
//
// which equals P_M H(z0 | z_t = mask) / H(z0) = 1 - I(z0; z_t) / H(z0).
// Groups are destroyed one at a time: at every instant all groups before
// some k are fully masked, group k is partial and the rest are intact. A
// schedule table is the set of snapshots of that path whose ratios hit
// warp(t/T) for t = 0..T.
#ifndef ORDIFF_SCHEDULE_HPP_
#define ORDIFF_SCHEDULE_HPP_

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "ordiff/error.hpp"
#include "ordiff/ordering.hpp"
#include "ordiff/util.hpp"

namespace ordiff {

inline constexpr double kScheduleTol = 1e-10;
inline constexpr int kBisectionMaxIter = 200;

/// Group-level mask probabilities in destruction order.
struct MaskState {
    std::vector<double> m;

    /// Ones before some k, m[k] in [0,1], zeros after.
    bool sequential() const {
        std::size_t k = 0;
        while (k < m.size() && m[k] == 1.0) ++k;
        if (k == m.size()) return true;
        if (!(m[k] >= 0.0 && m[k] <= 1.0)) return false;
        for (std::size_t g = k + 1; g < m.size(); ++g)
            if (m[g] != 0.0) return false;
        return true;
    }

    static MaskState zeros(int groups) { return {std::vector<double>(static_cast<std::size_t>(groups), 0.0)}; }
    static MaskState ones(int groups) { return {std::vector<double>(static_cast<std::size_t>(groups), 1.0)}; }
};

inline std::vector<double> group_probs(const OrderingSpec& order, std::span<const double> probs) {
    check_ordering(order, probs);
    std::vector<double> out(static_cast<std::size_t>(order.num_groups), 0.0);
    for (std::size_t c = 0; c < probs.size(); ++c) out[static_cast<std::size_t>(order.group_of[c])] += probs[c];
    return out;
}

/// Broadcasts group values to categories.
inline std::vector<double> category_masks(const MaskState& state, const OrderingSpec& order) {
    std::vector<double> out(order.group_of.size());
    for (std::size_t c = 0; c < out.size(); ++c) out[c] = state.m.at(static_cast<std::size_t>(order.group_of[c]));
    return out;
}

/// Negative entropy sum_c p_c log p_c; throws when it is zero.
inline double neg_entropy_checked(std::span<const double> probs) {
    double s = 0.0;
    for (double p : probs) s += xlogx(p);
    if (!(s < 0.0)) throw Error(Errc::degenerate_entropy, "marginal has zero entropy");
    return s;
}

/// Ratio for a category-level mask vector.
inline double info_ratio(std::span<const double> masks, std::span<const double> probs) {
    if (masks.size() != probs.size()) throw Error(Errc::shape_mismatch, "mask and probability lengths differ");
    const double denom = neg_entropy_checked(probs);
    double pm = 0.0;
    for (std::size_t c = 0; c < probs.size(); ++c) pm += probs[c] * masks[c];
    if (pm <= 0.0) return 0.0;
    double num = 0.0;
    for (std::size_t c = 0; c < probs.size(); ++c) {
        const double q = probs[c] * masks[c];
        if (q > 0.0) num += q * std::log(q / pm);
    }
    return num / denom;
}

/// Ratio for a group-level state; group values are broadcast to their
/// member categories so within-group entropy is kept.
inline double info_ratio(const MaskState& state, const OrderingSpec& order, std::span<const double> probs) {
    if (state.m.size() != static_cast<std::size_t>(order.num_groups))
        throw Error(Errc::shape_mismatch, "state length differs from group count");
    const auto masks = category_masks(state, order);
    return info_ratio(masks, probs);
}

namespace detail {
// Per-group sufficient statistics so the ratio along the sequential path is
// O(1) per evaluation:
//   numerator(k, m) = S_k + m A_k + p_k m log m - P log P,  P = P_k + p_k m
// where S_k, P_k accumulate sum p log p and sum p over the first k groups and
// A_k = sum_{c in group k} p_c log p_c.
struct PathStats {
    std::vector<double> group_p, group_plogp, prefix_p, prefix_plogp;
    double denom = 0.0;

    PathStats(const OrderingSpec& order, std::span<const double> probs) {
        group_p = group_probs(order, probs);
        group_plogp.assign(group_p.size(), 0.0);
        for (std::size_t c = 0; c < probs.size(); ++c) group_plogp[static_cast<std::size_t>(order.group_of[c])] += xlogx(probs[c]);
        prefix_p.assign(group_p.size() + 1, 0.0);
        prefix_plogp.assign(group_p.size() + 1, 0.0);
        for (std::size_t g = 0; g < group_p.size(); ++g) {
            prefix_p[g + 1] = prefix_p[g] + group_p[g];
            prefix_plogp[g + 1] = prefix_plogp[g] + group_plogp[g];
        }
        denom = neg_entropy_checked(probs);
    }

    double ratio(std::size_t k, double m) const {
        const double pk = k < group_p.size() ? group_p[k] : 0.0;
        const double ak = k < group_p.size() ? group_plogp[k] : 0.0;
        const double pm = prefix_p[k] + pk * m;
        if (pm <= 0.0) return 0.0;
        const double num = prefix_plogp[k] + m * ak + pk * xlogx(m) - xlogx(pm);
        return num / denom;
    }
};
} // namespace detail

/// r_k for the states with the first k groups fully masked, k = 0..G.
inline std::vector<double> boundary_ratios(const OrderingSpec& order, std::span<const double> probs) {
    const detail::PathStats stats(order, probs);
    std::vector<double> r(static_cast<std::size_t>(order.num_groups) + 1);
    r.front() = 0.0;
    for (std::size_t k = 1; k < r.size(); ++k) {
        r[k] = stats.ratio(k, 0.0);
        if (r[k] < r[k - 1] - 1e-12) throw Error(Errc::non_monotonic, "boundary ratio decreases at group " + std::to_string(k));
        r[k] = std::max(r[k], r[k - 1]);
    }
    r.back() = 1.0;
    return r;
}

namespace detail {
inline MaskState solve_on_path(double r, const PathStats& stats, std::span<const double> bounds, double tol) {
    const auto G = static_cast<int>(bounds.size()) - 1;
    if (!(r >= 0.0 && r <= 1.0)) throw Error(Errc::bad_config, "target ratio outside [0,1]");
    // Largest k with r_k <= r: flat segments resolve to the farthest progress.
    std::size_t k = 0;
    while (k + 1 < bounds.size() && bounds[k + 1] <= r + tol) ++k;
    if (k == static_cast<std::size_t>(G)) return MaskState::ones(G);
    MaskState s = MaskState::zeros(G);
    for (std::size_t g = 0; g < k; ++g) s.m[g] = 1.0;
    if (std::abs(stats.ratio(k, 0.0) - r) <= tol) return s;
    double lo = 0.0, hi = 1.0;
    if (stats.ratio(k, hi) < r - tol) throw Error(Errc::non_monotonic, "segment end below target ratio");
    // Bisect to machine resolution; the tolerance only bounds the residual.
    double mid = 0.5;
    for (int it = 0; it < kBisectionMaxIter; ++it) {
        mid = 0.5 * (lo + hi);
        const double f = stats.ratio(k, mid);
        if (f == r || mid <= lo || mid >= hi) break;
        (f < r ? lo : hi) = mid;
    }
    if (std::abs(stats.ratio(k, mid) - r) > tol) throw Error(Errc::non_monotonic, "bisection did not reach the target ratio");
    s.m[k] = mid;
    return s;
}
} // namespace detail

inline MaskState solve_state_at(double r, const OrderingSpec& order, std::span<const double> probs,
                                double tol = kScheduleTol) {
    const detail::PathStats stats(order, probs);
    const auto bounds = boundary_ratios(order, probs);
    return detail::solve_on_path(r, stats, bounds, tol);
}

// ---------------------------------------------------------------------------
// Time warps

/// Monotone piecewise-linear map from normalized time [0,1] to target ratio.
class Warp {
public:
    Warp() : knots_{{0.0, 0.0}, {1.0, 1.0}} {}
    explicit Warp(std::vector<std::pair<double, double>> knots) : knots_(std::move(knots)) { check(); }

    static Warp identity() { return Warp(); }

    /// Each group's ratio segment [r_g, r_{g+1}] receives time in proportion
    /// to weight_g * (r_{g+1} - r_g). All weights 1 gives the identity.
    static Warp from_group_weights(std::span<const double> bounds, std::span<const double> weights) {
        if (weights.size() + 1 != bounds.size()) throw Error(Errc::shape_mismatch, "one weight per group required");
        std::vector<double> tau(weights.size());
        double total = 0.0;
        for (std::size_t g = 0; g < weights.size(); ++g) {
            if (!(weights[g] > 0.0)) throw Error(Errc::bad_config, "group weights must be > 0");
            total += tau[g] = weights[g] * (bounds[g + 1] - bounds[g]);
        }
        std::vector<std::pair<double, double>> knots{{0.0, 0.0}};
        double s = 0.0;
        for (std::size_t g = 0; g < tau.size(); ++g) {
            if (tau[g] <= 0.0) continue;
            s += tau[g] / total;
            knots.emplace_back(std::min(s, 1.0), bounds[g + 1]);
        }
        knots.back() = {1.0, 1.0};
        return Warp(std::move(knots));
    }

    double operator()(double s) const {
        if (s <= 0.0) return 0.0;
        if (s >= 1.0) return 1.0;
        for (std::size_t i = 1; i < knots_.size(); ++i) {
            const auto [s1, r1] = knots_[i];
            if (s <= s1) {
                const auto [s0, r0] = knots_[i - 1];
                if (s1 <= s0) return r1;
                return r0 + (r1 - r0) * (s - s0) / (s1 - s0);
            }
        }
        return 1.0;
    }

    bool is_identity() const { return knots_.size() == 2; }
    const std::vector<std::pair<double, double>>& knots() const { return knots_; }

    nlohmann::json to_json() const {
        nlohmann::json j;
        j["type"] = is_identity() ? "identity" : "piecewise_linear";
        j["knots"] = knots_;
        return j;
    }

    static Warp from_json(const nlohmann::json& j) {
        return Warp(j.at("knots").get<std::vector<std::pair<double, double>>>());
    }

    bool operator==(const Warp&) const = default;

private:
    void check() const {
        if (knots_.size() < 2 || knots_.front() != std::pair{0.0, 0.0} || knots_.back() != std::pair{1.0, 1.0})
            throw Error(Errc::bad_config, "warp must map 0 to 0 and 1 to 1");
        for (std::size_t i = 1; i < knots_.size(); ++i)
            if (knots_[i].first < knots_[i - 1].first || knots_[i].second < knots_[i - 1].second)
                throw Error(Errc::bad_config, "warp must be nondecreasing");
    }

    std::vector<std::pair<double, double>> knots_;
};

// ---------------------------------------------------------------------------
// Schedule tables

/// Snapshots m_t(c) for t = 0..T on a (T+1) x V row-major grid.
struct ScheduleTable {
    int T = 0;
    int V = 0;
    std::vector<double> m;
    OrderingSpec order;
    std::vector<double> probs;
    Warp warp;

    double at(int t, int c) const { return m[static_cast<std::size_t>(t) * static_cast<std::size_t>(V) + static_cast<std::size_t>(c)]; }
    double& at(int t, int c) { return m[static_cast<std::size_t>(t) * static_cast<std::size_t>(V) + static_cast<std::size_t>(c)]; }

    std::span<const double> row(int t) const {
        return std::span<const double>(m).subspan(static_cast<std::size_t>(t) * static_cast<std::size_t>(V), static_cast<std::size_t>(V));
    }
};

inline ScheduleTable build_schedule(const OrderingSpec& order, std::span<const double> probs, int T,
                                    const Warp& warp = Warp::identity(), double tol = kScheduleTol) {
    if (T < 1) throw Error(Errc::bad_config, "T must be >= 1");
    check_ordering(order, probs);
    ScheduleTable table;
    table.T = T;
    table.V = static_cast<int>(probs.size());
    table.order = order;
    table.probs.assign(probs.begin(), probs.end());
    table.warp = warp;
    table.m.assign(static_cast<std::size_t>(T + 1) * probs.size(), 0.0);

    double neg_h = 0.0;
    for (double p : probs) neg_h += xlogx(p);
    if (!(neg_h < 0.0)) {
        // A single populated category: the ratio is undefined, so fall back
        // to the standard linear mask fraction.
        for (int t = 1; t <= T; ++t)
            for (int c = 0; c < table.V; ++c)
                table.at(t, c) = probs[static_cast<std::size_t>(c)] > 0.0 ? (t == T ? 1.0 : warp(static_cast<double>(t) / T)) : 1.0;
        return table;
    }

    const detail::PathStats stats(order, probs);
    const auto bounds = boundary_ratios(order, probs);
    for (int t = 1; t <= T; ++t) {
        const MaskState s = t == T ? MaskState::ones(order.num_groups)
                                   : detail::solve_on_path(warp(static_cast<double>(t) / T), stats, bounds, tol);
        for (int c = 0; c < table.V; ++c) {
            const auto uc = static_cast<std::size_t>(c);
            table.at(t, c) = probs[uc] > 0.0 ? s.m[static_cast<std::size_t>(order.group_of[uc])] : 1.0;
        }
    }
    return table;
}

struct ScheduleViolation {
    int t = 0;
    int category = -1; // -1 for row-level violations
    std::string what;
};

struct ScheduleDiagnostics {
    std::vector<ScheduleViolation> violations;
    std::vector<double> realized_ratio; // per row, empty when the ratio is undefined
    std::vector<double> ratio_delta;    // realized_ratio[t] - realized_ratio[t-1]

    bool ok() const noexcept { return violations.empty(); }
};

/// Checks every table invariant. Never throws on a bad table.
inline ScheduleDiagnostics validate_schedule(const ScheduleTable& table) {
    ScheduleDiagnostics d;
    auto flag = [&](int t, int c, std::string what) { d.violations.push_back({t, c, std::move(what)}); };
    if (table.T < 1 || table.V < 1 || table.m.size() != static_cast<std::size_t>(table.T + 1) * static_cast<std::size_t>(table.V)) {
        flag(0, -1, "table shape inconsistent with T and V");
        return d;
    }
    const bool have_probs = table.probs.size() == static_cast<std::size_t>(table.V);
    auto prob = [&](int c) { return have_probs ? table.probs[static_cast<std::size_t>(c)] : 1.0; };
    for (int t = 0; t <= table.T; ++t) {
        for (int c = 0; c < table.V; ++c) {
            const double v = table.at(t, c);
            if (!(v >= 0.0 && v <= 1.0)) flag(t, c, "mask probability outside [0,1]");
            if (t > 0 && v < table.at(t - 1, c)) flag(t, c, "column decreases");
        }
    }
    for (int c = 0; c < table.V; ++c) {
        if (table.at(0, c) != 0.0) flag(0, c, "row 0 not zero");
        if (table.at(table.T, c) != 1.0) flag(table.T, c, "row T not one");
        if (prob(c) <= 0.0)
            for (int t = 1; t <= table.T; ++t)
                if (table.at(t, c) != 1.0) flag(t, c, "zero-probability category not absorbed from row 1");
    }
    const bool have_order = table.order.vocab_size() == table.V && table.order.num_groups >= 1;
    if (have_order) {
        // Groups with positive mass share one value per row and follow the
        // sequential form in destruction order.
        const auto members = table.order.members();
        for (int t = 0; t <= table.T; ++t) {
            MaskState s;
            for (std::size_t g = 0; g < members.size(); ++g) {
                double value = -1.0;
                for (int c : members[g]) {
                    if (prob(c) <= 0.0) continue;
                    if (value < 0.0)
                        value = table.at(t, c);
                    else if (table.at(t, c) != value)
                        flag(t, c, "group members disagree");
                }
                if (value >= 0.0) s.m.push_back(value);
            }
            if (!s.sequential()) flag(t, -1, "row not in sequential form");
        }
    }
    if (have_probs) {
        double neg_h = 0.0;
        for (double p : table.probs) neg_h += xlogx(p);
        if (neg_h < 0.0) {
            for (int t = 0; t <= table.T; ++t) {
                d.realized_ratio.push_back(info_ratio(table.row(t), table.probs));
                if (t > 0) d.ratio_delta.push_back(d.realized_ratio[static_cast<std::size_t>(t)] - d.realized_ratio[static_cast<std::size_t>(t) - 1]);
            }
        }
    }
    return d;
}

// ---------------------------------------------------------------------------
// Binary persistence: "ODSC", u32 version, u32 T, u32 V, then (T+1)*V
// little-endian f64 row-major. A JSON sidecar records provenance.

inline constexpr std::uint32_t kScheduleVersion = 1;

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

namespace detail {
inline void put_u32(std::ostream& os, std::uint32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); }
inline std::uint32_t get_u32(std::istream& is) {
    std::uint32_t v = 0;
    if (!is.read(reinterpret_cast<char*>(&v), 4)) throw Error(Errc::corrupt_file, "truncated header");
    return v;
}
} // namespace detail

inline std::string probs_hash(std::span<const double> probs) {
    return hex64(fnv1a64(probs.data(), probs.size_bytes()));
}

inline void save_schedule(const ScheduleTable& table, const std::string& path, const std::string& order_file = "") {
    {
        std::ofstream os(path, std::ios::binary);
        if (!os) throw Error(Errc::io_error, "cannot write " + path);
        os.write("ODSC", 4);
        detail::put_u32(os, kScheduleVersion);
        detail::put_u32(os, static_cast<std::uint32_t>(table.T));
        detail::put_u32(os, static_cast<std::uint32_t>(table.V));
        os.write(reinterpret_cast<const char*>(table.m.data()), static_cast<std::streamsize>(table.m.size() * sizeof(double)));
    }
    nlohmann::json side;
    side["order_file"] = order_file;
    side["probs_hash"] = probs_hash(table.probs);
    side["warp"] = table.warp.to_json();
    side["T"] = table.T;
    side["V"] = table.V;
    side["groups"] = table.order.num_groups;
    std::ofstream js(path + ".json");
    js << side.dump(2) << '\n';
}

/// Loads the grid only; order and probs stay empty unless the caller fills them.
inline ScheduleTable load_schedule(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw Error(Errc::io_error, "cannot read " + path);
    char magic[4];
    if (!is.read(magic, 4) || std::memcmp(magic, "ODSC", 4) != 0) throw Error(Errc::corrupt_file, "bad schedule magic");
    if (detail::get_u32(is) != kScheduleVersion) throw Error(Errc::version_mismatch, "unsupported schedule version");
    ScheduleTable table;
    table.T = static_cast<int>(detail::get_u32(is));
    table.V = static_cast<int>(detail::get_u32(is));
    table.m.resize(static_cast<std::size_t>(table.T + 1) * static_cast<std::size_t>(table.V));
    if (!is.read(reinterpret_cast<char*>(table.m.data()), static_cast<std::streamsize>(table.m.size() * sizeof(double))))
        throw Error(Errc::corrupt_file, "truncated schedule body");
    return table;
}

} // namespace ordiff

#endif // ORDIFF_SCHEDULE_HPP_
