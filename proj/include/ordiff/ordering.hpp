// SPDX-License-Identifier: Apache-2.0
//
// Destruction orders over vocabulary categories. Group 0 is absorbed first
// in the forward process, hence generated last in the reverse process.
// Public entry points that take a frequency direction name it by GENERATION
// order (common-first generation destroys rare categories first).
#ifndef ORDIFF_ORDERING_HPP_
#define ORDIFF_ORDERING_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "ordiff/error.hpp"
#include "ordiff/util.hpp"

namespace ordiff {

enum class Generation { common_first, rare_first };
enum class IgDestroy { high_first, low_first };

struct OrderingSpec {
    std::vector<int> group_of; // category id -> group in [0, num_groups)
    int num_groups = 0;

    int vocab_size() const noexcept { return static_cast<int>(group_of.size()); }

    std::vector<std::vector<int>> members() const {
        std::vector<std::vector<int>> out(static_cast<std::size_t>(num_groups));
        for (std::size_t c = 0; c < group_of.size(); ++c) out[static_cast<std::size_t>(group_of[c])].push_back(static_cast<int>(c));
        return out;
    }

    /// Category ids in destruction order (by group, then ascending id).
    std::vector<int> destruction_sequence() const {
        std::vector<int> out;
        for (const auto& g : members()) out.insert(out.end(), g.begin(), g.end());
        return out;
    }

    bool operator==(const OrderingSpec&) const = default;
};

/// Throws unless group_of is a total map into [0, G) and every group is
/// nonempty or holds only zero-probability categories.
inline void check_ordering(const OrderingSpec& spec, std::span<const double> probs = {}) {
    if (spec.num_groups < 1) throw Error(Errc::bad_config, "ordering needs at least one group");
    std::vector<int> used(static_cast<std::size_t>(spec.num_groups), 0);
    for (int g : spec.group_of) {
        if (g < 0 || g >= spec.num_groups) throw Error(Errc::bad_config, "group index out of range");
        ++used[static_cast<std::size_t>(g)];
    }
    if (!probs.empty() && probs.size() != spec.group_of.size())
        throw Error(Errc::shape_mismatch, "ordering covers " + std::to_string(spec.group_of.size()) +
                                              " categories, probabilities " + std::to_string(probs.size()));
    for (int g = 0; g < spec.num_groups; ++g)
        if (used[static_cast<std::size_t>(g)] == 0 && probs.empty())
            throw Error(Errc::bad_config, "group " + std::to_string(g) + " is empty");
}

/// Singleton groups, one per category, following `sequence`.
inline OrderingSpec singleton_ordering(std::span<const int> sequence) {
    OrderingSpec spec;
    spec.group_of.assign(sequence.size(), -1);
    spec.num_groups = static_cast<int>(sequence.size());
    for (std::size_t g = 0; g < sequence.size(); ++g) spec.group_of.at(static_cast<std::size_t>(sequence[g])) = static_cast<int>(g);
    check_ordering(spec);
    return spec;
}

/// One group for everything: standard absorbing diffusion.
inline OrderingSpec standard_ordering(int vocab_size) {
    if (vocab_size < 1) throw Error(Errc::empty_vocab, "empty vocabulary");
    return OrderingSpec{std::vector<int>(static_cast<std::size_t>(vocab_size), 0), 1};
}

/// Explicit groups listed in destruction order.
inline OrderingSpec ordering_from_groups(const std::vector<std::vector<int>>& groups, int vocab_size) {
    OrderingSpec spec{std::vector<int>(static_cast<std::size_t>(vocab_size), -1), static_cast<int>(groups.size())};
    for (std::size_t g = 0; g < groups.size(); ++g) {
        for (int c : groups[g]) {
            if (c < 0 || c >= vocab_size) throw Error(Errc::unknown_id, "category " + std::to_string(c));
            if (spec.group_of[static_cast<std::size_t>(c)] != -1)
                throw Error(Errc::bad_config, "category " + std::to_string(c) + " in two groups");
            spec.group_of[static_cast<std::size_t>(c)] = static_cast<int>(g);
        }
    }
    if (std::ranges::find(spec.group_of, -1) != spec.group_of.end())
        throw Error(Errc::bad_config, "groups do not cover every category");
    check_ordering(spec);
    return spec;
}

namespace detail {
// Zero-probability categories first (ascending id), then the rest sorted by
// `key` ascending with ties on ascending id.
template <class Key>
std::vector<int> destruction_sort(std::span<const double> probs, Key key) {
    std::vector<int> zero, rest;
    for (int c = 0; c < static_cast<int>(probs.size()); ++c) (probs[static_cast<std::size_t>(c)] > 0.0 ? rest : zero).push_back(c);
    std::ranges::stable_sort(rest, [&](int x, int y) { return key(x) < key(y); });
    zero.insert(zero.end(), rest.begin(), rest.end());
    return zero;
}
} // namespace detail

inline OrderingSpec order_frequency(std::span<const double> probs, Generation gen) {
    if (probs.empty()) throw Error(Errc::empty_vocab, "no categories to order");
    const double sign = gen == Generation::common_first ? 1.0 : -1.0;
    const auto seq = detail::destruction_sort(probs, [&](int c) { return sign * probs[static_cast<std::size_t>(c)]; });
    return singleton_ordering(seq);
}

inline OrderingSpec order_random(int vocab_size, std::uint64_t seed) {
    if (vocab_size < 1) throw Error(Errc::empty_vocab, "no categories to order");
    std::vector<int> seq(static_cast<std::size_t>(vocab_size));
    std::iota(seq.begin(), seq.end(), 0);
    Rng rng(seed);
    for (std::size_t i = seq.size(); i > 1; --i) std::swap(seq[i - 1], seq[uniform_index(rng, i)]);
    return singleton_ordering(seq);
}

// ---------------------------------------------------------------------------
// Expected information gain of observing a category's presence/absence in a
// fixed-length window, measured on the pooled within-window token marginal.

struct IGReport {
    std::vector<double> scores;   // nats, one per category
    std::vector<double> presence; // P(category occurs at least once in a window)
    std::size_t window_length = 0;
    std::size_t windows = 0;
};

/// Additive window statistics; shards merge by `merge`.
class IGAccumulator {
public:
    IGAccumulator(int vocab_size, std::size_t window_length)
        : V_(vocab_size), L_(window_length), totals_(static_cast<std::size_t>(vocab_size), 0),
          present_windows_(static_cast<std::size_t>(vocab_size), 0),
          present_counts_(static_cast<std::size_t>(vocab_size)) {}

    void add(std::span<const int> window) {
        if (window.size() != L_)
            throw Error(Errc::window_length_mismatch,
                        "window of " + std::to_string(window.size()) + " tokens, expected " + std::to_string(L_));
        local_.clear();
        for (int id : window) {
            if (id < 0 || id >= V_) throw Error(Errc::unknown_id, "id " + std::to_string(id));
            ++local_[id];
        }
        for (auto [id, n] : local_) {
            totals_[static_cast<std::size_t>(id)] += n;
            ++present_windows_[static_cast<std::size_t>(id)];
            auto& row = present_counts_[static_cast<std::size_t>(id)];
            for (auto [other, m] : local_) row[other] += m;
        }
        ++windows_;
    }

    void merge(const IGAccumulator& o) {
        if (o.V_ != V_ || o.L_ != L_) throw Error(Errc::window_length_mismatch, "incompatible accumulators");
        for (std::size_t i = 0; i < totals_.size(); ++i) {
            totals_[i] += o.totals_[i];
            present_windows_[i] += o.present_windows_[i];
            for (auto [k, v] : o.present_counts_[i]) present_counts_[i][k] += v;
        }
        windows_ += o.windows_;
    }

    std::size_t windows() const noexcept { return windows_; }

    IGReport report() const {
        if (windows_ == 0) throw Error(Errc::no_windows, "information gain needs at least one window");
        IGReport r;
        r.window_length = L_;
        r.windows = windows_;
        r.scores.assign(static_cast<std::size_t>(V_), 0.0);
        r.presence.assign(static_cast<std::size_t>(V_), 0.0);
        const double h_all = entropy_of_counts<std::uint64_t>(totals_);
        std::vector<std::uint64_t> present(static_cast<std::size_t>(V_)), absent(static_cast<std::size_t>(V_));
        for (int a = 0; a < V_; ++a) {
            const auto ua = static_cast<std::size_t>(a);
            const double p1 = static_cast<double>(present_windows_[ua]) / static_cast<double>(windows_);
            std::ranges::fill(present, 0);
            for (auto [k, v] : present_counts_[ua]) present[static_cast<std::size_t>(k)] = v;
            for (std::size_t k = 0; k < absent.size(); ++k) absent[k] = totals_[k] - present[k];
            double score = 0.0;
            if (p1 > 0.0) score += p1 * (h_all - entropy_of_counts<std::uint64_t>(present));
            if (p1 < 1.0) score += (1.0 - p1) * (h_all - entropy_of_counts<std::uint64_t>(absent));
            r.presence[ua] = p1;
            r.scores[ua] = score;
        }
        return r;
    }

private:
    int V_;
    std::size_t L_;
    std::size_t windows_ = 0;
    std::vector<std::uint64_t> totals_;
    std::vector<std::uint64_t> present_windows_;
    std::vector<std::unordered_map<int, std::uint64_t>> present_counts_;
    std::unordered_map<int, std::uint64_t> local_;
};

/// `windows` is any range of spans of equal length.
template <class Windows>
IGReport information_gain(Windows&& windows, int vocab_size) {
    std::size_t L = 0;
    std::optional<IGAccumulator> acc;
    for (const auto& w : windows) {
        if (!acc) {
            L = w.size();
            acc.emplace(vocab_size, L);
        }
        acc->add(std::span<const int>(w.data(), w.size()));
    }
    if (!acc) throw Error(Errc::no_windows, "information gain needs at least one window");
    return acc->report();
}

inline OrderingSpec order_information_gain(const IGReport& report, IgDestroy dir) {
    const double sign = dir == IgDestroy::low_first ? 1.0 : -1.0;
    std::vector<int> seq(report.scores.size());
    std::iota(seq.begin(), seq.end(), 0);
    std::ranges::stable_sort(seq, [&](int x, int y) {
        return sign * report.scores[static_cast<std::size_t>(x)] < sign * report.scores[static_cast<std::size_t>(y)];
    });
    return singleton_ordering(seq);
}

// ---------------------------------------------------------------------------
// Frequency blocking for large vocabularies.

/// Partitions categories sorted by frequency into `blocks` contiguous blocks
/// of roughly equal total skewed weight p^alpha. Zero-probability categories
/// join the first destroyed block.
inline OrderingSpec make_blocks(std::span<const double> probs, int blocks, double alpha,
                                Generation gen = Generation::common_first) {
    if (probs.empty()) throw Error(Errc::empty_vocab, "no categories to block");
    if (blocks < 1) throw Error(Errc::bad_config, "block count must be >= 1");
    if (!(alpha > 0.0)) throw Error(Errc::bad_config, "alpha must be > 0");
    std::vector<int> zero, rest;
    for (int c = 0; c < static_cast<int>(probs.size()); ++c) (probs[static_cast<std::size_t>(c)] > 0.0 ? rest : zero).push_back(c);
    if (static_cast<std::size_t>(blocks) > rest.size())
        throw Error(Errc::b_too_large, std::to_string(blocks) + " blocks for " + std::to_string(rest.size()) +
                                           " nonzero categories");
    // Ascending frequency, ties by ascending id.
    std::ranges::stable_sort(rest, [&](int x, int y) { return probs[static_cast<std::size_t>(x)] < probs[static_cast<std::size_t>(y)]; });
    std::vector<double> w(rest.size());
    double total = 0.0;
    for (std::size_t i = 0; i < rest.size(); ++i) total += w[i] = std::pow(probs[static_cast<std::size_t>(rest[i])], alpha);
    for (auto& x : w) x /= total;

    std::vector<int> block_of(rest.size());
    std::size_t i = 0;
    double cum = 0.0;
    for (int k = 0; k < blocks; ++k) {
        const double target = static_cast<double>(k + 1) / blocks;
        const std::size_t blocks_after = static_cast<std::size_t>(blocks - k - 1);
        std::size_t taken = 0;
        while (i < rest.size() && rest.size() - i > blocks_after) {
            const bool last = k == blocks - 1;
            const bool closer = std::abs(cum + w[i] - target) <= std::abs(cum - target);
            if (taken > 0 && !last && !closer) break;
            block_of[i] = k;
            cum += w[i++];
            ++taken;
        }
    }

    OrderingSpec spec{std::vector<int>(probs.size(), 0), blocks};
    // Block 0 holds the rarest categories; common-first generation destroys it first.
    for (std::size_t j = 0; j < rest.size(); ++j) {
        const int g = gen == Generation::common_first ? block_of[j] : blocks - 1 - block_of[j];
        spec.group_of[static_cast<std::size_t>(rest[j])] = g;
    }
    for (int c : zero) spec.group_of[static_cast<std::size_t>(c)] = 0;
    check_ordering(spec);
    return spec;
}

// ---------------------------------------------------------------------------
// Persistence: "G=<n>" header, then "token_id<TAB>group" lines.

inline void save_ordering(const OrderingSpec& spec, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw Error(Errc::io_error, "cannot write " + path);
    os << "G=" << spec.num_groups << '\n';
    for (std::size_t c = 0; c < spec.group_of.size(); ++c) os << c << '\t' << spec.group_of[c] << '\n';
}

inline OrderingSpec load_ordering(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw Error(Errc::io_error, "cannot read " + path);
    std::string line;
    if (!std::getline(is, line) || line.rfind("G=", 0) != 0) throw Error(Errc::parse_error, "missing G= header in " + path);
    OrderingSpec spec;
    spec.num_groups = std::stoi(line.substr(2));
    std::vector<std::pair<int, int>> rows;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        const auto tab = line.find('\t');
        if (tab == std::string::npos) throw Error(Errc::parse_error, "bad ordering line: " + line);
        rows.emplace_back(std::stoi(line.substr(0, tab)), std::stoi(line.substr(tab + 1)));
    }
    spec.group_of.assign(rows.size(), -1);
    for (auto [c, g] : rows) {
        if (c < 0 || static_cast<std::size_t>(c) >= rows.size()) throw Error(Errc::parse_error, "token id out of range");
        spec.group_of[static_cast<std::size_t>(c)] = g;
    }
    check_ordering(spec);
    return spec;
}

} // namespace ordiff

#endif // ORDIFF_ORDERING_HPP_
