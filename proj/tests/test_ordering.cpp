// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <set>

#include <gtest/gtest.h>

#include "ordiff/corpus.hpp"
#include "ordiff/ordering.hpp"
#include "test_support.hpp"

using namespace ordiff;
using ordiff::testing::code_of;

namespace {
double H(std::initializer_list<double> p) {
    double h = 0.0;
    for (double x : p)
        if (x > 0.0) h -= x * std::log(x);
    return h;
}
} // namespace

TEST(Frequency, ToyCommonFirstGenerationDestroysRareFirst) {
    const auto probs = toy_vocab().probs();
    // f has zero mass and goes first; then d, e (1/8) and a, b, c (1/4), ties by id.
    EXPECT_EQ(order_frequency(probs, Generation::common_first).destruction_sequence(), (std::vector<int>{5, 3, 4, 0, 1, 2}));
    EXPECT_EQ(order_frequency(probs, Generation::rare_first).destruction_sequence(), (std::vector<int>{5, 0, 1, 2, 3, 4}));
    EXPECT_EQ(order_frequency(probs, Generation::common_first).num_groups, 6);
    EXPECT_EQ(code_of([] { order_frequency({}, Generation::common_first); }), Errc::empty_vocab);
}

TEST(Standard, SingleGroup) {
    const auto s = standard_ordering(4);
    EXPECT_EQ(s.num_groups, 1);
    EXPECT_EQ(s.group_of, (std::vector<int>{0, 0, 0, 0}));
}

TEST(Groups, ExplicitGroupsValidated) {
    const auto s = ordering_from_groups({{2, 3, 4, 5}, {0, 1}}, 6);
    EXPECT_EQ(s.group_of, (std::vector<int>{1, 1, 0, 0, 0, 0}));
    EXPECT_EQ(code_of([] { ordering_from_groups({{0}, {0, 1}}, 2); }), Errc::bad_config);
    EXPECT_EQ(code_of([] { ordering_from_groups({{0}}, 2); }), Errc::bad_config);
    EXPECT_EQ(code_of([] { ordering_from_groups({{0, 7}}, 2); }), Errc::unknown_id);
    EXPECT_EQ(code_of([] { ordering_from_groups({{0, 1}, {}}, 2); }), Errc::bad_config);
}

TEST(Random, PermutationDeterministicAndUniform) {
    EXPECT_EQ(order_random(10, 42), order_random(10, 42));
    const auto seq = order_random(10, 42).destruction_sequence();
    EXPECT_EQ(std::set<int>(seq.begin(), seq.end()).size(), 10u);

    // Position of category 0 across seeds: chi-square against uniform.
    const int n = 6000;
    std::vector<int> counts(6, 0);
    for (int s = 0; s < n; ++s) ++counts[static_cast<std::size_t>(order_random(6, static_cast<std::uint64_t>(s)).group_of[0])];
    double chi2 = 0.0;
    for (int c : counts) chi2 += (c - n / 6.0) * (c - n / 6.0) / (n / 6.0);
    EXPECT_LT(chi2, 20.52); // 5 dof, p = 0.001
}

TEST(InformationGain, HandComputedScores) {
    // Windows {00, 01, 12, 22}: each category is present in half the windows.
    const std::vector<std::vector<int>> windows{{0, 0}, {0, 1}, {1, 2}, {2, 2}};
    const auto r = information_gain(windows, 3);
    const double h_all = H({3.0 / 8, 2.0 / 8, 3.0 / 8});
    const double s0 = 0.5 * (h_all - H({0.75, 0.25})) + 0.5 * (h_all - H({0.25, 0.75}));
    const double s1 = 0.5 * (h_all - H({0.25, 0.5, 0.25})) + 0.5 * (h_all - H({0.5, 0.5}));
    EXPECT_NEAR(r.scores[0], s0, 1e-12);
    EXPECT_NEAR(r.scores[1], s1, 1e-12);
    EXPECT_NEAR(r.scores[2], s0, 1e-12);
    EXPECT_NEAR(s0, 0.5198603854199589, 1e-12);
    EXPECT_NEAR(s1, 0.2157615543388357, 1e-12);
    EXPECT_EQ(r.windows, 4u);
    EXPECT_DOUBLE_EQ(r.presence[1], 0.5);
    // High-gain categories destroyed first: 0, 2 (tie by id), then 1.
    EXPECT_EQ(order_information_gain(r, IgDestroy::high_first).destruction_sequence(), (std::vector<int>{0, 2, 1}));
    EXPECT_EQ(order_information_gain(r, IgDestroy::low_first).destruction_sequence(), (std::vector<int>{1, 0, 2}));
}

TEST(InformationGain, ShardsMergeAdditively) {
    Rng rng(3);
    std::vector<std::vector<int>> w;
    for (int i = 0; i < 200; ++i) {
        std::vector<int> x(4);
        for (auto& v : x) v = static_cast<int>(uniform_index(rng, 5));
        w.push_back(x);
    }
    IGAccumulator whole(5, 4), left(5, 4), right(5, 4);
    for (std::size_t i = 0; i < w.size(); ++i) {
        whole.add(w[i]);
        (i < 77 ? left : right).add(w[i]);
    }
    left.merge(right);
    const auto a = whole.report(), b = left.report();
    for (int c = 0; c < 5; ++c) EXPECT_NEAR(a.scores[static_cast<std::size_t>(c)], b.scores[static_cast<std::size_t>(c)], 1e-12);
    EXPECT_EQ(code_of([&] { whole.add(std::vector<int>{1, 2}); }), Errc::window_length_mismatch);
    EXPECT_EQ(code_of([] { IGAccumulator(3, 2).report(); }), Errc::no_windows);
}

TEST(InformationGain, TrivialCorpora) {
    const std::vector<std::vector<int>> alternating{{0, 1}, {1, 0}, {0, 1}, {1, 0}};
    const auto r0 = information_gain(alternating, 2);
    EXPECT_NEAR(r0.scores[0], 0.0, 1e-15);
    EXPECT_NEAR(r0.scores[1], 0.0, 1e-15);
    const std::vector<std::vector<int>> split{{0, 0}, {1, 1}, {0, 0}, {1, 1}};
    const auto r1 = information_gain(split, 2);
    EXPECT_NEAR(r1.scores[0], std::log(2.0), 1e-12);
    EXPECT_NEAR(r1.scores[1], std::log(2.0), 1e-12);
}

TEST(InformationGain, ToyScoresMatchIndependentEstimate) {
    // Reference values from a separate Python estimate on 10^5 stride-1
    // windows of length 3. The rule fill e (b?b) scores above both anchors.
    Rng rng(5);
    IGAccumulator acc(toy::kVocabSize, 3);
    while (acc.windows() < 100000) {
        const auto s = generate_toy_sequence(301, rng);
        for (auto win : window_iter(s.ids, 3, 1)) {
            if (acc.windows() == 100000) break;
            acc.add(win);
        }
    }
    const auto r = acc.report();
    const std::vector<double> ref{0.3108, 0.2640, 0.2476, 0.1464, 0.3239};
    for (int c = 0; c < 5; ++c) EXPECT_NEAR(r.scores[static_cast<std::size_t>(c)], ref[static_cast<std::size_t>(c)], 0.01);
    EXPECT_GT(r.scores[toy::a], r.scores[toy::c]);
    EXPECT_GT(r.scores[toy::b], r.scores[toy::d]);
    EXPECT_GT(r.scores[toy::e], r.scores[toy::a]);
    EXPECT_EQ(r.scores[toy::f], 0.0);
}

TEST(Blocks, GreedyContiguousBlocks) {
    const std::vector<double> p{0.4, 0.3, 0.15, 0.1, 0.05, 0.0};
    // Weights p: rare block {4,3,2,1} reaches 0.6 of the mass, closest to 1/2.
    EXPECT_EQ(make_blocks(p, 2, 1.0).group_of, (std::vector<int>{1, 0, 0, 0, 0, 0}));
    // Weights sqrt(p) move the split toward equal counts.
    EXPECT_EQ(make_blocks(p, 2, 0.5).group_of, (std::vector<int>{1, 1, 0, 0, 0, 0}));
    // Rare-first generation destroys the common block first; the zero
    // category still goes first.
    EXPECT_EQ(make_blocks(p, 2, 1.0, Generation::rare_first).group_of, (std::vector<int>{0, 1, 1, 1, 1, 0}));
    EXPECT_EQ(make_blocks(p, 1, 1.0).num_groups, 1);
    const auto five = make_blocks(p, 5, 1.0);
    for (const auto& g : five.members()) EXPECT_FALSE(g.empty());
    EXPECT_EQ(code_of([&] { make_blocks(p, 6, 1.0); }), Errc::b_too_large);
    EXPECT_EQ(code_of([&] { make_blocks(p, 0, 1.0); }), Errc::bad_config);
    EXPECT_EQ(code_of([&] { make_blocks(p, 2, 0.0); }), Errc::bad_config);
}

TEST(Blocks, EveryBlockCountGivesContiguousFrequencyBands) {
    Rng rng(9);
    for (int trial = 0; trial < 50; ++trial) {
        const int V = 2 + static_cast<int>(uniform_index(rng, 30));
        std::vector<double> p(static_cast<std::size_t>(V));
        double z = 0.0;
        for (auto& x : p) z += x = uniform01(rng) + 1e-3;
        for (auto& x : p) x /= z;
        for (int B = 1; B <= V; ++B) {
            const auto s = make_blocks(p, B, 0.5 + uniform01(rng));
            ASSERT_EQ(s.num_groups, B);
            // A category in a later group is never rarer than one in an earlier group.
            for (int x = 0; x < V; ++x)
                for (int y = 0; y < V; ++y)
                    if (s.group_of[static_cast<std::size_t>(x)] < s.group_of[static_cast<std::size_t>(y)])
                        EXPECT_LE(p[static_cast<std::size_t>(x)], p[static_cast<std::size_t>(y)]);
        }
    }
}

TEST(Persistence, OrderingRoundTrip) {
    const auto dir = ordiff::testing::temp_dir("ordering");
    const auto s = make_blocks(std::vector<double>{0.5, 0.2, 0.2, 0.1}, 3, 1.0);
    save_ordering(s, (dir / "o.tsv").string());
    EXPECT_EQ(load_ordering((dir / "o.tsv").string()), s);
}
