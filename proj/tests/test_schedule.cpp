// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <fstream>

#include <gtest/gtest.h>

#include "ordiff/corpus.hpp"
#include "ordiff/ordering.hpp"
#include "ordiff/schedule.hpp"
#include "test_support.hpp"

using namespace ordiff;
using ordiff::testing::code_of;

namespace {

std::vector<double> random_probs(Rng& rng, int V, bool allow_zero = false) {
    std::vector<double> p(static_cast<std::size_t>(V));
    double z = 0.0;
    for (auto& x : p) {
        x = (allow_zero && uniform01(rng) < 0.15) ? 0.0 : -std::log(1.0 - uniform01(rng));
        z += x;
    }
    if (z == 0.0) {
        p[0] = 1.0;
        p[1] = 1.0;
        z = 2.0;
    }
    for (auto& x : p) x /= z;
    return p;
}

// 1 - I(z0; z_t) / H(z0) for one position, by explicit enumeration of the
// joint table over (x, z) with z in {x, mask}.
double ratio_by_joint(std::span<const double> masks, std::span<const double> probs) {
    const std::size_t V = probs.size();
    std::vector<std::vector<double>> joint(V, std::vector<double>(V + 1, 0.0));
    for (std::size_t x = 0; x < V; ++x) {
        joint[x][x] = probs[x] * (1.0 - masks[x]);
        joint[x][V] = probs[x] * masks[x];
    }
    std::vector<double> pz(V + 1, 0.0);
    for (std::size_t x = 0; x < V; ++x)
        for (std::size_t z = 0; z <= V; ++z) pz[z] += joint[x][z];
    double mi = 0.0, h = 0.0;
    for (std::size_t x = 0; x < V; ++x) {
        if (probs[x] > 0.0) h -= probs[x] * std::log(probs[x]);
        for (std::size_t z = 0; z <= V; ++z)
            if (joint[x][z] > 0.0) mi += joint[x][z] * std::log(joint[x][z] / (probs[x] * pz[z]));
    }
    return 1.0 - mi / h;
}

MaskState random_sequential(Rng& rng, int G) {
    MaskState s = MaskState::zeros(G);
    const auto k = uniform_index(rng, static_cast<std::size_t>(G) + 1);
    for (std::size_t g = 0; g < k; ++g) s.m[g] = 1.0;
    if (k < static_cast<std::size_t>(G)) s.m[k] = uniform01(rng);
    return s;
}

} // namespace

TEST(InfoRatio, MatchesJointEnumeration) {
    Rng rng(21);
    for (int trial = 0; trial < 500; ++trial) {
        const int V = 2 + static_cast<int>(uniform_index(rng, 7));
        const auto p = random_probs(rng, V);
        const auto order = order_random(V, static_cast<std::uint64_t>(trial));
        const auto s = random_sequential(rng, V);
        const auto masks = category_masks(s, order);
        EXPECT_NEAR(info_ratio(s, order, p), ratio_by_joint(masks, p), 1e-9);
    }
}

TEST(InfoRatio, EndpointsAndDegenerateEntropy) {
    const std::vector<double> p{0.5, 0.3, 0.2};
    const auto order = standard_ordering(3);
    EXPECT_EQ(info_ratio(MaskState::zeros(1), order, p), 0.0);
    EXPECT_NEAR(info_ratio(MaskState::ones(1), order, p), 1.0, 1e-15);
    EXPECT_NEAR(info_ratio(MaskState{{0.37}}, order, p), 0.37, 1e-15); // G = 1: ratio equals m
    EXPECT_EQ(code_of([] { neg_entropy_checked(std::vector<double>{1.0, 0.0}); }), Errc::degenerate_entropy);
}

TEST(BoundaryRatios, UniformThreeSingletons) {
    // Masking one of three equiprobable categories leaves no uncertainty
    // given the mask; two leave log 2 out of log 3 at mass 2/3.
    const std::vector<double> p(3, 1.0 / 3.0);
    const auto r = boundary_ratios(order_frequency(p, Generation::common_first), p);
    ASSERT_EQ(r.size(), 4u);
    EXPECT_EQ(r[0], 0.0);
    EXPECT_NEAR(r[1], 0.0, 1e-15);
    EXPECT_NEAR(r[2], 2.0 / 3.0 * std::log(2.0) / std::log(3.0), 1e-12);
    EXPECT_NEAR(r[2], 0.42061983571430, 1e-12);
    EXPECT_EQ(r[3], 1.0);
}

TEST(Schedule, SingleGroupIsLinear) {
    Rng rng(4);
    for (int trial = 0; trial < 50; ++trial) {
        const auto p = random_probs(rng, 2 + static_cast<int>(uniform_index(rng, 30)));
        for (int T : {1, 7, 64}) {
            const auto table = build_schedule(standard_ordering(static_cast<int>(p.size())), p, T);
            for (int t = 0; t <= T; ++t)
                for (int c = 0; c < table.V; ++c) EXPECT_NEAR(table.at(t, c), static_cast<double>(t) / T, 1e-10);
        }
    }
}

TEST(Schedule, ToyCommonFirstGolden) {
    // Frozen from an independent 40-digit bisection over the sequential path.
    const auto v = toy_vocab();
    const auto table = build_schedule(order_frequency(v.probs(), Generation::common_first), v.probs(), 4);
    const std::vector<std::vector<double>> golden{
        {0, 0, 0, 0, 0, 0},
        {0.4234155896380679, 0, 0, 1, 1, 1},
        {1, 0.3770804214035271, 0, 1, 1, 1},
        {1, 1, 0.1793215027804511, 1, 1, 1},
        {1, 1, 1, 1, 1, 1},
    };
    for (int t = 0; t <= 4; ++t)
        for (int c = 0; c < 6; ++c) EXPECT_NEAR(table.at(t, c), golden[static_cast<std::size_t>(t)][static_cast<std::size_t>(c)], 1e-9);
}

TEST(Schedule, RealizedRatioTracksTime) {
    Rng rng(8);
    for (int trial = 0; trial < 100; ++trial) {
        const int V = 2 + static_cast<int>(uniform_index(rng, 10));
        const auto p = random_probs(rng, V, true);
        const auto order = order_random(V, static_cast<std::uint64_t>(trial));
        const int T = 1 + static_cast<int>(uniform_index(rng, 40));
        const auto table = build_schedule(order, p, T);
        const auto d = validate_schedule(table);
        ASSERT_TRUE(d.ok()) << d.violations.front().what;
        if (d.realized_ratio.empty()) continue; // single category left
        for (int t = 0; t <= T; ++t) EXPECT_NEAR(d.realized_ratio[static_cast<std::size_t>(t)], static_cast<double>(t) / T, 1e-9);
    }
}

TEST(Schedule, MonotoneAlongSequentialPath) {
    Rng rng(13);
    for (int trial = 0; trial < 200; ++trial) {
        const int G = 2 + static_cast<int>(uniform_index(rng, 7));
        const auto p = random_probs(rng, G);
        const auto order = order_random(G, static_cast<std::uint64_t>(trial));
        double prev = -1.0;
        for (int k = 0; k <= 100; ++k) {
            const double s = G * k / 100.0;
            MaskState st = MaskState::zeros(G);
            for (int g = 0; g < G; ++g) st.m[static_cast<std::size_t>(g)] = std::clamp(s - g, 0.0, 1.0);
            const double r = info_ratio(st, order, p);
            EXPECT_GE(r, prev - 1e-12);
            prev = r;
        }
    }
}

TEST(Schedule, ZeroProbabilityCategoriesAbsorbedFromRowOne) {
    const auto v = toy_vocab();
    for (auto gen : {Generation::common_first, Generation::rare_first}) {
        const auto table = build_schedule(order_frequency(v.probs(), gen), v.probs(), 16);
        for (int t = 1; t <= 16; ++t) EXPECT_EQ(table.at(t, toy::f), 1.0);
        EXPECT_TRUE(validate_schedule(table).ok());
    }
}

TEST(Schedule, SingleCategoryFallsBackToLinear) {
    const std::vector<double> p{1.0, 0.0};
    const auto table = build_schedule(standard_ordering(2), p, 4);
    EXPECT_DOUBLE_EQ(table.at(2, 0), 0.5);
    EXPECT_EQ(table.at(1, 1), 1.0);
    EXPECT_TRUE(validate_schedule(table).ok());
}

TEST(Schedule, LargeTAndValidation) {
    Rng rng(3);
    const auto p = random_probs(rng, 27);
    for (int T : {2, 16, 1000}) {
        const auto table = build_schedule(order_frequency(p, Generation::common_first), p, T);
        EXPECT_TRUE(validate_schedule(table).ok()) << "T=" << T;
    }
    EXPECT_EQ(code_of([&] { build_schedule(standard_ordering(27), p, 0); }), Errc::bad_config);
}

TEST(Validate, FlagsTamperedTables) {
    const std::vector<double> p{0.5, 0.3, 0.2};
    auto table = build_schedule(order_frequency(p, Generation::common_first), p, 8);
    ASSERT_TRUE(validate_schedule(table).ok());
    auto bad = table;
    bad.at(3, 0) = bad.at(2, 0) - 0.1;
    EXPECT_FALSE(validate_schedule(bad).ok());
    bad = table;
    bad.at(0, 1) = 0.1;
    EXPECT_FALSE(validate_schedule(bad).ok());
    bad = table;
    bad.at(8, 2) = 0.9;
    EXPECT_FALSE(validate_schedule(bad).ok());
    bad = table;
    bad.at(4, 1) = 1.5;
    EXPECT_FALSE(validate_schedule(bad).ok());
    bad = table;
    bad.m.pop_back();
    EXPECT_FALSE(validate_schedule(bad).ok());
    // Two partially masked groups at once break the sequential form.
    bad = table;
    for (int c = 0; c < 3; ++c) bad.at(4, c) = 0.5;
    EXPECT_FALSE(validate_schedule(bad).ok());
}

TEST(Warp, IdentityAndGroupWeights) {
    EXPECT_TRUE(Warp::identity().is_identity());
    const std::vector<double> bounds{0.0, 0.2, 1.0};
    const std::vector<double> ones{1.0, 1.0};
    const auto w1 = Warp::from_group_weights(bounds, ones);
    for (double s : {0.0, 0.1, 0.2, 0.55, 1.0}) EXPECT_NEAR(w1(s), s, 1e-15);
    // Giving group 0 four times the time: its segment spans 0.8/1.6 = 1/2.
    const std::vector<double> skew{4.0, 1.0};
    const auto w4 = Warp::from_group_weights(bounds, skew);
    EXPECT_NEAR(w4(0.5), 0.2, 1e-15);
    EXPECT_NEAR(w4(0.25), 0.1, 1e-15);
    EXPECT_NEAR(w4(0.75), 0.6, 1e-15);
    EXPECT_EQ(Warp::from_json(w4.to_json()), w4);
    EXPECT_EQ(code_of([&] { Warp::from_group_weights(bounds, std::vector<double>{1.0}); }), Errc::shape_mismatch);
    EXPECT_EQ(code_of([&] { Warp::from_group_weights(bounds, std::vector<double>{0.0, 1.0}); }), Errc::bad_config);
}

TEST(Warp, AlignsToyPhaseBoundaryToAStep) {
    // Fills destroyed first, anchors last: with the group-0 segment given
    // weight w, row t=1 of a T=2 table lands exactly on the boundary.
    const auto v = toy_vocab();
    const auto order = ordering_from_groups({{2, 3, 4, 5}, {0, 1}}, 6);
    const auto bounds = boundary_ratios(order, v.probs());
    const double r1 = bounds[1];
    const std::vector<double> w{(1.0 - r1) / r1, 1.0};
    const auto table = build_schedule(order, v.probs(), 2, Warp::from_group_weights(bounds, w));
    EXPECT_EQ(table.at(1, toy::c), 1.0);
    EXPECT_EQ(table.at(1, toy::a), 0.0);
    EXPECT_TRUE(validate_schedule(table).ok());
}

TEST(Persistence, ScheduleRoundTripAndSidecar) {
    const auto dir = ordiff::testing::temp_dir("schedule");
    const std::vector<double> p{0.6, 0.3, 0.1};
    const auto table = build_schedule(order_frequency(p, Generation::rare_first), p, 5);
    const auto path = (dir / "s.bin").string();
    save_schedule(table, path, "order.tsv");
    const auto back = load_schedule(path);
    EXPECT_EQ(back.T, 5);
    EXPECT_EQ(back.V, 3);
    EXPECT_EQ(back.m, table.m);
    std::ifstream js(path + ".json");
    const auto side = nlohmann::json::parse(js);
    EXPECT_EQ(side["order_file"], "order.tsv");
    EXPECT_EQ(side["probs_hash"], probs_hash(p));
    EXPECT_EQ(side["T"], 5);

    std::ofstream(dir / "bad.bin") << "XXXX";
    EXPECT_EQ(code_of([&] { load_schedule((dir / "bad.bin").string()); }), Errc::corrupt_file);
    {
        std::ofstream os(dir / "short.bin", std::ios::binary);
        os.write("ODSC", 4);
        const std::uint32_t hdr[3] = {1, 5, 3};
        os.write(reinterpret_cast<const char*>(hdr), sizeof hdr);
    }
    EXPECT_EQ(code_of([&] { load_schedule((dir / "short.bin").string()); }), Errc::corrupt_file);
}
