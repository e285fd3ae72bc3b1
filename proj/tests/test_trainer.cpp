// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "ordiff/trainer.hpp"
#include "ordiff/toy_oracle.hpp"
#include "test_support.hpp"

using namespace ordiff;
using ordiff::testing::code_of;
using ordiff::testing::temp_dir;

namespace {

ExperimentConfig small_toy(std::uint64_t seed = 1) {
    ExperimentConfig c;
    c.name = "toy-small";
    c.data.toy_len = 9;
    c.data.toy_count = 400;
    c.data.seed = 2;
    c.T = 4;
    c.seq_len = 9;
    c.model.layers = 1;
    c.model.model_dim = 16;
    c.model.heads = 2;
    c.model.ff_dim = 32;
    c.optim.lr = 3e-3;
    c.optim.batch_size = 8;
    c.steps = 20;
    c.eval.every = 10;
    c.eval.sequences = 16;
    c.eval.samples = 1;
    c.seed = seed;
    return c;
}

} // namespace

TEST(Config, JsonRoundTripAndRequiredSeed) {
    auto c = small_toy();
    c.skew = {{1, 2.0}};
    c.ordering.strategy = "groups";
    c.ordering.groups = {{2, 3, 4, 5}, {0, 1}};
    c.orderings["std"] = OrderingRequest{};
    const nlohmann::json j = c;
    const auto back = j.get<ExperimentConfig>();
    EXPECT_EQ(nlohmann::json(back), j);

    auto no_seed = j;
    no_seed.erase("seed");
    EXPECT_EQ(code_of([&] { no_seed.get<ExperimentConfig>(); }), Errc::bad_config);
}

TEST(Config, RelativeDataDirResolvesAgainstConfigFile) {
    const auto dir = temp_dir("trainer_cfg");
    std::ofstream(dir / "exp.json") << R"({"seed": 3, "data": {"kind": "prepared", "dir": "data"}})";
    const auto c = load_experiment((dir / "exp.json").string());
    EXPECT_EQ(c.data.dir, (dir / "data").string());
    EXPECT_EQ(c.seed, 3u);
    EXPECT_EQ(code_of([&] { validate(c); }), Errc::io_error); // files missing
    std::ofstream(dir / "bad.json") << "{";
    EXPECT_EQ(code_of([&] { load_experiment((dir / "bad.json").string()); }), Errc::parse_error);
    auto k = small_toy();
    k.data.kind = "mystery";
    EXPECT_EQ(code_of([&] { validate(k); }), Errc::bad_config);
}

TEST(Ordering, StrategiesResolve) {
    const auto v = toy_vocab();
    const Corpus train = make_toy_corpus(31, 50, 4);
    OrderingRequest r;
    EXPECT_EQ(resolve_ordering(r, v).num_groups, 1);
    r.strategy = "common-first";
    EXPECT_EQ(resolve_ordering(r, v), order_frequency(v.probs(), Generation::common_first));
    r.blocks = 2;
    EXPECT_EQ(resolve_ordering(r, v).num_groups, 2);
    r = {};
    r.strategy = "groups";
    r.groups = {{2, 3, 4, 5}, {0, 1}};
    EXPECT_EQ(resolve_ordering(r, v).group_of, (std::vector<int>{1, 1, 0, 0, 0, 0}));
    r = {};
    r.strategy = "info-gain";
    r.ig_window = 3;
    EXPECT_EQ(code_of([&] { resolve_ordering(r, v); }), Errc::bad_config);
    const auto hi = resolve_ordering(r, v, &train);
    r.strategy = "info-gain-low";
    const auto lo = resolve_ordering(r, v, &train);
    auto rev = hi.destruction_sequence();
    std::ranges::reverse(rev);
    EXPECT_EQ(lo.destruction_sequence(), rev);
    r.strategy = "nope";
    EXPECT_EQ(code_of([&] { resolve_ordering(r, v); }), Errc::bad_config);
}

TEST(Train, ZeroStepsLogsOnlyTheInitialEvaluation) {
    auto c = small_toy();
    c.steps = 0;
    const auto res = train(c);
    ASSERT_EQ(res.log.records().size(), 1u);
    EXPECT_EQ(res.log.back().step, 0);
    EXPECT_TRUE(std::isnan(res.log.back().train_nelbo_bits));
}

TEST(Train, SameSeedGivesIdenticalLogs) {
    const auto a = train(small_toy(5)), b = train(small_toy(5)), d = train(small_toy(6));
    EXPECT_TRUE(a.log.same_values(b.log));
    EXPECT_FALSE(a.log.same_values(d.log));
    std::vector<long> steps;
    for (const auto& r : a.log.records()) steps.push_back(r.step);
    EXPECT_EQ(steps, (std::vector<long>{0, 10, 20}));
}

TEST(Train, PerplexityIsTwoToTheBits) {
    const auto res = train(small_toy());
    for (const auto& r : res.log.records()) EXPECT_NEAR(r.perplexity, std::exp2(r.valid_nelbo_bits), 1e-9);
}

TEST(Train, CheckpointReEvaluationReproducesLog) {
    const auto dir = temp_dir("trainer_ckpt");
    auto c = small_toy();
    c.out_dir = dir.string();
    const auto ds = load_dataset(c);
    const auto res = train(c, ds, resolve_ordering(c.ordering, ds.vocab));
    ASSERT_FALSE(res.checkpoint_path.empty());
    const auto run = load_run(res.checkpoint_path);
    EXPECT_EQ(run.ckpt.meta["split_hash"], ds.split_hash);
    EXPECT_EQ(run.eval_seed, res.eval_seed);
    const Transformer<float> model(run.ckpt.config, run.ckpt.params);
    const auto ev = evaluate(model, ds.valid, run.table, EvalOptions{c.eval.samples, run.eval_seed, 1, c.eval.exact_limit});
    EXPECT_EQ(ev.bits_per_token, res.log.back().valid_nelbo_bits);

    std::ifstream is(dir / "metrics.ndjson");
    EXPECT_TRUE(MetricsLog::read_ndjson(is).same_values(res.log));
    EXPECT_TRUE(std::filesystem::exists(dir / "config.json"));
}

TEST(Train, DivergenceKeepsLastGoodCheckpoint) {
    const auto dir = temp_dir("trainer_diverge");
    auto c = small_toy();
    c.out_dir = dir.string();
    c.optim.lr = 1e30;
    c.optim.clip_norm = 0.0;
    c.eval.checkpoint_every = 1;
    c.steps = 10;
    EXPECT_EQ(code_of([&] { train(c); }), Errc::non_finite_loss);
    const auto path = (dir / "checkpoint.odck").string();
    ASSERT_TRUE(std::filesystem::exists(path));
    const auto ck = load_checkpoint<float>(path);
    EXPECT_TRUE(ck.params.all_finite());
}

TEST(Evaluate, IncompatibleScheduleRaises) {
    const auto c = small_toy();
    const auto ds = load_dataset(c);
    const Transformer<float> model(model_config(c, 6));
    auto other = c;
    other.T = 5;
    const auto table = make_schedule(other, standard_ordering(6), ds.vocab);
    EXPECT_EQ(code_of([&] { evaluate(model, ds.valid, table); }), Errc::incompatible_schedule);
}

TEST(Evaluate, UniformModelScoresLogV) {
    const int V = 27;
    const auto table = build_schedule(standard_ordering(V), std::vector<double>(V, 1.0 / V), 8);
    Rng rng(3);
    std::vector<TokenSequence> seqs(20);
    for (auto& s : seqs)
        for (int i = 0; i < 8; ++i) s.ids.push_back(static_cast<int>(uniform_index(rng, V)));
    const auto r = evaluate(UniformDenoiser{V}, std::span<const TokenSequence>(seqs), table);
    EXPECT_NEAR(r.bits_per_token, std::log2(27.0), 1e-9);
    EXPECT_NEAR(r.perplexity, 27.0, 1e-7);
}

TEST(Evaluate, ToyOracleReachesTheEntropyRate) {
    const auto v = toy_vocab();
    const auto order = ordering_from_groups({{2, 3, 4, 5}, {0, 1}}, 6);
    const auto bounds = boundary_ratios(order, v.probs());
    const std::vector<double> w{(1.0 - bounds[1]) / bounds[1], 1.0};
    const auto table = build_schedule(order, v.probs(), 16, Warp::from_group_weights(bounds, w));
    const auto corpus = make_toy_corpus(31, 64, 9);
    const auto r = evaluate(ToyOracle(table), std::span<const TokenSequence>(corpus.docs), table, EvalOptions{4, 1, 1});
    // 16 anchors of one bit over 31 tokens; the asymptotic rate is 0.5.
    EXPECT_NEAR(r.bits_per_token, 0.5, 0.02);
    EXPECT_NEAR(r.bits_per_token, 16.0 / 31.0, 0.01);
}

TEST(Train, FullyMaskedPredictionLearnsTheMarginal) {
    auto c = small_toy(8);
    c.T = 2;
    c.steps = 1000;
    c.data.toy_count = 4000;
    c.eval.every = 0;
    c.model.model_dim = 32;
    c.model.heads = 4;
    c.model.ff_dim = 64;
    c.optim.batch_size = 64;
    c.optim.lr = 5e-4;
    const auto res = train(c);
    const auto out = res.model.predict(std::vector<int>(9, 6), c.T);
    const Eigen::RowVectorXd mean = out.probs.colwise().mean();
    // Length-9 toy sequences: 5 anchors, 4 fills.
    const std::vector<double> expect{5.0 / 18, 5.0 / 18, 2.0 / 9, 1.0 / 9, 1.0 / 9, 0.0};
    double l1 = 0.0;
    for (int k = 0; k < 6; ++k) l1 += std::abs(mean(k) - expect[static_cast<std::size_t>(k)]);
    // Untrained output is uniform over 7 ids (L1 near 0.5); SGD noise leaves a few percent.
    EXPECT_LT(l1, 0.1) << mean;
}

TEST(Compare, RowsRankAndRepeats) {
    auto c = small_toy();
    c.steps = 10;
    c.eval.every = 0;
    const auto single = compare_orderings(c, {"standard"});
    ASSERT_EQ(single.rows.size(), 1u);
    EXPECT_EQ(single.rows[0].rank, 1);
    EXPECT_EQ(single.rows[0].std_bits, 0.0);

    c.orderings["ordered"] = OrderingRequest{"groups", 0, 1.0, 8, 0, {{2, 3, 4, 5}, {0, 1}}, ""};
    const auto two = compare_orderings(c, {"standard", "ordered"}, 2);
    ASSERT_EQ(two.rows.size(), 2u);
    ASSERT_EQ(two.logs.size(), 4u);
    EXPECT_LE(two.rows[0].mean_bits, two.rows[1].mean_bits);
    EXPECT_EQ(two.rows[0].rank, 1);
    EXPECT_EQ(two.rows[1].rank, 2);
    for (const auto& r : two.rows) {
        ASSERT_EQ(r.final_bits.size(), 2u);
        EXPECT_NE(r.final_bits[0], r.final_bits[1]); // repeats use different seeds
        EXPECT_NEAR(r.mean_bits, 0.5 * (r.final_bits[0] + r.final_bits[1]), 1e-15);
    }
    // Repeat 0 of the standard strategy is the base-seed run.
    EXPECT_TRUE(two.logs[0].log.same_values(single.logs[0].log));
    std::ostringstream table;
    write_compare_table(two, table);
    EXPECT_NE(table.str().find("ordered"), std::string::npos);
    EXPECT_EQ(code_of([&] { compare_orderings(c, {}); }), Errc::empty_input);
}

TEST(Csv, ExportRoundTripsExactly) {
    MetricsLog a, b;
    a.append({0, std::numeric_limits<double>::quiet_NaN(), 2.5, std::exp2(2.5), 0.1});
    a.append({10, 2.0, 1.0 / 3.0, std::exp2(1.0 / 3.0), 0.2});
    b.append({0, 1.0, 0.1, std::exp2(0.1), 0.3});
    const std::vector<LabeledLog> logs{{"standard", 0, a}, {"standard", 1, b}};
    std::stringstream ss;
    export_metrics_csv(std::span<const LabeledLog>(logs), ss);
    const auto rows = read_metrics_csv(ss);
    ASSERT_EQ(rows.size(), 3u);
    EXPECT_EQ(rows[0], (CsvRow{"standard", 0, 0, 2.5, std::exp2(2.5)}));
    EXPECT_EQ(rows[1].valid_bits, 1.0 / 3.0);
    EXPECT_EQ(rows[1].perplexity, std::exp2(1.0 / 3.0));
    EXPECT_EQ(rows[2].repeat, 1);

    std::stringstream one;
    export_metrics_csv(std::span<const LabeledLog>(logs).first(1), one);
    std::string line;
    int n = 0;
    while (std::getline(one, line)) ++n;
    EXPECT_EQ(n, 3); // header + two records

    std::stringstream none;
    EXPECT_EQ(code_of([&] { export_metrics_csv({}, none); }), Errc::empty_input);
    std::stringstream bad("x,y\n");
    EXPECT_EQ(code_of([&] { read_metrics_csv(bad); }), Errc::parse_error);
}

TEST(Metrics, StepsMustIncrease) {
    MetricsLog log;
    log.append({5, 0, 1, 2, 0});
    EXPECT_EQ(code_of([&] { log.append({5, 0, 1, 2, 0}); }), Errc::bad_config);
    std::stringstream ss;
    log.write_ndjson(ss);
    EXPECT_TRUE(MetricsLog::read_ndjson(ss).same_values(log));
}

TEST(Config, ShippedConfigsLoad) {
    int n = 0;
    for (const auto& e : fs::directory_iterator(fs::path(ORDIFF_SOURCE_DIR) / "configs")) {
        if (e.path().extension() != ".json") continue;
        const auto c = load_experiment(e.path().string());
        // Prepared data is not shipped; validate would look for its files.
        if (c.data.kind == "toy") EXPECT_NO_THROW(validate(c)) << e.path();
        else EXPECT_EQ(c.data.kind, "prepared") << e.path();
        ++n;
    }
    EXPECT_GE(n, 4);
    // The ordered toy config aligns the phase boundary: weight (1 - r1) / r1 with r1 = 1/3.
    const auto c = load_experiment(std::string(ORDIFF_SOURCE_DIR) + "/configs/toy_ordered.json");
    const auto bounds = boundary_ratios(ordering_from_groups(c.ordering.groups, toy::kVocabSize), toy_vocab().probs());
    EXPECT_NEAR(bounds[1], 1.0 / 3, 1e-12);
    ASSERT_EQ(c.skew.size(), 1u);
    EXPECT_DOUBLE_EQ(c.skew[0].second, 2.0);
}
