// SPDX-License-Identifier: Apache-2.0
//
// Experiment configs, the training loop, evaluation, ordering comparisons and
// metrics export.
#ifndef ORDIFF_TRAINER_HPP_
#define ORDIFF_TRAINER_HPP_

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ordiff/corpus.hpp"
#include "ordiff/denoiser.hpp"
#include "ordiff/diffusion.hpp"
#include "ordiff/error.hpp"
#include "ordiff/ordering.hpp"
#include "ordiff/schedule.hpp"
#include "ordiff/util.hpp"

namespace ordiff {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Ordering requests

/// Strategies are named by generation order: "common-first" generates common
/// categories first and so destroys them last.
struct OrderingRequest {
    std::string strategy = "standard";
    int blocks = 0;     // 0: one group per category (frequency strategies only)
    double alpha = 1.0; // skew exponent for blocks
    int ig_window = 8;
    std::uint64_t seed = 0;
    std::vector<std::vector<int>> groups; // strategy "groups", destruction order
    std::string path;                     // strategy "file"
};

inline void to_json(nlohmann::json& j, const OrderingRequest& r) {
    j = {{"strategy", r.strategy}, {"blocks", r.blocks}, {"alpha", r.alpha}, {"ig_window", r.ig_window}, {"seed", r.seed}};
    if (!r.groups.empty()) j["groups"] = r.groups;
    if (!r.path.empty()) j["path"] = r.path;
}

inline void from_json(const nlohmann::json& j, OrderingRequest& r) {
    OrderingRequest d;
    r.strategy = j.value("strategy", d.strategy);
    r.blocks = j.value("blocks", d.blocks);
    r.alpha = j.value("alpha", d.alpha);
    r.ig_window = j.value("ig_window", d.ig_window);
    r.seed = j.value("seed", d.seed);
    r.groups = j.value("groups", d.groups);
    r.path = j.value("path", d.path);
}

inline OrderingSpec resolve_ordering(const OrderingRequest& req, const Vocab& vocab, const Corpus* train = nullptr) {
    const auto& probs = vocab.probs();
    const int V = vocab.size();
    const auto& s = req.strategy;
    if (s == "standard") return standard_ordering(V);
    if (s == "common-first" || s == "rare-first") {
        const auto gen = s == "common-first" ? Generation::common_first : Generation::rare_first;
        return req.blocks > 0 ? make_blocks(probs, req.blocks, req.alpha, gen) : order_frequency(probs, gen);
    }
    if (s == "random") return order_random(V, req.seed);
    if (s == "info-gain" || s == "info-gain-low") {
        if (!train) throw Error(Errc::bad_config, "information-gain ordering needs a corpus");
        if (req.ig_window < 1) throw Error(Errc::bad_config, "ig_window must be >= 1");
        IGAccumulator acc(V, static_cast<std::size_t>(req.ig_window));
        std::size_t n = 0;
        for (const auto& d : train->docs)
            for (auto w : window_iter(d.ids, static_cast<std::size_t>(req.ig_window), static_cast<std::size_t>(req.ig_window))) {
                acc.add(w);
                ++n;
            }
        if (n == 0) throw Error(Errc::no_windows, "corpus holds no window of length " + std::to_string(req.ig_window));
        // info-gain generates high-gain categories first, i.e. destroys them last.
        return order_information_gain(acc.report(), s == "info-gain" ? IgDestroy::low_first : IgDestroy::high_first);
    }
    if (s == "groups") return ordering_from_groups(req.groups, V);
    if (s == "file") {
        auto spec = load_ordering(req.path);
        check_ordering(spec, probs);
        return spec;
    }
    throw Error(Errc::bad_config, "unknown ordering strategy '" + s + "'");
}

// ---------------------------------------------------------------------------
// Experiment configuration

struct DataConfig {
    std::string kind = "toy"; // "toy" or "prepared"
    std::string dir;          // prepared: vocab.tsv, train.ids, valid.ids, test.ids
    int toy_len = 31;
    int toy_count = 20000;
    std::uint64_t seed = 0;
};

struct OptimConfig {
    double lr = 3e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double clip_norm = 1.0; // 0 disables clipping
    int batch_size = 64;
};

struct EvalConfig {
    int every = 500;
    int sequences = 256;
    int samples = 2;
    int checkpoint_every = 0; // 0: final checkpoint only
    int exact_limit = 10;     // enumerate z_t exactly up to 2^exact_limit patterns per step
};

struct ExperimentConfig {
    std::string name = "run";
    DataConfig data;
    OrderingRequest ordering;
    std::map<std::string, OrderingRequest> orderings; // named strategies for compare
    int T = 16;
    std::vector<std::pair<int, double>> skew; // (group, time weight)
    DenoiserConfig model;
    OptimConfig optim;
    int steps = 2000;
    int seq_len = 31;
    EvalConfig eval;
    std::uint64_t seed = 0;
    std::string out_dir;
    unsigned threads = 1;
};

inline void to_json(nlohmann::json& j, const ExperimentConfig& c) {
    j = {{"name", c.name},
         {"data", {{"kind", c.data.kind}, {"dir", c.data.dir}, {"toy_len", c.data.toy_len}, {"toy_count", c.data.toy_count}, {"seed", c.data.seed}}},
         {"ordering", c.ordering},
         {"T", c.T},
         {"skew", c.skew},
         {"model", c.model},
         {"optim", {{"lr", c.optim.lr}, {"beta1", c.optim.beta1}, {"beta2", c.optim.beta2}, {"eps", c.optim.eps},
                    {"clip_norm", c.optim.clip_norm}, {"batch_size", c.optim.batch_size}}},
         {"steps", c.steps},
         {"seq_len", c.seq_len},
         {"eval", {{"every", c.eval.every}, {"sequences", c.eval.sequences}, {"samples", c.eval.samples},
                   {"checkpoint_every", c.eval.checkpoint_every}, {"exact_limit", c.eval.exact_limit}}},
         {"seed", c.seed},
         {"out_dir", c.out_dir},
         {"threads", c.threads}};
    if (!c.orderings.empty()) j["orderings"] = c.orderings;
}

inline void from_json(const nlohmann::json& j, ExperimentConfig& c) {
    if (!j.contains("seed")) throw Error(Errc::bad_config, "experiment config must set \"seed\"");
    ExperimentConfig d;
    c.name = j.value("name", d.name);
    if (j.contains("data")) {
        const auto& x = j["data"];
        c.data.kind = x.value("kind", d.data.kind);
        c.data.dir = x.value("dir", d.data.dir);
        c.data.toy_len = x.value("toy_len", d.data.toy_len);
        c.data.toy_count = x.value("toy_count", d.data.toy_count);
        c.data.seed = x.value("seed", d.data.seed);
    }
    c.ordering = j.value("ordering", d.ordering);
    c.orderings = j.value("orderings", d.orderings);
    c.T = j.value("T", d.T);
    c.skew = j.value("skew", d.skew);
    c.model = j.value("model", d.model);
    if (j.contains("optim")) {
        const auto& x = j["optim"];
        c.optim.lr = x.value("lr", d.optim.lr);
        c.optim.beta1 = x.value("beta1", d.optim.beta1);
        c.optim.beta2 = x.value("beta2", d.optim.beta2);
        c.optim.eps = x.value("eps", d.optim.eps);
        c.optim.clip_norm = x.value("clip_norm", d.optim.clip_norm);
        c.optim.batch_size = x.value("batch_size", d.optim.batch_size);
    }
    c.steps = j.value("steps", d.steps);
    c.seq_len = j.value("seq_len", d.seq_len);
    if (j.contains("eval")) {
        const auto& x = j["eval"];
        c.eval.every = x.value("every", d.eval.every);
        c.eval.sequences = x.value("sequences", d.eval.sequences);
        c.eval.samples = x.value("samples", d.eval.samples);
        c.eval.checkpoint_every = x.value("checkpoint_every", d.eval.checkpoint_every);
        c.eval.exact_limit = x.value("exact_limit", d.eval.exact_limit);
    }
    c.seed = j.at("seed").get<std::uint64_t>();
    c.out_dir = j.value("out_dir", d.out_dir);
    c.threads = j.value("threads", d.threads);
}

inline ExperimentConfig load_experiment(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw Error(Errc::io_error, "cannot read " + path);
    try {
        auto cfg = nlohmann::json::parse(is).get<ExperimentConfig>();
        // Relative data paths resolve against the config file's directory.
        const auto base = fs::path(path).parent_path();
        if (cfg.data.kind == "prepared" && !cfg.data.dir.empty() && fs::path(cfg.data.dir).is_relative())
            cfg.data.dir = (base / cfg.data.dir).string();
        return cfg;
    } catch (const nlohmann::json::exception& e) {
        throw Error(Errc::parse_error, path + ": " + e.what());
    }
}

inline void validate(const ExperimentConfig& c) {
    if (c.T < 1 || c.steps < 0 || c.seq_len < 1 || c.optim.batch_size < 1 || c.eval.sequences < 1 || c.eval.samples < 1 ||
        c.eval.every < 0 || c.eval.checkpoint_every < 0 || c.eval.exact_limit < 0 || c.eval.exact_limit > 30 ||
        !(c.optim.lr > 0.0))
        throw Error(Errc::bad_config, "experiment sizes must be positive");
    if (c.data.kind == "prepared") {
        for (const char* f : {"vocab.tsv", "train.ids", "valid.ids"})
            if (!fs::exists(fs::path(c.data.dir) / f))
                throw Error(Errc::io_error, "missing " + (fs::path(c.data.dir) / f).string());
    } else if (c.data.kind != "toy") {
        throw Error(Errc::bad_config, "data.kind must be toy or prepared");
    }
    if (c.ordering.strategy == "file" && !fs::exists(c.ordering.path))
        throw Error(Errc::io_error, "missing ordering file " + c.ordering.path);
}

// ---------------------------------------------------------------------------
// Data

struct Dataset {
    Vocab vocab;
    CorpusSplits splits;
    std::vector<TokenSequence> valid; // evaluation windows
    std::string split_hash;           // hash of the evaluation windows
};

inline std::vector<TokenSequence> eval_windows(const Corpus& corpus, std::size_t seq_len, std::size_t max_count) {
    std::vector<TokenSequence> out;
    for (const auto& d : corpus.docs)
        for (auto w : window_iter(d.ids, seq_len, seq_len)) {
            if (out.size() == max_count) return out;
            out.push_back({{w.begin(), w.end()}});
        }
    return out;
}

inline std::string hash_sequences(std::span<const TokenSequence> seqs) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& s : seqs) {
        h = fnv1a64(s.ids.data(), s.ids.size() * sizeof(int), h);
        const int sep = -1;
        h = fnv1a64(&sep, sizeof sep, h);
    }
    return hex64(h);
}

inline Corpus make_toy_corpus(int length, int count, std::uint64_t seed) {
    Rng rng(seed);
    Corpus c;
    for (int i = 0; i < count; ++i) c.docs.push_back(generate_toy_sequence(static_cast<std::size_t>(length), rng));
    return c;
}

inline Dataset load_dataset(const ExperimentConfig& cfg) {
    Dataset ds;
    if (cfg.data.kind == "toy") {
        ds.vocab = toy_vocab();
        ds.splits = split_corpus(make_toy_corpus(cfg.data.toy_len, cfg.data.toy_count, cfg.data.seed));
    } else {
        const fs::path dir(cfg.data.dir);
        ds.vocab = load_vocab((dir / "vocab.tsv").string());
        ds.splits.train = load_corpus((dir / "train.ids").string());
        ds.splits.valid = load_corpus((dir / "valid.ids").string());
        if (fs::exists(dir / "test.ids")) ds.splits.test = load_corpus((dir / "test.ids").string());
        check_ids(ds.splits.train, ds.vocab);
        check_ids(ds.splits.valid, ds.vocab);
    }
    ds.valid = eval_windows(ds.splits.valid, static_cast<std::size_t>(cfg.seq_len), static_cast<std::size_t>(cfg.eval.sequences));
    if (ds.valid.empty()) throw Error(Errc::corpus_too_short, "validation split holds no full window");
    ds.split_hash = hash_sequences(ds.valid);
    return ds;
}

inline ScheduleTable make_schedule(const ExperimentConfig& cfg, const OrderingSpec& order, const Vocab& vocab) {
    Warp warp;
    if (!cfg.skew.empty()) {
        std::vector<double> weights(static_cast<std::size_t>(order.num_groups), 1.0);
        for (auto [g, w] : cfg.skew) {
            if (g < 0 || g >= order.num_groups) throw Error(Errc::bad_config, "skew group " + std::to_string(g) + " out of range");
            weights[static_cast<std::size_t>(g)] = w;
        }
        warp = Warp::from_group_weights(boundary_ratios(order, vocab.probs()), weights);
    }
    return build_schedule(order, vocab.probs(), cfg.T, warp);
}

inline DenoiserConfig model_config(const ExperimentConfig& cfg, int vocab_size) {
    DenoiserConfig m = cfg.model;
    m.vocab = vocab_size;
    m.T = cfg.T;
    m.max_len = std::max(m.max_len, cfg.seq_len);
    m.seed = derive_seed(cfg.seed, 1);
    return m;
}

// ---------------------------------------------------------------------------
// Metrics

struct MetricsRecord {
    long step = 0;
    double train_nelbo_bits = std::numeric_limits<double>::quiet_NaN(); // NaN before any update
    double valid_nelbo_bits = 0.0;
    double perplexity = 1.0;
    double wall_time = 0.0;
};

inline nlohmann::json to_json_record(const MetricsRecord& r) {
    nlohmann::json j;
    j["step"] = r.step;
    j["train_nelbo_bits"] = std::isfinite(r.train_nelbo_bits) ? nlohmann::json(r.train_nelbo_bits) : nlohmann::json(nullptr);
    j["valid_nelbo_bits"] = r.valid_nelbo_bits;
    j["perplexity"] = r.perplexity;
    j["wall_time"] = r.wall_time;
    return j;
}

/// Append-only; steps must increase strictly.
class MetricsLog {
public:
    void append(const MetricsRecord& r) {
        if (!records_.empty() && r.step <= records_.back().step)
            throw Error(Errc::bad_config, "metrics steps must increase strictly");
        records_.push_back(r);
    }
    const std::vector<MetricsRecord>& records() const noexcept { return records_; }
    bool empty() const noexcept { return records_.empty(); }
    const MetricsRecord& back() const { return records_.back(); }

    void write_ndjson(std::ostream& os) const {
        for (const auto& r : records_) os << to_json_record(r).dump() << '\n';
    }

    static MetricsLog read_ndjson(std::istream& is) {
        MetricsLog log;
        std::string line;
        while (std::getline(is, line)) {
            if (line.empty()) continue;
            const auto j = nlohmann::json::parse(line);
            MetricsRecord r;
            r.step = j.at("step").get<long>();
            r.train_nelbo_bits = j.at("train_nelbo_bits").is_null() ? std::numeric_limits<double>::quiet_NaN()
                                                                     : j.at("train_nelbo_bits").get<double>();
            r.valid_nelbo_bits = j.at("valid_nelbo_bits").get<double>();
            r.perplexity = j.at("perplexity").get<double>();
            r.wall_time = j.at("wall_time").get<double>();
            log.append(r);
        }
        return log;
    }

    /// Equality ignoring wall time.
    bool same_values(const MetricsLog& o) const {
        if (records_.size() != o.records_.size()) return false;
        for (std::size_t i = 0; i < records_.size(); ++i) {
            const auto &a = records_[i], &b = o.records_[i];
            const bool train_eq = (std::isnan(a.train_nelbo_bits) && std::isnan(b.train_nelbo_bits)) ||
                                  a.train_nelbo_bits == b.train_nelbo_bits;
            if (a.step != b.step || !train_eq || a.valid_nelbo_bits != b.valid_nelbo_bits || a.perplexity != b.perplexity)
                return false;
        }
        return true;
    }

private:
    std::vector<MetricsRecord> records_;
};

// ---------------------------------------------------------------------------
// Evaluation

struct EvalOptions {
    int samples = 2;
    std::uint64_t seed = 0;
    unsigned threads = 1;
    int exact_limit = 10; // see NelboOptions
};

struct EvalResult {
    double bits_per_token = 0.0;
    double perplexity = 1.0;
    ElboBreakdown breakdown;
};

template <Denoiser Model>
EvalResult evaluate(const Model& model, std::span<const TokenSequence> seqs, const ScheduleTable& table,
                    const EvalOptions& opt = {}) {
    NelboOptions no;
    no.mc_samples = opt.samples;
    no.seed = opt.seed;
    no.threads = opt.threads;
    no.exact_limit = opt.exact_limit;
    EvalResult r;
    r.breakdown = nelbo_full(seqs, model, table, no);
    r.bits_per_token = r.breakdown.bits_per_token();
    r.perplexity = std::exp2(r.bits_per_token);
    return r;
}

template <class S>
EvalResult evaluate(const Transformer<S>& model, std::span<const TokenSequence> seqs, const ScheduleTable& table,
                    const EvalOptions& opt = {}) {
    if (model.config().vocab != table.V || model.config().T != table.T)
        throw Error(Errc::incompatible_schedule, "model (V=" + std::to_string(model.config().vocab) + ", T=" +
                                                     std::to_string(model.config().T) + ") vs schedule (V=" +
                                                     std::to_string(table.V) + ", T=" + std::to_string(table.T) + ")");
    return evaluate<Transformer<S>>(model, seqs, table, opt);
}

// ---------------------------------------------------------------------------
// Checkpoint metadata

inline nlohmann::json run_metadata(const ExperimentConfig& cfg, const Vocab& vocab, const ScheduleTable& table,
                                   std::uint64_t eval_seed, const std::string& split_hash, long step) {
    return {{"experiment", cfg},
            {"vocab", {{"tokens", vocab.tokens()}, {"probs", vocab.probs()}}},
            {"ordering", {{"group_of", table.order.group_of}, {"num_groups", table.order.num_groups}}},
            {"T", table.T},
            {"warp", table.warp.to_json()},
            {"eval_seed", eval_seed},
            {"split_hash", split_hash},
            {"step", step}};
}

struct LoadedRun {
    Checkpoint<float> ckpt;
    Vocab vocab;
    ScheduleTable table;
    std::uint64_t eval_seed = 0;
    ExperimentConfig experiment;
};

/// Loads a checkpoint and rebuilds its vocabulary and schedule.
inline LoadedRun load_run(const std::string& path) {
    LoadedRun r;
    r.ckpt = load_checkpoint<float>(path);
    const auto& m = r.ckpt.meta;
    try {
        r.vocab = Vocab(m.at("vocab").at("tokens").get<std::vector<std::string>>(), m.at("vocab").at("probs").get<std::vector<double>>());
        OrderingSpec order{m.at("ordering").at("group_of").get<std::vector<int>>(), m.at("ordering").at("num_groups").get<int>()};
        r.table = build_schedule(order, r.vocab.probs(), m.at("T").get<int>(), Warp::from_json(m.at("warp")));
        r.eval_seed = m.at("eval_seed").get<std::uint64_t>();
        r.experiment = m.at("experiment").get<ExperimentConfig>();
    } catch (const nlohmann::json::exception& e) {
        throw Error(Errc::corrupt_file, std::string("checkpoint metadata: ") + e.what());
    }
    return r;
}

// ---------------------------------------------------------------------------
// Training

struct TrainResult {
    MetricsLog log;
    Transformer<float> model;
    ScheduleTable table;
    std::string checkpoint_path; // empty without an output directory
    std::string split_hash;
    std::uint64_t eval_seed = 0;
};

using ProgressFn = std::function<void(const MetricsRecord&)>;

namespace detail {
inline void atomic_write_checkpoint(const fs::path& path, const Transformer<float>& model, const OptState<float>& opt,
                                    const nlohmann::json& meta) {
    const fs::path tmp = path.string() + ".tmp";
    save_checkpoint(tmp.string(), model.config(), model.params(), &opt, meta);
    fs::rename(tmp, path);
}
} // namespace detail

inline TrainResult train(const ExperimentConfig& cfg, const Dataset& ds, const OrderingSpec& order,
                         const ProgressFn& progress = {}) {
    validate(cfg);
    const auto t_start = std::chrono::steady_clock::now();
    ScheduleTable table = make_schedule(cfg, order, ds.vocab);
    TrainResult res{MetricsLog{}, Transformer<float>(model_config(cfg, ds.vocab.size())), table, {}, ds.split_hash,
                    derive_seed(cfg.seed, 6)};
    auto& model = res.model;
    auto opt = OptState<float>::for_params(model.params(), cfg.optim.lr);
    opt.beta1 = cfg.optim.beta1;
    opt.beta2 = cfg.optim.beta2;
    opt.eps = cfg.optim.eps;

    BatchSampler sampler(ds.splits.train, static_cast<std::size_t>(cfg.seq_len), static_cast<std::size_t>(cfg.optim.batch_size),
                         derive_seed(cfg.seed, 3));
    Rng corrupt_rng(derive_seed(cfg.seed, 4));
    Rng drop_rng(derive_seed(cfg.seed, 5));
    const EvalOptions eopt{cfg.eval.samples, res.eval_seed, cfg.threads, cfg.eval.exact_limit};

    fs::path out_dir;
    std::ofstream metrics_file;
    if (!cfg.out_dir.empty()) {
        out_dir = cfg.out_dir;
        fs::create_directories(out_dir);
        metrics_file.open(out_dir / "metrics.ndjson", std::ios::trunc);
        std::ofstream(out_dir / "config.json") << nlohmann::json(cfg).dump(2) << '\n';
        res.checkpoint_path = (out_dir / "checkpoint.odck").string();
    }

    double train_sum = 0.0;
    long train_n = 0;
    auto record = [&](long step) {
        MetricsRecord r;
        r.step = step;
        if (train_n > 0) r.train_nelbo_bits = train_sum / static_cast<double>(train_n) / std::numbers::ln2;
        const auto ev = evaluate(model, ds.valid, table, eopt);
        r.valid_nelbo_bits = ev.bits_per_token;
        r.perplexity = ev.perplexity;
        r.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
        res.log.append(r);
        if (metrics_file) {
            metrics_file << to_json_record(r).dump() << '\n';
            metrics_file.flush();
        }
        if (progress) progress(r);
        train_sum = 0.0;
        train_n = 0;
    };
    auto checkpoint = [&](long step) {
        if (!out_dir.empty())
            detail::atomic_write_checkpoint(res.checkpoint_path, model, opt,
                                            run_metadata(cfg, ds.vocab, table, res.eval_seed, ds.split_hash, step));
    };

    record(0);
    for (long step = 1; step <= cfg.steps; ++step) {
        auto batch = make_diffusion_batch(sampler.next(), table, corrupt_rng);
        auto lg = model.loss_grad(batch, table, &drop_rng); // NonFiniteLoss leaves the last checkpoint in place
        if (cfg.optim.clip_norm > 0.0) {
            const double n = grad_norm(lg.grads);
            if (n > cfg.optim.clip_norm) scale_grads(lg.grads, cfg.optim.clip_norm / n);
        }
        opt_step(model.params(), lg.grads, opt);
        if (!model.params().all_finite()) throw Error(Errc::non_finite_loss, "parameters diverged at step " + std::to_string(step));
        train_sum += lg.loss;
        ++train_n;
        if ((cfg.eval.every > 0 && step % cfg.eval.every == 0) || step == cfg.steps) record(step);
        if (cfg.eval.checkpoint_every > 0 && step % cfg.eval.checkpoint_every == 0 && step != cfg.steps) checkpoint(step);
    }
    checkpoint(cfg.steps);
    return res;
}

inline TrainResult train(const ExperimentConfig& cfg, const ProgressFn& progress = {}) {
    validate(cfg);
    const Dataset ds = load_dataset(cfg);
    const OrderingSpec order = resolve_ordering(cfg.ordering, ds.vocab, &ds.splits.train);
    return train(cfg, ds, order, progress);
}

// ---------------------------------------------------------------------------
// Comparisons

struct LabeledLog {
    std::string strategy;
    int repeat = 0;
    MetricsLog log;
};

struct CompareRow {
    std::string strategy;
    std::vector<double> final_bits; // one per repeat
    double mean_bits = 0.0;
    double std_bits = 0.0; // sample standard deviation; 0 for one repeat
    int rank = 0;          // 1 = lowest mean
};

struct CompareResult {
    std::vector<CompareRow> rows; // ranked
    std::vector<LabeledLog> logs;
};

inline OrderingRequest strategy_request(const ExperimentConfig& base, const std::string& name) {
    if (auto it = base.orderings.find(name); it != base.orderings.end()) return it->second;
    OrderingRequest r = base.ordering;
    r.strategy = name;
    return r;
}

/// Trains one model per strategy and repeat; every strategy sees the same
/// data, budget and per-repeat seed.
inline CompareResult compare_orderings(const ExperimentConfig& base, const std::vector<std::string>& strategies, int repeats = 1,
                                       const std::function<void(const std::string&, int, const MetricsRecord&)>& progress = {}) {
    if (strategies.empty()) throw Error(Errc::empty_input, "no strategies to compare");
    if (repeats < 1) throw Error(Errc::bad_config, "repeats must be >= 1");
    validate(base);
    const Dataset ds = load_dataset(base);
    CompareResult out;
    for (const auto& name : strategies) {
        CompareRow row;
        row.strategy = name;
        const OrderingSpec order = resolve_ordering(strategy_request(base, name), ds.vocab, &ds.splits.train);
        for (int r = 0; r < repeats; ++r) {
            ExperimentConfig cfg = base;
            cfg.name = name;
            cfg.seed = r == 0 ? base.seed : derive_seed(base.seed, 1000 + static_cast<std::uint64_t>(r));
            if (!base.out_dir.empty()) cfg.out_dir = (fs::path(base.out_dir) / name / ("rep" + std::to_string(r))).string();
            auto res = train(cfg, ds, order, progress ? ProgressFn([&](const MetricsRecord& m) { progress(name, r, m); }) : ProgressFn{});
            row.final_bits.push_back(res.log.back().valid_nelbo_bits);
            out.logs.push_back({name, r, std::move(res.log)});
        }
        const double n = static_cast<double>(row.final_bits.size());
        for (double v : row.final_bits) row.mean_bits += v / n;
        if (row.final_bits.size() > 1) {
            double ss = 0.0;
            for (double v : row.final_bits) ss += (v - row.mean_bits) * (v - row.mean_bits);
            row.std_bits = std::sqrt(ss / (n - 1.0));
        }
        out.rows.push_back(std::move(row));
    }
    std::ranges::stable_sort(out.rows, {}, &CompareRow::mean_bits);
    for (std::size_t i = 0; i < out.rows.size(); ++i) out.rows[i].rank = static_cast<int>(i) + 1;
    return out;
}

inline void write_compare_table(const CompareResult& res, std::ostream& os) {
    os << "rank\tstrategy\tmean_bits\tstd_bits\tperplexity\trepeats\n";
    for (const auto& r : res.rows) {
        char buf[160];
        std::snprintf(buf, sizeof buf, "%d\t%s\t%.6f\t%.6f\t%.6f\t%zu\n", r.rank, r.strategy.c_str(), r.mean_bits, r.std_bits,
                      std::exp2(r.mean_bits), r.final_bits.size());
        os << buf;
    }
}

// ---------------------------------------------------------------------------
// CSV export: strategy,repeat,step,valid_bits,perplexity

struct CsvRow {
    std::string strategy;
    int repeat = 0;
    long step = 0;
    double valid_bits = 0.0;
    double perplexity = 0.0;
    bool operator==(const CsvRow&) const = default;
};

inline void export_metrics_csv(std::span<const LabeledLog> logs, std::ostream& os) {
    if (logs.empty()) throw Error(Errc::empty_input, "no metrics logs to export");
    os << "strategy,repeat,step,valid_bits,perplexity\n";
    char buf[128];
    for (const auto& l : logs) {
        if (l.strategy.find_first_of(",\"\n") != std::string::npos)
            throw Error(Errc::bad_config, "strategy name '" + l.strategy + "' cannot be written to CSV");
        for (const auto& r : l.log.records()) {
            std::snprintf(buf, sizeof buf, ",%d,%ld,%.17g,%.17g\n", l.repeat, r.step, r.valid_nelbo_bits, r.perplexity);
            os << l.strategy << buf;
        }
    }
}

inline std::vector<CsvRow> read_metrics_csv(std::istream& is) {
    std::vector<CsvRow> rows;
    std::string line;
    if (!std::getline(is, line) || line != "strategy,repeat,step,valid_bits,perplexity")
        throw Error(Errc::parse_error, "missing metrics CSV header");
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::vector<std::string> f;
        std::stringstream ss(line);
        for (std::string cell; std::getline(ss, cell, ',');) f.push_back(cell);
        if (f.size() != 5) throw Error(Errc::parse_error, "metrics CSV row needs 5 fields: " + line);
        try {
            rows.push_back({f[0], std::stoi(f[1]), std::stol(f[2]), std::stod(f[3]), std::stod(f[4])});
        } catch (const std::logic_error&) {
            throw Error(Errc::parse_error, "bad metrics CSV row: " + line);
        }
    }
    return rows;
}

} // namespace ordiff

#endif // ORDIFF_TRAINER_HPP_
