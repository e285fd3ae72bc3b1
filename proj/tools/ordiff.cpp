// SPDX-License-Identifier: Apache-2.0
//
// ordiff command-line entry point. Exit codes: 0 success, 1 runtime error,
// 2 usage error.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "ordiff/ordiff.hpp"

namespace fs = std::filesystem;
using namespace ordiff;

namespace {

struct Globals {
    std::uint64_t seed = 0;
    unsigned threads = 1;
    bool quiet = false;
    CLI::Option* seed_opt = nullptr;
};

std::string read_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw Error(Errc::io_error, "cannot read " + path);
    return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

void note(const Globals& g, const std::string& msg) {
    if (!g.quiet) std::cerr << msg << '\n';
}

// ---------------------------------------------------------------------------
// prepare

struct PrepareArgs {
    std::string dataset, input, out;
    int toy_len = 31, toy_count = 20000;
    std::size_t max_vocab = 0, limit = 0;
};

void write_prepared(const std::string& out, const Vocab& vocab, const CorpusSplits& s, const nlohmann::json& info) {
    fs::create_directories(out);
    const fs::path dir(out);
    save_vocab(vocab, (dir / "vocab.tsv").string());
    save_corpus(s.train, (dir / "train.ids").string());
    save_corpus(s.valid, (dir / "valid.ids").string());
    save_corpus(s.test, (dir / "test.ids").string());
    std::ofstream(dir / "prepare.json") << info.dump(2) << '\n';
}

/// Category probabilities re-estimated on the training split.
Vocab with_train_probs(const Vocab& vocab, const Corpus& train) {
    auto probs = token_frequencies(std::span<const TokenSequence>(train.docs), vocab.size());
    return Vocab(vocab.tokens(), std::move(probs));
}

void run_prepare(const PrepareArgs& a, const Globals& g) {
    nlohmann::json info = {{"dataset", a.dataset}, {"seed", g.seed}};
    if (a.dataset == "toy") {
        const Corpus c = make_toy_corpus(a.toy_len, a.toy_count, g.seed);
        info["toy_len"] = a.toy_len;
        info["toy_count"] = a.toy_count;
        write_prepared(a.out, toy_vocab(), split_corpus(c), info);
    } else if (a.dataset == "text8") {
        std::string text = read_file(a.input);
        if (a.limit > 0 && text.size() > a.limit) text.resize(a.limit);
        while (!text.empty() && text.back() == '\n') text.pop_back();
        const Vocab full = build_char_vocab(text);
        Corpus c;
        c.docs.push_back(encode_chars(text, full));
        auto splits = split_corpus(c);
        info["chars"] = text.size();
        write_prepared(a.out, with_train_probs(full, splits.train), splits, info);
    } else if (a.dataset == "wikitext2") {
        std::string train_text, valid_text, test_text;
        if (fs::is_directory(a.input)) {
            const fs::path d(a.input);
            train_text = read_file((d / "wiki.train.tokens").string());
            valid_text = read_file((d / "wiki.valid.tokens").string());
            test_text = read_file((d / "wiki.test.tokens").string());
        } else {
            const std::string all = read_file(a.input);
            const auto n = all.size();
            auto cut = [&](double f) {
                auto p = static_cast<std::size_t>(static_cast<double>(n) * f);
                while (p < n && all[p] != '\n') ++p;
                return p;
            };
            const auto p1 = cut(0.90), p2 = cut(0.95);
            train_text = all.substr(0, p1);
            valid_text = all.substr(p1, p2 - p1);
            test_text = all.substr(p2);
        }
        const Vocab vocab = build_word_vocab(train_text, a.max_vocab);
        CorpusSplits s;
        s.train.docs.push_back(encode_words(train_text, vocab));
        s.valid.docs.push_back(encode_words(valid_text, vocab));
        s.test.docs.push_back(encode_words(test_text, vocab));
        info["max_vocab"] = a.max_vocab;
        write_prepared(a.out, with_train_probs(vocab, s.train), s, info);
    } else {
        throw CLI::ValidationError("--dataset", "must be text8, wikitext2 or toy");
    }
    note(g, "wrote " + a.out);
}

// ---------------------------------------------------------------------------
// order / schedule

struct OrderArgs {
    OrderingRequest req;
    std::string vocab, corpus, out;
};

void run_order(OrderArgs a, const Globals& g) {
    a.req.seed = g.seed;
    const Vocab vocab = load_vocab(a.vocab);
    std::optional<Corpus> corpus;
    if (!a.corpus.empty()) {
        corpus = load_corpus(a.corpus);
        check_ids(*corpus, vocab);
    }
    const auto spec = resolve_ordering(a.req, vocab, corpus ? &*corpus : nullptr);
    save_ordering(spec, a.out);
    if (!g.quiet) {
        const auto groups = spec.members();
        for (std::size_t k = 0; k < groups.size(); ++k) {
            std::cerr << "group " << k << ":";
            for (int c : groups[k]) std::cerr << " '" << vocab.token(c) << "'";
            std::cerr << '\n';
        }
    }
}

struct ScheduleArgs {
    std::string order, vocab, out;
    int T = 0;
    std::vector<std::string> skew;
};

std::vector<std::pair<int, double>> parse_skew(const std::vector<std::string>& items) {
    std::vector<std::pair<int, double>> out;
    for (const auto& s : items) {
        const auto eq = s.find('=');
        if (eq == std::string::npos) throw CLI::ValidationError("--skew-weight", "expected g=w, got " + s);
        try {
            out.emplace_back(std::stoi(s.substr(0, eq)), std::stod(s.substr(eq + 1)));
        } catch (const std::logic_error&) {
            throw CLI::ValidationError("--skew-weight", "expected g=w, got " + s);
        }
    }
    return out;
}

void run_schedule(const ScheduleArgs& a, const Globals& g) {
    const Vocab vocab = load_vocab(a.vocab);
    const OrderingSpec order = load_ordering(a.order);
    ExperimentConfig cfg;
    cfg.T = a.T;
    cfg.skew = parse_skew(a.skew);
    const auto table = make_schedule(cfg, order, vocab);
    const auto diag = validate_schedule(table);
    if (!diag.ok()) {
        for (const auto& v : diag.violations) std::cerr << "t=" << v.t << " c=" << v.category << ": " << v.what << '\n';
        throw Error(Errc::non_monotonic, "schedule failed validation");
    }
    save_schedule(table, a.out, a.order);
    note(g, "wrote " + a.out + " (T=" + std::to_string(table.T) + ", V=" + std::to_string(table.V) + ")");
}

// ---------------------------------------------------------------------------
// train / eval / compare

struct TrainArgs {
    std::string config, out;
    int steps = -1;
};

ExperimentConfig experiment_from(const std::string& path, const std::string& out, int steps, const Globals& g) {
    ExperimentConfig cfg = load_experiment(path);
    if (!out.empty()) cfg.out_dir = out;
    if (steps >= 0) cfg.steps = steps;
    if (g.seed_opt->count() > 0) cfg.seed = g.seed;
    cfg.threads = g.threads;
    return cfg;
}

void print_record(const std::string& label, const MetricsRecord& r) {
    char buf[200];
    std::snprintf(buf, sizeof buf, "%sstep %ld  train %.4f  valid %.4f bits/token  ppl %.4f  (%.1fs)", label.c_str(), r.step,
                  r.train_nelbo_bits, r.valid_nelbo_bits, r.perplexity, r.wall_time);
    std::cerr << buf << '\n';
}

void run_train(const TrainArgs& a, const Globals& g) {
    const auto cfg = experiment_from(a.config, a.out, a.steps, g);
    const auto res = train(cfg, g.quiet ? ProgressFn{} : ProgressFn([](const MetricsRecord& r) { print_record("", r); }));
    nlohmann::json summary = {{"name", cfg.name},
                              {"steps", cfg.steps},
                              {"valid_bits", res.log.back().valid_nelbo_bits},
                              {"perplexity", res.log.back().perplexity},
                              {"split_hash", res.split_hash},
                              {"checkpoint", res.checkpoint_path}};
    std::cout << summary.dump() << '\n';
}

struct EvalArgs {
    std::string ckpt, data;
    int samples = 0;
    std::size_t max_seqs = 0;
};

void run_eval(const EvalArgs& a, const Globals& g) {
    const auto run = load_run(a.ckpt);
    const Transformer<float> model(run.ckpt.config, run.ckpt.params);
    const Corpus corpus = load_corpus(a.data);
    check_ids(corpus, run.vocab);
    const auto max = a.max_seqs > 0 ? a.max_seqs : static_cast<std::size_t>(run.experiment.eval.sequences);
    const auto seqs = eval_windows(corpus, static_cast<std::size_t>(run.experiment.seq_len), max);
    if (seqs.empty()) throw Error(Errc::corpus_too_short, "no full evaluation window in " + a.data);
    const EvalOptions opt{a.samples > 0 ? a.samples : run.experiment.eval.samples, run.eval_seed, g.threads,
                         run.experiment.eval.exact_limit};
    const auto r = evaluate(model, seqs, run.table, opt);
    nlohmann::json out = {{"bits_per_token", r.bits_per_token},
                          {"perplexity", r.perplexity},
                          {"sequences", seqs.size()},
                          {"tokens", r.breakdown.tokens},
                          {"split_hash", hash_sequences(seqs)}};
    std::cout << out.dump() << '\n';
}

struct CompareArgs {
    std::string config, out, csv;
    std::string strategies;
    int repeats = 1;
    int steps = -1;
};

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    for (std::string item; std::getline(ss, item, ',');)
        if (!item.empty()) out.push_back(item);
    return out;
}

void run_compare(const CompareArgs& a, const Globals& g) {
    const auto cfg = experiment_from(a.config, a.out, a.steps, g);
    const auto names = split_list(a.strategies);
    std::function<void(const std::string&, int, const MetricsRecord&)> progress;
    if (!g.quiet)
        progress = [](const std::string& s, int r, const MetricsRecord& m) { print_record(s + "#" + std::to_string(r) + "  ", m); };
    const auto res = compare_orderings(cfg, names, a.repeats, progress);
    write_compare_table(res, std::cout);
    if (!a.csv.empty()) {
        std::ofstream os(a.csv);
        if (!os) throw Error(Errc::io_error, "cannot write " + a.csv);
        export_metrics_csv(res.logs, os);
    }
}

// ---------------------------------------------------------------------------
// sample / viz

struct SampleArgs {
    std::string ckpt;
    int count = 1;
    std::size_t length = 0;
};

void run_sample(const SampleArgs& a, const Globals& g) {
    const auto run = load_run(a.ckpt);
    const Transformer<float> model(run.ckpt.config, run.ckpt.params);
    const std::size_t len = a.length > 0 ? a.length : static_cast<std::size_t>(run.experiment.seq_len);
    Rng rng(g.seed);
    for (int i = 0; i < a.count; ++i) std::cout << decode(generate(model, run.table, len, rng).sample.ids, run.vocab) << '\n';
}

struct VizArgs {
    std::string ckpt, vocab, schedule, data;
    std::size_t offset = 0, length = 0;
    int snapshots = 10;
};

void run_viz_forward(const VizArgs& a, const Globals& g) {
    Vocab vocab;
    ScheduleTable table;
    std::size_t len = a.length;
    if (!a.ckpt.empty()) {
        auto run = load_run(a.ckpt);
        vocab = std::move(run.vocab);
        table = std::move(run.table);
        if (len == 0) len = static_cast<std::size_t>(run.experiment.seq_len);
    } else {
        if (a.vocab.empty() || a.schedule.empty()) throw CLI::ValidationError("viz-forward", "give --ckpt or both --vocab and --schedule");
        vocab = load_vocab(a.vocab);
        table = load_schedule(a.schedule);
    }
    if (len == 0) len = 64;
    const Corpus corpus = load_corpus(a.data);
    check_ids(corpus, vocab);
    std::size_t skip = a.offset;
    for (const auto& d : corpus.docs) {
        if (skip + len <= d.length()) {
            const auto sample = std::span<const int>(d.ids).subspan(skip, len);
            for (const auto& line : visualize_forward(sample, vocab, table, a.snapshots, g.seed)) std::cout << line << '\n';
            return;
        }
        skip = skip > d.length() ? skip - d.length() : 0;
    }
    throw Error(Errc::corpus_too_short, "no sample of " + std::to_string(len) + " tokens at the requested offset");
}

void run_viz_reverse(const VizArgs& a, const Globals& g) {
    const auto run = load_run(a.ckpt);
    const Transformer<float> model(run.ckpt.config, run.ckpt.params);
    const std::size_t len = a.length > 0 ? a.length : static_cast<std::size_t>(run.experiment.seq_len);
    for (const auto& line : visualize_reverse(model, run.vocab, run.table, len, a.snapshots, g.seed)) std::cout << line << '\n';
}

// ---------------------------------------------------------------------------
// export-csv

struct ExportArgs {
    std::vector<std::string> logs;
    std::string compare_dir, out;
};

void run_export(const ExportArgs& a, const Globals&) {
    std::vector<LabeledLog> logs;
    auto read_log = [](const fs::path& p) {
        std::ifstream is(p);
        if (!is) throw Error(Errc::io_error, "cannot read " + p.string());
        return MetricsLog::read_ndjson(is);
    };
    // LABEL[#REPEAT]=PATH
    for (const auto& item : a.logs) {
        const auto eq = item.find('=');
        if (eq == std::string::npos) throw CLI::ValidationError("LOG", "expected strategy[#repeat]=path, got " + item);
        std::string label = item.substr(0, eq);
        int repeat = 0;
        if (const auto h = label.find('#'); h != std::string::npos) {
            repeat = std::stoi(label.substr(h + 1));
            label.resize(h);
        }
        logs.push_back({label, repeat, read_log(item.substr(eq + 1))});
    }
    if (!a.compare_dir.empty()) {
        std::vector<fs::path> strategies;
        for (const auto& e : fs::directory_iterator(a.compare_dir))
            if (e.is_directory()) strategies.push_back(e.path());
        std::ranges::sort(strategies);
        for (const auto& s : strategies)
            for (int r = 0; fs::exists(s / ("rep" + std::to_string(r)) / "metrics.ndjson"); ++r)
                logs.push_back({s.filename().string(), r, read_log(s / ("rep" + std::to_string(r)) / "metrics.ndjson")});
    }
    if (a.out.empty() || a.out == "-") {
        export_metrics_csv(logs, std::cout);
    } else {
        std::ofstream os(a.out);
        if (!os) throw Error(Errc::io_error, "cannot write " + a.out);
        export_metrics_csv(logs, os);
    }
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Ordered absorbing discrete diffusion: data prep, schedules, training, evaluation and sampling"};
    app.require_subcommand(1);
    Globals g;
    g.seed_opt = app.add_option("--seed", g.seed, "Master seed")->capture_default_str();
    app.add_option("--threads", g.threads, "Evaluation threads")->check(CLI::PositiveNumber)->capture_default_str();
    app.add_flag("--quiet", g.quiet, "Suppress progress output");

    PrepareArgs pa;
    auto* prepare = app.add_subcommand("prepare", "Tokenize a dataset into vocab.tsv and {train,valid,test}.ids");
    prepare->add_option("--dataset", pa.dataset)->required()->check(CLI::IsMember({"text8", "wikitext2", "toy"}));
    prepare->add_option("--input", pa.input, "Raw text8 file, Wikitext-2 directory or file");
    prepare->add_option("--out", pa.out)->required();
    prepare->add_option("--toy-len", pa.toy_len)->capture_default_str();
    prepare->add_option("--toy-count", pa.toy_count)->capture_default_str();
    prepare->add_option("--max-vocab", pa.max_vocab, "Word vocabulary cap (0 = unlimited)");
    prepare->add_option("--limit", pa.limit, "Keep only the first N bytes of text8");

    OrderArgs oa;
    auto* order = app.add_subcommand("order", "Build a destruction ordering");
    order->add_option("--strategy", oa.req.strategy)
        ->required()
        ->check(CLI::IsMember({"standard", "common-first", "rare-first", "random", "info-gain", "info-gain-low"}));
    order->add_option("--blocks", oa.req.blocks, "Frequency blocks (0 = one group per category)");
    order->add_option("--alpha", oa.req.alpha, "Block skew exponent")->capture_default_str();
    order->add_option("--ig-window", oa.req.ig_window)->capture_default_str();
    order->add_option("--vocab", oa.vocab)->required();
    order->add_option("--corpus", oa.corpus);
    order->add_option("--out", oa.out)->required();

    ScheduleArgs sa;
    auto* schedule = app.add_subcommand("schedule", "Build and validate a schedule table");
    schedule->add_option("--order", sa.order)->required();
    schedule->add_option("--vocab", sa.vocab)->required();
    schedule->add_option("-T", sa.T)->required()->check(CLI::PositiveNumber);
    schedule->add_option("--skew-weight", sa.skew, "Time weight for a group, g=w (repeatable)");
    schedule->add_option("--out", sa.out)->required();

    TrainArgs ta;
    auto* trainc = app.add_subcommand("train", "Train from an experiment config");
    trainc->add_option("--config", ta.config)->required();
    trainc->add_option("--out", ta.out, "Override the output directory");
    trainc->add_option("--steps", ta.steps, "Override the step budget");

    EvalArgs ea;
    auto* evalc = app.add_subcommand("eval", "Evaluate a checkpoint on an id corpus");
    evalc->add_option("--ckpt", ea.ckpt)->required();
    evalc->add_option("--data", ea.data)->required();
    evalc->add_option("--samples", ea.samples, "z_t draws per step where exact enumeration is too large");
    evalc->add_option("--max-seqs", ea.max_seqs);

    CompareArgs ca;
    auto* compare = app.add_subcommand("compare", "Train and rank several orderings");
    compare->add_option("--config", ca.config)->required();
    compare->add_option("--strategies", ca.strategies, "Comma-separated strategy names")->required();
    compare->add_option("--repeats", ca.repeats)->check(CLI::PositiveNumber)->capture_default_str();
    compare->add_option("--out", ca.out, "Override the output directory");
    compare->add_option("--steps", ca.steps, "Override the step budget");
    compare->add_option("--csv", ca.csv, "Write per-step metrics CSV");

    SampleArgs sma;
    auto* sample = app.add_subcommand("sample", "Draw sequences from a checkpoint");
    sample->add_option("--ckpt", sma.ckpt)->required();
    sample->add_option("--count", sma.count)->check(CLI::PositiveNumber)->capture_default_str();
    sample->add_option("--length", sma.length);

    VizArgs fa;
    auto* vizf = app.add_subcommand("viz-forward", "Dump a forward trajectory of a corpus sample");
    vizf->add_option("--ckpt", fa.ckpt, "Take vocabulary and schedule from a checkpoint");
    vizf->add_option("--vocab", fa.vocab);
    vizf->add_option("--schedule", fa.schedule);
    vizf->add_option("--data", fa.data)->required();
    vizf->add_option("--offset", fa.offset)->capture_default_str();
    vizf->add_option("--length", fa.length);
    vizf->add_option("--snapshots", fa.snapshots)->check(CLI::Range(2, 1 << 20))->capture_default_str();

    VizArgs ra;
    auto* vizr = app.add_subcommand("viz-reverse", "Dump a reverse (generation) trajectory");
    vizr->add_option("--ckpt", ra.ckpt)->required();
    vizr->add_option("--length", ra.length);
    vizr->add_option("--snapshots", ra.snapshots)->check(CLI::Range(2, 1 << 20))->capture_default_str();

    ExportArgs xa;
    auto* exportc = app.add_subcommand("export-csv", "Merge metrics logs into one CSV");
    exportc->add_option("LOG", xa.logs, "strategy[#repeat]=metrics.ndjson");
    exportc->add_option("--compare-dir", xa.compare_dir, "Output directory of `compare`");
    exportc->add_option("--out", xa.out, "CSV path (default stdout)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (*prepare) run_prepare(pa, g);
        else if (*order) run_order(oa, g);
        else if (*schedule) run_schedule(sa, g);
        else if (*trainc) run_train(ta, g);
        else if (*evalc) run_eval(ea, g);
        else if (*compare) run_compare(ca, g);
        else if (*sample) run_sample(sma, g);
        else if (*vizf) run_viz_forward(fa, g);
        else if (*vizr) run_viz_reverse(ra, g);
        else if (*exportc) run_export(xa, g);
    } catch (const CLI::ValidationError& e) {
        std::cerr << "usage error: " << e.what() << '\n';
        return 2;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
