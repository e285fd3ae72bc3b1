// SPDX-License-Identifier: Apache-2.0
//
// Corpus ingestion: vocabularies with marginal category probabilities,
// the rule-based toy dataset, fixed-length windows and batch sampling.
#ifndef ORDIFF_CORPUS_HPP_
#define ORDIFF_CORPUS_HPP_

#include <algorithm>
#include <array>
#include <cctype>
#include <charconv>
#include <cstdio>
#include <cstdint>
#include <fstream>
#include <map>
#include <numeric>
#include <ranges>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "ordiff/error.hpp"
#include "ordiff/util.hpp"

namespace ordiff {

inline constexpr std::string_view kUnkToken = "<unk>";

/// Bidirectional token <-> id map plus the marginal p(z0). Real categories
/// occupy [0, size()); the absorbing mask state is size().
class Vocab {
public:
    Vocab() = default;
    Vocab(std::vector<std::string> tokens, std::vector<double> probs)
        : tokens_(std::move(tokens)), probs_(std::move(probs)) {
        if (tokens_.empty()) throw Error(Errc::empty_vocab, "vocabulary has no categories");
        if (tokens_.size() != probs_.size())
            throw Error(Errc::shape_mismatch, "token and probability counts differ");
        double sum = 0.0;
        for (double p : probs_) {
            if (!(p >= 0.0)) throw Error(Errc::parse_error, "negative category probability");
            sum += p;
        }
        if (std::abs(sum - 1.0) > 1e-9) throw Error(Errc::parse_error, "probabilities do not sum to 1");
        for (std::size_t i = 0; i < tokens_.size(); ++i) {
            if (!index_.emplace(tokens_[i], static_cast<int>(i)).second)
                throw Error(Errc::parse_error, "duplicate token '" + tokens_[i] + "'");
        }
    }

    int size() const noexcept { return static_cast<int>(tokens_.size()); }
    int mask_id() const noexcept { return size(); }
    const std::vector<std::string>& tokens() const noexcept { return tokens_; }
    const std::vector<double>& probs() const noexcept { return probs_; }
    const std::string& token(int id) const { return tokens_.at(static_cast<std::size_t>(id)); }

    /// Character-level vocabularies hold single-byte tokens and no unknown bucket.
    bool char_level() const noexcept {
        return !index_.contains(std::string(kUnkToken)) &&
               std::ranges::all_of(tokens_, [](const std::string& s) { return s.size() == 1; });
    }

    int unk_id() const noexcept {
        auto it = index_.find(std::string(kUnkToken));
        return it == index_.end() ? -1 : it->second;
    }

    /// Returns -1 when absent.
    int find(std::string_view tok) const {
        auto it = index_.find(std::string(tok));
        return it == index_.end() ? -1 : it->second;
    }

    int id_of(std::string_view tok) const {
        if (int id = find(tok); id >= 0) return id;
        if (int unk = unk_id(); unk >= 0) return unk;
        throw Error(Errc::unknown_id, "token '" + std::string(tok) + "' not in vocabulary");
    }

    void set_probs(std::vector<double> probs) { *this = Vocab(tokens_, std::move(probs)); }

private:
    std::vector<std::string> tokens_;
    std::vector<double> probs_;
    std::unordered_map<std::string, int> index_;
};

struct TokenSequence {
    std::vector<int> ids;
    std::size_t length() const noexcept { return ids.size(); }
    bool operator==(const TokenSequence&) const = default;
};

/// A list of documents. text8 is a single document, the toy set one
/// document per generated sequence.
struct Corpus {
    std::vector<TokenSequence> docs;

    std::size_t total_tokens() const noexcept {
        std::size_t n = 0;
        for (const auto& d : docs) n += d.length();
        return n;
    }
};

// ---------------------------------------------------------------------------
// Vocabulary construction

inline Vocab build_char_vocab(std::string_view text) {
    if (text.empty()) throw Error(Errc::empty_corpus, "no characters");
    std::array<std::uint64_t, 256> counts{};
    for (std::size_t i = 0; i < text.size(); ++i) {
        const auto c = static_cast<unsigned char>(text[i]);
        if (c != ' ' && (c < 'a' || c > 'z'))
            throw Error(Errc::invalid_byte, "byte " + std::to_string(c) + " at position " + std::to_string(i));
        ++counts[c];
    }
    std::vector<std::string> tokens;
    std::vector<double> probs;
    for (int c = 0; c < 256; ++c) {
        if (counts[static_cast<std::size_t>(c)] == 0) continue;
        tokens.emplace_back(1, static_cast<char>(c));
        probs.push_back(static_cast<double>(counts[static_cast<std::size_t>(c)]) / static_cast<double>(text.size()));
    }
    return Vocab(std::move(tokens), std::move(probs));
}

inline std::vector<std::string> split_words(std::string_view text) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : text) {
        if (std::isspace(static_cast<unsigned char>(ch))) {
            if (!cur.empty()) out.push_back(std::move(cur)), cur.clear();
        } else {
            cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
        }
    }
    if (!cur.empty()) out.push_back(std::move(cur));
    return out;
}

/// The `max_vocab` most frequent lowercase words (ties broken
/// lexicographically) plus a trailing <unk> bucket that pools the rest.
/// Literal "<unk>" words in the input land in the bucket.
inline Vocab build_word_vocab(std::string_view text, std::size_t max_vocab) {
    const auto words = split_words(text);
    if (words.empty()) throw Error(Errc::empty_corpus, "no words");
    std::unordered_map<std::string, std::uint64_t> counts;
    for (const auto& w : words) ++counts[w];
    std::uint64_t unk_count = 0;
    if (auto it = counts.find(std::string(kUnkToken)); it != counts.end()) {
        unk_count = it->second;
        counts.erase(it);
    }
    std::vector<std::pair<std::string, std::uint64_t>> sorted(counts.begin(), counts.end());
    std::ranges::sort(sorted, [](const auto& a, const auto& b) {
        return a.second != b.second ? a.second > b.second : a.first < b.first;
    });
    if (sorted.size() > max_vocab) {
        for (std::size_t i = max_vocab; i < sorted.size(); ++i) unk_count += sorted[i].second;
        sorted.resize(max_vocab);
    }
    std::vector<std::string> tokens;
    std::vector<double> probs;
    const auto total = static_cast<double>(words.size());
    for (auto& [w, c] : sorted) {
        tokens.push_back(w);
        probs.push_back(static_cast<double>(c) / total);
    }
    tokens.emplace_back(kUnkToken);
    probs.push_back(static_cast<double>(unk_count) / total);
    return Vocab(std::move(tokens), std::move(probs));
}

inline TokenSequence encode_chars(std::string_view text, const Vocab& vocab) {
    TokenSequence seq;
    seq.ids.reserve(text.size());
    for (char ch : text) seq.ids.push_back(vocab.id_of(std::string_view(&ch, 1)));
    return seq;
}

inline TokenSequence encode_words(std::string_view text, const Vocab& vocab) {
    TokenSequence seq;
    for (const auto& w : split_words(text)) seq.ids.push_back(vocab.id_of(w));
    return seq;
}

/// Renders ids; the mask renders as '?' at character level and as
/// "<mask>" at word level.
inline std::string decode(std::span<const int> ids, const Vocab& vocab) {
    const bool chars = vocab.char_level();
    std::string out;
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (!chars && i > 0) out.push_back(' ');
        const int id = ids[i];
        if (id == vocab.mask_id())
            out += chars ? "?" : "<mask>";
        else if (id >= 0 && id < vocab.size())
            out += vocab.token(id);
        else
            throw Error(Errc::unknown_id, "id " + std::to_string(id));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Toy data: anchors a/b at even indices, fills at odd indices given by
// the two neighbouring anchors.

namespace toy {
inline constexpr int a = 0, b = 1, c = 2, d = 3, e = 4, f = 5;
inline constexpr int kVocabSize = 6;

/// (a,a)->c, (a,b)->c, (b,a)->d, (b,b)->e. No rule produces 'f'.
inline constexpr int fill(int left, int right) {
    if (left == a) return c;
    return right == a ? d : e;
}

inline constexpr bool is_anchor(int id) { return id == a || id == b; }
} // namespace toy

/// Toy vocabulary with the asymptotic marginal (a,b,c: 1/4; d,e: 1/8; f: 0).
inline Vocab toy_vocab() {
    return Vocab({"a", "b", "c", "d", "e", "f"}, {0.25, 0.25, 0.25, 0.125, 0.125, 0.0});
}

inline TokenSequence toy_from_anchors(std::span<const int> anchors) {
    TokenSequence seq;
    for (std::size_t i = 0; i < anchors.size(); ++i) {
        if (i > 0) seq.ids.push_back(toy::fill(anchors[i - 1], anchors[i]));
        seq.ids.push_back(anchors[i]);
    }
    return seq;
}

inline TokenSequence generate_toy_sequence(std::size_t length, Rng& rng) {
    if (length % 2 == 0) throw Error(Errc::even_length, "toy length must be odd, got " + std::to_string(length));
    if (length < 3) throw Error(Errc::even_length, "toy length must be at least 3");
    std::vector<int> anchors((length + 1) / 2);
    for (auto& x : anchors) x = uniform01(rng) < 0.5 ? toy::a : toy::b;
    return toy_from_anchors(anchors);
}

/// Number of odd positions that break the fill rules (or hold non-anchors
/// at even positions). Zero for every generated sequence.
inline std::size_t toy_violations(std::span<const int> ids) {
    std::size_t bad = 0;
    for (std::size_t i = 0; i < ids.size(); i += 2)
        if (!toy::is_anchor(ids[i])) ++bad;
    for (std::size_t i = 1; i + 1 < ids.size(); i += 2) {
        if (!toy::is_anchor(ids[i - 1]) || !toy::is_anchor(ids[i + 1]) ||
            ids[i] != toy::fill(ids[i - 1], ids[i + 1]))
            ++bad;
    }
    return bad;
}

// ---------------------------------------------------------------------------
// Statistics and iteration

inline std::vector<double> token_frequencies(std::span<const TokenSequence> seqs, int vocab_size) {
    std::vector<std::uint64_t> counts(static_cast<std::size_t>(vocab_size), 0);
    std::uint64_t total = 0;
    for (const auto& s : seqs) {
        for (int id : s.ids) {
            if (id < 0 || id >= vocab_size) throw Error(Errc::unknown_id, "id " + std::to_string(id));
            ++counts[static_cast<std::size_t>(id)];
        }
        total += s.length();
    }
    if (total == 0) throw Error(Errc::empty_corpus, "no tokens to count");
    std::vector<double> p(counts.size());
    for (std::size_t i = 0; i < p.size(); ++i) p[i] = static_cast<double>(counts[i]) / static_cast<double>(total);
    return p;
}

inline std::vector<double> token_frequencies(const Corpus& corpus, const Vocab& vocab) {
    return token_frequencies(corpus.docs, vocab.size());
}

/// Every aligned length-L window starting at multiples of `stride`;
/// a partial tail is dropped.
inline auto window_iter(std::span<const int> ids, std::size_t L, std::size_t stride) {
    if (L == 0 || stride == 0) throw Error(Errc::bad_config, "window length and stride must be >= 1");
    const std::size_t count = ids.size() < L ? 0 : (ids.size() - L) / stride + 1;
    return std::views::iota(std::size_t{0}, count) |
           std::views::transform([ids, L, stride](std::size_t k) { return ids.subspan(k * stride, L); });
}

/// Uniformly positioned contiguous crops across all documents long enough
/// to hold one. Deterministic for a given seed.
class BatchSampler {
public:
    BatchSampler(const Corpus& corpus, std::size_t seq_len, std::size_t batch, std::uint64_t seed)
        : corpus_(&corpus), seq_len_(seq_len), batch_(batch), rng_(seed) {
        if (seq_len == 0 || batch == 0) throw Error(Errc::bad_config, "seq_len and batch must be >= 1");
        std::uint64_t acc = 0;
        for (std::size_t d = 0; d < corpus.docs.size(); ++d) {
            const auto n = corpus.docs[d].length();
            if (n < seq_len) continue;
            acc += n - seq_len + 1;
            docs_.push_back(d);
            cumulative_.push_back(acc);
        }
        if (docs_.empty())
            throw Error(Errc::corpus_too_short, "no document holds " + std::to_string(seq_len) + " tokens");
    }

    std::vector<TokenSequence> next() {
        std::vector<TokenSequence> out(batch_);
        for (auto& seq : out) {
            const auto k = static_cast<std::uint64_t>(uniform_index(rng_, static_cast<std::size_t>(cumulative_.back())));
            const auto it = std::ranges::upper_bound(cumulative_, k);
            const auto slot = static_cast<std::size_t>(it - cumulative_.begin());
            const std::uint64_t before = slot == 0 ? 0 : cumulative_[slot - 1];
            const auto& doc = corpus_->docs[docs_[slot]].ids;
            const auto off = static_cast<std::ptrdiff_t>(k - before);
            seq.ids.assign(doc.begin() + off, doc.begin() + off + static_cast<std::ptrdiff_t>(seq_len_));
        }
        return out;
    }

private:
    const Corpus* corpus_;
    std::size_t seq_len_;
    std::size_t batch_;
    Rng rng_;
    std::vector<std::size_t> docs_;
    std::vector<std::uint64_t> cumulative_;
};

struct CorpusSplits {
    Corpus train, valid, test;
};

/// Contiguous train/valid/test split. Single-document corpora are cut by
/// token position, multi-document corpora by document index.
inline CorpusSplits split_corpus(const Corpus& corpus, double train_frac = 0.90, double valid_frac = 0.05) {
    CorpusSplits out;
    if (corpus.docs.size() == 1) {
        const auto& ids = corpus.docs.front().ids;
        const auto n = ids.size();
        const auto a = static_cast<std::size_t>(static_cast<double>(n) * train_frac);
        const auto b = static_cast<std::size_t>(static_cast<double>(n) * (train_frac + valid_frac));
        out.train.docs.push_back({{ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(a)}});
        out.valid.docs.push_back({{ids.begin() + static_cast<std::ptrdiff_t>(a), ids.begin() + static_cast<std::ptrdiff_t>(b)}});
        out.test.docs.push_back({{ids.begin() + static_cast<std::ptrdiff_t>(b), ids.end()}});
        return out;
    }
    const auto n = corpus.docs.size();
    const auto a = static_cast<std::size_t>(static_cast<double>(n) * train_frac);
    const auto b = static_cast<std::size_t>(static_cast<double>(n) * (train_frac + valid_frac));
    for (std::size_t i = 0; i < n; ++i) (i < a ? out.train : i < b ? out.valid : out.test).docs.push_back(corpus.docs[i]);
    return out;
}

// ---------------------------------------------------------------------------
// Persistence. Vocab: "token<TAB>probability" per line, line number = id.
// Corpus: one document per line, space-separated ids.

inline void save_vocab(const Vocab& vocab, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw Error(Errc::io_error, "cannot write " + path);
    char buf[64];
    for (int i = 0; i < vocab.size(); ++i) {
        std::snprintf(buf, sizeof buf, "%.17g", vocab.probs()[static_cast<std::size_t>(i)]);
        os << vocab.token(i) << '\t' << buf << '\n';
    }
}

inline Vocab load_vocab(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw Error(Errc::io_error, "cannot read " + path);
    std::vector<std::string> tokens;
    std::vector<double> probs;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        const auto tab = line.rfind('\t');
        if (tab == std::string::npos) throw Error(Errc::parse_error, "vocab line without tab: " + line);
        tokens.push_back(line.substr(0, tab));
        probs.push_back(std::stod(line.substr(tab + 1)));
    }
    return Vocab(std::move(tokens), std::move(probs));
}

inline void save_corpus(const Corpus& corpus, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw Error(Errc::io_error, "cannot write " + path);
    std::string line;
    for (const auto& d : corpus.docs) {
        line.clear();
        for (std::size_t i = 0; i < d.ids.size(); ++i) {
            if (i) line.push_back(' ');
            line += std::to_string(d.ids[i]);
        }
        line.push_back('\n');
        os << line;
    }
}

inline Corpus load_corpus(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw Error(Errc::io_error, "cannot read " + path);
    Corpus corpus;
    std::string line;
    while (std::getline(is, line)) {
        TokenSequence seq;
        const char* p = line.data();
        const char* end = p + line.size();
        while (p < end) {
            while (p < end && *p == ' ') ++p;
            if (p == end) break;
            int v = 0;
            auto [q, ec] = std::from_chars(p, end, v);
            if (ec != std::errc()) throw Error(Errc::parse_error, "bad id in " + path);
            seq.ids.push_back(v);
            p = q;
        }
        corpus.docs.push_back(std::move(seq));
    }
    return corpus;
}

inline void check_ids(const Corpus& corpus, const Vocab& vocab) {
    for (const auto& d : corpus.docs)
        for (int id : d.ids)
            if (id < 0 || id >= vocab.size()) throw Error(Errc::unknown_id, "id " + std::to_string(id));
}

} // namespace ordiff

#endif // ORDIFF_CORPUS_HPP_
