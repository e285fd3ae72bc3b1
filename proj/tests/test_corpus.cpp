// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <filesystem>
#include <map>

#include <gtest/gtest.h>

#include "ordiff/corpus.hpp"
#include "test_support.hpp"

using namespace ordiff;

using ordiff::testing::code_of;
using ordiff::testing::temp_dir;

TEST(CharVocab, SortedByByteWithCountProbabilities) {
    const Vocab v = build_char_vocab("hello world");
    const std::vector<std::string> expected{" ", "d", "e", "h", "l", "o", "r", "w"};
    EXPECT_EQ(v.tokens(), expected);
    EXPECT_DOUBLE_EQ(v.probs()[static_cast<std::size_t>(v.find("l"))], 3.0 / 11.0);
    EXPECT_DOUBLE_EQ(v.probs()[static_cast<std::size_t>(v.find(" "))], 1.0 / 11.0);
    EXPECT_EQ(v.mask_id(), 8);
    EXPECT_TRUE(v.char_level());
}

TEST(CharVocab, RejectsBytesOutsideText8Alphabet) {
    EXPECT_EQ(code_of([] { build_char_vocab("Hello"); }), Errc::invalid_byte);
    EXPECT_EQ(code_of([] { build_char_vocab("a\nb"); }), Errc::invalid_byte);
    EXPECT_EQ(code_of([] { build_char_vocab(""); }), Errc::empty_corpus);
}

TEST(CharVocab, EncodeDecodeRoundTrip) {
    const std::string text = "the quick brown fox jumps over the lazy dog";
    const Vocab v = build_char_vocab(text);
    const auto seq = encode_chars(text, v);
    EXPECT_EQ(decode(seq.ids, v), text);
    for (int id = 0; id < v.size(); ++id) EXPECT_EQ(encode_chars(v.token(id), v).ids, std::vector<int>{id});
    std::vector<int> masked = seq.ids;
    masked[0] = v.mask_id();
    EXPECT_EQ(decode(masked, v)[0], '?');
    EXPECT_EQ(code_of([] { encode_chars("q", build_char_vocab("hello")); }), Errc::unknown_id);
}

TEST(WordVocab, TopKWithLexicographicTiesAndUnknownBucket) {
    const Vocab v = build_word_vocab("b a c a B d <unk> e", 2);
    // Counts: a 2, b 2, c 1, d 1, e 1, <unk> 1. Keep a, b; pool c, d, e, <unk>.
    const std::vector<std::string> expected{"a", "b", "<unk>"};
    EXPECT_EQ(v.tokens(), expected);
    EXPECT_DOUBLE_EQ(v.probs()[2], 4.0 / 8.0);
    EXPECT_EQ(v.id_of("zzz"), v.unk_id());
    EXPECT_FALSE(v.char_level());
    const auto seq = encode_words("A b Q", v);
    EXPECT_EQ(seq.ids, (std::vector<int>{0, 1, 2}));
    std::vector<int> masked{0, v.mask_id()};
    EXPECT_EQ(decode(masked, v), "a <mask>");
}

TEST(Toy, GeneratedSequencesFollowRules) {
    Rng rng(7);
    for (int i = 0; i < 500; ++i) {
        const auto s = generate_toy_sequence(31, rng);
        ASSERT_EQ(s.length(), 31u);
        EXPECT_EQ(toy_violations(s.ids), 0u);
        EXPECT_EQ(std::ranges::count(s.ids, toy::f), 0);
        for (std::size_t k = 1; k < s.ids.size(); k += 2) EXPECT_EQ(s.ids[k], toy::fill(s.ids[k - 1], s.ids[k + 1]));
    }
    EXPECT_EQ(toy::fill(toy::a, toy::a), toy::c);
    EXPECT_EQ(toy::fill(toy::a, toy::b), toy::c);
    EXPECT_EQ(toy::fill(toy::b, toy::a), toy::d);
    EXPECT_EQ(toy::fill(toy::b, toy::b), toy::e);
    EXPECT_EQ(code_of([&] { generate_toy_sequence(4, rng); }), Errc::even_length);
    EXPECT_EQ(code_of([&] { generate_toy_sequence(1, rng); }), Errc::even_length);
}

TEST(Toy, ViolationValidatorFlagsBrokenFills) {
    std::vector<int> ok{toy::a, toy::c, toy::b, toy::d, toy::a};
    EXPECT_EQ(toy_violations(ok), 0u);
    std::vector<int> bad{toy::a, toy::c, toy::b, toy::e, toy::a}; // b?a must be d
    EXPECT_EQ(toy_violations(bad), 1u);
    std::vector<int> fill_at_anchor{toy::c, toy::c, toy::b};
    EXPECT_EQ(toy_violations(fill_at_anchor), 2u);
}

TEST(Toy, EmpiricalMarginalConvergesToAnalytic) {
    // Length-n toy sequences have marginal (a,b) = (n+1)/4n each and fills
    // (n-1)/4n, (n-1)/8n, (n-1)/8n; long sequences approach [.25,.25,.25,.125,.125,0].
    Rng rng(11);
    std::vector<TokenSequence> seqs;
    for (int i = 0; i < 1000; ++i) seqs.push_back(generate_toy_sequence(1001, rng));
    const auto p = token_frequencies(std::span<const TokenSequence>(seqs), toy::kVocabSize);
    const auto q = toy_vocab().probs();
    double kl = 0.0;
    for (std::size_t c = 0; c < p.size(); ++c)
        if (p[c] > 0.0) kl += p[c] * std::log(p[c] / q[c]);
    EXPECT_LT(kl, 1e-3);
    EXPECT_EQ(p[toy::f], 0.0);
}

TEST(Windows, AlignedWindowsDropPartialTail) {
    const std::vector<int> ids{0, 1, 2, 3, 4, 5, 6};
    std::vector<std::vector<int>> got;
    for (auto w : window_iter(ids, 3, 2)) got.emplace_back(w.begin(), w.end());
    EXPECT_EQ(got, (std::vector<std::vector<int>>{{0, 1, 2}, {2, 3, 4}, {4, 5, 6}}));
    EXPECT_TRUE(std::ranges::empty(window_iter(ids, 8, 1)));
    EXPECT_EQ(code_of([&] { (void)window_iter(ids, 0, 1); }), Errc::bad_config);
}

TEST(BatchSampler, DeterministicAndInBounds) {
    Corpus c;
    c.docs.push_back({{0, 1, 2, 3, 4, 5, 6, 7, 8, 9}});
    c.docs.push_back({{1, 1}}); // too short, never sampled
    BatchSampler a(c, 4, 8, 3), b(c, 4, 8, 3);
    for (int k = 0; k < 20; ++k) {
        const auto x = a.next(), y = b.next();
        EXPECT_EQ(x, y);
        for (const auto& s : x) {
            ASSERT_EQ(s.length(), 4u);
            for (std::size_t i = 1; i < 4; ++i) EXPECT_EQ(s.ids[i], s.ids[i - 1] + 1);
        }
    }
    EXPECT_EQ(code_of([&] { BatchSampler(c, 11, 1, 0); }), Errc::corpus_too_short);
}

TEST(BatchSampler, OffsetsAreUniform) {
    Corpus c;
    c.docs.push_back({{0, 1, 2, 3, 4, 5}});
    BatchSampler s(c, 2, 1, 5);
    std::map<int, int> counts;
    const int n = 50000;
    for (int i = 0; i < n; ++i) ++counts[s.next()[0].ids[0]];
    ASSERT_EQ(counts.size(), 5u);
    double chi2 = 0.0;
    for (auto [k, v] : counts) chi2 += (v - n / 5.0) * (v - n / 5.0) / (n / 5.0);
    EXPECT_LT(chi2, 18.47); // 4 dof, p = 0.001
}

TEST(Split, NinetyFiveFive) {
    Corpus single;
    single.docs.push_back({std::vector<int>(1000, 0)});
    const auto s = split_corpus(single);
    EXPECT_EQ(s.train.total_tokens(), 900u);
    EXPECT_EQ(s.valid.total_tokens(), 50u);
    EXPECT_EQ(s.test.total_tokens(), 50u);

    Corpus many;
    for (int i = 0; i < 200; ++i) many.docs.push_back({{i}});
    const auto m = split_corpus(many);
    EXPECT_EQ(m.train.docs.size(), 180u);
    EXPECT_EQ(m.valid.docs.size(), 10u);
    EXPECT_EQ(m.valid.docs.front().ids[0], 180);
    EXPECT_EQ(m.test.docs.size(), 10u);
}

TEST(Persistence, VocabAndCorpusRoundTrip) {
    const auto dir = temp_dir("corpus");
    const Vocab v = build_word_vocab("x y y z z z", 10);
    save_vocab(v, (dir / "v.tsv").string());
    const Vocab w = load_vocab((dir / "v.tsv").string());
    EXPECT_EQ(w.tokens(), v.tokens());
    EXPECT_EQ(w.probs(), v.probs());

    const Vocab sp = build_char_vocab("a b");
    save_vocab(sp, (dir / "c.tsv").string());
    EXPECT_EQ(load_vocab((dir / "c.tsv").string()).tokens(), sp.tokens());

    Corpus c;
    c.docs.push_back({{0, 1, 2}});
    c.docs.push_back({{7}});
    save_corpus(c, (dir / "c.ids").string());
    const Corpus d = load_corpus((dir / "c.ids").string());
    ASSERT_EQ(d.docs.size(), 2u);
    EXPECT_EQ(d.docs[0], c.docs[0]);
    EXPECT_EQ(d.docs[1], c.docs[1]);
    EXPECT_EQ(code_of([&] { check_ids(c, w); }), Errc::unknown_id);
    EXPECT_EQ(code_of([&] { load_vocab((dir / "missing").string()); }), Errc::io_error);
}

TEST(Frequencies, CountsOverCorpus) {
    Corpus c;
    c.docs.push_back({{0, 0, 1}});
    c.docs.push_back({{2}});
    const Vocab v({"a", "b", "c", "d"}, {0.25, 0.25, 0.25, 0.25});
    const auto p = token_frequencies(c, v);
    EXPECT_EQ(p, (std::vector<double>{0.5, 0.25, 0.25, 0.0}));
}
