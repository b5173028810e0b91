// Copyright 2026 The bamforge Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <algorithm>
#include <fstream>
#include <regex>
#include <set>

#include "bamforge/corpus.hpp"
#include "bamforge/errors.hpp"
#include "test_util.hpp"

namespace bamforge {
namespace {

using testing::TempDir;

CorpusSet four_domains() {
  CorpusSet set;
  for (CorpusKind k : {CorpusKind::general, CorpusKind::arith, CorpusKind::bracket, CorpusKind::sorted}) {
    Rng rng = Rng::stream(5, to_string(k));
    set.emplace(to_string(k), synth_corpus(k, 20000, rng));
  }
  return set;
}

TEST(Corpus, Deterministic) {
  Rng a(7), b(7), c(8);
  const DomainCorpus x = synth_corpus(CorpusKind::arith, 5000, a);
  const DomainCorpus y = synth_corpus(CorpusKind::arith, 5000, b);
  const DomainCorpus z = synth_corpus(CorpusKind::arith, 5000, c);
  EXPECT_EQ(x.train, y.train);
  EXPECT_EQ(x.eval, y.eval);
  EXPECT_NE(x.train, z.train);
}

TEST(Corpus, SizeAndMinimum) {
  Rng rng(1);
  const DomainCorpus c = synth_corpus(CorpusKind::general, 3000, rng);
  EXPECT_GE(c.size(), 3000u);
  EXPECT_LT(c.size(), 3200u);
  EXPECT_FALSE(c.eval.empty());
  EXPECT_THROW(synth_corpus(CorpusKind::general, 1023, rng), ConfigError);
}

TEST(Corpus, ArithmeticIsTrue) {
  Rng rng(7);
  const DomainCorpus c = synth_corpus(CorpusKind::arith, 50000, rng);
  const std::regex eq(R"((\d+)\+(\d+)=(\d+);)");
  std::size_t checked = 0;
  for (const auto* split : {&c.train, &c.eval})
    for (const std::string& s : split_statements(*split, ';')) {
      std::smatch m;
      ASSERT_TRUE(std::regex_match(s, m, eq)) << s;
      EXPECT_EQ(std::stoi(m[1]) + std::stoi(m[2]), std::stoi(m[3])) << s;
      ++checked;
    }
  EXPECT_GT(checked, 5000u);
}

TEST(Corpus, BracketsBalanceWithPairedLabels) {
  Rng rng(2);
  const DomainCorpus c = synth_corpus(CorpusKind::bracket, 20000, rng);
  const std::string open = "([{<", close = ")]}>";
  for (const std::string& s : split_statements(c.train, ';')) {
    std::vector<std::pair<char, char>> stack;
    for (std::size_t i = 0; i + 1 < s.size(); ++i) {
      const char ch = s[i];
      if (const auto o = open.find(ch); o != std::string::npos) {
        stack.emplace_back(close[o], s[i + 1]);
        ++i;
      } else if (close.find(ch) != std::string::npos) {
        ASSERT_FALSE(stack.empty()) << s;
        EXPECT_EQ(stack.back().first, ch) << s;
        EXPECT_EQ(s[i - 1], stack.back().second) << s;
        stack.pop_back();
      } else {
        EXPECT_TRUE(std::islower(static_cast<unsigned char>(ch))) << s;
      }
    }
    EXPECT_TRUE(stack.empty()) << s;
  }
}

TEST(Corpus, SortedStatementsAreSorted) {
  Rng rng(3);
  const DomainCorpus c = synth_corpus(CorpusKind::sorted, 20000, rng);
  for (const std::string& s : split_statements(c.train, ';')) {
    const auto arrow = s.find('>');
    ASSERT_NE(arrow, std::string::npos);
    std::string in = s.substr(0, arrow), out = s.substr(arrow + 1, s.size() - arrow - 2);
    std::erase(in, ',');
    std::erase(out, ',');
    std::sort(in.begin(), in.end());
    EXPECT_EQ(in, out) << s;
  }
}

TEST(Corpus, SplitsShareNoStatement) {
  for (CorpusKind k : {CorpusKind::general, CorpusKind::arith, CorpusKind::bracket, CorpusKind::sorted}) {
    Rng rng(4);
    const DomainCorpus c = synth_corpus(k, 30000, rng);
    const auto train = split_statements(c.train, c.terminator);
    const auto eval = split_statements(c.eval, c.terminator);
    const std::set<std::string> train_set(train.begin(), train.end());
    ASSERT_FALSE(eval.empty());
    for (const std::string& s : eval) EXPECT_FALSE(train_set.contains(s)) << to_string(k) << ": " << s;
    for (const std::string& s : eval) EXPECT_TRUE(is_eval_statement(s));
    for (const std::string& s : train) EXPECT_FALSE(is_eval_statement(s));
  }
}

TEST(Corpus, LoadFromFile) {
  TempDir dir("corpus_load");
  {
    std::ofstream out(dir / "law.txt");
    for (int i = 0; i < 400; ++i) out << "clause " << i << " applies\n";
  }
  const DomainCorpus c = load_corpus("law", dir / "law.txt");
  EXPECT_EQ(c.name, "law");
  EXPECT_FALSE(c.eval.empty());
  EXPECT_FALSE(c.train.empty());
  EXPECT_THROW(load_corpus("x", dir / "missing.txt"), ConfigError);
  std::ofstream(dir / "tiny.txt") << "too short\n";
  EXPECT_THROW(load_corpus("tiny", dir / "tiny.txt"), ConfigError);
}

TEST(Corpus, KindNames) {
  for (CorpusKind k : {CorpusKind::general, CorpusKind::arith, CorpusKind::bracket, CorpusKind::sorted})
    EXPECT_EQ(parse_corpus_kind(to_string(k)), k);
  EXPECT_THROW(parse_corpus_kind("code"), ConfigError);
}

TEST(MixtureSpec, Validation) {
  EXPECT_NO_THROW(MixtureSpec::augmented("arith", 0.1).validate());
  EXPECT_NO_THROW(MixtureSpec::uniform({"a", "b", "c"}).validate());
  EXPECT_THROW((MixtureSpec{{{"a", 0.5}, {"b", 0.4}}}).validate(), ConfigError);
  EXPECT_THROW((MixtureSpec{{{"a", 1.2}, {"b", -0.2}}}).validate(), ConfigError);
  EXPECT_THROW(MixtureSpec{}.validate(), ConfigError);
  const MixtureSpec aug = MixtureSpec::augmented("arith", 0.1);
  EXPECT_DOUBLE_EQ(aug.weights.at("arith"), 0.9);
  EXPECT_DOUBLE_EQ(aug.weights.at("general"), 0.1);
}

TEST(Sampler, SingleDomain) {
  const CorpusSet set = four_domains();
  MixtureSampler s(set, MixtureSpec::single("arith"), 32, Rng(1));
  for (int i = 0; i < 200; ++i) {
    std::string d;
    const auto seq = s.next_sequence(&d);
    EXPECT_EQ(d, "arith");
    EXPECT_EQ(seq.size(), 33u);
  }
}

TEST(Sampler, WindowsComeFromTrainSplit) {
  const CorpusSet set = four_domains();
  MixtureSampler s(set, MixtureSpec::single("sorted"), 16, Rng(2));
  const auto& train = set.at("sorted").train;
  for (int i = 0; i < 50; ++i) {
    const auto seq = s.next_sequence();
    EXPECT_NE(std::search(train.begin(), train.end(), seq.begin(), seq.end()), train.end());
  }
}

TEST(Sampler, NinetyTenWithinOnePercent) {
  const CorpusSet set = four_domains();
  MixtureSampler s(set, MixtureSpec::augmented("arith", 0.1), 16, Rng(3));
  for (int i = 0; i < 10000; ++i) s.next_sequence();
  const double arith = static_cast<double>(s.counts().at("arith")) / 10000.0;
  EXPECT_GE(arith, 0.885);
  EXPECT_LE(arith, 0.915);
  EXPECT_NEAR(arith, 0.9, 0.01);
}

TEST(Sampler, UniformFourWithinOnePercent) {
  const CorpusSet set = four_domains();
  MixtureSampler s(set, MixtureSpec::uniform({"general", "arith", "bracket", "sorted"}), 16, Rng(4));
  for (int i = 0; i < 10000; ++i) s.next_sequence();
  for (const auto& [d, n] : s.counts()) EXPECT_NEAR(static_cast<double>(n) / 10000.0, 0.25, 0.01) << d;
}

TEST(Sampler, BatchLayoutAndDeterminism) {
  const CorpusSet set = four_domains();
  MixtureSampler a(set, MixtureSpec::uniform({"arith", "sorted"}), 16, Rng(5));
  MixtureSampler b(set, MixtureSpec::uniform({"arith", "sorted"}), 16, Rng(5));
  const Batch x = a.next_batch(4), y = b.next_batch(4);
  EXPECT_EQ(x.tokens, y.tokens);
  EXPECT_EQ(x.tokens.size(), 4u * 17u);
  EXPECT_EQ(x.inputs().size(), 64u);
  EXPECT_EQ(x.targets()[0], x.tokens[1]);
  EXPECT_EQ(x.predicted_tokens(), 64u);
}

TEST(Sampler, Errors) {
  const CorpusSet set = four_domains();
  EXPECT_THROW(MixtureSampler(set, MixtureSpec::single("law"), 16, Rng(1)), ConfigError);
  EXPECT_THROW(MixtureSampler(set, MixtureSpec::single("arith"), 100000, Rng(1)), ConfigError);
  EXPECT_THROW(MixtureSampler(set, MixtureSpec{{{"arith", 0.7}}}, 16, Rng(1)), ConfigError);
}

}  // namespace
}  // namespace bamforge
