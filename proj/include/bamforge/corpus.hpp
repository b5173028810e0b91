// Copyright 2026 The bamforge Authors
// SPDX-License-Identifier: Apache-2.0

// Byte-level synthetic domains and the domain-mixture sampler.
//
// A corpus is a sequence of short statements. Each statement lands in the
// train or eval split by a hash of its bytes, so a statement that occurs in
// both generators' output can never straddle the splits.

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "bamforge/model.hpp"
#include "bamforge/rng.hpp"

namespace bamforge {

enum class CorpusKind { general, arith, bracket, sorted };

std::string to_string(CorpusKind kind);
CorpusKind parse_corpus_kind(const std::string& text);

struct DomainCorpus {
  std::string name;
  std::vector<std::int32_t> train;
  std::vector<std::int32_t> eval;
  char terminator = ';';

  std::size_t size() const { return train.size() + eval.size(); }
};

inline constexpr std::size_t kMinCorpusTokens = 1024;
// One statement in kEvalModulus goes to eval.
inline constexpr std::uint64_t kEvalModulus = 10;

std::string synth_statement(CorpusKind kind, Rng& rng);
DomainCorpus synth_corpus(CorpusKind kind, std::size_t n_tokens, Rng& rng);

// Each non-empty line of a text file is one statement.
DomainCorpus load_corpus(const std::string& name, const std::filesystem::path& file);

bool is_eval_statement(const std::string& statement);

// Splits a token stream after every terminator; a trailing partial statement is dropped.
std::vector<std::string> split_statements(const std::vector<std::int32_t>& tokens, char terminator);

// Domain name -> fraction.
struct MixtureSpec {
  std::map<std::string, double> weights;

  void validate() const;
  static MixtureSpec single(const std::string& domain);
  // `primary` at 1 - general_share, "general" at general_share.
  static MixtureSpec augmented(const std::string& primary, double general_share);
  static MixtureSpec uniform(const std::vector<std::string>& domains);
};

using CorpusSet = std::map<std::string, DomainCorpus>;

class MixtureSampler {
 public:
  // seq_len + 1 tokens per sequence; every weighted domain must have enough train tokens.
  MixtureSampler(const CorpusSet& corpora, MixtureSpec spec, std::size_t seq_len, Rng rng);

  // Draws the domain, then a uniformly placed window from its train split.
  std::vector<std::int32_t> next_sequence(std::string* domain = nullptr);
  Batch next_batch(std::size_t n_seq);

  const std::map<std::string, std::uint64_t>& counts() const { return counts_; }

 private:
  const CorpusSet& corpora_;
  std::vector<std::string> domains_;
  std::vector<double> cumulative_;
  std::size_t seq_len_;
  Rng rng_;
  std::map<std::string, std::uint64_t> counts_;
};

}  // namespace bamforge
