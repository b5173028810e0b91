// Copyright 2026 The bamforge Authors
// SPDX-License-Identifier: Apache-2.0

#include "bamforge/corpus.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>

#include "bamforge/errors.hpp"

namespace bamforge {

namespace {

constexpr std::array kDeterminers = {"the", "a", "every", "one"};
constexpr std::array kAdjectives = {"red", "small", "old", "quiet", "bright", "green", "cold", "tall"};
constexpr std::array kNouns = {"cat", "dog", "bird", "river", "tree", "house", "man", "child",
                               "stone", "ship"};
constexpr std::array kVerbs = {"sees", "finds", "likes", "follows", "holds", "moves", "calls"};
constexpr std::array kPlaces = {"near the hill", "by the sea", "in the town", "under the bridge"};

constexpr std::string_view kOpen = "([{<";
constexpr std::string_view kClose = ")]}>";

template <typename Array>
std::string pick(const Array& a, Rng& rng) {
  return a[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(a.size()) - 1))];
}

std::string general_sentence(Rng& rng) {
  std::string s = pick(kDeterminers, rng) + " ";
  if (rng.uniform() < 0.5) s += pick(kAdjectives, rng) + " ";
  s += pick(kNouns, rng) + " " + pick(kVerbs, rng) + " the ";
  if (rng.uniform() < 0.3) s += pick(kAdjectives, rng) + " ";
  s += pick(kNouns, rng);
  if (rng.uniform() < 0.25) s += " " + pick(kPlaces, rng);
  return s + ".\n";
}

std::string arith_statement(Rng& rng) {
  const std::int64_t a = rng.uniform_int(0, 99);
  const std::int64_t b = rng.uniform_int(0, 99);
  return std::to_string(a) + "+" + std::to_string(b) + "=" + std::to_string(a + b) + ";";
}

void bracket_group(std::string& out, Rng& rng, int depth) {
  const auto kind = static_cast<std::size_t>(rng.uniform_int(0, 3));
  const char label = static_cast<char>('a' + rng.uniform_int(0, 25));
  out += kOpen[kind];
  out += label;
  if (depth < 3) {
    const std::int64_t children = rng.uniform_int(0, depth == 0 ? 2 : 1);
    for (std::int64_t c = 0; c < children; ++c) bracket_group(out, rng, depth + 1);
  }
  out += label;
  out += kClose[kind];
}

std::string bracket_statement(Rng& rng) {
  std::string s;
  bracket_group(s, rng, 0);
  return s + ";";
}

std::string sorted_statement(Rng& rng) {
  const std::int64_t n = rng.uniform_int(3, 6);
  std::vector<int> xs;
  for (std::int64_t i = 0; i < n; ++i) xs.push_back(static_cast<int>(rng.uniform_int(0, 9)));
  auto join = [](const std::vector<int>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
    return s;
  };
  std::string s = join(xs) + ">";
  std::sort(xs.begin(), xs.end());
  return s + join(xs) + ";";
}

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

void append(std::vector<std::int32_t>& out, const std::string& s) {
  for (unsigned char c : s) out.push_back(c);
}

}  // namespace

std::string to_string(CorpusKind kind) {
  switch (kind) {
    case CorpusKind::general: return "general";
    case CorpusKind::arith: return "arith";
    case CorpusKind::bracket: return "bracket";
    case CorpusKind::sorted: return "sorted";
  }
  return "?";
}

CorpusKind parse_corpus_kind(const std::string& text) {
  if (text == "general") return CorpusKind::general;
  if (text == "arith") return CorpusKind::arith;
  if (text == "bracket") return CorpusKind::bracket;
  if (text == "sorted") return CorpusKind::sorted;
  throw ConfigError("unknown corpus kind '" + text + "'");
}

std::string synth_statement(CorpusKind kind, Rng& rng) {
  switch (kind) {
    case CorpusKind::general: return general_sentence(rng);
    case CorpusKind::arith: return arith_statement(rng);
    case CorpusKind::bracket: return bracket_statement(rng);
    case CorpusKind::sorted: return sorted_statement(rng);
  }
  throw ConfigError("unknown corpus kind");
}

bool is_eval_statement(const std::string& statement) { return fnv1a(statement) % kEvalModulus == 0; }

DomainCorpus synth_corpus(CorpusKind kind, std::size_t n_tokens, Rng& rng) {
  if (n_tokens < kMinCorpusTokens)
    throw ConfigError("corpus needs at least " + std::to_string(kMinCorpusTokens) + " tokens");
  DomainCorpus c;
  c.name = to_string(kind);
  c.terminator = kind == CorpusKind::general ? '\n' : ';';
  while (c.size() < n_tokens) {
    const std::string s = synth_statement(kind, rng);
    append(is_eval_statement(s) ? c.eval : c.train, s);
  }
  return c;
}

DomainCorpus load_corpus(const std::string& name, const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw ConfigError("cannot open corpus file " + file.string());
  DomainCorpus c;
  c.name = name;
  c.terminator = '\n';
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    line += '\n';
    append(is_eval_statement(line) ? c.eval : c.train, line);
  }
  if (c.size() < kMinCorpusTokens)
    throw ConfigError("corpus file " + file.string() + " holds fewer than " +
                      std::to_string(kMinCorpusTokens) + " tokens");
  if (c.eval.empty()) throw ConfigError("corpus file " + file.string() + " yields an empty eval split");
  return c;
}

std::vector<std::string> split_statements(const std::vector<std::int32_t>& tokens, char terminator) {
  std::vector<std::string> out;
  std::string cur;
  for (std::int32_t t : tokens) {
    cur += static_cast<char>(t);
    if (static_cast<char>(t) == terminator) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  return out;
}

void MixtureSpec::validate() const {
  if (weights.empty()) throw ConfigError("mixture has no domains");
  double total = 0.0;
  for (const auto& [name, w] : weights) {
    if (!(w >= 0.0)) throw ConfigError("mixture weight for '" + name + "' is negative");
    total += w;
  }
  if (std::abs(total - 1.0) > 1e-9) throw ConfigError("mixture weights must sum to 1");
}

MixtureSpec MixtureSpec::single(const std::string& domain) { return {{{domain, 1.0}}}; }

MixtureSpec MixtureSpec::augmented(const std::string& primary, double general_share) {
  if (primary == "general") return single(primary);
  return {{{primary, 1.0 - general_share}, {"general", general_share}}};
}

MixtureSpec MixtureSpec::uniform(const std::vector<std::string>& domains) {
  if (domains.empty()) throw ConfigError("mixture has no domains");
  MixtureSpec spec;
  for (const std::string& d : domains) spec.weights[d] = 1.0 / static_cast<double>(domains.size());
  return spec;
}

MixtureSampler::MixtureSampler(const CorpusSet& corpora, MixtureSpec spec, std::size_t seq_len, Rng rng)
    : corpora_(corpora), seq_len_(seq_len), rng_(std::move(rng)) {
  spec.validate();
  double acc = 0.0;
  for (const auto& [name, w] : spec.weights) {
    auto it = corpora.find(name);
    if (it == corpora.end()) throw ConfigError("mixture names unknown domain '" + name + "'");
    if (w == 0.0) continue;
    if (it->second.train.size() < seq_len + 1)
      throw ConfigError("domain '" + name + "' is shorter than one training sequence");
    acc += w;
    domains_.push_back(name);
    cumulative_.push_back(acc);
    counts_[name] = 0;
  }
  cumulative_.back() = 1.0;
}

std::vector<std::int32_t> MixtureSampler::next_sequence(std::string* domain) {
  const double u = rng_.uniform();
  std::size_t d = 0;
  while (d + 1 < cumulative_.size() && u >= cumulative_[d]) ++d;
  const DomainCorpus& c = corpora_.at(domains_[d]);
  const auto max_start = static_cast<std::int64_t>(c.train.size() - (seq_len_ + 1));
  const auto start = static_cast<std::size_t>(rng_.uniform_int(0, max_start));
  ++counts_[domains_[d]];
  if (domain) *domain = domains_[d];
  return {c.train.begin() + static_cast<std::ptrdiff_t>(start),
          c.train.begin() + static_cast<std::ptrdiff_t>(start + seq_len_ + 1)};
}

Batch MixtureSampler::next_batch(std::size_t n_seq) {
  Batch b;
  b.n_seq = n_seq;
  b.seq_len = seq_len_;
  b.tokens.reserve(n_seq * (seq_len_ + 1));
  for (std::size_t s = 0; s < n_seq; ++s) {
    const auto seq = next_sequence();
    b.tokens.insert(b.tokens.end(), seq.begin(), seq.end());
  }
  return b;
}

}  // namespace bamforge
