// Copyright 2026 The bamforge Authors
// SPDX-License-Identifier: Apache-2.0

#include "bamforge/config.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include "bamforge/errors.hpp"

namespace bamforge {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

std::string to_string(Arch arch) {
  switch (arch) {
    case Arch::dense: return "dense";
    case Arch::btx: return "btx";
    case Arch::bam_expert_kv: return "bam_expert_kv";
    case Arch::bam_shared_kv: return "bam_shared_kv";
  }
  return "?";
}

Arch parse_arch(const std::string& text) {
  if (text == "dense") return Arch::dense;
  if (text == "btx") return Arch::btx;
  if (text == "bam_expert_kv" || text == "bam") return Arch::bam_expert_kv;
  if (text == "bam_shared_kv") return Arch::bam_shared_kv;
  throw ConfigError("unknown arch '" + text + "'");
}

std::string to_string(const AttnRouting& routing) {
  return routing.soft ? "soft" : "top" + std::to_string(routing.k);
}

AttnRouting parse_attn_routing(const std::string& text) {
  if (text == "soft") return AttnRouting::make_soft();
  if (text.rfind("top", 0) == 0) {
    const std::string digits = text.substr(3);
    std::size_t k = 0;
    auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), k);
    if (ec == std::errc() && ptr == digits.data() + digits.size() && k >= 1) return AttnRouting::top(k);
  }
  throw ConfigError("attention routing must be 'soft' or 'topK', got '" + text + "'");
}

std::size_t ModelConfig::attn_active_experts() const {
  if (!is_bam()) return 1;
  return attn_routing.soft ? n_attn_experts : attn_routing.k;
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError("model config: " + msg); };
  if (d_model == 0 || n_heads == 0 || n_layers == 0 || vocab == 0 || n_ctx == 0 || d_ff == 0)
    fail("dimensions must be positive");
  if (d_model % n_heads != 0) fail("d_model must be divisible by n_heads");
  if (head_dim() % 2 != 0) fail("head dimension must be even for rotary embeddings");
  if (d_ff % 2 != 0) fail("d_ff must be even");
  if (n_experts == 0) fail("n_experts must be >= 1");
  if (ffn_topk == 0 || ffn_topk > n_experts) fail("ffn_topk must lie in [1, n_experts]");
  switch (arch) {
    case Arch::dense:
      if (n_experts != 1) fail("dense arch requires n_experts == 1");
      if (n_attn_experts != 0) fail("dense arch has no attention experts");
      break;
    case Arch::btx:
      if (n_attn_experts != 0) fail("btx arch has no attention experts");
      break;
    case Arch::bam_expert_kv:
    case Arch::bam_shared_kv:
      if (n_attn_experts == 0) fail("bam arch requires n_attn_experts >= 1");
      if (!attn_routing.soft && (attn_routing.k == 0 || attn_routing.k > n_attn_experts))
        fail("attention top-k must lie in [1, n_attn_experts]");
      break;
  }
}

KeyValues parse_key_values(std::istream& in, const std::string& source) {
  KeyValues out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(source + ":" + std::to_string(lineno) + ": expected key=value");
    }
    out.emplace_back(trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
  }
  return out;
}

KeyValues read_key_values(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path);
  return parse_key_values(in, path);
}

std::size_t parse_size(const std::string& key, const std::string& value) {
  const std::int64_t v = parse_int(key, value);
  if (v < 0) throw ConfigError(key + ": expected a nonnegative integer, got '" + value + "'");
  return static_cast<std::size_t>(v);
}

std::int64_t parse_int(const std::string& key, const std::string& value) {
  // Accept plain integers and exact scientific forms such as 2e6.
  std::int64_t v = 0;
  auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), v);
  if (ec == std::errc() && ptr == value.data() + value.size()) return v;
  const double d = parse_double(key, value);
  if (d != static_cast<double>(static_cast<std::int64_t>(d)))
    throw ConfigError(key + ": expected an integer, got '" + value + "'");
  return static_cast<std::int64_t>(d);
}

double parse_double(const std::string& key, const std::string& value) {
  char* end = nullptr;
  const double v = std::strtod(value.c_str(), &end);
  if (value.empty() || end != value.c_str() + value.size() || !std::isfinite(v))
    throw ConfigError(key + ": expected a number, got '" + value + "'");
  return v;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1" || value == "yes") return true;
  if (value == "false" || value == "0" || value == "no") return false;
  throw ConfigError(key + ": expected a boolean, got '" + value + "'");
}

std::vector<std::string> split_list(const std::string& value, char sep) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream ss(value);
  while (std::getline(ss, item, sep)) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

bool apply_config_key(ModelConfig& c, const std::string& key, const std::string& value) {
  if (key == "d_model") c.d_model = parse_size(key, value);
  else if (key == "d_ff") c.d_ff = parse_size(key, value);
  else if (key == "n_heads") c.n_heads = parse_size(key, value);
  else if (key == "n_layers") c.n_layers = parse_size(key, value);
  else if (key == "vocab") c.vocab = parse_size(key, value);
  else if (key == "n_ctx") c.n_ctx = parse_size(key, value);
  else if (key == "arch") c.arch = parse_arch(value);
  else if (key == "n_experts") c.n_experts = parse_size(key, value);
  else if (key == "n_attn_experts") c.n_attn_experts = parse_size(key, value);
  else if (key == "ffn_topk") c.ffn_topk = parse_size(key, value);
  else if (key == "attn_routing") c.attn_routing = parse_attn_routing(value);
  else if (key == "tie_embeddings") c.tie_embeddings = parse_bool(key, value);
  else return false;
  return true;
}

void write_config(std::ostream& out, const ModelConfig& c, const std::string& prefix) {
  out << prefix << "d_model=" << c.d_model << "\n"
      << prefix << "d_ff=" << c.d_ff << "\n"
      << prefix << "n_heads=" << c.n_heads << "\n"
      << prefix << "n_layers=" << c.n_layers << "\n"
      << prefix << "vocab=" << c.vocab << "\n"
      << prefix << "n_ctx=" << c.n_ctx << "\n"
      << prefix << "arch=" << to_string(c.arch) << "\n"
      << prefix << "n_experts=" << c.n_experts << "\n"
      << prefix << "n_attn_experts=" << c.n_attn_experts << "\n"
      << prefix << "ffn_topk=" << c.ffn_topk << "\n"
      << prefix << "attn_routing=" << to_string(c.attn_routing) << "\n"
      << prefix << "tie_embeddings=" << (c.tie_embeddings ? "true" : "false") << "\n";
}

ModelConfig small_scale_config(Arch arch, std::size_t n_experts, std::size_t ffn_topk) {
  ModelConfig c;
  c.d_model = 1024;
  c.d_ff = 4096;
  c.n_heads = 8;
  c.n_layers = 6;
  c.vocab = 256000;
  c.n_ctx = 256;
  c.tie_embeddings = false;
  c.arch = arch;
  c.n_experts = arch == Arch::dense ? 1 : n_experts;
  c.ffn_topk = arch == Arch::dense ? 1 : ffn_topk;
  c.n_attn_experts = c.is_bam() ? n_experts : 0;
  c.attn_routing = AttnRouting::make_soft();
  c.validate();
  return c;
}

}  // namespace bamforge
