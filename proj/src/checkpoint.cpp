// Copyright 2026 The bamforge Authors
// SPDX-License-Identifier: Apache-2.0

#include "bamforge/checkpoint.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "bamforge/errors.hpp"
#include "bamforge/model.hpp"

namespace bamforge {

namespace fs = std::filesystem;

namespace {

constexpr const char* kFormatTag = "bamforge-checkpoint-v1";
constexpr std::uint64_t kMaxRank = 8;

std::array<unsigned char, 8> le_bytes(std::uint64_t v) {
  std::array<unsigned char, 8> out{};
  for (int i = 0; i < 8; ++i) out[i] = static_cast<unsigned char>(v >> (8 * i));
  return out;
}

std::uint64_t from_le(const unsigned char* b) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

void put_u64(std::ostream& out, std::uint64_t v) {
  const auto b = le_bytes(v);
  out.write(reinterpret_cast<const char*>(b.data()), 8);
}

std::uint64_t get_u64(std::istream& in, const fs::path& file) {
  unsigned char b[8];
  if (!in.read(reinterpret_cast<char*>(b), 8)) throw IoError("truncated tensor file " + file.string());
  return from_le(b);
}

std::uint64_t fnv_step(std::uint64_t h, std::uint64_t word) {
  const auto b = le_bytes(word);
  for (unsigned char c : b) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace

std::string to_string(Phase phase) {
  switch (phase) {
    case Phase::seed: return "seed";
    case Phase::specialized: return "specialized";
    case Phase::mixture: return "mixture";
  }
  return "?";
}

Phase parse_phase(const std::string& text) {
  if (text == "seed") return Phase::seed;
  if (text == "specialized") return Phase::specialized;
  if (text == "mixture") return Phase::mixture;
  throw ConfigError("unknown checkpoint phase '" + text + "'");
}

const Tensor& Checkpoint::param(const std::string& name) const {
  auto it = params.find(name);
  if (it == params.end()) throw SurgeryError("checkpoint has no parameter '" + name + "'");
  return it->second;
}

void validate_checkpoint(const Checkpoint& ckpt) {
  ckpt.config.validate();
  const auto expected = parameter_shapes(ckpt.config);
  for (const auto& [name, shape] : expected) {
    auto it = ckpt.params.find(name);
    if (it == ckpt.params.end()) throw SurgeryError("missing parameter '" + name + "'");
    if (it->second.shape() != shape) {
      throw SurgeryError("parameter '" + name + "' has shape " + shape_string(it->second.shape()) +
                         ", config implies " + shape_string(shape));
    }
  }
  for (const auto& [name, t] : ckpt.params)
    if (!expected.contains(name)) throw SurgeryError("unexpected parameter '" + name + "'");
}

std::size_t element_count(const ParamStore& params) {
  std::size_t n = 0;
  for (const auto& [name, t] : params) n += t.size();
  return n;
}

std::uint64_t tensor_digest(const Tensor& t) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  h = fnv_step(h, t.rank());
  for (std::size_t e : t.shape()) h = fnv_step(h, e);
  for (double v : t.data()) h = fnv_step(h, std::bit_cast<std::uint64_t>(v));
  return h;
}

std::uint64_t params_digest(const ParamStore& params) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& [name, t] : params) {
    for (unsigned char c : name) {
      h ^= c;
      h *= 0x100000001b3ULL;
    }
    h = fnv_step(h, tensor_digest(t));
  }
  return h;
}

void write_tensor_file(const Tensor& t, const fs::path& file) {
  std::ofstream out(file, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + file.string());
  put_u64(out, t.rank());
  for (std::size_t e : t.shape()) put_u64(out, e);
  for (double v : t.data()) put_u64(out, std::bit_cast<std::uint64_t>(v));
  if (!out) throw IoError("write failed for " + file.string());
}

Tensor read_tensor_file(const fs::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw IoError("cannot open " + file.string());
  const std::uint64_t rank = get_u64(in, file);
  if (rank == 0 || rank > kMaxRank) throw IoError("bad tensor rank in " + file.string());
  Shape shape(rank);
  for (auto& e : shape) e = get_u64(in, file);
  std::vector<double> data(shape_size(shape));
  for (double& v : data) v = std::bit_cast<double>(get_u64(in, file));
  if (in.peek() != std::char_traits<char>::eof()) throw IoError("trailing bytes in " + file.string());
  return Tensor(std::move(shape), std::move(data));
}

void save_checkpoint(const Checkpoint& ckpt, const fs::path& dir) {
  validate_checkpoint(ckpt);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());

  const fs::path manifest = dir / "manifest.txt";
  if (fs::exists(manifest)) {
    const Checkpoint previous = load_checkpoint(dir);
    if (previous.meta.tokens_trained > ckpt.meta.tokens_trained)
      throw IoError("refusing to overwrite " + dir.string() + " with fewer tokens_trained");
    for (const auto& [name, t] : previous.params)
      if (!ckpt.params.contains(name)) fs::remove(dir / (name + ".bin"));
  }

  std::ostringstream text;
  text << "format=" << kFormatTag << "\n";
  write_config(text, ckpt.config, "config.");
  text << "meta.phase=" << to_string(ckpt.meta.phase) << "\n"
       << "meta.domain_tag=" << ckpt.meta.domain_tag << "\n"
       << "meta.tokens_trained=" << ckpt.meta.tokens_trained << "\n"
       << "meta.rng_seed=" << ckpt.meta.rng_seed << "\n";
  for (const auto& [name, t] : ckpt.params) {
    text << "param=" << name << "\n";
    write_tensor_file(t, dir / (name + ".bin"));
  }
  std::ofstream out(manifest, std::ios::trunc);
  if (!out) throw IoError("cannot write " + manifest.string());
  out << text.str();
}

Checkpoint load_checkpoint(const fs::path& dir) {
  const fs::path manifest = dir / "manifest.txt";
  std::ifstream in(manifest);
  if (!in) throw IoError("no checkpoint manifest at " + manifest.string());
  Checkpoint ckpt;
  bool tagged = false;
  for (const auto& [key, value] : parse_key_values(in, manifest.string())) {
    if (key == "format") {
      if (value != kFormatTag) throw IoError("unsupported checkpoint format '" + value + "'");
      tagged = true;
    } else if (key.rfind("config.", 0) == 0) {
      if (!apply_config_key(ckpt.config, key.substr(7), value))
        throw ConfigError("unknown manifest key '" + key + "'");
    } else if (key == "meta.phase") {
      ckpt.meta.phase = parse_phase(value);
    } else if (key == "meta.domain_tag") {
      ckpt.meta.domain_tag = value;
    } else if (key == "meta.tokens_trained") {
      ckpt.meta.tokens_trained = parse_size(key, value);
    } else if (key == "meta.rng_seed") {
      ckpt.meta.rng_seed = static_cast<std::uint64_t>(std::stoull(value));
    } else if (key == "param") {
      if (ckpt.params.contains(value)) throw IoError("duplicate parameter '" + value + "'");
      ckpt.params.emplace(value, read_tensor_file(dir / (value + ".bin")));
    } else {
      throw ConfigError("unknown manifest key '" + key + "'");
    }
  }
  if (!tagged) throw IoError("manifest without format tag at " + manifest.string());
  validate_checkpoint(ckpt);
  return ckpt;
}

}  // namespace bamforge
