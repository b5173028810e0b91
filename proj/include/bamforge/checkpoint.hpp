// Copyright 2026 The bamforge Authors
// SPDX-License-Identifier: Apache-2.0

// Checkpoint directory layout:
//
//   manifest.txt     key=value lines: format tag, config.*, meta.*, then one
//                    param=<name> line per parameter in name order
//   <name>.bin       rank (u64 LE), extents (u64 LE each), values (f64 LE)
//
// Loading validates the parameter set against the shapes the config implies.

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

#include "bamforge/config.hpp"
#include "bamforge/tensor.hpp"

namespace bamforge {

enum class Phase { seed, specialized, mixture };

std::string to_string(Phase phase);
Phase parse_phase(const std::string& text);

using ParamStore = std::map<std::string, Tensor>;

struct CheckpointMeta {
  Phase phase = Phase::seed;
  std::string domain_tag = "general";
  std::uint64_t tokens_trained = 0;
  std::uint64_t rng_seed = 0;

  friend bool operator==(const CheckpointMeta&, const CheckpointMeta&) = default;
};

struct Checkpoint {
  ModelConfig config;
  ParamStore params;
  CheckpointMeta meta;

  const Tensor& param(const std::string& name) const;
};

// Throws SurgeryError naming the first missing, unexpected, or misshaped parameter.
void validate_checkpoint(const Checkpoint& ckpt);

std::size_t element_count(const ParamStore& params);

// FNV-1a over the little-endian bytes of shape and values.
std::uint64_t tensor_digest(const Tensor& t);
std::uint64_t params_digest(const ParamStore& params);

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& dir);
Checkpoint load_checkpoint(const std::filesystem::path& dir);

void write_tensor_file(const Tensor& t, const std::filesystem::path& file);
Tensor read_tensor_file(const std::filesystem::path& file);

}  // namespace bamforge
