// Copyright 2026 The bamforge Authors
// SPDX-License-Identifier: Apache-2.0

// Experiment file: INI-style sections of key=value lines.
//
//   [model]      dense seed dimensions (ModelConfig keys) and seed
//   [domains]    names, corpus_tokens, general_share, corpus_dir
//   [schedules]  peak_lr, warmup_steps, floor_fraction, cpt_lr_scale,
//                mix_lr_scale, beta1, beta2, eps, weight_decay, clip, alpha, beta
//   [budgets]    pretrain_tokens, cpt_tokens, mix_tokens, batch_seqs, seq_len, match
//   [recipe]     archs, ffn_topk, attn_routing, extra_seed_ffn_copies,
//                include_seed, ablate_routings
//   [eval]       eval_tokens, eval_batch_seqs, eval_every, log_every
//
// Unknown sections and keys are errors.

#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "bamforge/autodiff.hpp"
#include "bamforge/config.hpp"
#include "bamforge/train.hpp"

namespace bamforge {

enum class MatchMode { data, compute };

std::string to_string(MatchMode mode);
MatchMode parse_match_mode(const std::string& text);

struct ExperimentConfig {
  ModelConfig model;
  std::uint64_t seed = 1234;

  std::vector<std::string> domains = {"arith", "bracket", "sorted"};
  std::size_t corpus_tokens = 200000;
  double general_share = 0.1;
  std::string corpus_dir;  // empty: synthesize every domain

  Schedule schedule;
  double cpt_lr_scale = 0.5;
  double mix_lr_scale = 0.5;
  AdamWConfig adamw;
  double alpha = 0.01;
  double beta = 0.001;

  std::uint64_t pretrain_tokens = 600000;
  std::uint64_t cpt_tokens = 200000;
  std::uint64_t mix_tokens = 300000;
  std::size_t batch_seqs = 8;
  std::size_t seq_len = 64;
  MatchMode match = MatchMode::data;

  std::vector<Arch> archs = {Arch::btx, Arch::bam_expert_kv};
  std::size_t ffn_topk = 1;
  AttnRouting attn_routing;
  std::size_t extra_seed_ffn_copies = 0;
  bool include_seed = true;
  std::vector<AttnRouting> ablate_routings = {AttnRouting::make_soft(), AttnRouting::top(2),
                                              AttnRouting::top(1)};

  std::size_t eval_tokens = 4096;
  std::size_t eval_batch_seqs = 16;
  std::size_t eval_every = 0;
  std::size_t log_every = 10;

  ad::Precision precision = ad::Precision::f64;

  void validate() const;
  // general first, then the configured domains.
  std::vector<std::string> all_domains() const;
  EvalOptions eval_options() const;
};

ExperimentConfig parse_experiment(std::istream& in, const std::string& source);
ExperimentConfig read_experiment(const std::filesystem::path& file);
// Canonical form; parse_experiment(write_experiment(c)) == c.
void write_experiment(std::ostream& out, const ExperimentConfig& config);

std::string to_string(ad::Precision precision);
ad::Precision parse_precision(const std::string& text);

}  // namespace bamforge
