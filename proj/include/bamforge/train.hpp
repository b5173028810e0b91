// Copyright 2026 The bamforge Authors
// SPDX-License-Identifier: Apache-2.0

// AdamW training loop, metric log, and perplexity evaluation.

#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "bamforge/autodiff.hpp"
#include "bamforge/checkpoint.hpp"
#include "bamforge/corpus.hpp"
#include "bamforge/schedule.hpp"

namespace bamforge {

// CSV rows "phase,step,domain,metric,value". Values use %.17g so reruns match byte for byte.
class MetricLog {
 public:
  MetricLog() = default;
  explicit MetricLog(const std::filesystem::path& file);

  void add(const std::string& phase, std::uint64_t step, const std::string& domain,
           const std::string& metric, double value);

  const std::vector<std::string>& rows() const { return rows_; }
  // Directory holding the log file; empty for an in-memory log.
  const std::filesystem::path& dir() const { return dir_; }
  static const char* header() { return "phase,step,domain,metric,value"; }

 private:
  std::ofstream file_;
  std::filesystem::path dir_;
  std::vector<std::string> rows_;
};

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.95;
  double eps = 1e-8;
  double weight_decay = 0.1;
  double clip = 1.0;
};

// Decoupled weight decay touches 2-D weights other than the embeddings.
bool decays(const std::string& name, const Tensor& value);

class AdamW {
 public:
  explicit AdamW(AdamWConfig config) : config_(config) {}

  // Returns the pre-clip global gradient norm.
  double step(ParamStore& params, ParamStore& grads, double lr);

 private:
  AdamWConfig config_;
  std::uint64_t t_ = 0;
  ParamStore m_, v_;
};

struct EvalOptions {
  std::size_t seq_len = 64;
  std::size_t batch_seqs = 16;
  std::size_t max_tokens = 0;  // 0 = whole eval split
};

struct EvalResult {
  double nll = 0.0;
  double ppl = 0.0;
  std::uint64_t tokens = 0;
};

// exp(mean NLL) over consecutive windows of the eval split.
EvalResult eval_perplexity(const Checkpoint& model, const DomainCorpus& corpus, const EvalOptions& options);

struct TrainOptions {
  std::string phase = "pretrain";
  std::string domain = "general";
  Schedule schedule;  // total_steps is derived from the budget
  std::size_t batch_seqs = 8;
  std::size_t seq_len = 64;
  std::uint64_t tokens = 0;  // predicted-token budget, floored to whole batches
  double alpha = 0.01;
  double beta = 0.001;
  AdamWConfig adamw;
  ad::Precision precision = ad::Precision::f64;
  std::size_t log_every = 10;
  std::size_t eval_every = 0;  // 0 = only at the end
  EvalOptions eval;
  const CorpusSet* eval_corpora = nullptr;
  std::vector<std::string> eval_domains;
  MetricLog* log = nullptr;
  // Where a non-finite batch is dumped before aborting; empty = no dump.
  std::filesystem::path dump_dir;
};

struct TrainReport {
  std::uint64_t steps = 0;
  std::uint64_t tokens = 0;
  std::uint64_t flops = 0;  // training FLOPs, 3x forward
  double final_nll = 0.0;
  std::vector<std::map<std::string, double>> evals;  // per eval point: domain -> ppl
};

std::size_t batch_tokens(const TrainOptions& options);

// Trains `model` in place; tokens_trained grows by report.tokens.
TrainReport train(Checkpoint& model, MixtureSampler& sampler, const TrainOptions& options);

}  // namespace bamforge
