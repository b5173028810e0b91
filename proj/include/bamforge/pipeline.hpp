// Copyright 2026 The bamforge Authors
// SPDX-License-Identifier: Apache-2.0

// The three phases end to end: pretrain a dense seed, branch and continue
// pretraining per domain, upcycle into mixtures and train them, evaluate.
//
// Output directory layout:
//   experiment.cfg          canonical copy of the parsed experiment
//   metrics.csv             phase,step,domain,metric,value
//   seed/  expert_<d>/  mix_<label>/   checkpoints
//   grid.csv  summary.txt   perplexity grid (rows: models, columns: domains)

#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "bamforge/checkpoint.hpp"
#include "bamforge/corpus.hpp"
#include "bamforge/experiment.hpp"
#include "bamforge/train.hpp"
#include "bamforge/upcycle.hpp"

namespace bamforge {

CorpusSet build_corpora(const ExperimentConfig& exp);

struct GridRow {
  std::string model;
  std::map<std::string, double> ppl;
  double average = 0.0;
};

struct PerplexityGrid {
  std::vector<std::string> domains;
  std::vector<GridRow> rows;

  const GridRow& row(const std::string& model) const;
  void write_csv(std::ostream& out) const;
  void print(std::ostream& out) const;
};

PerplexityGrid eval_grid(const std::vector<std::pair<std::string, const Checkpoint*>>& models,
                         const CorpusSet& corpora, const std::vector<std::string>& domains,
                         const EvalOptions& options);

Checkpoint pretrain_seed(const ExperimentConfig& exp, const CorpusSet& corpora, MetricLog* log);

// Continued pretraining of one branch; independent of every other domain.
Checkpoint continue_pretraining(const ExperimentConfig& exp, const Checkpoint& seed, const std::string& domain,
                                const CorpusSet& corpora, MetricLog* log);

std::vector<Checkpoint> branch_cpt(const ExperimentConfig& exp, const Checkpoint& seed,
                                   const std::vector<std::string>& domains, const CorpusSet& corpora,
                                   MetricLog* log);

// BTX config with the same FFN bank, used as the compute-matching reference.
ModelConfig btx_reference(const ModelConfig& mixture);

// Mixture-phase token budget: mix_tokens under DM, compute-matched to the
// BTX reference at mix_tokens under CM.
std::uint64_t mixture_tokens(const ExperimentConfig& exp, const ModelConfig& mixture, MatchMode mode);

struct MixRun {
  std::string label;
  ModelConfig config;
  std::uint64_t tokens = 0;
  std::uint64_t flops = 0;        // training FLOPs actually consumed
  std::uint64_t batch_flops = 0;  // training FLOPs of one batch
};

UpcycleRecipe make_recipe(const ExperimentConfig& exp, const Checkpoint& seed,
                          const std::vector<Checkpoint>& experts, Arch arch, const AttnRouting& routing);

Checkpoint train_mixture(const ExperimentConfig& exp, const UpcycleRecipe& recipe, MatchMode mode,
                         const std::string& label, const CorpusSet& corpora, MetricLog* log, MixRun* run);

struct PipelineReport {
  PerplexityGrid grid;
  std::vector<MixRun> runs;
  MatchMode match = MatchMode::data;
};

PipelineReport run_pipeline(const ExperimentConfig& exp, const std::filesystem::path& out_dir);

struct AblationReport {
  PerplexityGrid grid;  // rows: btx, then one per attention routing
  std::vector<MixRun> runs;
};

// BTX baseline plus BAM under each ablate_routings entry, all compute-matched.
AblationReport run_ablation(const ExperimentConfig& exp, const std::filesystem::path& out_dir);

void write_runs_csv(std::ostream& out, const std::vector<MixRun>& runs);

// Creates out_dir (must be empty or absent), writes experiment.cfg, opens metrics.csv.
MetricLog open_run_dir(const ExperimentConfig& exp, const std::filesystem::path& out_dir);

}  // namespace bamforge
