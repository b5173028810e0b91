// Copyright 2026 The bamforge Authors
// SPDX-License-Identifier: Apache-2.0

#include "bamforge/pipeline.hpp"

#include <cstdio>
#include <fstream>
#include <iomanip>
#include <ostream>

#include "bamforge/analysis.hpp"
#include "bamforge/errors.hpp"
#include "bamforge/model.hpp"

namespace bamforge {

namespace fs = std::filesystem;

namespace {

std::string fmt(double v, int precision = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", precision, v);
  return buf;
}

TrainOptions base_options(const ExperimentConfig& exp, const CorpusSet& corpora, MetricLog* log) {
  TrainOptions o;
  o.schedule = exp.schedule;
  o.batch_seqs = exp.batch_seqs;
  o.seq_len = exp.seq_len;
  o.alpha = exp.alpha;
  o.beta = exp.beta;
  o.adamw = exp.adamw;
  o.precision = exp.precision;
  o.log_every = exp.log_every;
  o.eval_every = exp.eval_every;
  o.eval = exp.eval_options();
  o.eval_corpora = &corpora;
  o.log = log;
  if (log) o.dump_dir = log->dir();
  return o;
}

void save_grid(const PerplexityGrid& grid, const fs::path& dir) {
  std::ofstream csv(dir / "grid.csv");
  grid.write_csv(csv);
  if (!csv) throw IoError("cannot write " + (dir / "grid.csv").string());
}

}  // namespace

CorpusSet build_corpora(const ExperimentConfig& exp) {
  CorpusSet out;
  for (const std::string& name : exp.all_domains()) {
    if (!exp.corpus_dir.empty()) {
      const fs::path file = fs::path(exp.corpus_dir) / (name + ".txt");
      if (!fs::exists(file)) throw ConfigError("missing corpus file " + file.string());
      out.emplace(name, load_corpus(name, file));
    } else {
      Rng rng = Rng::stream(exp.seed, "corpus/" + name);
      out.emplace(name, synth_corpus(parse_corpus_kind(name), exp.corpus_tokens, rng));
    }
  }
  return out;
}

const GridRow& PerplexityGrid::row(const std::string& model) const {
  for (const GridRow& r : rows)
    if (r.model == model) return r;
  throw Error("grid has no row '" + model + "'");
}

void PerplexityGrid::write_csv(std::ostream& out) const {
  out << "model";
  for (const std::string& d : domains) out << "," << d;
  out << ",average\n";
  for (const GridRow& r : rows) {
    out << r.model;
    for (const std::string& d : domains) out << "," << fmt(r.ppl.at(d), 6);
    out << "," << fmt(r.average, 6) << "\n";
  }
}

void PerplexityGrid::print(std::ostream& out) const {
  std::size_t w = 5;
  for (const GridRow& r : rows) w = std::max(w, r.model.size());
  out << std::left << std::setw(static_cast<int>(w)) << "model" << std::right;
  for (const std::string& d : domains) out << "  " << std::setw(9) << d;
  out << "  " << std::setw(9) << "average" << "\n";
  for (const GridRow& r : rows) {
    out << std::left << std::setw(static_cast<int>(w)) << r.model << std::right;
    for (const std::string& d : domains) out << "  " << std::setw(9) << fmt(r.ppl.at(d));
    out << "  " << std::setw(9) << fmt(r.average) << "\n";
  }
}

PerplexityGrid eval_grid(const std::vector<std::pair<std::string, const Checkpoint*>>& models,
                         const CorpusSet& corpora, const std::vector<std::string>& domains,
                         const EvalOptions& options) {
  PerplexityGrid grid;
  grid.domains = domains;
  for (const auto& [label, ckpt] : models) {
    GridRow row{label, {}, 0.0};
    for (const std::string& d : domains) {
      auto it = corpora.find(d);
      if (it == corpora.end()) throw ConfigError("no corpus named '" + d + "'");
      row.ppl[d] = eval_perplexity(*ckpt, it->second, options).ppl;
      row.average += row.ppl[d];
    }
    row.average /= static_cast<double>(domains.size());
    grid.rows.push_back(std::move(row));
  }
  return grid;
}

Checkpoint pretrain_seed(const ExperimentConfig& exp, const CorpusSet& corpora, MetricLog* log) {
  exp.validate();
  Checkpoint seed = init_model(exp.model, Rng::derive(exp.seed, "init"));
  seed.meta.domain_tag = "general";
  MixtureSampler sampler(corpora, MixtureSpec::single("general"), exp.seq_len, Rng::stream(exp.seed, "sampler/pretrain"));
  TrainOptions o = base_options(exp, corpora, log);
  o.phase = "pretrain";
  o.domain = "general";
  o.tokens = exp.pretrain_tokens;
  o.eval_domains = {"general"};
  train(seed, sampler, o);
  seed.meta.phase = Phase::seed;
  return seed;
}

Checkpoint continue_pretraining(const ExperimentConfig& exp, const Checkpoint& seed, const std::string& domain,
                                const CorpusSet& corpora, MetricLog* log) {
  Checkpoint expert = branch(seed, std::vector<std::string>{domain}).front();
  MixtureSampler sampler(corpora, MixtureSpec::augmented(domain, exp.general_share), exp.seq_len,
                         Rng::stream(exp.seed, "sampler/cpt/" + domain));
  TrainOptions o = base_options(exp, corpora, log);
  o.phase = "cpt";
  o.domain = domain;
  o.schedule.peak_lr *= exp.cpt_lr_scale;
  o.tokens = exp.cpt_tokens;
  o.eval_domains = {"general", domain};
  train(expert, sampler, o);
  expert.meta.phase = Phase::specialized;
  return expert;
}

std::vector<Checkpoint> branch_cpt(const ExperimentConfig& exp, const Checkpoint& seed,
                                   const std::vector<std::string>& domains, const CorpusSet& corpora,
                                   MetricLog* log) {
  std::vector<Checkpoint> out;
  for (const std::string& d : domains) out.push_back(continue_pretraining(exp, seed, d, corpora, log));
  return out;
}

ModelConfig btx_reference(const ModelConfig& mixture) {
  ModelConfig c = mixture;
  c.arch = Arch::btx;
  c.n_attn_experts = 0;
  c.attn_routing = AttnRouting::make_soft();
  c.validate();
  return c;
}

std::uint64_t mixture_tokens(const ExperimentConfig& exp, const ModelConfig& mixture, MatchMode mode) {
  const std::uint64_t per_batch = exp.batch_seqs * exp.seq_len;
  const std::uint64_t base = exp.mix_tokens - exp.mix_tokens % per_batch;
  if (mode == MatchMode::data) return base;
  return compute_match(training_flops_per_token(btx_reference(mixture), exp.seq_len), base,
                       training_flops_per_token(mixture, exp.seq_len), per_batch);
}

UpcycleRecipe make_recipe(const ExperimentConfig& exp, const Checkpoint& seed,
                          const std::vector<Checkpoint>& experts, Arch arch, const AttnRouting& routing) {
  UpcycleRecipe r;
  r.seed = &seed;
  for (const Checkpoint& e : experts) r.experts.push_back(&e);
  r.target_arch = arch;
  r.extra_seed_ffn_copies = exp.extra_seed_ffn_copies;
  r.ffn_topk = exp.ffn_topk;
  r.attn_routing = routing;
  r.router_init_seed = Rng::derive(exp.seed, "router");
  r.include_seed = exp.include_seed;
  return r;
}

Checkpoint train_mixture(const ExperimentConfig& exp, const UpcycleRecipe& recipe, MatchMode mode,
                         const std::string& label, const CorpusSet& corpora, MetricLog* log, MixRun* run) {
  Checkpoint mix = upcycle(recipe);
  const std::uint64_t tokens = mixture_tokens(exp, mix.config, mode);
  MixtureSampler sampler(corpora, MixtureSpec::uniform(exp.all_domains()), exp.seq_len,
                         Rng::stream(exp.seed, "sampler/mix"));
  TrainOptions o = base_options(exp, corpora, log);
  o.phase = "mix";
  o.domain = label;
  o.schedule.peak_lr *= exp.mix_lr_scale;
  o.tokens = tokens;
  o.eval_domains = exp.all_domains();
  const TrainReport report = train(mix, sampler, o);
  mix.meta.phase = Phase::mixture;
  mix.meta.domain_tag = label;
  if (run) {
    run->label = label;
    run->config = mix.config;
    run->tokens = report.tokens;
    run->flops = report.flops;
    run->batch_flops = training_flops_per_token(mix.config, exp.seq_len) * batch_tokens(o);
  }
  return mix;
}

MetricLog open_run_dir(const ExperimentConfig& exp, const fs::path& out_dir) {
  if (fs::exists(out_dir) && !fs::is_empty(out_dir))
    throw ConfigError("output directory " + out_dir.string() + " is not empty");
  fs::create_directories(out_dir);
  std::ofstream cfg(out_dir / "experiment.cfg");
  write_experiment(cfg, exp);
  if (!cfg) throw IoError("cannot write " + (out_dir / "experiment.cfg").string());
  return MetricLog(out_dir / "metrics.csv");
}

void write_runs_csv(std::ostream& out, const std::vector<MixRun>& runs) {
  out << "label,arch,n_experts,ffn_topk,attn_routing,tokens,train_flops,batch_flops\n";
  for (const MixRun& r : runs)
    out << r.label << "," << to_string(r.config.arch) << "," << r.config.n_experts << "," << r.config.ffn_topk
        << "," << (r.config.is_bam() ? to_string(r.config.attn_routing) : "-") << "," << r.tokens << ","
        << r.flops << "," << r.batch_flops << "\n";
}

namespace {

struct DensePhases {
  Checkpoint seed;
  std::vector<Checkpoint> experts;
};

DensePhases run_dense_phases(const ExperimentConfig& exp, const CorpusSet& corpora, const fs::path& out_dir,
                             MetricLog& log) {
  DensePhases p;
  p.seed = pretrain_seed(exp, corpora, &log);
  save_checkpoint(p.seed, out_dir / "seed");
  p.experts = branch_cpt(exp, p.seed, exp.domains, corpora, &log);
  for (const Checkpoint& e : p.experts) save_checkpoint(e, out_dir / ("expert_" + e.meta.domain_tag));
  return p;
}

std::vector<std::pair<std::string, const Checkpoint*>> dense_rows(const DensePhases& p) {
  std::vector<std::pair<std::string, const Checkpoint*>> rows{{"seed", &p.seed}};
  for (const Checkpoint& e : p.experts) rows.emplace_back("expert_" + e.meta.domain_tag, &e);
  return rows;
}

}  // namespace

PipelineReport run_pipeline(const ExperimentConfig& exp, const fs::path& out_dir) {
  exp.validate();
  MetricLog log = open_run_dir(exp, out_dir);
  const CorpusSet corpora = build_corpora(exp);
  const DensePhases dense = run_dense_phases(exp, corpora, out_dir, log);

  PipelineReport report;
  report.match = exp.match;
  std::vector<Checkpoint> mixtures;
  mixtures.reserve(exp.archs.size());
  for (Arch arch : exp.archs) {
    const UpcycleRecipe recipe = make_recipe(exp, dense.seed, dense.experts, arch, exp.attn_routing);
    MixRun run;
    mixtures.push_back(train_mixture(exp, recipe, exp.match, to_string(arch), corpora, &log, &run));
    save_checkpoint(mixtures.back(), out_dir / ("mix_" + run.label));
    report.runs.push_back(run);
  }

  auto rows = dense_rows(dense);
  for (const Checkpoint& m : mixtures) rows.emplace_back(m.meta.domain_tag, &m);
  report.grid = eval_grid(rows, corpora, exp.all_domains(), exp.eval_options());
  save_grid(report.grid, out_dir);
  {
    std::ofstream runs(out_dir / "runs.csv");
    write_runs_csv(runs, report.runs);
  }
  std::ofstream summary(out_dir / "summary.txt");
  summary << "perplexity (eval split, " << to_string(exp.match) << ")\n";
  report.grid.print(summary);
  summary << "\nmixture runs\n";
  for (const MixRun& r : report.runs)
    summary << r.label << ": " << group_digits(r.tokens) << " tokens, " << group_digits(r.flops)
            << " training FLOPs\n";
  summary << "\ntraining FLOPs = " << kTrainFlopsMultiplier << " x forward FLOPs per token (non-embedding)\n";
  if (!summary) throw IoError("cannot write summary");
  return report;
}

AblationReport run_ablation(const ExperimentConfig& exp, const fs::path& out_dir) {
  exp.validate();
  MetricLog log = open_run_dir(exp, out_dir);
  const CorpusSet corpora = build_corpora(exp);
  const DensePhases dense = run_dense_phases(exp, corpora, out_dir, log);

  AblationReport report;
  std::vector<Checkpoint> mixtures;
  mixtures.reserve(exp.ablate_routings.size() + 1);
  {
    MixRun run;
    const UpcycleRecipe r = make_recipe(exp, dense.seed, dense.experts, Arch::btx, AttnRouting::make_soft());
    mixtures.push_back(train_mixture(exp, r, MatchMode::compute, "btx", corpora, &log, &run));
    report.runs.push_back(run);
  }
  for (const AttnRouting& routing : exp.ablate_routings) {
    MixRun run;
    const UpcycleRecipe r = make_recipe(exp, dense.seed, dense.experts, Arch::bam_expert_kv, routing);
    mixtures.push_back(
        train_mixture(exp, r, MatchMode::compute, "bam_" + to_string(routing), corpora, &log, &run));
    report.runs.push_back(run);
  }
  for (std::size_t i = 0; i < mixtures.size(); ++i)
    save_checkpoint(mixtures[i], out_dir / ("mix_" + report.runs[i].label));

  std::vector<std::pair<std::string, const Checkpoint*>> rows;
  for (std::size_t i = 0; i < mixtures.size(); ++i) rows.emplace_back(report.runs[i].label, &mixtures[i]);
  report.grid = eval_grid(rows, corpora, exp.all_domains(), exp.eval_options());
  save_grid(report.grid, out_dir);
  {
    std::ofstream runs(out_dir / "runs.csv");
    write_runs_csv(runs, report.runs);
  }
  std::ofstream summary(out_dir / "summary.txt");
  summary << "attention routing ablation (CM, reference btx)\n";
  report.grid.print(summary);
  summary << "\n";
  for (const MixRun& r : report.runs)
    summary << r.label << ": " << group_digits(r.tokens) << " tokens, " << group_digits(r.flops)
            << " training FLOPs\n";
  if (!summary) throw IoError("cannot write summary");
  return report;
}

}  // namespace bamforge
