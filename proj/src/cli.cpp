// Copyright 2026 The bamforge Authors
// SPDX-License-Identifier: Apache-2.0

#include "bamforge/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <fstream>
#include <optional>
#include <ostream>
#include <sstream>

#include "bamforge/analysis.hpp"
#include "bamforge/errors.hpp"
#include "bamforge/kernels.hpp"
#include "bamforge/pipeline.hpp"

namespace bamforge {

namespace fs = std::filesystem;

namespace {

struct Flags {
  std::string config;
  std::string out;
  std::int64_t seed = -1;
  std::string match;
  std::string arch;
  std::string precision;
  std::string from;
  std::string domains;
  std::vector<std::string> checkpoints;
  std::size_t n_ctx = 0;
};

ExperimentConfig load_experiment(const Flags& f) {
  if (f.config.empty()) throw ConfigError("--config is required");
  ExperimentConfig exp = read_experiment(f.config);
  if (f.seed >= 0) exp.seed = static_cast<std::uint64_t>(f.seed);
  if (!f.match.empty()) exp.match = parse_match_mode(f.match);
  if (!f.precision.empty()) exp.precision = parse_precision(f.precision);
  if (!f.arch.empty()) {
    exp.archs.clear();
    for (const std::string& a : split_list(f.arch)) exp.archs.push_back(parse_arch(a));
  }
  exp.validate();
  return exp;
}

fs::path require_out(const Flags& f) {
  if (f.out.empty()) throw ConfigError("--out is required");
  return f.out;
}

Checkpoint load_existing(const std::string& path) {
  if (!fs::exists(fs::path(path) / "manifest.txt")) throw ConfigError("no checkpoint at " + path);
  return load_checkpoint(path);
}

int cmd_pretrain(const Flags& f, std::ostream& out) {
  const ExperimentConfig exp = load_experiment(f);
  const fs::path dir = require_out(f);
  MetricLog log = open_run_dir(exp, dir);
  const CorpusSet corpora = build_corpora(exp);
  const Checkpoint seed = pretrain_seed(exp, corpora, &log);
  save_checkpoint(seed, dir / "seed");
  const EvalResult e = eval_perplexity(seed, corpora.at("general"), exp.eval_options());
  out << "seed checkpoint: " << (dir / "seed").string() << "\n"
      << "general ppl: " << e.ppl << "\n";
  return kExitOk;
}

int cmd_branch_cpt(const Flags& f, std::ostream& out) {
  const ExperimentConfig exp = load_experiment(f);
  if (f.from.empty()) throw ConfigError("--from SEED_CHECKPOINT is required");
  const Checkpoint seed = load_existing(f.from);
  if (!(seed.config == exp.model)) throw ConfigError("seed checkpoint does not match [model]");
  const std::vector<std::string> domains = f.domains.empty() ? exp.domains : split_list(f.domains);
  for (const std::string& d : domains)
    if (std::find(exp.domains.begin(), exp.domains.end(), d) == exp.domains.end())
      throw ConfigError("domain '" + d + "' is not listed in [domains]");
  const fs::path dir = require_out(f);
  MetricLog log = open_run_dir(exp, dir);
  const CorpusSet corpora = build_corpora(exp);
  for (const std::string& d : domains) {
    const Checkpoint expert = continue_pretraining(exp, seed, d, corpora, &log);
    save_checkpoint(expert, dir / ("expert_" + d));
    out << "expert_" << d << ": " << eval_perplexity(expert, corpora.at(d), exp.eval_options()).ppl
        << " ppl on " << d << "\n";
  }
  return kExitOk;
}

// Recipe file: key=value lines naming the experiment, the source checkpoints
// and the surgery options. Relative paths resolve against the recipe's directory.
struct RecipeFile {
  fs::path experiment;
  fs::path seed;
  std::vector<fs::path> experts;
  Arch arch = Arch::bam_expert_kv;
  std::size_t ffn_topk = 0;  // 0: experiment default
  std::optional<AttnRouting> attn_routing;
  std::optional<std::size_t> extra_seed_ffn_copies;
  std::optional<bool> include_seed;
  std::optional<std::uint64_t> router_seed;
  std::optional<MatchMode> match;
};

RecipeFile read_recipe(const fs::path& file) {
  const fs::path base = file.parent_path();
  auto resolve = [&](const std::string& p) { return fs::path(p).is_absolute() ? fs::path(p) : base / p; };
  RecipeFile r;
  bool have_seed = false;
  for (const auto& [key, value] : read_key_values(file.string())) {
    if (key == "experiment") r.experiment = resolve(value);
    else if (key == "seed_ckpt") { r.seed = resolve(value); have_seed = true; }
    else if (key == "experts") {
      for (const std::string& p : split_list(value)) r.experts.push_back(resolve(p));
    } else if (key == "arch") r.arch = parse_arch(value);
    else if (key == "ffn_topk") r.ffn_topk = parse_size(key, value);
    else if (key == "attn_routing") r.attn_routing = parse_attn_routing(value);
    else if (key == "extra_seed_ffn_copies") r.extra_seed_ffn_copies = parse_size(key, value);
    else if (key == "include_seed") r.include_seed = parse_bool(key, value);
    else if (key == "router_seed") r.router_seed = static_cast<std::uint64_t>(parse_size(key, value));
    else if (key == "match") r.match = parse_match_mode(value);
    else throw ConfigError("recipe: unknown key '" + key + "'");
  }
  if (r.experiment.empty()) throw ConfigError("recipe: 'experiment' is required");
  if (!have_seed) throw ConfigError("recipe: 'seed_ckpt' is required");
  return r;
}

int cmd_mix(const Flags& f, std::ostream& out) {
  if (f.config.empty()) throw ConfigError("--config RECIPE is required");
  const RecipeFile rf = read_recipe(f.config);
  Flags ef = f;
  ef.config = rf.experiment.string();
  ef.arch.clear();
  ExperimentConfig exp = load_experiment(ef);
  if (rf.ffn_topk) exp.ffn_topk = rf.ffn_topk;
  if (rf.extra_seed_ffn_copies) exp.extra_seed_ffn_copies = *rf.extra_seed_ffn_copies;
  if (rf.include_seed) exp.include_seed = *rf.include_seed;
  if (rf.match && f.match.empty()) exp.match = *rf.match;
  const Arch arch = f.arch.empty() ? rf.arch : parse_arch(f.arch);
  const AttnRouting routing = rf.attn_routing.value_or(exp.attn_routing);

  const Checkpoint seed = load_existing(rf.seed.string());
  std::vector<Checkpoint> experts;
  for (const fs::path& p : rf.experts) experts.push_back(load_existing(p.string()));
  UpcycleRecipe recipe = make_recipe(exp, seed, experts, arch, routing);
  if (rf.router_seed) recipe.router_init_seed = *rf.router_seed;

  const fs::path dir = require_out(f);
  MetricLog log = open_run_dir(exp, dir);
  fs::copy_file(f.config, dir / "recipe.cfg");
  const CorpusSet corpora = build_corpora(exp);
  MixRun run;
  const Checkpoint mix = train_mixture(exp, recipe, exp.match, to_string(arch), corpora, &log, &run);
  save_checkpoint(mix, dir / "mixture");
  std::ofstream runs(dir / "runs.csv");
  write_runs_csv(runs, {run});
  out << "mixture checkpoint: " << (dir / "mixture").string() << " (" << to_string(mix.config.arch) << ", "
      << mix.config.n_experts << " FFN experts, " << group_digits(run.tokens) << " tokens, "
      << to_string(exp.match) << ")\n";
  return kExitOk;
}

int cmd_eval(const Flags& f, std::ostream& out) {
  const ExperimentConfig exp = load_experiment(f);
  if (f.checkpoints.empty()) throw ConfigError("eval needs at least one checkpoint path");
  std::vector<Checkpoint> models;
  for (const std::string& p : f.checkpoints) models.push_back(load_existing(p));
  std::vector<std::pair<std::string, const Checkpoint*>> rows;
  for (std::size_t i = 0; i < models.size(); ++i) {
    std::string label = fs::path(f.checkpoints[i]).lexically_normal().filename().string();
    if (label.empty()) label = fs::path(f.checkpoints[i]).lexically_normal().parent_path().filename().string();
    rows.emplace_back(label, &models[i]);
  }
  const CorpusSet corpora = build_corpora(exp);
  const PerplexityGrid grid = eval_grid(rows, corpora, exp.all_domains(), exp.eval_options());
  if (f.out.empty()) {
    grid.write_csv(out);
  } else {
    std::ofstream csv(f.out);
    grid.write_csv(csv);
    if (!csv) throw IoError("cannot write " + f.out);
  }
  return kExitOk;
}

ModelConfig read_model_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path);
  ModelConfig c;
  std::string line;
  std::ostringstream flat;
  // Accept a flat key=value model file or the [model] section of an experiment.
  std::string section;
  while (std::getline(in, line)) {
    const auto b = line.find_first_not_of(" \t\r");
    if (b == std::string::npos) continue;
    if (line[b] == '[') {
      section = line.substr(b);
      continue;
    }
    if (section.empty() || section.rfind("[model]", 0) == 0) flat << line << "\n";
  }
  std::istringstream flat_in(flat.str());
  for (const auto& [key, value] : parse_key_values(flat_in, path)) {
    if (key == "seed" || key == "precision") continue;
    if (!apply_config_key(c, key, value)) throw ConfigError(path + ": unknown model key '" + key + "'");
  }
  c.validate();
  return c;
}

void print_match(std::ostream& out, const std::string& spec, const std::vector<NamedConfig>& rows,
                 std::size_t n_ctx) {
  const auto eq = spec.find('=');
  if (eq == std::string::npos) throw ConfigError("--match expects LABEL=TOKENS, e.g. btx=100e6");
  const std::string ref_label = spec.substr(0, eq);
  const std::uint64_t ref_tokens = parse_size("--match", spec.substr(eq + 1));
  const NamedConfig* ref = nullptr;
  for (const NamedConfig& r : rows)
    if (r.label == ref_label || (ref_label == "btx" && r.config.arch == Arch::btx)) {
      ref = &r;
      break;
    }
  if (!ref) throw ConfigError("--match: no row labeled '" + ref_label + "'");
  const std::uint64_t ref_flops = flops_per_token(ref->config, n_ctx).model_total();
  out << "\ncompute-matched token budgets (reference " << ref->label << " at " << group_digits(ref_tokens)
      << " tokens)\n";
  for (const NamedConfig& r : rows) {
    const std::uint64_t tokens = compute_match(ref_flops, ref_tokens, flops_per_token(r.config, n_ctx).model_total());
    out << r.label << " (" << r.config.n_experts << " experts, top-" << r.config.ffn_topk << "): " << tokens
        << "\n";
  }
}

int cmd_analyze(const Flags& f, std::ostream& out) {
  std::vector<NamedConfig> params, flops;
  std::size_t n_ctx = f.n_ctx;
  if (f.config.empty()) {
    params = small_scale_param_columns();
    flops = small_scale_flops_rows();
    if (n_ctx == 0) n_ctx = 256;
  } else {
    ModelConfig c = read_model_config(f.config);
    if (!f.arch.empty()) c.arch = parse_arch(f.arch);
    c.validate();
    const std::string label = to_string(c.arch);
    params = {{label, c}};
    flops = {{label, c}};
    if (c.arch != Arch::btx && c.is_mixture()) flops.push_back({"btx", btx_reference(c)});
    if (n_ctx == 0) n_ctx = c.n_ctx;
  }
  out << "parameters\n";
  print_param_table(out, params);
  out << "\nFLOPs per token per layer (n_ctx=" << n_ctx << ")\n";
  print_flops_table(out, flops, n_ctx);
  out << "\n";
  print_footnotes(out);
  out << "\ncsv\n";
  print_param_csv(out, params);
  out << "\n";
  print_flops_csv(out, flops, n_ctx);
  if (!f.match.empty()) print_match(out, f.match, flops, n_ctx);
  return kExitOk;
}

int cmd_ablate(const Flags& f, std::ostream& out) {
  const ExperimentConfig exp = load_experiment(f);
  const AblationReport report = run_ablation(exp, require_out(f));
  report.grid.print(out);
  out << "\n";
  write_runs_csv(out, report.runs);
  return kExitOk;
}

int cmd_run(const Flags& f, std::ostream& out) {
  const ExperimentConfig exp = load_experiment(f);
  const PipelineReport report = run_pipeline(exp, require_out(f));
  report.grid.print(out);
  out << "\n";
  write_runs_csv(out, report.runs);
  return kExitOk;
}

}  // namespace

int run_command(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  kernels::configure_threads_from_env();
  CLI::App app("bamforge: dense-to-mixture upcycling lab", "bamforge");
  app.require_subcommand(1);
  Flags f;

  auto common = [&f](CLI::App* sub, bool training) {
    sub->add_option("--config", f.config, "config file");
    sub->add_option("--out", f.out, "output directory");
    if (training) {
      sub->add_option("--seed", f.seed, "experiment seed");
      sub->add_option("--precision", f.precision, "f64 or f32");
    }
  };
  CLI::App* pretrain = app.add_subcommand("pretrain", "train the dense seed on general text");
  common(pretrain, true);
  CLI::App* cpt = app.add_subcommand("branch-cpt", "branch the seed and continue pretraining per domain");
  common(cpt, true);
  cpt->add_option("--from", f.from, "seed checkpoint directory");
  cpt->add_option("--domains", f.domains, "comma-separated subset of [domains] names");
  CLI::App* mix = app.add_subcommand("mix", "upcycle sources from a recipe and train the mixture");
  common(mix, true);
  mix->add_option("--match", f.match, "DM or CM");
  mix->add_option("--arch", f.arch, "btx, bam_expert_kv or bam_shared_kv");
  CLI::App* eval = app.add_subcommand("eval", "perplexity grid for checkpoints");
  common(eval, false);
  eval->add_option("checkpoints", f.checkpoints, "checkpoint directories");
  CLI::App* analyze = app.add_subcommand("analyze", "parameter and FLOPs tables");
  analyze->add_option("--config", f.config, "model config (default: small-scale appendix configs)");
  analyze->add_option("--match", f.match, "LABEL=TOKENS compute-matched budgets");
  analyze->add_option("--arch", f.arch, "override the config's arch");
  analyze->add_option("--n-ctx", f.n_ctx, "context length for attention FLOPs");
  CLI::App* ablate = app.add_subcommand("ablate", "attention routing ablation under compute matching");
  common(ablate, true);
  CLI::App* run = app.add_subcommand("run", "full pipeline");
  common(run, true);
  run->add_option("--match", f.match, "DM or CM");
  run->add_option("--arch", f.arch, "comma-separated mixture archs");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "bamforge: " << e.what() << "\n";
    return kExitConfig;
  }

  try {
    if (*pretrain) return cmd_pretrain(f, out);
    if (*cpt) return cmd_branch_cpt(f, out);
    if (*mix) return cmd_mix(f, out);
    if (*eval) return cmd_eval(f, out);
    if (*analyze) return cmd_analyze(f, out);
    if (*ablate) return cmd_ablate(f, out);
    if (*run) return cmd_run(f, out);
  } catch (const ConfigError& e) {
    err << "bamforge: config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const SurgeryError& e) {
    err << "bamforge: surgery error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const NumericError& e) {
    err << "bamforge: numeric error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const IoError& e) {
    err << "bamforge: I/O error: " << e.what() << "\n";
    return kExitIo;
  } catch (const fs::filesystem_error& e) {
    err << "bamforge: I/O error: " << e.what() << "\n";
    return kExitIo;
  } catch (const std::exception& e) {
    err << "bamforge: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitConfig;
}

}  // namespace bamforge
