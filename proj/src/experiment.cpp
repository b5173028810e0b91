// Copyright 2026 The bamforge Authors
// SPDX-License-Identifier: Apache-2.0

#include "bamforge/experiment.hpp"

#include <cstdio>
#include <fstream>
#include <map>
#include <ostream>
#include <set>
#include <sstream>

#include "bamforge/corpus.hpp"
#include "bamforge/errors.hpp"

namespace bamforge {

std::string to_string(MatchMode mode) { return mode == MatchMode::data ? "DM" : "CM"; }

MatchMode parse_match_mode(const std::string& text) {
  if (text == "DM" || text == "dm") return MatchMode::data;
  if (text == "CM" || text == "cm") return MatchMode::compute;
  throw ConfigError("match mode must be DM or CM, got '" + text + "'");
}

std::string to_string(ad::Precision precision) {
  return precision == ad::Precision::f64 ? "f64" : "f32";
}

ad::Precision parse_precision(const std::string& text) {
  if (text == "f64") return ad::Precision::f64;
  if (text == "f32") return ad::Precision::f32;
  throw ConfigError("precision must be f64 or f32, got '" + text + "'");
}

void ExperimentConfig::validate() const {
  model.validate();
  if (model.arch != Arch::dense) throw ConfigError("[model] describes the dense seed; arch must be dense");
  if (domains.empty()) throw ConfigError("[domains] names is empty");
  for (std::size_t i = 0; i < domains.size(); ++i) {
    if (domains[i] == "general") throw ConfigError("[domains] general is implicit; do not list it");
    for (std::size_t j = 0; j < i; ++j)
      if (domains[i] == domains[j]) throw ConfigError("[domains] duplicate domain '" + domains[i] + "'");
    if (corpus_dir.empty()) parse_corpus_kind(domains[i]);
  }
  if (corpus_tokens < kMinCorpusTokens) throw ConfigError("[domains] corpus_tokens below minimum");
  if (!(general_share >= 0.0 && general_share < 1.0)) throw ConfigError("[domains] general_share outside [0, 1)");
  schedule.validate();
  if (!(cpt_lr_scale > 0.0) || !(mix_lr_scale > 0.0)) throw ConfigError("[schedules] lr scales must be positive");
  if (alpha < 0.0 || beta < 0.0) throw ConfigError("[schedules] alpha and beta must be nonnegative");
  if (batch_seqs == 0 || seq_len == 0) throw ConfigError("[budgets] batch_seqs and seq_len must be positive");
  if (seq_len > model.n_ctx) throw ConfigError("[budgets] seq_len exceeds n_ctx");
  if (archs.empty()) throw ConfigError("[recipe] archs is empty");
  for (Arch a : archs)
    if (a == Arch::dense) throw ConfigError("[recipe] archs must be mixture archs");
  if (eval_batch_seqs == 0 || log_every == 0) throw ConfigError("[eval] batch and log intervals must be positive");
}

std::vector<std::string> ExperimentConfig::all_domains() const {
  std::vector<std::string> out{"general"};
  out.insert(out.end(), domains.begin(), domains.end());
  return out;
}

EvalOptions ExperimentConfig::eval_options() const { return {seq_len, eval_batch_seqs, eval_tokens}; }

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string join(const std::vector<std::string>& items) {
  std::string s;
  for (std::size_t i = 0; i < items.size(); ++i) s += (i ? "," : "") + items[i];
  return s;
}

void apply(ExperimentConfig& c, const std::string& section, const std::string& key, const std::string& value) {
  const std::string k = section + "." + key;
  if (section == "model") {
    if (key == "seed") c.seed = static_cast<std::uint64_t>(parse_size(k, value));
    else if (key == "precision") c.precision = parse_precision(value);
    else if (!apply_config_key(c.model, key, value)) throw ConfigError("unknown key " + k);
  } else if (section == "domains") {
    if (key == "names") c.domains = split_list(value);
    else if (key == "corpus_tokens") c.corpus_tokens = parse_size(k, value);
    else if (key == "general_share") c.general_share = parse_double(k, value);
    else if (key == "corpus_dir") c.corpus_dir = value;
    else throw ConfigError("unknown key " + k);
  } else if (section == "schedules") {
    if (key == "peak_lr") c.schedule.peak_lr = parse_double(k, value);
    else if (key == "warmup_steps") c.schedule.warmup_steps = parse_size(k, value);
    else if (key == "floor_fraction") c.schedule.floor_fraction = parse_double(k, value);
    else if (key == "cpt_lr_scale") c.cpt_lr_scale = parse_double(k, value);
    else if (key == "mix_lr_scale") c.mix_lr_scale = parse_double(k, value);
    else if (key == "beta1") c.adamw.beta1 = parse_double(k, value);
    else if (key == "beta2") c.adamw.beta2 = parse_double(k, value);
    else if (key == "eps") c.adamw.eps = parse_double(k, value);
    else if (key == "weight_decay") c.adamw.weight_decay = parse_double(k, value);
    else if (key == "clip") c.adamw.clip = parse_double(k, value);
    else if (key == "alpha") c.alpha = parse_double(k, value);
    else if (key == "beta") c.beta = parse_double(k, value);
    else throw ConfigError("unknown key " + k);
  } else if (section == "budgets") {
    if (key == "pretrain_tokens") c.pretrain_tokens = parse_size(k, value);
    else if (key == "cpt_tokens") c.cpt_tokens = parse_size(k, value);
    else if (key == "mix_tokens") c.mix_tokens = parse_size(k, value);
    else if (key == "batch_seqs") c.batch_seqs = parse_size(k, value);
    else if (key == "seq_len") c.seq_len = parse_size(k, value);
    else if (key == "match") c.match = parse_match_mode(value);
    else throw ConfigError("unknown key " + k);
  } else if (section == "recipe") {
    if (key == "archs") {
      c.archs.clear();
      for (const std::string& a : split_list(value)) c.archs.push_back(parse_arch(a));
    } else if (key == "ffn_topk") c.ffn_topk = parse_size(k, value);
    else if (key == "attn_routing") c.attn_routing = parse_attn_routing(value);
    else if (key == "extra_seed_ffn_copies") c.extra_seed_ffn_copies = parse_size(k, value);
    else if (key == "include_seed") c.include_seed = parse_bool(k, value);
    else if (key == "ablate_routings") {
      c.ablate_routings.clear();
      for (const std::string& r : split_list(value)) c.ablate_routings.push_back(parse_attn_routing(r));
    } else throw ConfigError("unknown key " + k);
  } else if (section == "eval") {
    if (key == "eval_tokens") c.eval_tokens = parse_size(k, value);
    else if (key == "eval_batch_seqs") c.eval_batch_seqs = parse_size(k, value);
    else if (key == "eval_every") c.eval_every = parse_size(k, value);
    else if (key == "log_every") c.log_every = parse_size(k, value);
    else throw ConfigError("unknown key " + k);
  } else {
    throw ConfigError("unknown section [" + section + "]");
  }
}

}  // namespace

ExperimentConfig parse_experiment(std::istream& in, const std::string& source) {
  ExperimentConfig c;
  std::string section, line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const std::string where = source + ":" + std::to_string(lineno) + ": ";
    if (t.front() == '[') {
      if (t.back() != ']') throw ConfigError(where + "malformed section header");
      section = trim(t.substr(1, t.size() - 2));
      static const std::set<std::string> known = {"model", "domains", "schedules", "budgets", "recipe", "eval"};
      if (!known.contains(section)) throw ConfigError(where + "unknown section [" + section + "]");
      continue;
    }
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw ConfigError(where + "expected key=value");
    if (section.empty()) throw ConfigError(where + "key outside any section");
    try {
      apply(c, section, trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError(where + e.what());
    }
  }
  c.validate();
  return c;
}

ExperimentConfig read_experiment(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw ConfigError("cannot open experiment file " + file.string());
  return parse_experiment(in, file.string());
}

void write_experiment(std::ostream& out, const ExperimentConfig& c) {
  std::ostringstream model;
  write_config(model, c.model, "");
  std::vector<std::string> archs, routings;
  for (Arch a : c.archs) archs.push_back(to_string(a));
  for (const AttnRouting& r : c.ablate_routings) routings.push_back(to_string(r));

  out << "[model]\n" << model.str() << "seed=" << c.seed << "\nprecision=" << to_string(c.precision) << "\n\n"
      << "[domains]\nnames=" << join(c.domains) << "\ncorpus_tokens=" << c.corpus_tokens
      << "\ngeneral_share=" << fmt_double(c.general_share) << "\n";
  if (!c.corpus_dir.empty()) out << "corpus_dir=" << c.corpus_dir << "\n";
  out << "\n[schedules]\npeak_lr=" << fmt_double(c.schedule.peak_lr)
      << "\nwarmup_steps=" << c.schedule.warmup_steps
      << "\nfloor_fraction=" << fmt_double(c.schedule.floor_fraction)
      << "\ncpt_lr_scale=" << fmt_double(c.cpt_lr_scale) << "\nmix_lr_scale=" << fmt_double(c.mix_lr_scale)
      << "\nbeta1=" << fmt_double(c.adamw.beta1) << "\nbeta2=" << fmt_double(c.adamw.beta2)
      << "\neps=" << fmt_double(c.adamw.eps) << "\nweight_decay=" << fmt_double(c.adamw.weight_decay)
      << "\nclip=" << fmt_double(c.adamw.clip) << "\nalpha=" << fmt_double(c.alpha)
      << "\nbeta=" << fmt_double(c.beta) << "\n\n"
      << "[budgets]\npretrain_tokens=" << c.pretrain_tokens << "\ncpt_tokens=" << c.cpt_tokens
      << "\nmix_tokens=" << c.mix_tokens << "\nbatch_seqs=" << c.batch_seqs << "\nseq_len=" << c.seq_len
      << "\nmatch=" << to_string(c.match) << "\n\n"
      << "[recipe]\narchs=" << join(archs) << "\nffn_topk=" << c.ffn_topk
      << "\nattn_routing=" << to_string(c.attn_routing)
      << "\nextra_seed_ffn_copies=" << c.extra_seed_ffn_copies
      << "\ninclude_seed=" << (c.include_seed ? "true" : "false") << "\nablate_routings=" << join(routings)
      << "\n\n"
      << "[eval]\neval_tokens=" << c.eval_tokens << "\neval_batch_seqs=" << c.eval_batch_seqs
      << "\neval_every=" << c.eval_every << "\nlog_every=" << c.log_every << "\n";
}

}  // namespace bamforge
