// Copyright 2026 The bamforge Authors
// SPDX-License-Identifier: Apache-2.0

#include "bamforge/train.hpp"

#include <cmath>
#include <cstdio>

#include "bamforge/analysis.hpp"
#include "bamforge/errors.hpp"
#include "bamforge/model.hpp"

namespace bamforge {

namespace fs = std::filesystem;

MetricLog::MetricLog(const fs::path& file) : file_(file), dir_(file.parent_path()) {
  if (!file_) throw IoError("cannot open metric log " + file.string());
  file_ << header() << "\n";
}

void MetricLog::add(const std::string& phase, std::uint64_t step, const std::string& domain,
                    const std::string& metric, double value) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", value);
  std::string row = phase + "," + std::to_string(step) + "," + domain + "," + metric + "," + buf;
  if (file_.is_open()) {
    file_ << row << "\n";
    if (!file_) throw IoError("write to metric log failed");
  }
  rows_.push_back(std::move(row));
}

bool decays(const std::string& name, const Tensor& value) {
  const std::string role = pname::role_of(name);
  return value.rank() == 2 && role != "embedding_in" && role != "embedding_out";
}

double AdamW::step(ParamStore& params, ParamStore& grads, double lr) {
  double sq = 0.0;
  for (const auto& [name, g] : grads)
    for (double x : g.data()) sq += x * x;
  const double norm = std::sqrt(sq);
  if (!std::isfinite(norm)) throw NumericError("non-finite gradient norm");
  const double clip_scale = (config_.clip > 0.0 && norm > config_.clip) ? config_.clip / norm : 1.0;

  ++t_;
  const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
  for (auto& [name, p] : params) {
    auto git = grads.find(name);
    if (git == grads.end()) continue;
    const Tensor& g = git->second;
    Tensor& m = m_.try_emplace(name, p.shape()).first->second;
    Tensor& v = v_.try_emplace(name, p.shape()).first->second;
    const double wd = decays(name, p) ? config_.weight_decay : 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double gi = g[i] * clip_scale;
      m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * gi;
      v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * gi * gi;
      const double update = (m[i] / bc1) / (std::sqrt(v[i] / bc2) + config_.eps);
      p[i] -= lr * (update + wd * p[i]);
    }
  }
  return norm;
}

EvalResult eval_perplexity(const Checkpoint& model, const DomainCorpus& corpus, const EvalOptions& o) {
  if (corpus.eval.size() < 2) throw ConfigError("corpus '" + corpus.name + "' has an empty eval split");
  if (o.seq_len == 0 || o.batch_seqs == 0) throw ConfigError("eval: seq_len and batch_seqs must be positive");
  std::size_t seq_len = std::min(o.seq_len, model.config.n_ctx);
  std::size_t available = corpus.eval.size() - 1;
  if (o.max_tokens > 0) available = std::min(available, o.max_tokens);
  std::size_t windows = available / seq_len;
  if (windows == 0) {
    seq_len = available;
    windows = 1;
  }

  EvalResult r;
  double nll_sum = 0.0;
  for (std::size_t w0 = 0; w0 < windows; w0 += o.batch_seqs) {
    const std::size_t n = std::min(o.batch_seqs, windows - w0);
    Batch b;
    b.n_seq = n;
    b.seq_len = seq_len;
    for (std::size_t w = w0; w < w0 + n; ++w) {
      const auto begin = corpus.eval.begin() + static_cast<std::ptrdiff_t>(w * seq_len);
      b.tokens.insert(b.tokens.end(), begin, begin + static_cast<std::ptrdiff_t>(seq_len + 1));
    }
    const LossBreakdown loss = forward_loss(model, b, 0.0, 0.0);
    nll_sum += loss.nll * static_cast<double>(b.predicted_tokens());
    r.tokens += b.predicted_tokens();
  }
  r.nll = nll_sum / static_cast<double>(r.tokens);
  r.ppl = std::exp(r.nll);
  return r;
}

std::size_t batch_tokens(const TrainOptions& o) { return o.batch_seqs * o.seq_len; }

namespace {

[[noreturn]] void abort_nonfinite(const TrainOptions& o, std::uint64_t step, const Batch& batch,
                                  const std::string& what) {
  std::string where;
  if (!o.dump_dir.empty()) {
    fs::create_directories(o.dump_dir);
    const fs::path file = o.dump_dir / (o.phase + "_" + o.domain + "_step" + std::to_string(step) + ".batch");
    std::ofstream out(file);
    out << "phase=" << o.phase << "\nstep=" << step << "\nn_seq=" << batch.n_seq
        << "\nseq_len=" << batch.seq_len << "\ntokens=";
    for (std::size_t i = 0; i < batch.tokens.size(); ++i) out << (i ? " " : "") << batch.tokens[i];
    out << "\n";
    where = " (batch dumped to " + file.string() + ")";
  }
  throw NumericError(o.phase + " step " + std::to_string(step) + ": " + what + where);
}

void log_eval(const Checkpoint& model, const TrainOptions& o, std::uint64_t step, TrainReport& report) {
  if (!o.eval_corpora || o.eval_domains.empty()) return;
  std::map<std::string, double> point;
  for (const std::string& d : o.eval_domains) {
    const EvalResult e = eval_perplexity(model, o.eval_corpora->at(d), o.eval);
    point[d] = e.ppl;
    if (o.log) o.log->add(o.phase, step, d, "eval_ppl", e.ppl);
  }
  report.evals.push_back(std::move(point));
}

}  // namespace

TrainReport train(Checkpoint& model, MixtureSampler& sampler, const TrainOptions& o) {
  validate_checkpoint(model);
  if (o.batch_seqs == 0 || o.seq_len == 0) throw ConfigError("train: batch_seqs and seq_len must be positive");
  if (o.seq_len > model.config.n_ctx) throw ConfigError("train: seq_len exceeds n_ctx");
  if (o.alpha < 0.0 || o.beta < 0.0) throw ConfigError("train: negative auxiliary loss weight");

  TrainReport report;
  const std::size_t per_batch = batch_tokens(o);
  const std::uint64_t steps = o.tokens / per_batch;
  if (steps == 0) return report;

  Schedule schedule = o.schedule;
  schedule.total_steps = steps;
  schedule.warmup_steps = std::min<std::size_t>(schedule.warmup_steps, steps);
  schedule.validate();
  AdamW opt(o.adamw);

  for (std::uint64_t step = 1; step <= steps; ++step) {
    const Batch batch = sampler.next_batch(o.batch_seqs);
    ParamStore grads;
    ForwardResult fr;
    try {
      ad::Tape tape(o.precision);
      ModelGraph graph(tape, model, true);
      fr = graph.forward(batch, o.alpha, o.beta);
      tape.backward(fr.objective);
      grads = graph.gradients();
    } catch (const NumericError& e) {
      abort_nonfinite(o, step, batch, e.what());
    }
    if (!std::isfinite(fr.loss.total)) abort_nonfinite(o, step, batch, "non-finite loss");
    const double lr = lr_at(step, schedule);
    double grad_norm = 0.0;
    try {
      grad_norm = opt.step(model.params, grads, lr);
    } catch (const NumericError& e) {
      abort_nonfinite(o, step, batch, e.what());
    }
    report.final_nll = fr.loss.nll;

    if (o.log && (step % o.log_every == 0 || step == steps)) {
      o.log->add(o.phase, step, o.domain, "lr", lr);
      o.log->add(o.phase, step, o.domain, "nll", fr.loss.nll);
      o.log->add(o.phase, step, o.domain, "lb", fr.loss.lb);
      o.log->add(o.phase, step, o.domain, "z", fr.loss.z);
      o.log->add(o.phase, step, o.domain, "grad_norm", grad_norm);
      for (const RouterStat& s : fr.router_stats) {
        const std::string prefix = s.kind + ".layer" + std::to_string(s.layer);
        for (std::size_t i = 0; i < s.load.size(); ++i)
          o.log->add(o.phase, step, o.domain, prefix + ".load" + std::to_string(i), s.load[i]);
        o.log->add(o.phase, step, o.domain, prefix + ".gate_entropy", s.gate_entropy);
      }
    }
    if (o.eval_every > 0 && step % o.eval_every == 0 && step != steps) log_eval(model, o, step, report);
  }
  log_eval(model, o, steps, report);

  report.steps = steps;
  report.tokens = steps * per_batch;
  report.flops = training_flops_per_token(model.config, o.seq_len) * report.tokens;
  model.meta.tokens_trained += report.tokens;
  return report;
}

}  // namespace bamforge
