// Copyright 2026 The bamforge Authors
// SPDX-License-Identifier: Apache-2.0

#include "bamforge/analysis.hpp"

#include <algorithm>
#include <iomanip>
#include <ostream>

#include "bamforge/errors.hpp"

namespace bamforge {

namespace {

using u64 = std::uint64_t;

ParamCount same(u64 v) { return {v, v}; }

u64 block_active(const ParamReport& r) {
  return r.norm.active + r.attn_out.active + r.qkv_proj.active + r.ffn_exp.active + r.ffn_red.active +
         r.router.active;
}

u64 block_total(const ParamReport& r) {
  return r.norm.total + r.attn_out.total + r.qkv_proj.total + r.ffn_exp.total + r.ffn_red.total +
         r.router.total;
}

std::string label_of(const ModelConfig& c) {
  switch (c.arch) {
    case Arch::dense: return "Dense";
    case Arch::btx: return "BTX top-" + std::to_string(c.ffn_topk);
    case Arch::bam_expert_kv: return "BAM";
    case Arch::bam_shared_kv: return "BAM (KV sharing)";
  }
  return "?";
}

}  // namespace

ParamReport count_params(const ModelConfig& c) {
  c.validate();
  const u64 d = c.d_model, dff = c.d_ff, L = c.n_layers;
  const u64 n = c.n_experts, k = c.ffn_topk;
  ParamReport r;
  r.norm = same(d);
  switch (c.arch) {
    case Arch::dense:
    case Arch::btx:
      r.attn_out = same(d * d);
      r.qkv_proj = same(3 * d * d);
      break;
    case Arch::bam_expert_kv: {
      const u64 na = c.n_attn_experts, ka = c.attn_active_experts();
      r.attn_out = {ka * d * d, na * d * d};
      r.qkv_proj = {3 * ka * d * d, 3 * na * d * d};
      break;
    }
    case Arch::bam_shared_kv: {
      const u64 na = c.n_attn_experts, ka = c.attn_active_experts();
      r.attn_out = {ka * d * d, na * d * d};
      r.qkv_proj = {ka * d * d, na * d * d};
      break;
    }
  }
  if (c.arch != Arch::dense) {
    r.ffn_exp = {k * d * dff, n * d * dff};
    r.ffn_red = {k * (dff / 2) * d, n * (dff / 2) * d};
    r.router = same(n * d);
  } else {
    r.ffn_exp = same(d * dff);
    r.ffn_red = same((dff / 2) * d);
  }
  r.embeddings_in = same(c.vocab * d);
  r.embeddings_out = c.tie_embeddings ? ParamCount{} : same(c.vocab * d);
  r.final_norm = same(d);

  const u64 outer_active = r.embeddings_in.active + r.embeddings_out.active + r.final_norm.active;
  const u64 outer_total = r.embeddings_in.total + r.embeddings_out.total + r.final_norm.total;
  r.active = L * block_active(r) + outer_active;
  u64 extra = 0;
  if (c.is_bam()) extra += c.n_attn_experts * d;           // attention router [c]
  if (c.arch == Arch::bam_shared_kv) extra += 2 * d * d;    // shared K/V [d]
  r.total = L * (block_total(r) + extra) + outer_total;
  return r;
}

FlopsReport flops_per_token(const ModelConfig& c, std::size_t n_ctx) {
  c.validate();
  if (n_ctx == 0) throw ConfigError("flops_per_token: n_ctx must be positive");
  const u64 d = c.d_model, dff = c.d_ff, ctx = n_ctx;
  FlopsReport f;
  f.n_layers = c.n_layers;
  switch (c.arch) {
    case Arch::dense:
    case Arch::btx:
      f.attn_qkv = 6 * d * d;
      f.attn_mask = 2 * ctx * d;
      f.attn_proj = 2 * d * d;
      break;
    case Arch::bam_expert_kv: {
      const u64 na = c.n_attn_experts, ka = c.attn_active_experts();
      // Keys and values are needed from every expert; queries only from the selected ones.
      f.attn_qkv = 4 * na * d * d + 2 * ka * d * d;
      f.attn_mask = 2 * ka * ctx * d;
      f.attn_proj = 2 * ka * d * d;
      f.attn_router = 2 * na * d;
      break;
    }
    case Arch::bam_shared_kv: {
      const u64 na = c.n_attn_experts, ka = c.attn_active_experts();
      f.attn_qkv = 4 * d * d + 2 * ka * d * d;
      f.attn_mask = 2 * ka * ctx * d;
      f.attn_proj = 2 * ka * d * d;
      f.attn_router = 2 * na * d;
      break;
    }
  }
  const u64 k = c.ffn_topk;
  f.ffn = 3 * k * d * dff;
  f.activation = 3 * k * (dff / 2);
  if (c.arch != Arch::dense) f.ffn_router = 2 * c.n_experts * d;
  f.attention = f.attn_qkv + f.attn_mask + f.attn_proj;
  f.ffn_total = f.ffn + f.activation;
  f.grand = f.attention + f.ffn_total + f.attn_router + f.ffn_router;
  return f;
}

std::uint64_t training_flops_per_token(const ModelConfig& config, std::size_t n_ctx) {
  return kTrainFlopsMultiplier * flops_per_token(config, n_ctx).model_total();
}

std::uint64_t compute_match(std::uint64_t reference_flops_per_token, std::uint64_t reference_tokens,
                            std::uint64_t candidate_flops_per_token, std::uint64_t batch_tokens) {
  if (candidate_flops_per_token == 0) throw ConfigError("compute_match: candidate FLOPs are zero");
  if (reference_flops_per_token == 0 || batch_tokens == 0)
    throw ConfigError("compute_match: inputs must be positive");
  const unsigned __int128 budget =
      static_cast<unsigned __int128>(reference_flops_per_token) * reference_tokens;
  const auto tokens = static_cast<u64>(budget / candidate_flops_per_token);
  return tokens - tokens % batch_tokens;
}

std::string group_digits(std::uint64_t v) {
  std::string digits = std::to_string(v);
  std::string out;
  const std::size_t n = digits.size();
  for (std::size_t i = 0; i < n; ++i) {
    if (i > 0 && (n - i) % 3 == 0) out += ',';
    out += digits[i];
  }
  return out;
}

namespace {

struct Row {
  std::string name;
  std::vector<std::string> cells;
};

void print_aligned(std::ostream& out, const std::vector<std::string>& header, const std::vector<Row>& rows) {
  std::vector<std::size_t> width(header.size() + 1, 0);
  for (const Row& r : rows) width[0] = std::max(width[0], r.name.size());
  for (std::size_t j = 0; j < header.size(); ++j) {
    width[j + 1] = header[j].size();
    for (const Row& r : rows) width[j + 1] = std::max(width[j + 1], r.cells[j].size());
  }
  out << std::left << std::setw(static_cast<int>(width[0])) << "" << std::right;
  for (std::size_t j = 0; j < header.size(); ++j)
    out << "  " << std::setw(static_cast<int>(width[j + 1])) << header[j];
  out << "\n";
  for (const Row& r : rows) {
    out << std::left << std::setw(static_cast<int>(width[0])) << r.name << std::right;
    for (std::size_t j = 0; j < r.cells.size(); ++j)
      out << "  " << std::setw(static_cast<int>(width[j + 1])) << r.cells[j];
    out << "\n";
  }
}

std::vector<Row> param_rows(const std::vector<NamedConfig>& columns, bool grouped) {
  auto fmt = [grouped](u64 v) { return grouped ? group_digits(v) : std::to_string(v); };
  std::vector<ParamReport> reports;
  for (const NamedConfig& c : columns) reports.push_back(count_params(c.config));
  std::vector<Row> rows;
  auto add = [&](const std::string& name, auto get) {
    Row r{name, {}};
    for (const ParamReport& p : reports) r.cells.push_back(fmt(get(p)));
    rows.push_back(std::move(r));
  };
  add("layernorm / Block", [](const ParamReport& p) { return p.norm.active; });
  add("attn_out / Block", [](const ParamReport& p) { return p.attn_out.total; });
  add("qkv_proj / Block", [](const ParamReport& p) { return p.qkv_proj.total; });
  add("ffn_exp / Block", [](const ParamReport& p) { return p.ffn_exp.active; });
  add("ffn_red / Block", [](const ParamReport& p) { return p.ffn_red.active; });
  add("router / Block", [](const ParamReport& p) { return p.router.active; });
  add("input embedding", [](const ParamReport& p) { return p.embeddings_in.total; });
  add("output embedding", [](const ParamReport& p) { return p.embeddings_out.total; });
  add("layernorm", [](const ParamReport& p) { return p.final_norm.total; });
  add("Active Params", [](const ParamReport& p) { return p.active; });
  add("Total Params", [](const ParamReport& p) { return p.total; });
  return rows;
}

std::vector<std::string> flops_header() {
  return {"n_experts", "n_topk", "Total", "Active", "Attention", "FFN", "Total FLOPs"};
}

std::vector<Row> flops_rows(const std::vector<NamedConfig>& configs, std::size_t n_ctx, bool grouped) {
  auto fmt = [grouped](u64 v) { return grouped ? group_digits(v) : std::to_string(v); };
  std::vector<Row> rows;
  for (const NamedConfig& nc : configs) {
    const ParamReport p = count_params(nc.config);
    const FlopsReport f = flops_per_token(nc.config, n_ctx);
    rows.push_back({nc.label,
                    {std::to_string(nc.config.n_experts), std::to_string(nc.config.ffn_topk), fmt(p.total),
                     fmt(p.active), fmt(f.attention), fmt(f.ffn_total), fmt(f.grand)}});
  }
  return rows;
}

void print_csv(std::ostream& out, const std::string& corner, const std::vector<std::string>& header,
               const std::vector<Row>& rows) {
  out << corner;
  for (const std::string& h : header) out << "," << h;
  out << "\n";
  for (const Row& r : rows) {
    out << r.name;
    for (const std::string& c : r.cells) out << "," << c;
    out << "\n";
  }
}

std::vector<std::string> labels(const std::vector<NamedConfig>& columns) {
  std::vector<std::string> out;
  for (const NamedConfig& c : columns) out.push_back(c.label.empty() ? label_of(c.config) : c.label);
  return out;
}

}  // namespace

void print_param_table(std::ostream& out, const std::vector<NamedConfig>& columns) {
  print_aligned(out, labels(columns), param_rows(columns, true));
}

void print_param_csv(std::ostream& out, const std::vector<NamedConfig>& columns) {
  print_csv(out, "row", labels(columns), param_rows(columns, false));
}

void print_flops_table(std::ostream& out, const std::vector<NamedConfig>& rows, std::size_t n_ctx) {
  print_aligned(out, flops_header(), flops_rows(rows, n_ctx, true));
}

void print_flops_csv(std::ostream& out, const std::vector<NamedConfig>& rows, std::size_t n_ctx) {
  print_csv(out, "method", flops_header(), flops_rows(rows, n_ctx, false));
}

void print_footnotes(std::ostream& out) {
  out << "[a] attention FLOPs exclude router FLOPs; Total FLOPs adds both routers back\n"
      << "[b] FFN FLOPs include the activation term 3 * n_topk * d_ff/2\n"
      << "[c] router row and Active Params hold one router per block; BAM totals add the attention router\n"
      << "[d] KV sharing: qkv_proj row and Active Params hold the query experts only; the shared key/value "
         "pair is counted in Total Params\n"
      << "[e] per-block attn_out/qkv_proj rows list stored weights; ffn rows list active experts\n"
      << "[f] FLOPs are per token per layer for a forward pass\n";
}

std::vector<NamedConfig> small_scale_param_columns() {
  return {{"Dense", small_scale_config(Arch::dense, 1, 1)},
          {"BAM", small_scale_config(Arch::bam_expert_kv, 4, 1)},
          {"BAM (KV sharing)", small_scale_config(Arch::bam_shared_kv, 4, 1)},
          {"BTX top-1", small_scale_config(Arch::btx, 4, 1)},
          {"BTX top-3", small_scale_config(Arch::btx, 4, 3)}};
}

std::vector<NamedConfig> small_scale_flops_rows() {
  return {{"BAM", small_scale_config(Arch::bam_expert_kv, 4, 1)},
          {"BTX", small_scale_config(Arch::btx, 4, 1)},
          {"BTX", small_scale_config(Arch::btx, 6, 3)}};
}

}  // namespace bamforge
