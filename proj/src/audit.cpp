#include "hemb/audit.hpp"

#include <map>

namespace hemb {

namespace {

void add_linear(std::vector<ParamSpec>& out, const std::string& name, std::size_t in, std::size_t outw) {
  out.push_back({name + ".w", {outw, in}});
  out.push_back({name + ".b", {outw}});
}

void add_branch(std::vector<ParamSpec>& out, const std::string& name, const ModelConfig& c) {
  out.push_back({name + ".a_log", {c.dim, c.ssm_state}});
  out.push_back({name + ".w_b", {c.ssm_state, c.dim}});
  out.push_back({name + ".w_c", {c.ssm_state, c.dim}});
  out.push_back({name + ".w_delta", {c.dim, c.dim}});
  out.push_back({name + ".delta_bias", {c.dim}});
  out.push_back({name + ".d", {c.dim}});
  if (c.ssm_gate) add_linear(out, name + ".gate", c.dim, c.dim);
}

// Audit rows group tensors by these prefixes of the dotted name.
std::string block_of(const std::string& name) {
  static const char* kSubBlocks[] = {".pos", ".norm1", ".lgp", ".norm2", ".bissm.cofe", ".bissm"};
  if (name.rfind("layers.", 0) == 0) {
    const std::size_t dot = name.find('.', 7);
    const std::string layer = name.substr(0, dot);
    for (const char* sub : kSubBlocks) {
      if (name.compare(dot, std::char_traits<char>::length(sub), sub) == 0) return layer + sub;
    }
    return layer;
  }
  return name.substr(0, name.find('.'));
}

std::size_t total_of(const std::vector<ParamSpec>& layout) {
  std::size_t total = 0;
  for (const auto& p : layout) total += shape_numel(p.shape);
  return total;
}

}  // namespace

std::vector<ParamSpec> param_layout(const ModelConfig& c) {
  c.validate();
  std::vector<ParamSpec> out;
  add_linear(out, "encoder.first_in", 3, 64);
  add_linear(out, "encoder.first_out", 64, 128);
  add_linear(out, "encoder.second_in", 256, c.dim);
  add_linear(out, "encoder.second_out", c.dim, c.dim);
  out.push_back({"cls_token", {c.dim}});
  auto positional = [&](const std::string& name) {
    out.push_back({name + ".cls", {c.dim}});
    add_linear(out, name + ".hidden", 3, c.pos_hidden);
    add_linear(out, name + ".out", c.pos_hidden, c.dim);
  };
  positional("pos_embed");
  const std::size_t cg = c.dim / c.cofe_groups;
  for (std::size_t i = 0; i < c.depth; ++i) {
    const std::string layer = "layers." + std::to_string(i);
    positional(layer + ".pos");
    out.push_back({layer + ".norm1.gamma", {c.dim}});
    out.push_back({layer + ".norm1.beta", {c.dim}});
    if (c.use_lgp) {
      // The Gaussian coupling contributes nothing here: it is a function of coordinates only.
      out.push_back({layer + ".lgp.gamma", {2 * c.dim}});
      out.push_back({layer + ".lgp.beta", {2 * c.dim}});
      add_linear(out, layer + ".lgp.mlp_in", 2 * c.dim, c.dim);
      add_linear(out, layer + ".lgp.mlp_out", c.dim, c.dim);
    }
    out.push_back({layer + ".norm2.gamma", {c.dim}});
    out.push_back({layer + ".norm2.beta", {c.dim}});
    const std::string bissm = layer + ".bissm";
    add_linear(out, bissm + ".in_proj", c.dim, c.dim);
    if (c.use_cofe) {
      out.push_back({bissm + ".cofe.gate_w", {cg, cg}});
      out.push_back({bissm + ".cofe.gate_b", {cg}});
      out.push_back({bissm + ".cofe.gn_gamma", {cg}});
      out.push_back({bissm + ".cofe.gn_beta", {cg}});
      out.push_back({bissm + ".cofe.conv_w", {cg, cg, 3}});
      out.push_back({bissm + ".cofe.conv_b", {cg}});
    }
    add_branch(out, bissm + ".fwd", c);
    if (!c.share_reverse) add_branch(out, bissm + ".rev", c);
    add_linear(out, bissm + ".out_proj", c.dim, c.dim);
  }
  out.push_back({"norm.gamma", {c.dim}});
  out.push_back({"norm.beta", {c.dim}});
  add_linear(out, "head.in", c.head_pool_concat ? 2 * c.dim : c.dim, c.head_hidden);
  add_linear(out, "head.hidden", c.head_hidden, c.head_hidden);
  add_linear(out, "head.out", c.head_hidden, c.num_classes);
  return out;
}

ParamAudit count_params(const ModelConfig& config) {
  const auto layout = param_layout(config);
  ParamAudit audit;
  std::vector<std::string> order;
  std::map<std::string, std::size_t> counts;
  for (const auto& p : layout) {
    const std::string block = block_of(p.name);
    if (!counts.count(block)) order.push_back(block);
    counts[block] += shape_numel(p.shape);
  }
  for (const auto& block : order) audit.rows.push_back({block, counts[block]});
  audit.total = total_of(layout);

  ModelConfig without_cofe = config;
  without_cofe.use_cofe = false;
  audit.cofe_delta = audit.total - total_of(param_layout(without_cofe));

  ModelConfig coupled = config;
  coupled.lgp_gaussian = true;
  ModelConfig uncoupled = config;
  uncoupled.lgp_gaussian = false;
  audit.geometry_delta = static_cast<long long>(total_of(param_layout(coupled))) -
                         static_cast<long long>(total_of(param_layout(uncoupled)));
  return audit;
}

std::size_t count_leaves(const ModelParams& params) {
  std::size_t total = 0;
  for (const auto& p : params.parameters()) total += p.tensor.numel();
  return total;
}

FlopAudit estimate_flops(const ModelConfig& c) {
  const double l = static_cast<double>(c.num_groups);
  const double k = static_cast<double>(c.group_size);
  const double tokens = l + 1.0;
  const double d = static_cast<double>(c.dim);
  const double n = static_cast<double>(c.ssm_state);
  const double kl = static_cast<double>(c.lgp_neighbors);
  auto dense = [](double rows, double in, double out) { return 2.0 * rows * in * out; };

  double total = 0.0;
  const double points = l * k;
  total += dense(points, 3, 64) + dense(points, 64, 128) + dense(points, 256, d) + dense(points, d, d);
  total += dense(l, 3, static_cast<double>(c.pos_hidden)) + dense(l, static_cast<double>(c.pos_hidden), d);

  const double cg = d / static_cast<double>(c.cofe_groups);
  const double g = static_cast<double>(c.cofe_groups);
  // Per layer, per sample: pooling, gate conv, gating, GN, width-3 conv,
  // compression softmaxes, cross products, final gating.
  const double cofe = g * (cg * tokens + 2.0 * cg * cg + cg * tokens + 4.0 * cg * tokens + 2.0 * 3.0 * cg * cg * tokens +
                           2.0 * (cg * tokens + 3.0 * tokens) + 4.0 * tokens + cg * tokens);

  double layer = 0.0;
  layer += dense(l, 3, static_cast<double>(c.pos_hidden)) + dense(l, static_cast<double>(c.pos_hidden), d);
  if (c.use_lgp) layer += dense(l, 2 * d, d) + dense(l, d, d) + 10.0 * l * kl * 2 * d;
  layer += dense(tokens, d, d) * 2;  // in / out projections
  const double branch = dense(tokens, d, d) + dense(tokens, d, 2 * n) + 6.0 * tokens * d * n +
                        (c.ssm_gate ? dense(tokens, d, d) : 0.0);
  layer += 2.0 * branch;
  layer += 10.0 * tokens * d;  // norms and residuals
  if (c.use_cofe) layer += cofe;

  total += static_cast<double>(c.depth) * layer;
  const double head_in = c.head_pool_concat ? 2 * d : d;
  const double hh = static_cast<double>(c.head_hidden);
  total += dense(1, head_in, hh) + dense(1, hh, hh) + dense(1, hh, static_cast<double>(c.num_classes));

  FlopAudit audit;
  audit.total = total;
  audit.cofe_delta = c.use_cofe ? static_cast<double>(c.depth) * cofe : 0.0;
  return audit;
}

}  // namespace hemb
