#include "hemb/bissm.hpp"

#include "hemb/errors.hpp"

namespace hemb {

SsmBranch SsmBranch::init(std::size_t channels, std::size_t states, bool gated, Rng& rng) {
  SsmBranch b;
  b.ssm = SsmParams::init(channels, states, rng);
  if (gated) b.gate = Linear::init(channels, channels, rng);
  return b;
}

void SsmBranch::collect(const std::string& prefix, ParamList& out) const {
  out.push_back({prefix + ".a_log", ssm.a_log});
  out.push_back({prefix + ".w_b", ssm.w_b});
  out.push_back({prefix + ".w_c", ssm.w_c});
  out.push_back({prefix + ".w_delta", ssm.w_delta});
  out.push_back({prefix + ".delta_bias", ssm.delta_bias});
  out.push_back({prefix + ".d", ssm.d});
  if (gate.w.defined()) gate.collect(prefix + ".gate", out);
}

BissmParams BissmParams::init(std::size_t channels, std::size_t states, std::size_t cofe_groups,
                              const BissmOptions& options, Rng& rng) {
  BissmParams p;
  p.options = options;
  p.in_proj = Linear::init(channels, channels, rng);
  if (options.cofe) p.cofe = CofeParams::init(channels, cofe_groups, rng);
  p.fwd = SsmBranch::init(channels, states, options.gated, rng);
  if (!options.share_reverse) p.rev = SsmBranch::init(channels, states, options.gated, rng);
  p.out_proj = Linear::init(channels, channels, rng);
  return p;
}

void BissmParams::collect(const std::string& prefix, ParamList& out) const {
  in_proj.collect(prefix + ".in_proj", out);
  if (options.cofe) cofe.collect(prefix + ".cofe", out);
  fwd.collect(prefix + ".fwd", out);
  if (!options.share_reverse) rev.collect(prefix + ".rev", out);
  out_proj.collect(prefix + ".out_proj", out);
}

Tensor channel_flip(const Tensor& features) { return flip(features, 0); }

Tensor ssm_branch(const Tensor& tokens, const SsmBranch& branch) {
  Tensor y = ssm_tokens(tokens, branch.ssm);
  if (branch.gate.w.defined()) y = y * silu(branch.gate(tokens));
  return y;
}

Tensor bissm_tokens(const Tensor& tokens, const BissmParams& params) {
  if (tokens.rank() != 2) throw ShapeError("bissm_tokens expects L x C, got " + shape_str(tokens.shape()));
  const std::size_t len = tokens.dim(0);
  const std::size_t channels = tokens.dim(1);
  Tensor mixed = params.in_proj(tokens);
  if (params.options.cofe) {
    const Tensor channel_major = reshape(transpose(mixed), {1, channels, len});
    mixed = transpose(reshape(cofe_forward(channel_major, params.cofe), {channels, len}));
  }
  // Token-major layout keeps channels on axis 1.
  const Tensor forward = ssm_branch(mixed, params.fwd);
  const Tensor backward = flip(ssm_branch(flip(mixed, 1), params.reverse()), 1);
  return params.out_proj(forward + backward);
}

Tensor bissm_forward(const Tensor& features, const BissmParams& params) {
  if (features.rank() != 3) throw ShapeError("bissm_forward expects B x C x L, got " + shape_str(features.shape()));
  const std::size_t batch = features.dim(0);
  const std::size_t channels = features.dim(1);
  const std::size_t len = features.dim(2);
  std::vector<Tensor> outputs;
  outputs.reserve(batch);
  for (std::size_t b = 0; b < batch; ++b) {
    const Tensor item = transpose(reshape(slice(features, 0, b, 1), {channels, len}));
    outputs.push_back(reshape(transpose(bissm_tokens(item, params)), {1, channels, len}));
  }
  return batch == 1 ? outputs.front() : concat(outputs, 0);
}

}  // namespace hemb
