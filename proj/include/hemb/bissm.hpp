#pragma once

#include <cstddef>
#include <string>

#include "hemb/cofe.hpp"
#include "hemb/nn.hpp"
#include "hemb/ssm.hpp"

namespace hemb {

struct BissmOptions {
  bool cofe = true;
  /// Mamba-block side branch: y = scan(x) * silu(gate(x)).
  bool gated = true;
  /// Reverse branch reuses the forward branch weights.
  bool share_reverse = false;
};

/// One scan direction: selective SSM plus optional SiLU gate projection.
struct SsmBranch {
  SsmParams ssm;
  Linear gate;

  static SsmBranch init(std::size_t channels, std::size_t states, bool gated, Rng& rng);
  void collect(const std::string& prefix, ParamList& out) const;
};

struct BissmParams {
  BissmOptions options;
  Linear in_proj;  // 1-wide conv, C -> C
  CofeParams cofe;
  SsmBranch fwd;
  SsmBranch rev;  // undefined when options.share_reverse
  Linear out_proj;

  static BissmParams init(std::size_t channels, std::size_t states, std::size_t cofe_groups,
                          const BissmOptions& options, Rng& rng);
  const SsmBranch& reverse() const { return options.share_reverse ? fwd : rev; }
  void collect(const std::string& prefix, ParamList& out) const;
};

/// Reverses the channel axis of a C x L feature map; L order is untouched.
Tensor channel_flip(const Tensor& features);

/// Branch on a token-major sequence (L x C).
Tensor ssm_branch(const Tensor& tokens, const SsmBranch& branch);

/**
 * Token-major block body: out(Fwd(F') + flip(Rev(flip(F')))) with
 * F' = CoFE(in_proj(F)). Input and output are L x C.
 */
Tensor bissm_tokens(const Tensor& tokens, const BissmParams& params);

/// Channel-major batch form, B x C x L -> B x C x L.
Tensor bissm_forward(const Tensor& features, const BissmParams& params);

}  // namespace hemb
