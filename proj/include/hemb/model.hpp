#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "hemb/bissm.hpp"
#include "hemb/geometry.hpp"
#include "hemb/lgp.hpp"
#include "hemb/nn.hpp"
#include "hemb/rng.hpp"
#include "hemb/tensor.hpp"

namespace hemb {

/// Complete architecture hyperparameters. Defaults are the desk-scale model.
struct ModelConfig {
  std::size_t depth = 4;
  std::size_t dim = 64;
  std::size_t num_groups = 32;  // L patches
  std::size_t group_size = 16;  // K points per patch
  std::size_t lgp_neighbors = 8;
  std::size_t cofe_groups = 4;
  std::size_t ssm_state = 8;
  std::size_t num_classes = 8;
  double drop_path_rate = 0.1;
  std::uint64_t seed = 0;

  std::size_t pos_hidden = 128;
  std::size_t head_hidden = 256;

  bool use_lgp = true;
  bool lgp_gaussian = true;
  bool use_cofe = true;
  bool ssm_gate = true;
  bool share_reverse = false;
  /// Head reads [class token, max over patch tokens] instead of the class token alone.
  bool head_pool_concat = false;

  /// 12 layers, width 384, 128 groups of 32, 40 classes.
  static ModelConfig paper();
  /// Throws ConfigError on an inconsistent configuration.
  void validate() const;
  BissmOptions bissm_options() const;
};

/// Two-stage max-pool point encoder: 3 -> 64 -> 128, pool, concat, 256 -> C -> C, pool.
struct PatchEncoderParams {
  Linear first_in;
  Linear first_out;
  Linear second_in;
  Linear second_out;

  static PatchEncoderParams init(std::size_t dim, Rng& rng);
  void collect(const std::string& prefix, ParamList& out) const;
};

/// Coordinate MLP for patch rows plus a learned class-token row.
struct PositionalParams {
  Tensor cls;  // C
  Linear hidden;
  Linear out;

  static PositionalParams init(std::size_t hidden, std::size_t dim, Rng& rng);
  /// (L+1) x C: the class row followed by MLP(center) rows.
  Tensor operator()(const Tensor& centers) const;
  void collect(const std::string& prefix, ParamList& out) const;
};

struct EncoderLayerParams {
  PositionalParams pos;
  Tensor norm1_gamma, norm1_beta;
  LgpParams lgp;
  Tensor norm2_gamma, norm2_beta;
  BissmParams bissm;

  void collect(const std::string& prefix, ParamList& out) const;
};

struct HeadParams {
  Linear in;
  Linear hidden;
  Linear out;

  void collect(const std::string& prefix, ParamList& out) const;
};

struct ModelParams {
  ModelConfig config;
  PatchEncoderParams encoder;
  Tensor cls_token;  // C
  PositionalParams pos_embed;
  std::vector<EncoderLayerParams> layers;
  Tensor norm_gamma, norm_beta;
  HeadParams head;

  static ModelParams init(const ModelConfig& config);
  /// Every trainable leaf, in a fixed order.
  ParamList parameters() const;
};

/// Per-cloud geometry, computed once and reused across epochs.
struct PreparedCloud {
  Tensor patch_input;  // L x K x 3, center-relative and scale-normalized
  Tensor centers;      // L x 3
  LgpGeometry lgp;
  std::optional<std::size_t> label;
};

PreparedCloud prepare_cloud(const PointCloud& cloud, const ModelConfig& config);

/// (p - center) / sqrt(mean ||p - center||^2 + eps) per patch: L x K x 3.
Tensor patch_input(const PatchSet& patches);

struct ForwardContext {
  bool training = false;
  Rng* rng = nullptr;  // drop-path draws; required when training with a nonzero rate
};

/// L x K x 3 -> L x C. Symmetric in the K points of each patch.
Tensor encode_patches(const Tensor& patch_points, const PatchEncoderParams& params);

/// [cls + P_cls; tokens + MLP(centers)]: (L+1) x C.
Tensor build_token_sequence(const Tensor& patch_tokens, const Tensor& centers, const Tensor& cls_token,
                            const PositionalParams& pos);

/// Residual branch with drop-path; a dropped branch contributes nothing.
Tensor drop_path(const Tensor& branch, double rate, ForwardContext& ctx);

/// LGP then CoFE-BiSSM, each behind layer norm and a residual connection.
Tensor encoder_block(const Tensor& tokens, const Tensor& centers, const LgpGeometry& lgp,
                     const EncoderLayerParams& layer, const ModelConfig& config, ForwardContext& ctx);

/// Logits, shape 1 x num_classes.
Tensor forward(const PreparedCloud& cloud, const ModelParams& params, ForwardContext& ctx);
Tensor forward(const PointCloud& cloud, const ModelParams& params);

}  // namespace hemb
