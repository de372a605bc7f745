#include "hemb/model.hpp"

#include <cmath>
#include <string>

#include "hemb/errors.hpp"

namespace hemb {

namespace {

constexpr std::size_t kFirstHidden = 64;
constexpr std::size_t kFirstOut = 128;

std::vector<std::size_t> repeat_rows(std::size_t rows, std::size_t times) {
  std::vector<std::size_t> idx(rows * times);
  for (std::size_t r = 0; r < rows; ++r) {
    std::fill_n(idx.begin() + static_cast<std::ptrdiff_t>(r * times), times, r);
  }
  return idx;
}

}  // namespace

ModelConfig ModelConfig::paper() {
  ModelConfig c;
  c.depth = 12;
  c.dim = 384;
  c.num_groups = 128;
  c.group_size = 32;
  c.cofe_groups = 16;
  c.ssm_state = 16;
  c.num_classes = 40;
  return c;
}

void ModelConfig::validate() const {
  auto positive = [](std::size_t v, const char* name) {
    if (v == 0) throw ConfigError(std::string(name) + " must be positive");
  };
  positive(depth, "depth");
  positive(dim, "dim");
  positive(num_groups, "num_groups");
  positive(group_size, "group_size");
  positive(lgp_neighbors, "lgp_neighbors");
  positive(cofe_groups, "cofe_groups");
  positive(ssm_state, "ssm_state");
  positive(num_classes, "num_classes");
  positive(pos_hidden, "pos_hidden");
  positive(head_hidden, "head_hidden");
  if (dim % cofe_groups != 0) {
    throw ConfigError("cofe_groups " + std::to_string(cofe_groups) + " must divide dim " + std::to_string(dim));
  }
  if (lgp_neighbors > num_groups) throw ConfigError("lgp_neighbors cannot exceed num_groups");
  if (!(drop_path_rate >= 0.0 && drop_path_rate <= 1.0)) throw ConfigError("drop_path_rate must lie in [0, 1]");
}

BissmOptions ModelConfig::bissm_options() const {
  BissmOptions o;
  o.cofe = use_cofe;
  o.gated = ssm_gate;
  o.share_reverse = share_reverse;
  return o;
}

PatchEncoderParams PatchEncoderParams::init(std::size_t dim, Rng& rng) {
  PatchEncoderParams p;
  p.first_in = Linear::init(3, kFirstHidden, rng);
  p.first_out = Linear::init(kFirstHidden, kFirstOut, rng);
  p.second_in = Linear::init(2 * kFirstOut, dim, rng);
  p.second_out = Linear::init(dim, dim, rng);
  return p;
}

void PatchEncoderParams::collect(const std::string& prefix, ParamList& out) const {
  first_in.collect(prefix + ".first_in", out);
  first_out.collect(prefix + ".first_out", out);
  second_in.collect(prefix + ".second_in", out);
  second_out.collect(prefix + ".second_out", out);
}

PositionalParams PositionalParams::init(std::size_t hidden_width, std::size_t dim, Rng& rng) {
  PositionalParams p;
  p.cls = param_normal({dim}, 0.02, rng);
  p.hidden = Linear::init(3, hidden_width, rng);
  p.out = Linear::init(hidden_width, dim, rng);
  return p;
}

Tensor PositionalParams::operator()(const Tensor& centers) const {
  const Tensor rows = out(relu(hidden(centers)));
  return concat({reshape(cls, {1, cls.dim(0)}), rows}, 0);
}

void PositionalParams::collect(const std::string& prefix, ParamList& list) const {
  list.push_back({prefix + ".cls", cls});
  hidden.collect(prefix + ".hidden", list);
  out.collect(prefix + ".out", list);
}

void EncoderLayerParams::collect(const std::string& prefix, ParamList& out) const {
  pos.collect(prefix + ".pos", out);
  out.push_back({prefix + ".norm1.gamma", norm1_gamma});
  out.push_back({prefix + ".norm1.beta", norm1_beta});
  if (lgp.gamma.defined()) lgp.collect(prefix + ".lgp", out);
  out.push_back({prefix + ".norm2.gamma", norm2_gamma});
  out.push_back({prefix + ".norm2.beta", norm2_beta});
  bissm.collect(prefix + ".bissm", out);
}

void HeadParams::collect(const std::string& prefix, ParamList& list) const {
  in.collect(prefix + ".in", list);
  hidden.collect(prefix + ".hidden", list);
  out.collect(prefix + ".out", list);
}

ModelParams ModelParams::init(const ModelConfig& config) {
  config.validate();
  Rng rng(config.seed);
  ModelParams p;
  p.config = config;
  const std::size_t c = config.dim;
  p.encoder = PatchEncoderParams::init(c, rng);
  p.cls_token = param_normal({c}, 0.02, rng);
  p.pos_embed = PositionalParams::init(config.pos_hidden, c, rng);
  p.layers.reserve(config.depth);
  for (std::size_t i = 0; i < config.depth; ++i) {
    EncoderLayerParams layer;
    layer.pos = PositionalParams::init(config.pos_hidden, c, rng);
    layer.norm1_gamma = param_full({c}, 1.0);
    layer.norm1_beta = param_full({c}, 0.0);
    if (config.use_lgp) layer.lgp = LgpParams::init(c, rng);
    layer.norm2_gamma = param_full({c}, 1.0);
    layer.norm2_beta = param_full({c}, 0.0);
    layer.bissm = BissmParams::init(c, config.ssm_state, config.cofe_groups, config.bissm_options(), rng);
    p.layers.push_back(std::move(layer));
  }
  p.norm_gamma = param_full({c}, 1.0);
  p.norm_beta = param_full({c}, 0.0);
  const std::size_t head_in = config.head_pool_concat ? 2 * c : c;
  p.head.in = Linear::init(head_in, config.head_hidden, rng);
  p.head.hidden = Linear::init(config.head_hidden, config.head_hidden, rng);
  p.head.out = Linear::init(config.head_hidden, config.num_classes, rng);
  return p;
}

ParamList ModelParams::parameters() const {
  ParamList out;
  encoder.collect("encoder", out);
  out.push_back({"cls_token", cls_token});
  pos_embed.collect("pos_embed", out);
  for (std::size_t i = 0; i < layers.size(); ++i) layers[i].collect("layers." + std::to_string(i), out);
  out.push_back({"norm.gamma", norm_gamma});
  out.push_back({"norm.beta", norm_beta});
  head.collect("head", out);
  return out;
}

Tensor patch_input(const PatchSet& patches) {
  const std::size_t l = patches.num_patches();
  const std::size_t k = patches.k;
  std::vector<double> values(l * k * 3);
  for (std::size_t i = 0; i < l; ++i) {
    const Point3& c = patches.centers[i];
    const auto patch = patches.patch(i);
    double spread = 0.0;
    for (const auto& p : patch) spread += squared_distance(p, c);
    const double scale = std::sqrt(spread / static_cast<double>(k) + kPatchEps);
    for (std::size_t j = 0; j < k; ++j) {
      for (std::size_t d = 0; d < 3; ++d) values[(i * k + j) * 3 + d] = (patch[j][d] - c[d]) / scale;
    }
  }
  return Tensor({l, k, 3}, std::move(values));
}

PreparedCloud prepare_cloud(const PointCloud& cloud, const ModelConfig& config) {
  const std::size_t needed = std::max(config.num_groups, config.group_size);
  if (cloud.size() < needed) {
    throw CapacityError("cloud of " + std::to_string(cloud.size()) + " points is smaller than the " +
                        std::to_string(needed) + " the model needs");
  }
  const PatchSet patches = make_patches(cloud, config.num_groups, config.group_size);
  PreparedCloud prepared;
  prepared.patch_input = patch_input(patches);
  std::vector<double> centers;
  centers.reserve(patches.centers.size() * 3);
  for (const auto& p : patches.centers) centers.insert(centers.end(), p.begin(), p.end());
  prepared.centers = Tensor({patches.centers.size(), 3}, std::move(centers));
  prepared.lgp = make_lgp_geometry(patches.centers, config.lgp_neighbors, config.lgp_gaussian);
  prepared.label = cloud.label;
  return prepared;
}

Tensor encode_patches(const Tensor& patch_points, const PatchEncoderParams& params) {
  if (patch_points.rank() != 3 || patch_points.dim(2) != 3) {
    throw ShapeError("encode_patches expects L x K x 3, got " + shape_str(patch_points.shape()));
  }
  const std::size_t l = patch_points.dim(0);
  const std::size_t k = patch_points.dim(1);
  const Tensor points = reshape(patch_points, {l * k, 3});
  const Tensor local = params.first_out(relu(params.first_in(points)));
  const Tensor pooled = max(reshape(local, {l, k, kFirstOut}), 1);
  const Tensor joined = concat({index_select(pooled, repeat_rows(l, k)), local}, 1);
  const Tensor features = params.second_out(relu(params.second_in(joined)));
  const std::size_t dim = params.second_out.w.dim(0);
  return max(reshape(features, {l, k, dim}), 1);
}

Tensor build_token_sequence(const Tensor& patch_tokens, const Tensor& centers, const Tensor& cls_token,
                            const PositionalParams& pos) {
  if (patch_tokens.rank() != 2 || centers.rank() != 2 || patch_tokens.dim(0) != centers.dim(0)) {
    throw ShapeError("build_token_sequence of tokens " + shape_str(patch_tokens.shape()) + " and centers " +
                     shape_str(centers.shape()));
  }
  const Tensor tokens = concat({reshape(cls_token, {1, cls_token.dim(0)}), patch_tokens}, 0);
  return tokens + pos(centers);
}

Tensor drop_path(const Tensor& branch, double rate, ForwardContext& ctx) {
  if (!ctx.training || rate <= 0.0) return branch;
  if (rate >= 1.0) return Tensor();
  if (!ctx.rng) throw ContractError("drop-path in training mode needs a random generator");
  if (ctx.rng->uniform() < rate) return Tensor();
  return branch * (1.0 / (1.0 - rate));
}

Tensor encoder_block(const Tensor& tokens, const Tensor& centers, const LgpGeometry& lgp,
                     const EncoderLayerParams& layer, const ModelConfig& config, ForwardContext& ctx) {
  Tensor z = tokens;
  if (config.use_lgp) {
    const Tensor normed = layer_norm(tokens + layer.pos(centers), layer.norm1_gamma, layer.norm1_beta);
    const Tensor branch = drop_path(lgp_forward(normed, lgp, layer.lgp), config.drop_path_rate, ctx);
    if (branch.defined()) z = z + branch;
  }
  const Tensor normed = layer_norm(z, layer.norm2_gamma, layer.norm2_beta);
  const Tensor branch = drop_path(bissm_tokens(normed, layer.bissm), config.drop_path_rate, ctx);
  return branch.defined() ? z + branch : z;
}

Tensor forward(const PreparedCloud& cloud, const ModelParams& params, ForwardContext& ctx) {
  const ModelConfig& config = params.config;
  Tensor z = build_token_sequence(encode_patches(cloud.patch_input, params.encoder), cloud.centers,
                                  params.cls_token, params.pos_embed);
  for (const auto& layer : params.layers) z = encoder_block(z, cloud.centers, cloud.lgp, layer, config, ctx);
  const Tensor normed = layer_norm(z, params.norm_gamma, params.norm_beta);
  Tensor pooled = slice(normed, 0, 0, 1);
  if (config.head_pool_concat) {
    const Tensor patches = slice(normed, 0, 1, normed.dim(0) - 1);
    pooled = concat({pooled, reshape(max(patches, 0), {1, config.dim})}, 1);
  }
  return params.head.out(relu(params.head.hidden(relu(params.head.in(pooled)))));
}

Tensor forward(const PointCloud& cloud, const ModelParams& params) {
  ForwardContext ctx;
  return forward(prepare_cloud(cloud, params.config), params, ctx);
}

}  // namespace hemb
