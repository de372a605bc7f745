#include "hemb/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "hemb/bissm.hpp"
#include "hemb/cofe.hpp"
#include "hemb/errors.hpp"
#include "hemb/lgp.hpp"
#include "hemb/model.hpp"
#include "hemb/ssm.hpp"

namespace hemb {

namespace {

Tensor random_tensor(const Shape& shape, Rng& rng, bool requires_grad = true, double scale = 1.0) {
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = scale * rng.normal();
  return Tensor(shape, std::move(v), requires_grad);
}

/// sum(out * R) with R drawn from `salt`, identical on every call, so each
/// output entry contributes with its own weight.
Tensor probe(const Tensor& out, std::uint64_t salt) {
  Rng rng(salt);
  return sum_all(out * random_tensor(out.shape(), rng, false));
}

std::vector<Point3> random_points(std::size_t n, Rng& rng) {
  std::vector<Point3> points(n);
  for (auto& p : points) p = {rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)};
  return points;
}

ParamList leaves_of(std::initializer_list<Tensor> tensors) {
  ParamList out;
  for (const auto& t : tensors) out.push_back({"input", t});
  return out;
}

double check_tensor_ops(Rng& rng, const GradcheckOptions& o) {
  const Tensor x = random_tensor({3, 4}, rng);
  const Tensor w = random_tensor({5, 4}, rng);
  const Tensor b = random_tensor({5}, rng);
  const Tensor k = random_tensor({2, 3, 3}, rng);
  const Tensor g = random_tensor({5}, rng);
  const Tensor m = random_tensor({4, 2}, rng);
  const std::uint64_t salt = rng.bits();
  auto loss = [=] {
    static const std::vector<std::size_t> labels{1, 0, 4};
    static const std::vector<std::size_t> pick{2, 0, 2};
    const Tensor h = linear(x, w, b);
    const Tensor s = silu(h) + softmax(h, 1) * sigmoid(h) - h / (softplus(h) + 1.0);
    const Tensor n = layer_norm(s, g, b);
    const Tensor c = conv1d(reshape(slice(n, 1, 0, 3), {1, 3, 3}), k);
    const Tensor pos = softplus(n) + 1.0;
    const Tensor mixed = log(pos) / sqrt(pos) + exp(-relu(n));
    const Tensor joined = concat({mixed, transpose(reshape(c, {2, 3}))}, 1);
    const Tensor flipped = flip(index_select(joined, pick), 1);
    return probe(variance(flipped, 0), salt) + probe(max(joined, 1), salt + 1) + probe(mean(joined, 0), salt + 2) +
           probe(sum(mixed, 1, true), salt + 3) + probe(matmul(x, m), salt + 4) +
           probe(matmul(flipped, transpose(joined)), salt + 5) + cross_entropy(h, labels);
  };
  return gradient_error(loss, leaves_of({x, w, b, k, g, m}), rng, o);
}

double check_ssm(Rng& rng, const GradcheckOptions& o) {
  const SsmParams params = SsmParams::init(4, 3, rng);
  const Tensor tokens = random_tensor({6, 4}, rng);
  const std::uint64_t salt = rng.bits();
  ParamList leaves{{"tokens", tokens},    {"a_log", params.a_log},           {"w_b", params.w_b},
                   {"w_c", params.w_c},   {"w_delta", params.w_delta}, {"delta_bias", params.delta_bias},
                   {"d", params.d}};
  return gradient_error([=] { return probe(ssm_tokens(tokens, params), salt); }, leaves, rng, o);
}

double check_lgp(Rng& rng, const GradcheckOptions& o) {
  constexpr std::size_t channels = 6;
  const LgpParams params = LgpParams::init(channels, rng);
  // Perturb the identity affine so gamma and beta gradients are generic.
  for (double& v : Tensor(params.gamma).leaf_data()) v += 0.3 * rng.normal();
  for (double& v : Tensor(params.beta).leaf_data()) v += 0.3 * rng.normal();
  const LgpGeometry geometry = make_lgp_geometry(random_points(8, rng), 4);
  const Tensor tokens = random_tensor({9, channels}, rng);
  const std::uint64_t salt = rng.bits();
  ParamList leaves{{"tokens", tokens}};
  params.collect("lgp", leaves);
  return gradient_error([=] { return probe(lgp_forward(tokens, geometry, params), salt); }, leaves, rng, o);
}

double check_cofe(Rng& rng, const GradcheckOptions& o) {
  const CofeParams params = CofeParams::init(8, 2, rng);
  for (double& v : Tensor(params.gn_gamma).leaf_data()) v += 0.3 * rng.normal();
  for (double& v : Tensor(params.gn_beta).leaf_data()) v += 0.3 * rng.normal();
  const Tensor x = random_tensor({2, 8, 6}, rng);
  const std::uint64_t salt = rng.bits();
  ParamList leaves{{"x", x}};
  params.collect("cofe", leaves);
  return gradient_error([=] { return probe(cofe_forward(x, params), salt); }, leaves, rng, o);
}

double check_bissm(Rng& rng, const GradcheckOptions& o) {
  const BissmParams params = BissmParams::init(8, 4, 2, BissmOptions{}, rng);
  const Tensor x = random_tensor({2, 8, 5}, rng);
  const std::uint64_t salt = rng.bits();
  ParamList leaves{{"x", x}};
  params.collect("bissm", leaves);
  return gradient_error([=] { return probe(bissm_forward(x, params), salt); }, leaves, rng, o);
}

ModelConfig toy_config(std::uint64_t seed) {
  ModelConfig c;
  c.depth = 1;
  c.dim = 16;
  c.num_groups = 8;
  c.group_size = 4;
  c.lgp_neighbors = 4;
  c.cofe_groups = 4;
  c.ssm_state = 4;
  c.num_classes = 4;
  c.pos_hidden = 16;
  c.head_hidden = 16;
  c.seed = seed;
  return c;
}

/// Pushes every parameter away from its structured init (unit gains, zero
/// biases) so no gradient is special-cased by symmetry.
void jitter(const ParamList& params, Rng& rng, double scale) {
  for (const auto& p : params) {
    for (double& v : Tensor(p.tensor).leaf_data()) v += scale * rng.normal();
  }
}

double check_encoder_block(Rng& rng, const GradcheckOptions& o) {
  const ModelConfig config = toy_config(rng.bits());
  const ModelParams model = ModelParams::init(config);
  const EncoderLayerParams& layer = model.layers.front();
  ParamList leaves;
  layer.collect("layer", leaves);
  jitter(leaves, rng, 0.05);
  const auto centers = random_points(config.num_groups, rng);
  std::vector<double> flat;
  for (const auto& p : centers) flat.insert(flat.end(), p.begin(), p.end());
  const Tensor center_tensor({config.num_groups, 3}, flat);
  const LgpGeometry geometry = make_lgp_geometry(centers, config.lgp_neighbors);
  const Tensor tokens = random_tensor({config.num_groups + 1, config.dim}, rng);
  leaves.push_back({"tokens", tokens});
  const std::uint64_t salt = rng.bits();
  return gradient_error(
      [=] {
        ForwardContext ctx;
        return probe(encoder_block(tokens, center_tensor, geometry, layer, config, ctx), salt);
      },
      leaves, rng, o);
}

double check_model(Rng& rng, const GradcheckOptions& o) {
  const ModelConfig config = toy_config(rng.bits());
  const ModelParams model = ModelParams::init(config);
  const ParamList leaves = model.parameters();
  jitter(leaves, rng, 0.05);
  PointCloud cloud;
  cloud.points = random_points(48, rng);
  cloud.label = rng.below(config.num_classes);
  const PreparedCloud prepared = prepare_cloud(cloud, config);
  const std::size_t label = *cloud.label;
  return gradient_error(
      [=] {
        ForwardContext ctx;
        return cross_entropy(forward(prepared, model, ctx), std::span<const std::size_t>(&label, 1));
      },
      leaves, rng, o);
}

}  // namespace

double gradient_error(const std::function<Tensor()>& loss, const ParamList& leaves, Rng& rng,
                      const GradcheckOptions& options) {
  for (const auto& leaf : leaves) {
    Tensor t = leaf.tensor;
    t.zero_grad();
  }
  loss().backward();
  double worst = 0.0;
  for (const auto& leaf : leaves) {
    Tensor t = leaf.tensor;
    const std::size_t n = t.numel();
    std::vector<std::size_t> entries(n);
    std::iota(entries.begin(), entries.end(), 0);
    if (n > options.entries_per_tensor) {
      for (std::size_t i = 0; i < options.entries_per_tensor; ++i) {
        std::swap(entries[i], entries[i + rng.below(n - i)]);
      }
      entries.resize(options.entries_per_tensor);
    }
    const auto grad = t.grad();
    double diff2 = 0.0, analytic2 = 0.0, numeric2 = 0.0;
    for (std::size_t e : entries) {
      const double analytic = grad.empty() ? 0.0 : grad[e];
      auto values = t.leaf_data();
      const double saved = values[e];
      values[e] = saved + options.step;
      const double up = loss().item();
      values[e] = saved - options.step;
      const double down = loss().item();
      values[e] = saved;
      const double numeric = (up - down) / (2.0 * options.step);
      diff2 += (analytic - numeric) * (analytic - numeric);
      analytic2 += analytic * analytic;
      numeric2 += numeric * numeric;
    }
    const double scale = std::max({std::sqrt(analytic2), std::sqrt(numeric2), options.floor});
    worst = std::max(worst, std::sqrt(diff2) / scale);
  }
  return worst;
}

std::vector<GradcheckRow> run_gradcheck(std::uint64_t seed, std::size_t seeds, const GradcheckOptions& options) {
  using Check = double (*)(Rng&, const GradcheckOptions&);
  const std::vector<std::pair<std::string, Check>> checks{
      {"tensor-autodiff", check_tensor_ops}, {"ssm-core", check_ssm},
      {"lgp", check_lgp},                    {"cofe", check_cofe},
      {"bissm", check_bissm},                {"encoder-block", check_encoder_block},
      {"model", check_model}};
  std::vector<GradcheckRow> rows;
  for (std::size_t i = 0; i < checks.size(); ++i) {
    const auto& [name, check] = checks[i];
    GradcheckRow row{name, 0.0, name == "model" ? kModelGradTolerance : kModuleGradTolerance};
    for (std::size_t s = 0; s < seeds; ++s) {
      Rng rng(seed + s);
      Rng local = rng.fork(i);
      row.worst = std::max(row.worst, check(local, options));
    }
    rows.push_back(row);
  }
  return rows;
}

}  // namespace hemb
