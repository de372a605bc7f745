#include "hemb/train.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "hemb/errors.hpp"

namespace hemb {

double scheduled_lr(const OptimizerConfig& c, std::size_t epoch) {
  if (epoch < c.warmup_epochs) {
    return c.lr * static_cast<double>(epoch + 1) / static_cast<double>(c.warmup_epochs);
  }
  const std::size_t decay_epochs = c.epochs > c.warmup_epochs ? c.epochs - c.warmup_epochs : 1;
  const double progress =
      decay_epochs > 1 ? static_cast<double>(epoch - c.warmup_epochs) / static_cast<double>(decay_epochs - 1) : 1.0;
  const double t = std::min(progress, 1.0);
  return c.min_lr + 0.5 * (c.lr - c.min_lr) * (1.0 + std::cos(std::numbers::pi * t));
}

AdamW::AdamW(const ParamList& params, const OptimizerConfig& config) : config_(config) {
  slots_.reserve(params.size());
  for (const auto& p : params) {
    const bool state_matrix = p.name.ends_with(".a_log");
    slots_.push_back({p.tensor, p.tensor.rank() > 1 && !state_matrix, std::vector<double>(p.tensor.numel(), 0.0),
                      std::vector<double>(p.tensor.numel(), 0.0)});
  }
}

void AdamW::zero_grad() {
  for (auto& s : slots_) s.param.zero_grad();
}

void AdamW::step(double lr) {
  ++t_;
  const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
  for (auto& s : slots_) {
    std::span<double> w = s.param.leaf_data();
    std::span<const double> g = s.param.grad();
    const bool has_grad = !g.empty();
    const double decay = s.decay ? config_.weight_decay : 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double gi = has_grad ? g[i] : 0.0;
      s.m[i] = config_.beta1 * s.m[i] + (1.0 - config_.beta1) * gi;
      s.v[i] = config_.beta2 * s.v[i] + (1.0 - config_.beta2) * gi * gi;
      const double update = (s.m[i] / bc1) / (std::sqrt(s.v[i] / bc2) + config_.eps);
      w[i] -= lr * (update + decay * w[i]);
    }
  }
}

std::size_t argmax(std::span<const double> values) {
  return static_cast<std::size_t>(std::max_element(values.begin(), values.end()) - values.begin());
}

StepResult train_step(std::span<const PreparedCloud* const> batch, const ModelParams& params, AdamW& optimizer,
                      double lr, Rng& rng) {
  if (batch.empty()) throw ContractError("train_step on an empty batch");
  optimizer.zero_grad();
  StepResult result;
  const double scale = 1.0 / static_cast<double>(batch.size());
  for (const PreparedCloud* sample : batch) {
    if (!sample->label) throw ContractError("train_step needs labeled samples");
    const std::size_t label = *sample->label;
    ForwardContext ctx{true, &rng};
    const Tensor logits = forward(*sample, params, ctx);
    const Tensor loss = cross_entropy(logits, std::span<const std::size_t>(&label, 1)) * scale;
    loss.backward();
    result.loss += loss.item();
    if (argmax(logits.data()) == label) ++result.correct;
  }
  optimizer.step(lr);
  return result;
}

std::vector<std::size_t> predict(std::span<const PreparedCloud> samples, const ModelParams& params) {
  NoGradGuard no_grad;
  std::vector<std::size_t> out;
  out.reserve(samples.size());
  for (const auto& s : samples) {
    ForwardContext ctx;
    out.push_back(argmax(forward(s, params, ctx).data()));
  }
  return out;
}

}  // namespace hemb
