#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "hemb/model.hpp"
#include "hemb/rng.hpp"

namespace hemb {

struct OptimizerConfig {
  double lr = 1e-3;
  double weight_decay = 0.05;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::size_t warmup_epochs = 2;
  std::size_t epochs = 30;
  double min_lr = 1e-6;
};

/// Linear warmup to `lr`, then cosine decay to `min_lr` at the last epoch.
double scheduled_lr(const OptimizerConfig& config, std::size_t epoch);

/**
 * Adam with decoupled weight decay. Decay skips rank-1 tensors (biases,
 * norms, tokens) and the SSM state matrices.
 */
class AdamW {
 public:
  AdamW(const ParamList& params, const OptimizerConfig& config);

  /// One update from the gradients currently accumulated on the leaves.
  void step(double lr);
  void zero_grad();
  std::size_t steps() const { return t_; }

 private:
  struct Slot {
    Tensor param;
    bool decay;
    std::vector<double> m;
    std::vector<double> v;
  };
  std::vector<Slot> slots_;
  OptimizerConfig config_;
  std::size_t t_ = 0;
};

struct StepResult {
  double loss = 0.0;  // mean over the batch
  std::size_t correct = 0;
};

std::size_t argmax(std::span<const double> values);

/// Forward + backward on every sample, then one optimizer update.
StepResult train_step(std::span<const PreparedCloud* const> batch, const ModelParams& params, AdamW& optimizer,
                      double lr, Rng& rng);

/// Predicted class of each sample, no tape.
std::vector<std::size_t> predict(std::span<const PreparedCloud> samples, const ModelParams& params);

}  // namespace hemb
