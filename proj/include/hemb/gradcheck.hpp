#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "hemb/nn.hpp"
#include "hemb/rng.hpp"

namespace hemb {

struct GradcheckOptions {
  double step = 1e-5;                  // central-difference half width
  std::size_t entries_per_tensor = 16;  // sampled coordinates per leaf
  double floor = 1e-6;                 // gradient norm below which errors count as absolute
};

/**
 * Worst per-tensor relative error between backward() and central differences.
 *
 * For each leaf a random subset of coordinates is perturbed; the error is
 * ||g_analytic - g_numeric|| / max(||g_analytic||, ||g_numeric||, floor) over
 * that subset. `loss` must rebuild the graph on every call.
 */
double gradient_error(const std::function<Tensor()>& loss, const ParamList& leaves, Rng& rng,
                      const GradcheckOptions& options = {});

struct GradcheckRow {
  std::string module;
  double worst = 0.0;
  double threshold = 0.0;
  bool passed() const { return worst < threshold; }
};

inline constexpr double kModuleGradTolerance = 1e-4;
inline constexpr double kModelGradTolerance = 1e-3;

/// One row per module, then one for the end-to-end toy model
/// (depth 1, C = 16, L = 8, K = 4). Each row is the worst over `seeds`.
std::vector<GradcheckRow> run_gradcheck(std::uint64_t seed, std::size_t seeds = 1,
                                        const GradcheckOptions& options = {});

}  // namespace hemb
