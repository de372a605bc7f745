#pragma once

#include <cstddef>
#include <vector>

#include "hemb/rng.hpp"
#include "hemb/tensor.hpp"

namespace hemb {

/// Below this |delta * A| the input coefficient switches to its series form.
inline constexpr double kZohSeriesThreshold = 1e-8;

/// One discretized (A, B) pair for a diagonal state entry.
struct ZohStep {
  double a_bar = 0.0;
  double b_bar = 0.0;
};

/**
 * Zero-order-hold discretization of a scalar (diagonal) system.
 *
 * a_bar = exp(delta * a), b_bar = (exp(delta * a) - 1) / a * b. The division
 * is replaced by delta * (1 + delta * a / 2) * b near the removable
 * singularity. Requires a < 0 and delta > 0.
 */
ZohStep zoh_discretize(double a, double b, double delta);

/// Fixed continuous system: per-channel diagonal A, per-channel B and C rows.
struct ContinuousLti {
  std::size_t channels = 0;
  std::size_t states = 0;
  std::vector<double> a;      // channels x states, all < 0
  std::vector<double> b;      // channels x states
  std::vector<double> c;      // channels x states
  std::vector<double> delta;  // channels, > 0
  std::vector<double> d;      // channels
};

/// Fixed discrete system (what the recurrence and the kernel consume).
struct DiscreteLti {
  std::size_t channels = 0;
  std::size_t states = 0;
  std::vector<double> a_bar;  // channels x states
  std::vector<double> b_bar;  // channels x states
  std::vector<double> c;      // channels x states
  std::vector<double> d;      // channels
};

DiscreteLti discretize(const ContinuousLti& system);

/// h_k = a_bar * h_{k-1} + b_bar * x_k, y_k = <c, h_k> + d * x_k; x is C x L.
Tensor recurrent_scan(const Tensor& x, const DiscreteLti& system);

/// (c.b_bar, c.a_bar.b_bar, ..., c.a_bar^{L-1}.b_bar) per channel; C x L.
Tensor lti_conv_kernel(const DiscreteLti& system, std::size_t length);

/// Causal convolution y_k = sum_{j<=k} K_{k-j} x_j + d x_k; x and kernel C x L.
Tensor lti_conv_apply(const Tensor& x, const Tensor& kernel, std::span<const double> d);

/**
 * Trainable input-conditioned SSM.
 *
 * A is kept as a_log with A = -exp(a_log), so it stays strictly negative
 * under any optimizer step.
 */
struct SsmParams {
  Tensor a_log;       // C x N
  Tensor w_b;         // N x C
  Tensor w_c;         // N x C
  Tensor w_delta;     // C x C
  Tensor delta_bias;  // C
  Tensor d;           // C

  static SsmParams init(std::size_t channels, std::size_t states, Rng& rng);

  std::size_t channels() const { return a_log.dim(0); }
  std::size_t states() const { return a_log.dim(1); }
  Tensor a() const;
};

/// Rejects the request: input-dependent parameters define no global kernel.
[[noreturn]] Tensor lti_conv_kernel(const SsmParams& params, std::size_t length);

/// Per-step B, C (L x N) and delta (L x C) for a token-major input (L x C).
struct SelectiveProjections {
  Tensor b;
  Tensor c;
  Tensor delta;
};

SelectiveProjections generate_selective_params(const Tensor& tokens, const SsmParams& params);

/**
 * Selective recurrence with a fused backward pass. Token-major layout:
 * u, delta: L x C; a: C x N; b, c: L x N; d: C. Returns L x C.
 */
Tensor selective_scan(const Tensor& u, const Tensor& delta, const Tensor& a, const Tensor& b, const Tensor& c,
                      const Tensor& d);

/// Full selective SSM on a token-major sequence (L x C).
Tensor ssm_tokens(const Tensor& tokens, const SsmParams& params);

/// Full selective SSM on a channel-major sequence (C x L).
Tensor recurrent_scan(const Tensor& x, const SsmParams& params);

}  // namespace hemb
