#include "hemb/ssm.hpp"

#include <cmath>
#include <string>

#include "hemb/errors.hpp"

namespace hemb {

namespace {

// Discretized coefficients: a_bar = exp(delta * A), b_bar = f * B with
// f = expm1(delta * A) / A.
struct ZohValue {
  double a_bar;
  double f;
};

ZohValue zoh_value(double a, double delta) {
  const double z = delta * a;
  if (std::abs(z) < kZohSeriesThreshold) return {std::exp(z), delta * (1.0 + 0.5 * z)};
  return {std::exp(z), std::expm1(z) / a};
}

// Partials of a_bar and f with respect to delta and A, from the cached values.
struct ZohPartials {
  double da_ddelta;
  double da_da;
  double df_ddelta;
  double df_da;
};

ZohPartials zoh_partials(double a, double delta, const ZohValue& v) {
  const double z = delta * a;
  ZohPartials p{};
  p.da_ddelta = a * v.a_bar;
  p.da_da = delta * v.a_bar;
  if (std::abs(z) < kZohSeriesThreshold) {
    p.df_ddelta = 1.0 + z;
    p.df_da = 0.5 * delta * delta;
    return p;
  }
  p.df_ddelta = v.a_bar;
  // df/dA = delta^2 * (z e^z - expm1(z)) / z^2; the ratio cancels badly for small z.
  double ratio;
  if (std::abs(z) < 1e-3) {
    ratio = 0.5 + z * (1.0 / 3.0 + z * (1.0 / 8.0 + z / 30.0));
  } else {
    ratio = (z * v.a_bar - v.f * a) / (z * z);
  }
  p.df_da = delta * delta * ratio;
  return p;
}

void require_stable(double a, double delta) {
  if (!(a < 0.0)) throw ContractError("zoh_discretize needs A < 0, got " + std::to_string(a));
  if (!(delta > 0.0)) throw ContractError("zoh_discretize needs delta > 0, got " + std::to_string(delta));
}

double inverse_softplus(double y) { return y + std::log(-std::expm1(-y)); }

}  // namespace

ZohStep zoh_discretize(double a, double b, double delta) {
  require_stable(a, delta);
  const ZohValue v = zoh_value(a, delta);
  return {v.a_bar, v.f * b};
}

DiscreteLti discretize(const ContinuousLti& s) {
  const std::size_t cn = s.channels * s.states;
  if (s.a.size() != cn || s.b.size() != cn || s.c.size() != cn || s.delta.size() != s.channels ||
      s.d.size() != s.channels) {
    throw ShapeError("continuous system arrays do not match channels x states");
  }
  DiscreteLti out;
  out.channels = s.channels;
  out.states = s.states;
  out.a_bar.resize(cn);
  out.b_bar.resize(cn);
  out.c = s.c;
  out.d = s.d;
  for (std::size_t ch = 0; ch < s.channels; ++ch) {
    for (std::size_t n = 0; n < s.states; ++n) {
      const std::size_t i = ch * s.states + n;
      const ZohStep step = zoh_discretize(s.a[i], s.b[i], s.delta[ch]);
      out.a_bar[i] = step.a_bar;
      out.b_bar[i] = step.b_bar;
    }
  }
  return out;
}

Tensor recurrent_scan(const Tensor& x, const DiscreteLti& s) {
  if (x.rank() != 2 || x.dim(0) != s.channels) {
    throw ShapeError("recurrent_scan input " + shape_str(x.shape()) + " for " + std::to_string(s.channels) +
                     " channels");
  }
  const std::size_t len = x.dim(1);
  auto xv = x.data();
  std::vector<double> y(s.channels * len);
  std::vector<double> h(s.states);
  for (std::size_t ch = 0; ch < s.channels; ++ch) {
    std::fill(h.begin(), h.end(), 0.0);
    const double* ab = s.a_bar.data() + ch * s.states;
    const double* bb = s.b_bar.data() + ch * s.states;
    const double* cc = s.c.data() + ch * s.states;
    for (std::size_t k = 0; k < len; ++k) {
      const double xk = xv[ch * len + k];
      double acc = 0.0;
      for (std::size_t n = 0; n < s.states; ++n) {
        h[n] = ab[n] * h[n] + bb[n] * xk;
        acc += cc[n] * h[n];
      }
      y[ch * len + k] = acc + s.d[ch] * xk;
    }
  }
  return Tensor({s.channels, len}, std::move(y));
}

Tensor lti_conv_kernel(const DiscreteLti& s, std::size_t length) {
  if (length == 0) throw ShapeError("kernel length must be positive");
  std::vector<double> kernel(s.channels * length);
  std::vector<double> power(s.states);
  for (std::size_t ch = 0; ch < s.channels; ++ch) {
    const double* ab = s.a_bar.data() + ch * s.states;
    const double* bb = s.b_bar.data() + ch * s.states;
    const double* cc = s.c.data() + ch * s.states;
    // power[n] tracks a_bar^j * b_bar.
    for (std::size_t n = 0; n < s.states; ++n) power[n] = bb[n];
    for (std::size_t j = 0; j < length; ++j) {
      double acc = 0.0;
      for (std::size_t n = 0; n < s.states; ++n) {
        acc += cc[n] * power[n];
        power[n] *= ab[n];
      }
      kernel[ch * length + j] = acc;
    }
  }
  return Tensor({s.channels, length}, std::move(kernel));
}

Tensor lti_conv_apply(const Tensor& x, const Tensor& kernel, std::span<const double> d) {
  if (x.rank() != 2 || kernel.rank() != 2 || x.dim(0) != kernel.dim(0)) {
    throw ShapeError("lti_conv_apply of " + shape_str(x.shape()) + " with kernel " + shape_str(kernel.shape()));
  }
  if (x.dim(1) != kernel.dim(1)) {
    throw ShapeError("kernel length " + std::to_string(kernel.dim(1)) + " does not match sequence length " +
                     std::to_string(x.dim(1)));
  }
  if (d.size() != x.dim(0)) throw ShapeError("feedthrough size does not match channel count");
  const std::size_t channels = x.dim(0);
  const std::size_t len = x.dim(1);
  auto xv = x.data();
  auto kv = kernel.data();
  std::vector<double> y(channels * len);
  for (std::size_t ch = 0; ch < channels; ++ch) {
    const double* xr = xv.data() + ch * len;
    const double* kr = kv.data() + ch * len;
    for (std::size_t k = 0; k < len; ++k) {
      double acc = 0.0;
      for (std::size_t j = 0; j <= k; ++j) acc += kr[k - j] * xr[j];
      y[ch * len + k] = acc + d[ch] * xr[k];
    }
  }
  return Tensor({channels, len}, std::move(y));
}

SsmParams SsmParams::init(std::size_t channels, std::size_t states, Rng& rng) {
  SsmParams p;
  std::vector<double> a_log(channels * states);
  for (std::size_t ch = 0; ch < channels; ++ch) {
    for (std::size_t n = 0; n < states; ++n) a_log[ch * states + n] = std::log(static_cast<double>(n + 1));
  }
  p.a_log = Tensor({channels, states}, std::move(a_log), true);

  const double proj_std = 1.0 / std::sqrt(static_cast<double>(channels));
  auto gaussian = [&](std::size_t count, double stddev) {
    std::vector<double> v(count);
    for (auto& x : v) x = rng.normal(0.0, stddev);
    return v;
  };
  p.w_b = Tensor({states, channels}, gaussian(states * channels, proj_std), true);
  p.w_c = Tensor({states, channels}, gaussian(states * channels, proj_std), true);
  p.w_delta = Tensor({channels, channels}, gaussian(channels * channels, 0.1 * proj_std), true);

  // softplus(delta_bias) log-uniform in [0.001, 0.1].
  std::vector<double> bias(channels);
  for (auto& b : bias) b = inverse_softplus(std::exp(rng.uniform(std::log(1e-3), std::log(1e-1))));
  p.delta_bias = Tensor({channels}, std::move(bias), true);
  p.d = Tensor::ones({channels}, true);
  return p;
}

Tensor SsmParams::a() const { return neg(exp(a_log)); }

Tensor lti_conv_kernel(const SsmParams&, std::size_t) {
  throw ContractError("a global convolution kernel is undefined for input-dependent (selective) parameters");
}

SelectiveProjections generate_selective_params(const Tensor& tokens, const SsmParams& params) {
  SelectiveProjections out;
  out.b = linear(tokens, params.w_b);
  out.c = linear(tokens, params.w_c);
  out.delta = softplus(linear(tokens, params.w_delta, params.delta_bias));
  return out;
}

Tensor selective_scan(const Tensor& u, const Tensor& delta, const Tensor& a, const Tensor& b, const Tensor& c,
                      const Tensor& d) {
  if (u.rank() != 2 || a.rank() != 2) throw ShapeError("selective_scan expects L x C input and C x N state matrix");
  const std::size_t len = u.dim(0);
  const std::size_t channels = u.dim(1);
  const std::size_t states = a.dim(1);
  if (delta.shape() != u.shape() || a.dim(0) != channels || b.shape() != Shape{len, states} ||
      c.shape() != Shape{len, states} || d.shape() != Shape{channels}) {
    throw ShapeError("selective_scan operand shapes disagree: u " + shape_str(u.shape()) + ", delta " +
                     shape_str(delta.shape()) + ", A " + shape_str(a.shape()) + ", B " + shape_str(b.shape()) +
                     ", C " + shape_str(c.shape()) + ", D " + shape_str(d.shape()));
  }
  auto uv = u.data();
  auto dv = delta.data();
  auto av = a.data();
  auto bv = b.data();
  auto cv = c.data();
  auto Dv = d.data();
  for (double x : av) {
    if (!(x < 0.0)) throw ContractError("selective_scan needs A < 0");
  }
  for (double x : dv) {
    if (!(x > 0.0)) throw ContractError("selective_scan needs delta > 0");
  }

  // States and coefficients of every step are kept for the backward pass: L x C x N.
  std::vector<double> hist(len * channels * states);
  std::vector<ZohValue> coeff(len * channels * states);
  std::vector<double> y(len * channels);
  for (std::size_t k = 0; k < len; ++k) {
    for (std::size_t ch = 0; ch < channels; ++ch) {
      const double uk = uv[k * channels + ch];
      const double dk = dv[k * channels + ch];
      double* h = hist.data() + (k * channels + ch) * states;
      const double* hprev = k ? hist.data() + ((k - 1) * channels + ch) * states : nullptr;
      double acc = 0.0;
      for (std::size_t n = 0; n < states; ++n) {
        const ZohValue t = zoh_value(av[ch * states + n], dk);
        coeff[(k * channels + ch) * states + n] = t;
        const double prev = hprev ? hprev[n] : 0.0;
        h[n] = t.a_bar * prev + t.f * bv[k * states + n] * uk;
        acc += cv[k * states + n] * h[n];
      }
      y[k * channels + ch] = acc + Dv[ch] * uk;
    }
  }

  return Tensor::from_op(
      {len, channels}, std::move(y), {u, delta, a, b, c, d},
      [u, delta, a, b, c, d, hist = std::move(hist), coeff = std::move(coeff), len, channels, states](std::span<const double> gy,
                                                                           std::span<const std::span<double>> gi) {
        auto uv = u.data();
        auto dv = delta.data();
        auto av = a.data();
        auto bv = b.data();
        auto cv = c.data();
        auto Dv = d.data();
        std::span<double> gu = gi[0], gdelta = gi[1], ga = gi[2], gb = gi[3], gc = gi[4], gd = gi[5];
        for (std::size_t ch = 0; ch < channels; ++ch) {
          double gd_acc = 0.0;
          for (std::size_t k = 0; k < len; ++k) {
            const double g = gy[k * channels + ch];
            gd_acc += g * uv[k * channels + ch];
            if (!gu.empty()) gu[k * channels + ch] += Dv[ch] * g;
          }
          if (!gd.empty()) gd[ch] += gd_acc;
          for (std::size_t n = 0; n < states; ++n) {
            const double an = av[ch * states + n];
            double gh = 0.0;
            double ga_acc = 0.0;
            for (std::size_t k = len; k-- > 0;) {
              const std::size_t kc = k * channels + ch;
              const double g = gy[kc];
              const double hk = hist[kc * states + n];
              const double hprev = k ? hist[((k - 1) * channels + ch) * states + n] : 0.0;
              gh += cv[k * states + n] * g;
              if (!gc.empty()) gc[k * states + n] += g * hk;
              const ZohValue t = coeff[kc * states + n];
              const ZohPartials p = zoh_partials(an, dv[kc], t);
              const double uk = uv[kc];
              const double bk = bv[k * states + n];
              const double g_abar = gh * hprev;
              const double g_bbar = gh * uk;
              if (!gu.empty()) gu[kc] += gh * t.f * bk;
              if (!gb.empty()) gb[k * states + n] += g_bbar * t.f;
              const double g_f = g_bbar * bk;
              if (!gdelta.empty()) gdelta[kc] += g_abar * p.da_ddelta + g_f * p.df_ddelta;
              ga_acc += g_abar * p.da_da + g_f * p.df_da;
              gh *= t.a_bar;
            }
            if (!ga.empty()) ga[ch * states + n] += ga_acc;
          }
        }
      });
}

Tensor ssm_tokens(const Tensor& tokens, const SsmParams& params) {
  const SelectiveProjections proj = generate_selective_params(tokens, params);
  return selective_scan(tokens, proj.delta, params.a(), proj.b, proj.c, params.d);
}

Tensor recurrent_scan(const Tensor& x, const SsmParams& params) {
  return transpose(ssm_tokens(transpose(x), params));
}

}  // namespace hemb
