#pragma once

#include <span>
#include <vector>

#include "ssni/tensor.hpp"

namespace ssni {

// Forward-diffusion noise schedule: beta_t for t = 1..T together with the
// cumulative products alpha_bar_t = prod_{i=1..t} (1 - beta_i).
//
// Conventions:
//   - alpha_bar_0 = 1 exactly, so t = 0 means "no noising".
//   - alpha_bars is strictly decreasing in t.
// All schedule arithmetic is carried out in 64-bit floats.
struct NoiseSchedule {
  int T = 0;
  std::vector<double> betas;       // betas[t-1] holds beta_t, t = 1..T
  std::vector<double> alpha_bars;  // alpha_bars[t], t = 0..T

  double beta(int t) const;       // t in [1, T]
  double alpha_bar(int t) const;  // t in [0, T]
};

// Linear interpolation beta_start..beta_end inclusive of both endpoints
// (a single-step schedule uses beta_start). Requires T >= 1 and
// 0 < beta_start <= beta_end < 1.
NoiseSchedule make_linear_schedule(int T, double beta_start, double beta_end);

// Schedule from an explicit beta sequence; every beta must be in (0,1).
NoiseSchedule make_schedule(std::vector<double> betas);

// Per-sample integer noise levels for a batch, one entry per row.
struct NoisePlan {
  std::vector<int> levels;

  std::size_t size() const { return levels.size(); }
  static NoisePlan constant(std::size_t rows, int level) {
    return NoisePlan{std::vector<int>(rows, level)};
  }
};

// x_t = sqrt(alpha_bar_t) * x0 + sqrt(1 - alpha_bar_t) * noise, 0 <= t <= T.
Tensor forward_diffuse(const Tensor& x0, int t, const Tensor& noise,
                       const NoiseSchedule& schedule);

// Row i is forward_diffuse(x0[i], plan[i], noise[i]).
Tensor forward_diffuse_batch(const Tensor& x0, const NoisePlan& plan,
                             const Tensor& noise, const NoiseSchedule& schedule);

}  // namespace ssni
