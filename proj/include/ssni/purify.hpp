#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "ssni/eps.hpp"
#include "ssni/nets.hpp"
#include "ssni/reweight.hpp"
#include "ssni/schedule.hpp"

namespace ssni {

enum class Sampler { ddpm, ddim };

// One purification pass: diffuse the run input to a level, then reverse to 0.
// The level comes from the per-sample plan or is fixed for the whole batch;
// a positive guidance scale pulls the reverse mean toward the run input
// diffused to the same step.
struct PurifyRun {
  bool use_plan = true;
  int fixed_level = 0;
  double guidance_scale = 0.0;
};

struct PurifierConfig {
  Sampler sampler = Sampler::ddpm;
  int reverse_stride = 1;  // 1 = full reverse chain
  std::vector<PurifyRun> runs{PurifyRun{}};
  int workers = 1;  // deterministic mode keeps a single worker

  void validate(int T) const;
};

// Ancestral update
//   x_{t-1} = (x_t - (beta_t/sqrt(1-alpha_bar_t)) eps_hat) / sqrt(1-beta_t)
//             + sqrt(beta_t) * noise,
// with the stochastic term suppressed at t = 1.
Tensor ddpm_reverse_step(const Denoiser& d, const Tensor& x_t, int t,
                         const Tensor& noise, const NoiseSchedule& schedule);

// Deterministic update (eta = 0) jumping t -> t_prev via the predicted clean
// point.
Tensor ddim_reverse_step(const Denoiser& d, const Tensor& x_t, int t, int t_prev,
                         const NoiseSchedule& schedule);

// DDPM step whose mean is shifted by -scale * sigma_t^2 * grad of the squared
// distance to the diffused reference, sigma_t^2 = beta_t.
Tensor guided_reverse_step(const Denoiser& d, const Tensor& x_t, int t,
                           const Tensor& x_ref_t, double scale, const Tensor& noise,
                           const NoiseSchedule& schedule);

// Timesteps visited when reversing from `level` with the given stride:
// level, level-stride, ... (the final partial step truncates to 0). Denoiser
// call count is ceil(level/stride).
std::vector<int> reverse_time_grid(int level, int stride);

// Per-row substream keys that follow the sample contents, so permuting batch
// rows permutes outputs.
std::vector<std::uint64_t> content_row_keys(const Tensor& xs, std::uint64_t seed);

// Purifies each row to its plan level and back. Rows with level 0 pass
// through bit-exactly; multi-run configs feed each run's output into the
// next. Noise substreams are keyed (row_key, run, t), so a batched call is
// bit-identical to looping the rows one at a time.
Tensor purify(const Tensor& xs, const NoisePlan& plan, const Denoiser& d,
              const NoiseSchedule& schedule, const PurifierConfig& cfg,
              std::span<const std::uint64_t> row_keys);

struct DefendResult {
  std::vector<int> labels;
  NoisePlan plan;
  Tensor purified;
  std::vector<double> eps_norms;
};

// Wall-clock split of one defend() call.
struct DefendTimings {
  double reweight_seconds = 0.0;  // EPS norms + plan
  double purify_seconds = 0.0;
  double classify_seconds = 0.0;
};

// Full defense: EPS norms -> plan -> purify -> classify. With a constant
// reweighting spec the norm computation is skipped (the plan ignores it).
DefendResult defend(const Tensor& xs, const ScoreEstimator& score,
                    const ReweightStats& stats, const ReweightSpec& spec,
                    const EpsOptions& eps_opt, const Denoiser& d,
                    const NoiseSchedule& schedule, const PurifierConfig& cfg,
                    const Classifier& classifier, std::uint64_t seed,
                    DefendTimings* timings = nullptr);

}  // namespace ssni
