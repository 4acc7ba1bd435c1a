#include "ssni/purify.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <stdexcept>
#include <string>

#include "ssni/parallel.hpp"
#include "ssni/rng.hpp"

namespace ssni {

namespace {

constexpr std::uint64_t kForwardTag = 0x666f7277ULL;
constexpr std::uint64_t kStepTag = 0x73746570ULL;
constexpr std::uint64_t kRefTag = 0x72656664ULL;
constexpr std::uint64_t kEpsTag = 0x65707331ULL;

void check_t(int t, int T, const char* who) {
  if (t < 1 || t > T)
    throw std::invalid_argument(std::string(who) + ": t=" + std::to_string(t) +
                                " outside [1," + std::to_string(T) + "]");
}

// Stochastic jump t -> t_prev through the predicted clean point; reduces to
// the single-step ancestral update at t_prev = t-1 (up to float op order).
Tensor ddpm_jump(const Denoiser& d, const Tensor& x_t, int t, int t_prev,
                 const Tensor& noise, const NoiseSchedule& schedule) {
  double ab_t = schedule.alpha_bar(t);
  double ab_p = schedule.alpha_bar(t_prev);
  Tensor eps = d.evaluate(x_t, t);
  double inv_sqrt_ab_t = 1.0 / std::sqrt(ab_t);
  double sqrt_ab_p = std::sqrt(ab_p);
  double c_eps = std::sqrt(ab_t / ab_p) * (1.0 - ab_p) / std::sqrt(1.0 - ab_t);
  double sigma = std::sqrt(1.0 - ab_t / ab_p);
  bool add_noise = t_prev > 0;
  Tensor out(x_t.shape);
  for (std::size_t i = 0; i < x_t.numel(); ++i) {
    double x0_hat = (x_t.data[i] - std::sqrt(1.0 - ab_t) * eps.data[i]) * inv_sqrt_ab_t;
    out.data[i] = sqrt_ab_p * x0_hat + c_eps * eps.data[i];
    if (add_noise) out.data[i] += sigma * noise.data[i];
  }
  return out;
}

}  // namespace

void PurifierConfig::validate(int T) const {
  if (runs.empty()) throw std::invalid_argument("purifier: runs must be nonempty");
  if (reverse_stride < 1)
    throw std::invalid_argument("purifier: reverse stride must be >= 1");
  for (const auto& run : runs) {
    if (!run.use_plan && (run.fixed_level < 0 || run.fixed_level > T))
      throw std::invalid_argument("purifier: fixed level " +
                                  std::to_string(run.fixed_level) + " outside [0," +
                                  std::to_string(T) + "]");
    if (run.guidance_scale < 0.0)
      throw std::invalid_argument("purifier: guidance scale must be >= 0");
    if (run.guidance_scale > 0.0 && (sampler != Sampler::ddpm || reverse_stride != 1))
      throw std::invalid_argument(
          "purifier: guidance requires the ddpm sampler at stride 1");
  }
}

Tensor ddpm_reverse_step(const Denoiser& d, const Tensor& x_t, int t,
                         const Tensor& noise, const NoiseSchedule& schedule) {
  check_t(t, schedule.T, "ddpm_reverse_step");
  if (!x_t.same_shape(noise))
    throw std::invalid_argument("ddpm_reverse_step: noise shape mismatch");
  double beta = schedule.beta(t);
  double ab = schedule.alpha_bar(t);
  Tensor eps = d.evaluate(x_t, t);
  double mean_scale = 1.0 / std::sqrt(1.0 - beta);
  double eps_coef = beta / std::sqrt(1.0 - ab);
  double noise_coef = t > 1 ? std::sqrt(beta) : 0.0;  // suppressed at t = 1
  Tensor out(x_t.shape);
  for (std::size_t i = 0; i < x_t.numel(); ++i) {
    out.data[i] = mean_scale * (x_t.data[i] - eps_coef * eps.data[i]);
    if (t > 1) out.data[i] += noise_coef * noise.data[i];
  }
  return out;
}

Tensor ddim_reverse_step(const Denoiser& d, const Tensor& x_t, int t, int t_prev,
                         const NoiseSchedule& schedule) {
  check_t(t, schedule.T, "ddim_reverse_step");
  if (t_prev < 0 || t_prev >= t)
    throw std::invalid_argument("ddim_reverse_step: need 0 <= t_prev < t");
  double ab_t = schedule.alpha_bar(t);
  double ab_p = schedule.alpha_bar(t_prev);
  Tensor eps = d.evaluate(x_t, t);
  double inv_sqrt_ab_t = 1.0 / std::sqrt(ab_t);
  double sqrt_ab_p = std::sqrt(ab_p);
  double sqrt_one_minus_ab_p = std::sqrt(1.0 - ab_p);
  double sqrt_one_minus_ab_t = std::sqrt(1.0 - ab_t);
  Tensor out(x_t.shape);
  for (std::size_t i = 0; i < x_t.numel(); ++i) {
    double x0_hat = (x_t.data[i] - sqrt_one_minus_ab_t * eps.data[i]) * inv_sqrt_ab_t;
    out.data[i] = sqrt_ab_p * x0_hat + sqrt_one_minus_ab_p * eps.data[i];
  }
  return out;
}

Tensor guided_reverse_step(const Denoiser& d, const Tensor& x_t, int t,
                           const Tensor& x_ref_t, double scale, const Tensor& noise,
                           const NoiseSchedule& schedule) {
  check_t(t, schedule.T, "guided_reverse_step");
  if (!x_t.same_shape(x_ref_t))
    throw std::invalid_argument("guided_reverse_step: reference shape mismatch");
  if (scale < 0.0)
    throw std::invalid_argument("guided_reverse_step: scale must be >= 0");
  Tensor out = ddpm_reverse_step(d, x_t, t, noise, schedule);
  if (scale == 0.0) return out;
  // mean shift -scale * sigma_t^2 * grad_{x_t} ||x_t - x_ref_t||^2
  double sigma_sq = schedule.beta(t);
  double coef = scale * sigma_sq * 2.0;
  for (std::size_t i = 0; i < x_t.numel(); ++i)
    out.data[i] -= coef * (x_t.data[i] - x_ref_t.data[i]);
  return out;
}

std::vector<int> reverse_time_grid(int level, int stride) {
  if (level < 0) throw std::invalid_argument("reverse_time_grid: negative level");
  if (stride < 1) throw std::invalid_argument("reverse_time_grid: stride must be >= 1");
  std::vector<int> ts;
  for (int t = level; t > 0; t -= stride) ts.push_back(t);
  return ts;
}

std::vector<std::uint64_t> content_row_keys(const Tensor& xs, std::uint64_t seed) {
  std::size_t rows = batch_rows(xs);
  std::vector<std::uint64_t> keys(rows);
  for (std::size_t i = 0; i < rows; ++i)
    keys[i] = derive_key({seed, content_key(row_span(xs, i))});
  return keys;
}

Tensor purify(const Tensor& xs, const NoisePlan& plan, const Denoiser& d,
              const NoiseSchedule& schedule, const PurifierConfig& cfg,
              std::span<const std::uint64_t> row_keys) {
  cfg.validate(schedule.T);
  std::size_t rows = batch_rows(xs);
  if (plan.size() != rows)
    throw std::invalid_argument("purify: plan length " + std::to_string(plan.size()) +
                                " != batch rows " + std::to_string(rows));
  if (row_keys.size() != rows)
    throw std::invalid_argument("purify: key count != batch rows");
  for (std::size_t i = 0; i < rows; ++i)
    if (plan.levels[i] < 0 || plan.levels[i] > schedule.T)
      throw std::invalid_argument("purify: plan entry " +
                                  std::to_string(plan.levels[i]) + " at row " +
                                  std::to_string(i) + " outside [0," +
                                  std::to_string(schedule.T) + "]");

  Tensor out = xs;
  run_rows(rows, cfg.workers, [&](std::size_t i) {
    Tensor x = batch_row(xs, i);
    for (std::size_t r = 0; r < cfg.runs.size(); ++r) {
      const PurifyRun& run = cfg.runs[r];
      int level = run.use_plan ? plan.levels[i] : run.fixed_level;
      if (level == 0) continue;  // untouched: purification is the identity

      Tensor run_input = x;
      RandomStream fwd_rng(derive_key({row_keys[i], r, kForwardTag}));
      Tensor fwd_noise = fwd_rng.gaussian_like(x);
      x = forward_diffuse(x, level, fwd_noise, schedule);

      std::vector<int> grid = reverse_time_grid(level, cfg.reverse_stride);
      for (std::size_t s = 0; s < grid.size(); ++s) {
        int t = grid[s];
        int t_prev = s + 1 < grid.size() ? grid[s + 1] : 0;
        if (cfg.sampler == Sampler::ddim) {
          x = ddim_reverse_step(d, x, t, t_prev, schedule);
          continue;
        }
        RandomStream step_rng(derive_key({row_keys[i], r, kStepTag,
                                          static_cast<std::uint64_t>(t)}));
        Tensor noise = step_rng.gaussian_like(x);
        if (run.guidance_scale > 0.0) {
          RandomStream ref_rng(derive_key({row_keys[i], r, kRefTag,
                                           static_cast<std::uint64_t>(t)}));
          Tensor ref_noise = ref_rng.gaussian_like(x);
          Tensor x_ref_t = forward_diffuse(run_input, t, ref_noise, schedule);
          x = guided_reverse_step(d, x, t, x_ref_t, run.guidance_scale, noise, schedule);
        } else if (cfg.reverse_stride == 1) {
          x = ddpm_reverse_step(d, x, t, noise, schedule);
        } else {
          x = ddpm_jump(d, x, t, t_prev, noise, schedule);
        }
      }
    }
    set_batch_row(out, i, x);
  });
  return out;
}

DefendResult defend(const Tensor& xs, const ScoreEstimator& score,
                    const ReweightStats& stats, const ReweightSpec& spec,
                    const EpsOptions& eps_opt, const Denoiser& d,
                    const NoiseSchedule& schedule, const PurifierConfig& cfg,
                    const Classifier& classifier, std::uint64_t seed,
                    DefendTimings* timings) {
  using clock = std::chrono::steady_clock;
  std::size_t rows = batch_rows(xs);
  DefendResult res;
  auto row_keys = content_row_keys(xs, seed);

  auto t0 = clock::now();
  if (spec.kind == ReweightKind::constant) {
    res.eps_norms.assign(rows, 0.0);
    res.plan = NoisePlan::constant(rows, std::clamp(spec.t_star, 0, schedule.T));
  } else {
    std::vector<std::uint64_t> eps_keys(rows);
    for (std::size_t i = 0; i < rows; ++i)
      eps_keys[i] = derive_key({row_keys[i], kEpsTag});
    res.eps_norms = eps_norm_batch(score, xs, eps_opt, eps_keys, cfg.workers);
    res.plan = plan_for_batch(res.eps_norms, stats, spec, schedule.T);
  }
  auto t1 = clock::now();
  res.purified = purify(xs, res.plan, d, schedule, cfg, row_keys);
  auto t2 = clock::now();

  res.labels.resize(rows);
  run_rows(rows, cfg.workers, [&](std::size_t i) {
    res.labels[i] = classifier.predict(batch_row(res.purified, i));
  });
  auto t3 = clock::now();

  if (timings != nullptr) {
    timings->reweight_seconds = std::chrono::duration<double>(t1 - t0).count();
    timings->purify_seconds = std::chrono::duration<double>(t2 - t1).count();
    timings->classify_seconds = std::chrono::duration<double>(t3 - t2).count();
  }
  return res;
}

}  // namespace ssni
