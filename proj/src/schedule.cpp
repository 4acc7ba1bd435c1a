#include "ssni/schedule.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace ssni {

double NoiseSchedule::beta(int t) const {
  if (t < 1 || t > T)
    throw std::invalid_argument("schedule: beta index " + std::to_string(t) +
                                " outside [1," + std::to_string(T) + "]");
  return betas[static_cast<std::size_t>(t) - 1];
}

double NoiseSchedule::alpha_bar(int t) const {
  if (t < 0 || t > T)
    throw std::invalid_argument("schedule: alpha_bar index " + std::to_string(t) +
                                " outside [0," + std::to_string(T) + "]");
  return alpha_bars[static_cast<std::size_t>(t)];
}

NoiseSchedule make_schedule(std::vector<double> betas) {
  if (betas.empty()) throw std::invalid_argument("schedule: empty beta sequence");
  for (double b : betas)
    if (!(b > 0.0 && b < 1.0))
      throw std::invalid_argument("schedule: beta outside (0,1)");

  NoiseSchedule s;
  s.T = static_cast<int>(betas.size());
  s.betas = std::move(betas);
  s.alpha_bars.resize(s.betas.size() + 1);
  s.alpha_bars[0] = 1.0;
  for (std::size_t i = 0; i < s.betas.size(); ++i)
    s.alpha_bars[i + 1] = s.alpha_bars[i] * (1.0 - s.betas[i]);
  return s;
}

NoiseSchedule make_linear_schedule(int T, double beta_start, double beta_end) {
  if (T < 1) throw std::invalid_argument("schedule: T must be positive");
  if (!(beta_start > 0.0 && beta_start < 1.0) || !(beta_end > 0.0 && beta_end < 1.0))
    throw std::invalid_argument("schedule: betas outside (0,1)");
  if (beta_start > beta_end)
    throw std::invalid_argument("schedule: beta_start > beta_end");

  std::vector<double> betas(static_cast<std::size_t>(T));
  if (T == 1) {
    betas[0] = beta_start;
  } else {
    for (int i = 0; i < T; ++i)
      betas[static_cast<std::size_t>(i)] =
          beta_start + (beta_end - beta_start) * static_cast<double>(i) /
                           static_cast<double>(T - 1);
  }
  return make_schedule(std::move(betas));
}

Tensor forward_diffuse(const Tensor& x0, int t, const Tensor& noise,
                       const NoiseSchedule& schedule) {
  if (t < 0 || t > schedule.T)
    throw std::invalid_argument("forward_diffuse: t=" + std::to_string(t) +
                                " outside [0," + std::to_string(schedule.T) + "]");
  if (!x0.same_shape(noise))
    throw std::invalid_argument("forward_diffuse: noise shape " + shape_str(noise.shape) +
                                " does not match input " + shape_str(x0.shape));
  if (t == 0) return x0;  // alpha_bar_0 = 1: identity, no noise term

  double ab = schedule.alpha_bar(t);
  double a = std::sqrt(ab);
  double b = std::sqrt(1.0 - ab);
  Tensor out(x0.shape);
  for (std::size_t i = 0; i < x0.numel(); ++i)
    out.data[i] = a * x0.data[i] + b * noise.data[i];
  return out;
}

Tensor forward_diffuse_batch(const Tensor& x0, const NoisePlan& plan,
                             const Tensor& noise, const NoiseSchedule& schedule) {
  if (!x0.same_shape(noise))
    throw std::invalid_argument("forward_diffuse_batch: noise shape mismatch");
  std::size_t rows = batch_rows(x0);
  if (plan.size() != rows)
    throw std::invalid_argument("forward_diffuse_batch: plan length " +
                                std::to_string(plan.size()) + " != batch rows " +
                                std::to_string(rows));

  Tensor out = x0;
  for (std::size_t i = 0; i < rows; ++i) {
    int t = plan.levels[i];
    if (t < 0 || t > schedule.T)
      throw std::invalid_argument("forward_diffuse_batch: plan entry " +
                                  std::to_string(t) + " at row " + std::to_string(i) +
                                  " outside [0," + std::to_string(schedule.T) + "]");
    if (t == 0) continue;
    double ab = schedule.alpha_bar(t);
    double a = std::sqrt(ab);
    double b = std::sqrt(1.0 - ab);
    auto xi = row_span(x0, i);
    auto ni = row_span(noise, i);
    auto oi = row_span(out, i);
    for (std::size_t j = 0; j < xi.size(); ++j) oi[j] = a * xi[j] + b * ni[j];
  }
  return out;
}

}  // namespace ssni
