#include "ssni/reweight.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace ssni {

namespace {

int clamp_level(double v, int T) {
  if (v < 0.0) return 0;
  if (v > static_cast<double>(T)) return T;
  return static_cast<int>(v);
}

}  // namespace

int round_ties_even(double v) {
  // default FP environment rounds to nearest, ties to even
  return static_cast<int>(std::nearbyint(v));
}

int reweight_linear(double norm, const ReweightStats& stats, const ReweightSpec& spec,
                    int T) {
  if (spec.kind != ReweightKind::linear)
    throw std::invalid_argument("reweight_linear: spec kind mismatch");
  double xi_min = std::min(norm, stats.min);
  double xi_max = std::max(norm, stats.max);
  if (xi_max == xi_min) return clamp_level(round_ties_even(spec.b), T);
  double coef = (norm - xi_min) / (xi_max - xi_min);
  return clamp_level(round_ties_even(coef * static_cast<double>(spec.t_star) + spec.b), T);
}

int reweight_sigmoid(double norm, const ReweightStats& stats, const ReweightSpec& spec,
                     int T) {
  if (spec.kind != ReweightKind::sigmoid)
    throw std::invalid_argument("reweight_sigmoid: spec kind mismatch");
  if (!(spec.tau > 0.0))
    throw std::invalid_argument("reweight_sigmoid: tau must be positive");
  double z = 1.0 + std::exp(-(norm - stats.mean) / spec.tau);
  double level = (static_cast<double>(spec.t_star) + spec.b) / z;
  return clamp_level(round_ties_even(level), T);
}

int reweight_constant(const ReweightSpec& spec) {
  if (spec.kind != ReweightKind::constant)
    throw std::invalid_argument("reweight_constant: spec kind mismatch");
  return spec.t_star;
}

NoisePlan plan_for_batch(std::span<const double> norms, const ReweightStats& stats,
                         const ReweightSpec& spec, int T) {
  NoisePlan plan;
  plan.levels.reserve(norms.size());
  for (std::size_t i = 0; i < norms.size(); ++i) {
    if (!std::isfinite(norms[i]))
      throw std::invalid_argument("plan_for_batch: non-finite norm at row " +
                                  std::to_string(i));
    switch (spec.kind) {
      case ReweightKind::constant:
        plan.levels.push_back(std::clamp(reweight_constant(spec), 0, T));
        break;
      case ReweightKind::linear:
        plan.levels.push_back(reweight_linear(norms[i], stats, spec, T));
        break;
      case ReweightKind::sigmoid:
        plan.levels.push_back(reweight_sigmoid(norms[i], stats, spec, T));
        break;
    }
  }
  return plan;
}

}  // namespace ssni
