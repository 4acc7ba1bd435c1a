#pragma once

#include <span>

#include "ssni/eps.hpp"
#include "ssni/schedule.hpp"

namespace ssni {

enum class ReweightKind { constant, linear, sigmoid };

// Maps an EPS norm and the shared level t* to a per-sample level. Levels are
// rounded to the nearest integer (ties to even) and clamped into [0, T].
struct ReweightSpec {
  ReweightKind kind = ReweightKind::constant;
  int t_star = 100;
  double b = 0.0;     // bias, >= 0; lifts the attainable maximum above t*
  double tau = 20.0;  // sigmoid temperature, > 0
};

// level = clamp(round(((norm - xi_min) / (xi_max - xi_min)) * t* + b)) where
// xi_min/xi_max fold the incoming norm into the validation extremes, keeping
// the t* coefficient in [0,1]. A degenerate spread returns round(b).
int reweight_linear(double norm, const ReweightStats& stats, const ReweightSpec& spec,
                    int T);

// level = clamp(round((t* + b) / (1 + exp(-(norm - mean)/tau)))).
int reweight_sigmoid(double norm, const ReweightStats& stats, const ReweightSpec& spec,
                     int T);

// level = t* for every input (the sample-shared special case).
int reweight_constant(const ReweightSpec& spec);

NoisePlan plan_for_batch(std::span<const double> norms, const ReweightStats& stats,
                         const ReweightSpec& spec, int T);

// Nearest-integer rounding with ties to even, shared by the reweighting maps.
int round_ties_even(double v);

}  // namespace ssni
