#pragma once

#include <cstdint>
#include <optional>
#include <span>

#include "ssni/purify.hpp"

namespace ssni {

enum class AttackNorm { linf, l2 };
enum class AttackMode { pgd_eot, bpda_eot };

struct AttackSpec {
  AttackNorm norm = AttackNorm::linf;
  double epsilon = 8.0 / 255.0;  // budget in input units
  double step_size = 2.0 / 255.0;
  int pgd_iters = 200;
  int eot_iters = 20;
  int surrogate_stride = 5;  // reverse steps collapsed for gradient computation
  AttackMode mode = AttackMode::pgd_eot;
  // valid input range clip; on for image data, off for unbounded vectors
  bool clamp_input = true;
  double clamp_min = 0.0;
  double clamp_max = 1.0;

  void validate() const;
};

// Projection onto the epsilon-ball around x (single sample), then the valid
// input range when enabled.
Tensor project_ball(const Tensor& x_adv, const Tensor& x, const AttackSpec& spec);
// Row-wise projection; the l2 ball is per sample.
Tensor project_ball_batch(const Tensor& xs_adv, const Tensor& xs, const AttackSpec& spec);

// Defense components an adaptive attack sees. `score`/`stats` may be null
// when the reweighting spec is constant (the plan does not depend on norms).
struct DefensePipeline {
  const ScoreEstimator* score = nullptr;
  const ReweightStats* stats = nullptr;
  const ReweightSpec* reweight = nullptr;
  const EpsOptions* eps_opt = nullptr;
  const Denoiser* denoiser = nullptr;
  const NoiseSchedule* schedule = nullptr;
  const PurifierConfig* purifier = nullptr;
  const Classifier* classifier = nullptr;
};

struct GradientResult {
  Tensor grad;  // dL/dx per row
  std::vector<double> losses;
  double mean_loss = 0.0;
};

// Backpropagates the classification loss through diffusion, a strided reverse
// chain with the same injected noise, and the classifier. The integer plan is
// treated as a constant. Noise draws are keyed (row_key, draw_tag, ...), so a
// fixed draw_tag reproduces one stochastic realization exactly.
GradientResult surrogate_gradient(const DefensePipeline& defense, const Tensor& xs,
                                  std::span<const int> ys, const NoisePlan& plan,
                                  int stride, std::span<const std::uint64_t> row_keys,
                                  std::uint64_t draw_tag);

// Adaptive PGD+EOT: the plan is recomputed from EPS norms once per PGD
// iteration, outside the EOT loop; gradients are EOT-averaged surrogate
// gradients.
Tensor pgd_eot_attack(const Tensor& xs, std::span<const int> ys,
                      const DefensePipeline& defense, const AttackSpec& spec,
                      std::uint64_t seed);

// Adaptive BPDA+EOT: the forward pass runs the true purifier; the backward
// pass treats it as the identity.
Tensor bpda_eot_attack(const Tensor& xs, std::span<const int> ys,
                       const DefensePipeline& defense, const AttackSpec& spec,
                       std::uint64_t seed);

Tensor run_attack(const Tensor& xs, std::span<const int> ys,
                  const DefensePipeline& defense, const AttackSpec& spec,
                  std::uint64_t seed);

}  // namespace ssni
