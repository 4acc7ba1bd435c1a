#include "ssni/attack.hpp"

#include <algorithm>
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
constexpr std::uint64_t kEpsTag = 0x65707332ULL;
constexpr std::uint64_t kEotTag = 0x656f7431ULL;
constexpr std::uint64_t kBpdaTag = 0x62706461ULL;

double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

void clamp_range(Tensor& x, const AttackSpec& spec) {
  if (!spec.clamp_input) return;
  for (double& v : x.data) v = std::clamp(v, spec.clamp_min, spec.clamp_max);
}

// Affine data of one reverse step x_prev = A x_t + B eps(x_t, t) + const.
struct StepCoef {
  int t = 0;
  double a = 0.0, b = 0.0;
  double guid = 0.0;  // mean-shift coefficient of -(x_t - x_ref_t)
};

StepCoef step_coefficients(Sampler sampler, int t, int t_prev, int stride,
                           double guidance_scale, const NoiseSchedule& schedule) {
  StepCoef c;
  c.t = t;
  double ab_t = schedule.alpha_bar(t);
  double ab_p = schedule.alpha_bar(t_prev);
  if (sampler == Sampler::ddim) {
    c.a = std::sqrt(ab_p / ab_t);
    c.b = std::sqrt(1.0 - ab_p) - c.a * std::sqrt(1.0 - ab_t);
  } else if (stride == 1 && t_prev == t - 1) {
    double beta = schedule.beta(t);
    c.a = 1.0 / std::sqrt(1.0 - beta);
    c.b = -c.a * beta / std::sqrt(1.0 - ab_t);
  } else {
    c.a = std::sqrt(ab_p / ab_t);
    double c_eps = std::sqrt(ab_t / ab_p) * (1.0 - ab_p) / std::sqrt(1.0 - ab_t);
    c.b = c_eps - c.a * std::sqrt(1.0 - ab_t);
  }
  if (guidance_scale > 0.0) c.guid = 2.0 * guidance_scale * schedule.beta(t);
  return c;
}

}  // namespace

void AttackSpec::validate() const {
  if (epsilon < 0.0) throw std::invalid_argument("attack: epsilon must be >= 0");
  if (!(step_size > 0.0)) throw std::invalid_argument("attack: step size must be > 0");
  if (pgd_iters < 0) throw std::invalid_argument("attack: pgd_iters must be >= 0");
  if (eot_iters < 1) throw std::invalid_argument("attack: eot_iters must be >= 1");
  if (surrogate_stride < 1)
    throw std::invalid_argument("attack: surrogate stride must be >= 1");
  if (clamp_input && !(clamp_min < clamp_max))
    throw std::invalid_argument("attack: empty input range");
}

Tensor project_ball(const Tensor& x_adv, const Tensor& x, const AttackSpec& spec) {
  if (!x_adv.same_shape(x))
    throw std::invalid_argument("project_ball: shape mismatch");
  Tensor out = x_adv;
  if (spec.norm == AttackNorm::linf) {
    for (std::size_t i = 0; i < out.numel(); ++i)
      out.data[i] = std::clamp(out.data[i], x.data[i] - spec.epsilon,
                               x.data[i] + spec.epsilon);
  } else {
    double dist_sq = 0.0;
    for (std::size_t i = 0; i < out.numel(); ++i) {
      double d = out.data[i] - x.data[i];
      dist_sq += d * d;
    }
    double dist = std::sqrt(dist_sq);
    if (dist > spec.epsilon) {
      double scale = spec.epsilon / dist;
      for (std::size_t i = 0; i < out.numel(); ++i)
        out.data[i] = x.data[i] + scale * (out.data[i] - x.data[i]);
    }
  }
  clamp_range(out, spec);
  return out;
}

Tensor project_ball_batch(const Tensor& xs_adv, const Tensor& xs, const AttackSpec& spec) {
  if (!xs_adv.same_shape(xs))
    throw std::invalid_argument("project_ball_batch: shape mismatch");
  Tensor out = xs_adv;
  std::size_t rows = batch_rows(xs);
  for (std::size_t i = 0; i < rows; ++i) {
    Tensor proj = project_ball(batch_row(xs_adv, i), batch_row(xs, i), spec);
    set_batch_row(out, i, proj);
  }
  return out;
}

GradientResult surrogate_gradient(const DefensePipeline& defense, const Tensor& xs,
                                  std::span<const int> ys, const NoisePlan& plan,
                                  int stride, std::span<const std::uint64_t> row_keys,
                                  std::uint64_t draw_tag) {
  if (defense.denoiser == nullptr || defense.schedule == nullptr ||
      defense.purifier == nullptr || defense.classifier == nullptr)
    throw std::invalid_argument("surrogate_gradient: incomplete pipeline");
  if (stride < 1) throw std::invalid_argument("surrogate_gradient: stride must be >= 1");
  std::size_t rows = batch_rows(xs);
  if (ys.size() != rows || plan.size() != rows || row_keys.size() != rows)
    throw std::invalid_argument("surrogate_gradient: row count mismatch");

  const NoiseSchedule& sched = *defense.schedule;
  const PurifierConfig& cfg = *defense.purifier;
  cfg.validate(sched.T);
  const Denoiser& den = *defense.denoiser;
  const Classifier& clf = *defense.classifier;

  GradientResult res;
  res.grad = Tensor(xs.shape);
  res.losses.assign(rows, 0.0);
  std::vector<double>& losses = res.losses;

  run_rows(rows, cfg.workers, [&](std::size_t i) {
    struct RunTrace {
      int level = 0;
      double fwd_coef = 0.0;            // sqrt(alpha_bar_level)
      std::vector<Tensor> step_inputs;  // x_t entering each reverse step
      std::vector<StepCoef> coefs;
      Tensor run_input;  // kept for the guidance reference path
    };

    Tensor x = batch_row(xs, i);
    std::vector<RunTrace> traces(cfg.runs.size());

    for (std::size_t r = 0; r < cfg.runs.size(); ++r) {
      const PurifyRun& run = cfg.runs[r];
      RunTrace& tr = traces[r];
      tr.level = run.use_plan ? plan.levels[i] : run.fixed_level;
      if (tr.level == 0) continue;
      tr.run_input = x;
      tr.fwd_coef = std::sqrt(sched.alpha_bar(tr.level));

      RandomStream fwd_rng(derive_key({row_keys[i], draw_tag, r, kForwardTag}));
      Tensor fwd_noise = fwd_rng.gaussian_like(x);
      x = forward_diffuse(x, tr.level, fwd_noise, sched);

      std::vector<int> grid = reverse_time_grid(tr.level, stride);
      for (std::size_t s = 0; s < grid.size(); ++s) {
        int t = grid[s];
        int t_prev = s + 1 < grid.size() ? grid[s + 1] : 0;
        StepCoef coef =
            step_coefficients(cfg.sampler, t, t_prev, stride, run.guidance_scale, sched);
        tr.step_inputs.push_back(x);
        tr.coefs.push_back(coef);

        Tensor eps = den.evaluate(x, t);
        Tensor next(x.shape);
        double sigma = 0.0;
        Tensor noise;
        if (cfg.sampler == Sampler::ddpm && t_prev > 0) {
          sigma = std::sqrt(1.0 - sched.alpha_bar(t) / sched.alpha_bar(t_prev));
          RandomStream step_rng(
              derive_key({row_keys[i], draw_tag, r, kStepTag,
                          static_cast<std::uint64_t>(t)}));
          noise = step_rng.gaussian_like(x);
        }
        Tensor x_ref;
        if (coef.guid > 0.0) {
          RandomStream ref_rng(derive_key({row_keys[i], draw_tag, r, kRefTag,
                                           static_cast<std::uint64_t>(t)}));
          Tensor ref_noise = ref_rng.gaussian_like(x);
          x_ref = forward_diffuse(tr.run_input, t, ref_noise, sched);
        }
        for (std::size_t j = 0; j < x.numel(); ++j) {
          double v = coef.a * x.data[j] + coef.b * eps.data[j];
          if (sigma > 0.0) v += sigma * noise.data[j];
          if (coef.guid > 0.0) v -= coef.guid * (x.data[j] - x_ref.data[j]);
          next.data[j] = v;
        }
        x = next;
      }
    }

    // classification loss at the purified point
    auto logits = clf.logits(x);
    std::vector<double> grad_logits(logits.size(), 0.0);
    losses[i] = nn::softmax_cross_entropy(logits, ys[i], grad_logits);
    Tensor g = clf.vjp_input(x, grad_logits);
    if (!all_finite(g.data))
      throw std::runtime_error("surrogate_gradient: non-finite classifier gradient at row " +
                               std::to_string(i));

    // walk the recorded chain backwards
    for (std::size_t rr = cfg.runs.size(); rr-- > 0;) {
      const RunTrace& tr = traces[rr];
      if (tr.level == 0) continue;
      Tensor g_ref_total(g.shape);  // gradient entering via guidance references
      for (std::size_t s = tr.step_inputs.size(); s-- > 0;) {
        const StepCoef& coef = tr.coefs[s];
        const Tensor& x_t = tr.step_inputs[s];
        Tensor jvp = den.vjp_input(x_t, coef.t, g);
        Tensor g_prev(g.shape);
        for (std::size_t j = 0; j < g.numel(); ++j)
          g_prev.data[j] = coef.a * g.data[j] + coef.b * jvp.data[j] -
                           coef.guid * g.data[j];
        if (coef.guid > 0.0) {
          double ref_coef = coef.guid * std::sqrt(sched.alpha_bar(coef.t));
          for (std::size_t j = 0; j < g.numel(); ++j)
            g_ref_total.data[j] += ref_coef * g.data[j];
        }
        g = std::move(g_prev);
      }
      // through the forward diffusion into this run's input
      for (std::size_t j = 0; j < g.numel(); ++j)
        g.data[j] = tr.fwd_coef * g.data[j] + g_ref_total.data[j];
    }
    if (!all_finite(g.data))
      throw std::runtime_error("surrogate_gradient: non-finite gradient at row " +
                               std::to_string(i));
    set_batch_row(res.grad, i, g);
  });

  double acc = 0.0;
  for (double l : losses) acc += l;
  res.mean_loss = rows == 0 ? 0.0 : acc / static_cast<double>(rows);
  return res;
}

namespace {

NoisePlan attack_plan(const DefensePipeline& defense, const Tensor& x_adv,
                      std::span<const std::uint64_t> row_keys, std::uint64_t iter_tag) {
  std::size_t rows = batch_rows(x_adv);
  const ReweightSpec& spec = *defense.reweight;
  if (spec.kind == ReweightKind::constant)
    return NoisePlan::constant(rows, std::clamp(spec.t_star, 0, defense.schedule->T));
  if (defense.score == nullptr || defense.stats == nullptr || defense.eps_opt == nullptr)
    throw std::invalid_argument("attack: reweighting needs score, stats and eps options");
  std::vector<std::uint64_t> eps_keys(rows);
  for (std::size_t i = 0; i < rows; ++i)
    eps_keys[i] = derive_key({row_keys[i], iter_tag, kEpsTag});
  auto norms = eps_norm_batch(*defense.score, x_adv, *defense.eps_opt, eps_keys,
                              defense.purifier->workers);
  return plan_for_batch(norms, *defense.stats, spec, defense.schedule->T);
}

// mean of draws computed as g0 + sum(gj - g0)/N: identical draws average to
// g0 exactly, which the deterministic-defense property relies on
void eot_mean(std::vector<Tensor>& draws, Tensor& out) {
  std::size_t n = draws.size();
  out = draws[0];
  if (n == 1) return;
  Tensor delta(out.shape);
  for (std::size_t j = 1; j < n; ++j)
    for (std::size_t k = 0; k < out.numel(); ++k)
      delta.data[k] += draws[j].data[k] - draws[0].data[k];
  double inv = 1.0 / static_cast<double>(n);
  for (std::size_t k = 0; k < out.numel(); ++k)
    out.data[k] += delta.data[k] * inv;
}

void apply_step(Tensor& x_adv, const Tensor& g, const AttackSpec& spec) {
  std::size_t rows = batch_rows(x_adv);
  if (spec.norm == AttackNorm::linf) {
    for (std::size_t k = 0; k < x_adv.numel(); ++k)
      x_adv.data[k] += spec.step_size * sign(g.data[k]);
  } else {
    for (std::size_t i = 0; i < rows; ++i) {
      auto gi = row_span(g, i);
      double n = l2_norm(gi);
      if (n == 0.0) continue;
      auto xi = row_span(x_adv, i);
      double scale = spec.step_size / n;
      for (std::size_t k = 0; k < xi.size(); ++k) xi[k] += scale * gi[k];
    }
  }
}

}  // namespace

Tensor pgd_eot_attack(const Tensor& xs, std::span<const int> ys,
                      const DefensePipeline& defense, const AttackSpec& spec,
                      std::uint64_t seed) {
  spec.validate();
  if (spec.mode != AttackMode::pgd_eot)
    throw std::invalid_argument("pgd_eot_attack: spec mode mismatch");
  std::size_t rows = batch_rows(xs);
  if (ys.size() != rows) throw std::invalid_argument("attack: label count mismatch");

  Tensor x_adv = xs;
  if (spec.pgd_iters == 0 || spec.epsilon == 0.0) return x_adv;
  auto row_keys = index_keys(seed, rows);

  for (int k = 0; k < spec.pgd_iters; ++k) {
    // reweighting happens once per PGD step, outside the EOT loop
    NoisePlan plan = attack_plan(defense, x_adv, row_keys,
                                 static_cast<std::uint64_t>(k));
    std::vector<Tensor> draws;
    draws.reserve(static_cast<std::size_t>(spec.eot_iters));
    for (int j = 0; j < spec.eot_iters; ++j) {
      std::uint64_t tag = derive_key({kEotTag, static_cast<std::uint64_t>(k),
                                      static_cast<std::uint64_t>(j)});
      draws.push_back(surrogate_gradient(defense, x_adv, ys, plan,
                                         spec.surrogate_stride, row_keys, tag)
                          .grad);
    }
    Tensor g;
    eot_mean(draws, g);
    apply_step(x_adv, g, spec);
    x_adv = project_ball_batch(x_adv, xs, spec);
  }
  return x_adv;
}

Tensor bpda_eot_attack(const Tensor& xs, std::span<const int> ys,
                       const DefensePipeline& defense, const AttackSpec& spec,
                       std::uint64_t seed) {
  spec.validate();
  if (spec.mode != AttackMode::bpda_eot)
    throw std::invalid_argument("bpda_eot_attack: spec mode mismatch");
  if (defense.denoiser == nullptr || defense.schedule == nullptr ||
      defense.purifier == nullptr || defense.classifier == nullptr)
    throw std::invalid_argument("bpda_eot_attack: incomplete pipeline");
  std::size_t rows = batch_rows(xs);
  if (ys.size() != rows) throw std::invalid_argument("attack: label count mismatch");

  Tensor x_adv = xs;
  if (spec.pgd_iters == 0 || spec.epsilon == 0.0) return x_adv;
  auto row_keys = index_keys(seed, rows);
  const PurifierConfig& cfg = *defense.purifier;
  const Classifier& clf = *defense.classifier;

  for (int k = 0; k < spec.pgd_iters; ++k) {
    NoisePlan plan = attack_plan(defense, x_adv, row_keys,
                                 static_cast<std::uint64_t>(k));
    std::vector<Tensor> draws;
    draws.reserve(static_cast<std::size_t>(spec.eot_iters));
    for (int j = 0; j < spec.eot_iters; ++j) {
      // forward pass: the true purifier; backward pass: identity
      std::vector<std::uint64_t> draw_keys(rows);
      for (std::size_t i = 0; i < rows; ++i)
        draw_keys[i] = derive_key({row_keys[i], kBpdaTag,
                                   static_cast<std::uint64_t>(k),
                                   static_cast<std::uint64_t>(j)});
      Tensor purified = purify(x_adv, plan, *defense.denoiser, *defense.schedule,
                               cfg, draw_keys);
      Tensor g(xs.shape);
      run_rows(rows, cfg.workers, [&](std::size_t i) {
        Tensor p = batch_row(purified, i);
        auto logits = clf.logits(p);
        std::vector<double> grad_logits(logits.size(), 0.0);
        nn::softmax_cross_entropy(logits, ys[i], grad_logits);
        set_batch_row(g, i, clf.vjp_input(p, grad_logits));
      });
      draws.push_back(std::move(g));
    }
    Tensor g;
    eot_mean(draws, g);
    apply_step(x_adv, g, spec);
    x_adv = project_ball_batch(x_adv, xs, spec);
  }
  return x_adv;
}

Tensor run_attack(const Tensor& xs, std::span<const int> ys,
                  const DefensePipeline& defense, const AttackSpec& spec,
                  std::uint64_t seed) {
  return spec.mode == AttackMode::pgd_eot ? pgd_eot_attack(xs, ys, defense, spec, seed)
                                          : bpda_eot_attack(xs, ys, defense, spec, seed);
}

}  // namespace ssni
