#include "ssni/oracle.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

#include "ssni/nets.hpp"

namespace ssni::oracle {

double GaussianWorld::mean_coef(int t) const { return std::sqrt(schedule.alpha_bar(t)); }

double GaussianWorld::marginal_var(int t) const {
  double ab = schedule.alpha_bar(t);
  return ab * sigma0sq + (1.0 - ab);
}

Tensor posterior_mean(const GaussianWorld& world, const Tensor& x_t, int t) {
  if (!x_t.same_shape(world.mu0))
    throw std::invalid_argument("posterior_mean: shape mismatch");
  double ab = world.schedule.alpha_bar(t);
  double a = std::sqrt(ab);
  double denom = ab * world.sigma0sq + (1.0 - ab);
  Tensor m(x_t.shape);
  for (std::size_t i = 0; i < x_t.numel(); ++i)
    m.data[i] = (a * world.sigma0sq * x_t.data[i] + (1.0 - ab) * world.mu0.data[i]) / denom;
  return m;
}

double log_marginal_density(const GaussianWorld& world, const Tensor& x, int t) {
  if (!x.same_shape(world.mu0))
    throw std::invalid_argument("log_marginal_density: shape mismatch");
  double a = world.mean_coef(t);
  double var = world.marginal_var(t);
  double q = 0.0;
  for (std::size_t i = 0; i < x.numel(); ++i) {
    double d = x.data[i] - a * world.mu0.data[i];
    q += d * d;
  }
  double dim = static_cast<double>(x.numel());
  return -0.5 * q / var - 0.5 * dim * std::log(2.0 * std::numbers::pi * var);
}

Tensor marginal_score(const GaussianWorld& world, const Tensor& x, int t) {
  double a = world.mean_coef(t);
  double var = world.marginal_var(t);
  Tensor s(x.shape);
  for (std::size_t i = 0; i < x.numel(); ++i)
    s.data[i] = -(x.data[i] - a * world.mu0.data[i]) / var;
  return s;
}

double check_lemma2(const GaussianWorld& world, const Tensor& x, int t) {
  if (t < 1 || t > world.schedule.T)
    throw std::invalid_argument("check_lemma2: t outside [1,T]");
  Tensor lhs = analytic_gaussian_score(world.mu0, world.sigma0sq, world.schedule, x, t);
  double ab = world.schedule.alpha_bar(t);
  double g = 1.0 / (1.0 - ab);
  Tensor pm = posterior_mean(world, x, t);
  double sq = 0.0;
  for (std::size_t i = 0; i < x.numel(); ++i) {
    double rhs = -g * x.data[i] + g * std::sqrt(ab) * pm.data[i];
    double d = lhs.data[i] - rhs;
    sq += d * d;
  }
  return std::sqrt(sq);
}

SeparationTable check_score_norm_separation(const GaussianWorld& world, const Tensor& x,
                                            const std::vector<std::pair<int, int>>& t_pairs) {
  SeparationTable table;
  table.rows.reserve(t_pairs.size());
  for (auto [t1, t2] : t_pairs) {
    SeparationRow row;
    row.t1 = t1;
    row.t2 = t2;
    row.dt = std::abs(t2 - t1);
    double n1 = l2_norm(marginal_score(world, x, t1));
    double n2 = l2_norm(marginal_score(world, x, t2));
    row.gap = std::abs(n1 - n2);
    table.rows.push_back(row);
  }
  for (std::size_t i = 1; i < table.rows.size(); ++i) {
    const auto& prev = table.rows[i - 1];
    const auto& cur = table.rows[i];
    if (cur.t1 == prev.t1 && cur.t2 >= prev.t2 && cur.gap + 1e-12 < prev.gap)
      table.monotone = false;
  }
  return table;
}

double score_norm_ratio(const GaussianWorld& world, const Tensor& x, int t) {
  double nx = l2_norm(x);
  if (nx == 0.0)
    throw std::invalid_argument("score_norm_ratio: undefined at the origin");
  return l2_norm(marginal_score(world, x, t)) / nx;
}

bool check_special_case(const Denoiser& d, const NoiseSchedule& schedule,
                        const PurifierConfig& cfg, const Tensor& xs, int t_star,
                        std::uint64_t seed, std::uint64_t baseline_seed) {
  std::size_t rows = batch_rows(xs);

  // sample-specific route: constant reweighting spec -> plan of t_star
  ReweightSpec spec;
  spec.kind = ReweightKind::constant;
  spec.t_star = t_star;
  ReweightStats stats = ReweightStats::from_norms({1.0}, 1, 1);
  std::vector<double> norms(rows, 1.0);
  NoisePlan plan = plan_for_batch(norms, stats, spec, schedule.T);
  Tensor specific = purify(xs, plan, d, schedule, cfg, content_row_keys(xs, seed));

  // sample-shared route: one fixed level for every row
  PurifierConfig shared_cfg = cfg;
  for (auto& run : shared_cfg.runs) {
    run.use_plan = false;
    run.fixed_level = t_star;
  }
  NoisePlan unused = NoisePlan::constant(rows, 0);
  Tensor shared = purify(xs, unused, d, schedule, shared_cfg,
                         content_row_keys(xs, baseline_seed));

  return bits_equal(specific, shared);
}

}  // namespace ssni::oracle
