#include "ssni/eps.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <functional>
#include <mutex>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <thread>

#include <nlohmann/json.hpp>

#include "ssni/io.hpp"
#include "ssni/parallel.hpp"
#include "ssni/rng.hpp"
#include "ssni/schedule.hpp"

namespace ssni {

ReweightStats ReweightStats::from_norms(std::vector<double> norms, int t_s, int n_draws) {
  if (norms.empty())
    throw std::invalid_argument("reweight stats: empty norm set");
  std::sort(norms.begin(), norms.end());
  ReweightStats s;
  s.count = norms.size();
  s.min = norms.front();
  s.max = norms.back();
  double acc = 0.0;
  for (double v : norms) acc += v;
  s.mean = acc / static_cast<double>(norms.size());
  s.norms = std::move(norms);
  s.t_s = t_s;
  s.n_draws = n_draws;
  return s;
}

EPSEstimate eps_estimate(const ScoreEstimator& score, const Tensor& x,
                         const EpsOptions& opt, std::uint64_t key) {
  const NoiseSchedule& sched = score.schedule();
  if (opt.t_s < 1 || opt.t_s > sched.T)
    throw std::invalid_argument("eps_estimate: t_s=" + std::to_string(opt.t_s) +
                                " outside [1," + std::to_string(sched.T) + "]");
  if (opt.n_draws < 1)
    throw std::invalid_argument("eps_estimate: n_draws must be >= 1");

  Tensor acc(x.shape);
  for (int d = 0; d < opt.n_draws; ++d) {
    RandomStream rng(derive_key({key, 0x657073ULL, static_cast<std::uint64_t>(d)}));
    int t = opt.deterministic_t_max
                ? opt.t_s
                : 1 + static_cast<int>(rng.next_u64() %
                                       static_cast<std::uint64_t>(opt.t_s));
    Tensor s;
    if (opt.score_perturbed) {
      Tensor noise = rng.gaussian_like(x);
      Tensor x_t = forward_diffuse(x, t, noise, sched);
      s = score.score(x_t, t);
    } else {
      s = score.score(x, t);
    }
    if (!all_finite(s.data))
      throw std::runtime_error("eps_estimate: non-finite score at draw " +
                               std::to_string(d) + ", t=" + std::to_string(t));
    for (std::size_t i = 0; i < acc.numel(); ++i) acc.data[i] += s.data[i];
  }
  double inv = 1.0 / static_cast<double>(opt.n_draws);
  for (double& v : acc.data) v *= inv;

  EPSEstimate est;
  est.norm = l2_norm(acc);
  est.vector = std::move(acc);
  est.n_draws = opt.n_draws;
  est.t_s = opt.t_s;
  return est;
}

std::vector<std::uint64_t> index_keys(std::uint64_t seed, std::size_t rows) {
  std::vector<std::uint64_t> keys(rows);
  for (std::size_t i = 0; i < rows; ++i) keys[i] = derive_key({seed, i});
  return keys;
}

std::vector<double> eps_norm_batch(const ScoreEstimator& score, const Tensor& xs,
                                   const EpsOptions& opt,
                                   std::span<const std::uint64_t> keys, int workers) {
  std::size_t rows = batch_rows(xs);
  if (keys.size() != rows)
    throw std::invalid_argument("eps_norm_batch: key count != batch rows");
  std::vector<double> norms(rows, 0.0);
  run_rows(rows, workers, [&](std::size_t i) {
    norms[i] = eps_estimate(score, batch_row(xs, i), opt, keys[i]).norm;
  });
  return norms;
}

double single_score_norm(const ScoreEstimator& score, const Tensor& x, int t_eval) {
  const NoiseSchedule& sched = score.schedule();
  if (t_eval < 1 || t_eval > sched.T)
    throw std::invalid_argument("single_score_norm: t_eval outside [1,T]");
  return l2_norm(score.score(x, t_eval));
}

ReweightStats calibrate_reference(const ScoreEstimator& score, const Tensor& validation,
                                  const EpsOptions& opt, std::uint64_t seed,
                                  int workers) {
  std::size_t rows = batch_rows(validation);
  if (rows == 0)
    throw std::invalid_argument("calibrate_reference: empty validation set");
  auto keys = index_keys(seed, rows);
  auto norms = eps_norm_batch(score, validation, opt, keys, workers);
  return ReweightStats::from_norms(std::move(norms), opt.t_s, opt.n_draws);
}

std::string reweight_stats_to_json(const ReweightStats& stats) {
  nlohmann::json j;
  j["tS"] = stats.t_s;
  j["n_draws"] = stats.n_draws;
  j["count"] = stats.count;
  j["min"] = stats.min;
  j["max"] = stats.max;
  j["mean"] = stats.mean;
  j["norms"] = stats.norms;
  return j.dump(2) + "\n";
}

ReweightStats reweight_stats_from_json(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  ReweightStats s;
  s.t_s = j.at("tS").get<int>();
  s.n_draws = j.at("n_draws").get<int>();
  s.count = j.at("count").get<std::size_t>();
  s.min = j.at("min").get<double>();
  s.max = j.at("max").get<double>();
  s.mean = j.at("mean").get<double>();
  s.norms = j.at("norms").get<std::vector<double>>();
  if (s.count != s.norms.size())
    throw std::runtime_error("calibration file: count does not match norms length");
  if (!std::is_sorted(s.norms.begin(), s.norms.end()))
    throw std::runtime_error("calibration file: norms must be sorted");
  return s;
}

void save_reweight_stats(const std::string& path, const ReweightStats& stats) {
  io::atomic_write_file(path, reweight_stats_to_json(stats));
}

ReweightStats load_reweight_stats(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open calibration file " + path);
  std::ostringstream ss;
  ss << is.rdbuf();
  return reweight_stats_from_json(ss.str());
}

}  // namespace ssni
