#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ssni/nets.hpp"
#include "ssni/tensor.hpp"

namespace ssni {

// Monte-Carlo estimate of the expected score of a sample under noise levels
// t ~ U{1..t_s}. Each draw perturbs the input by forward diffusion and scores
// the perturbed copy; the flags below expose the degenerate variants used for
// comparisons.
struct EpsOptions {
  int t_s = 20;
  int n_draws = 64;
  // score the diffused copy x_t (default) or the raw input x
  bool score_perturbed = true;
  // always evaluate at t = t_s instead of sampling t (comparison runs only)
  bool deterministic_t_max = false;
};

struct EPSEstimate {
  Tensor vector;     // same shape as the input sample
  double norm = 0;   // Euclidean norm of `vector`
  int n_draws = 0;
  int t_s = 0;
};

// Validation-set EPS-norm statistics used as the reweighting reference.
struct ReweightStats {
  std::vector<double> norms;  // sorted ascending
  double min = 0, max = 0, mean = 0;
  std::size_t count = 0;
  int t_s = 0, n_draws = 0;  // calibration provenance

  static ReweightStats from_norms(std::vector<double> norms, int t_s, int n_draws);
};

EPSEstimate eps_estimate(const ScoreEstimator& score, const Tensor& x,
                         const EpsOptions& opt, std::uint64_t key);

// Substream keys for batch rows derived from (seed, row index).
std::vector<std::uint64_t> index_keys(std::uint64_t seed, std::size_t rows);

// Row i uses keys[i]; rows are independent given their substreams.
std::vector<double> eps_norm_batch(const ScoreEstimator& score, const Tensor& xs,
                                   const EpsOptions& opt,
                                   std::span<const std::uint64_t> keys,
                                   int workers = 1);

// || s(x, t_eval) ||, the single-level alternative to EPS.
double single_score_norm(const ScoreEstimator& score, const Tensor& x, int t_eval);

ReweightStats calibrate_reference(const ScoreEstimator& score, const Tensor& validation,
                                  const EpsOptions& opt, std::uint64_t seed,
                                  int workers = 1);

// Canonical JSON: {tS, n_draws, count, min, max, mean, norms[]}.
std::string reweight_stats_to_json(const ReweightStats& stats);
ReweightStats reweight_stats_from_json(const std::string& text);
void save_reweight_stats(const std::string& path, const ReweightStats& stats);
ReweightStats load_reweight_stats(const std::string& path);

}  // namespace ssni
