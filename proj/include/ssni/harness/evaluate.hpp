#pragma once

#include <optional>
#include <string>
#include <vector>

#include "ssni/attack.hpp"
#include "ssni/harness/dataset.hpp"

namespace ssni {

struct EvalTimings {
  double per_image_purify_seconds = 0.0;
  double reweight_overhead_seconds = 0.0;
};

struct EvalReport {
  double standard_accuracy = 0.0;
  double robust_accuracy = 0.0;
  int n_samples = 0;
  std::uint64_t seed = 0;
  EvalTimings timings;
  std::string config_hash;
};

struct PerSampleRow {
  std::size_t sample_id = 0;  // index into the source dataset
  double eps_norm = 0.0;
  int level = 0;
  bool clean_correct = false;
  bool robust_correct = false;
  double wall_ms = 0.0;
};

struct EvalOutput {
  EvalReport report;
  std::vector<PerSampleRow> rows;
};

// Indices of the fixed evaluation subset, drawn without replacement by seed.
std::vector<std::size_t> fixed_subset(std::size_t dataset_size, std::size_t subset_size,
                                      std::uint64_t seed);

// Standard accuracy on the fixed subset, plus robust accuracy when an attack
// spec is given (robust equals standard without one).
EvalOutput evaluate(const DefensePipeline& defense, const Dataset& dataset,
                    const std::optional<AttackSpec>& attack, std::uint64_t seed,
                    std::size_t subset_size, const std::string& config_hash);

struct MeanStd {
  double mean = 0.0;
  double stddev = 0.0;
};

MeanStd mean_std(std::span<const double> values);

struct SeedSummary {
  MeanStd standard;
  MeanStd robust;
  std::vector<EvalReport> reports;
};

// Repeats evaluate() across seeds and aggregates mean/standard deviation.
SeedSummary evaluate_seeds(const DefensePipeline& defense, const Dataset& dataset,
                           const std::optional<AttackSpec>& attack,
                           std::span<const std::uint64_t> seeds, std::size_t subset_size,
                           const std::string& config_hash);

struct OverheadReport {
  double baseline_per_image_seconds = 0.0;  // constant-level defense
  double ssni_per_image_seconds = 0.0;
  double reweight_per_image_seconds = 0.0;
  double delta_seconds = 0.0;
  double ratio = 0.0;  // ssni / baseline
};

// Wall-clock comparison of the defense with and without per-sample
// reweighting on a warmed-up batch.
OverheadReport measure_overhead(const DefensePipeline& defense,
                                const ReweightSpec& baseline_spec, const Tensor& batch,
                                std::uint64_t seed);

// Serialization (canonical JSON / CSV, written atomically).
std::string eval_report_to_json(const EvalReport& report);
EvalReport eval_report_from_json(const std::string& text);
void save_eval_report(const std::string& path, const EvalReport& report);
void save_per_sample_csv(const std::string& path, const std::vector<PerSampleRow>& rows);

}  // namespace ssni
