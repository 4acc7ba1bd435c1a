#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "ssni/attack.hpp"
#include "ssni/harness/dataset.hpp"
#include "ssni/nets.hpp"
#include "ssni/purify.hpp"

namespace ssni {

// Configuration problems map to CLI exit code 2; runtime failures to 1.
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

struct ModelPaths {
  std::string denoiser;
  std::string classifier;
};

struct EpsConfig {
  EpsOptions options;
  // score backing: "derived" (denoiser) or "analytic" (Gaussian closed form)
  ScoreBacking backing = ScoreBacking::derived;
  std::vector<double> analytic_mu{0.0};
  double analytic_sigma_sq = 1.0;
};

struct ReweightConfig {
  ReweightSpec spec;
  std::string calibration;  // path of the calibration JSON
};

struct EvalConfig {
  std::size_t subset_size = 512;
  std::vector<std::uint64_t> seeds{1, 2, 3};
};

struct SweepConfig {
  std::vector<double> budgets;  // perturbation budgets for the norm sweep
  std::size_t batch = 128;
};

// Parsed, validated run configuration. Unknown keys anywhere in the file are
// rejected by name; input paths are checked per subcommand at load time.
struct RunConfig {
  int schema_version = 1;
  std::string output_dir = "out";
  bool deterministic = true;
  int workers = 1;

  DatasetSpec dataset;
  NoiseSchedule schedule;
  ModelPaths models;
  TrainHyper train;
  EpsConfig eps;
  ReweightConfig reweight;
  PurifierConfig purifier;
  AttackSpec attack;
  EvalConfig eval;
  SweepConfig sweep;

  std::string config_hash;  // hash of the canonical serialized form

  int effective_workers() const { return deterministic ? 1 : workers; }
};

// Input roles a subcommand consumes; referenced paths must exist at load time.
enum class ConfigInput : unsigned {
  none = 0,
  denoiser = 1u << 0,
  classifier = 1u << 1,
  calibration = 1u << 2,
  dataset_dir = 1u << 3,
};

inline ConfigInput operator|(ConfigInput a, ConfigInput b) {
  return static_cast<ConfigInput>(static_cast<unsigned>(a) | static_cast<unsigned>(b));
}
inline bool has_input(ConfigInput set, ConfigInput flag) {
  return (static_cast<unsigned>(set) & static_cast<unsigned>(flag)) != 0;
}

RunConfig parse_run_config(const std::string& json_text, ConfigInput required);
RunConfig load_run_config(const std::string& path, ConfigInput required);

}  // namespace ssni
