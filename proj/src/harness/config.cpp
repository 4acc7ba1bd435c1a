#include "ssni/harness/config.hpp"

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

namespace ssni {

namespace {

using nlohmann::json;

void reject_unknown_keys(const json& obj, const std::set<std::string>& allowed,
                         const std::string& scope) {
  for (const auto& [key, value] : obj.items()) {
    if (!allowed.contains(key))
      throw ConfigError("config: unknown key \"" +
                        (scope.empty() ? key : scope + "." + key) + "\"");
  }
}

const json* maybe(const json& obj, const char* key) {
  auto it = obj.find(key);
  return it == obj.end() ? nullptr : &*it;
}

template <typename T>
void read_into(const json& obj, const char* key, T& out) {
  if (const json* v = maybe(obj, key)) out = v->get<T>();
}

std::uint64_t fnv1a(const std::string& text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i) {
    s[static_cast<std::size_t>(i)] = digits[v & 0xf];
    v >>= 4;
  }
  return s;
}

DatasetSpec parse_dataset(const json& j) {
  reject_unknown_keys(j, {"kind", "n", "seed", "noise", "mu", "sigma", "dir"}, "dataset");
  DatasetSpec spec;
  std::string kind = "two_moons";
  read_into(j, "kind", kind);
  spec.kind = dataset_kind_from_string(kind);
  read_into(j, "n", spec.n);
  read_into(j, "seed", spec.seed);
  read_into(j, "noise", spec.noise);
  read_into(j, "mu", spec.mu);
  read_into(j, "sigma", spec.sigma);
  read_into(j, "dir", spec.dir);
  return spec;
}

NoiseSchedule parse_schedule(const json& j) {
  reject_unknown_keys(j, {"T", "beta_start", "beta_end", "betas"}, "schedule");
  if (const json* betas = maybe(j, "betas"))
    return make_schedule(betas->get<std::vector<double>>());
  int T = 1000;
  double beta_start = 1e-4, beta_end = 0.02;
  read_into(j, "T", T);
  read_into(j, "beta_start", beta_start);
  read_into(j, "beta_end", beta_end);
  return make_linear_schedule(T, beta_start, beta_end);
}

TrainHyper parse_train(const json& j) {
  reject_unknown_keys(j,
                      {"steps", "batch_size", "lr", "hidden", "blocks", "base_channels",
                       "time_embed_dim", "holdout_frac"},
                      "train");
  TrainHyper h;
  read_into(j, "steps", h.steps);
  read_into(j, "batch_size", h.batch_size);
  read_into(j, "lr", h.lr);
  read_into(j, "hidden", h.hidden);
  read_into(j, "blocks", h.blocks);
  read_into(j, "base_channels", h.base_channels);
  read_into(j, "time_embed_dim", h.time_embed_dim);
  read_into(j, "holdout_frac", h.holdout_frac);
  return h;
}

EpsConfig parse_eps(const json& j) {
  reject_unknown_keys(j,
                      {"t_s", "n_draws", "score_perturbed", "deterministic_t_max",
                       "score_backing", "analytic_mu", "analytic_sigma_sq"},
                      "eps");
  EpsConfig c;
  read_into(j, "t_s", c.options.t_s);
  read_into(j, "n_draws", c.options.n_draws);
  read_into(j, "score_perturbed", c.options.score_perturbed);
  read_into(j, "deterministic_t_max", c.options.deterministic_t_max);
  if (const json* backing = maybe(j, "score_backing")) {
    std::string s = backing->get<std::string>();
    if (s == "derived")
      c.backing = ScoreBacking::derived;
    else if (s == "analytic")
      c.backing = ScoreBacking::analytic;
    else
      throw ConfigError("config: eps.score_backing must be \"derived\" or \"analytic\"");
  }
  read_into(j, "analytic_mu", c.analytic_mu);
  read_into(j, "analytic_sigma_sq", c.analytic_sigma_sq);
  return c;
}

ReweightConfig parse_reweight(const json& j) {
  reject_unknown_keys(j, {"kind", "t_star", "b", "tau", "calibration"}, "reweight");
  ReweightConfig c;
  if (const json* kind = maybe(j, "kind")) {
    std::string s = kind->get<std::string>();
    if (s == "constant")
      c.spec.kind = ReweightKind::constant;
    else if (s == "linear")
      c.spec.kind = ReweightKind::linear;
    else if (s == "sigmoid")
      c.spec.kind = ReweightKind::sigmoid;
    else
      throw ConfigError("config: reweight.kind must be constant, linear or sigmoid");
  }
  read_into(j, "t_star", c.spec.t_star);
  read_into(j, "b", c.spec.b);
  read_into(j, "tau", c.spec.tau);
  read_into(j, "calibration", c.calibration);
  if (c.spec.t_star < 0) throw ConfigError("config: reweight.t_star must be >= 0");
  if (c.spec.b < 0.0) throw ConfigError("config: reweight.b must be >= 0");
  if (c.spec.kind == ReweightKind::sigmoid && !(c.spec.tau > 0.0))
    throw ConfigError("config: reweight.tau must be > 0");
  return c;
}

PurifierConfig parse_purifier(const json& j, bool deterministic, int workers) {
  reject_unknown_keys(j, {"sampler", "reverse_stride", "runs"}, "purifier");
  PurifierConfig cfg;
  if (const json* sampler = maybe(j, "sampler")) {
    std::string s = sampler->get<std::string>();
    if (s == "ddpm")
      cfg.sampler = Sampler::ddpm;
    else if (s == "ddim")
      cfg.sampler = Sampler::ddim;
    else
      throw ConfigError("config: purifier.sampler must be \"ddpm\" or \"ddim\"");
  }
  if (const json* stride = maybe(j, "reverse_stride")) {
    if (stride->is_string()) {
      if (stride->get<std::string>() != "full")
        throw ConfigError("config: purifier.reverse_stride must be an integer or \"full\"");
      cfg.reverse_stride = 1;
    } else {
      cfg.reverse_stride = stride->get<int>();
    }
  }
  if (const json* runs = maybe(j, "runs")) {
    cfg.runs.clear();
    std::size_t idx = 0;
    for (const json& rj : *runs) {
      reject_unknown_keys(rj, {"level", "guidance_scale"},
                          "purifier.runs[" + std::to_string(idx) + "]");
      PurifyRun run;
      if (const json* level = maybe(rj, "level")) {
        if (level->is_string()) {
          if (level->get<std::string>() != "plan")
            throw ConfigError("config: run level must be \"plan\" or an integer");
          run.use_plan = true;
        } else {
          run.use_plan = false;
          run.fixed_level = level->get<int>();
        }
      }
      read_into(rj, "guidance_scale", run.guidance_scale);
      cfg.runs.push_back(run);
      ++idx;
    }
    if (cfg.runs.empty()) throw ConfigError("config: purifier.runs must be nonempty");
  }
  cfg.workers = deterministic ? 1 : workers;
  return cfg;
}

AttackSpec parse_attack(const json& j) {
  reject_unknown_keys(j,
                      {"norm", "epsilon", "step_size", "pgd_iters", "eot_iters",
                       "surrogate_stride", "mode", "clamp_input", "clamp_min",
                       "clamp_max"},
                      "attack");
  AttackSpec spec;
  if (const json* norm = maybe(j, "norm")) {
    std::string s = norm->get<std::string>();
    if (s == "linf")
      spec.norm = AttackNorm::linf;
    else if (s == "l2")
      spec.norm = AttackNorm::l2;
    else
      throw ConfigError("config: attack.norm must be \"linf\" or \"l2\"");
  }
  read_into(j, "epsilon", spec.epsilon);
  read_into(j, "step_size", spec.step_size);
  read_into(j, "pgd_iters", spec.pgd_iters);
  read_into(j, "eot_iters", spec.eot_iters);
  read_into(j, "surrogate_stride", spec.surrogate_stride);
  if (const json* mode = maybe(j, "mode")) {
    std::string s = mode->get<std::string>();
    if (s == "pgd_eot")
      spec.mode = AttackMode::pgd_eot;
    else if (s == "bpda_eot")
      spec.mode = AttackMode::bpda_eot;
    else
      throw ConfigError("config: attack.mode must be \"pgd_eot\" or \"bpda_eot\"");
  }
  read_into(j, "clamp_input", spec.clamp_input);
  read_into(j, "clamp_min", spec.clamp_min);
  read_into(j, "clamp_max", spec.clamp_max);
  try {
    spec.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  return spec;
}

EvalConfig parse_eval(const json& j) {
  reject_unknown_keys(j, {"subset_size", "seeds"}, "eval");
  EvalConfig c;
  read_into(j, "subset_size", c.subset_size);
  read_into(j, "seeds", c.seeds);
  if (c.subset_size == 0) throw ConfigError("config: eval.subset_size must be >= 1");
  if (c.seeds.empty()) throw ConfigError("config: eval.seeds must be nonempty");
  return c;
}

SweepConfig parse_sweep(const json& j) {
  reject_unknown_keys(j, {"budgets", "batch"}, "sweep");
  SweepConfig c;
  read_into(j, "budgets", c.budgets);
  read_into(j, "batch", c.batch);
  return c;
}

void require_path(const std::string& path, const std::string& field) {
  if (path.empty())
    throw ConfigError("config: missing required path \"" + field + "\"");
  if (!std::filesystem::exists(path))
    throw ConfigError("config: " + field + " path does not exist: " + path);
}

}  // namespace

RunConfig parse_run_config(const std::string& json_text, ConfigInput required) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config: invalid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("config: top level must be an object");
  reject_unknown_keys(j,
                      {"schema_version", "output_dir", "deterministic", "workers",
                       "dataset", "schedule", "models", "train", "eps", "reweight",
                       "purifier", "attack", "eval", "sweep"},
                      "");

  RunConfig cfg;
  read_into(j, "schema_version", cfg.schema_version);
  if (cfg.schema_version != 1)
    throw ConfigError("config: unsupported schema_version " +
                      std::to_string(cfg.schema_version));
  read_into(j, "output_dir", cfg.output_dir);
  read_into(j, "deterministic", cfg.deterministic);
  read_into(j, "workers", cfg.workers);
  if (cfg.workers < 1) throw ConfigError("config: workers must be >= 1");

  if (const json* v = maybe(j, "dataset")) cfg.dataset = parse_dataset(*v);
  cfg.schedule = maybe(j, "schedule") != nullptr ? parse_schedule(*maybe(j, "schedule"))
                                                 : make_linear_schedule(1000, 1e-4, 0.02);
  if (const json* v = maybe(j, "models")) {
    reject_unknown_keys(*v, {"denoiser", "classifier"}, "models");
    read_into(*v, "denoiser", cfg.models.denoiser);
    read_into(*v, "classifier", cfg.models.classifier);
  }
  if (const json* v = maybe(j, "train")) cfg.train = parse_train(*v);
  if (const json* v = maybe(j, "eps")) cfg.eps = parse_eps(*v);
  if (const json* v = maybe(j, "reweight")) cfg.reweight = parse_reweight(*v);
  cfg.purifier = maybe(j, "purifier") != nullptr
                     ? parse_purifier(*maybe(j, "purifier"), cfg.deterministic, cfg.workers)
                     : PurifierConfig{};
  cfg.purifier.workers = cfg.effective_workers();
  if (const json* v = maybe(j, "attack")) cfg.attack = parse_attack(*v);
  if (const json* v = maybe(j, "eval")) cfg.eval = parse_eval(*v);
  if (const json* v = maybe(j, "sweep")) cfg.sweep = parse_sweep(*v);

  try {
    cfg.purifier.validate(cfg.schedule.T);
    if (cfg.eps.options.t_s < 1 || cfg.eps.options.t_s > cfg.schedule.T)
      throw std::invalid_argument("eps.t_s outside [1,T]");
    if (cfg.eps.options.n_draws < 1)
      throw std::invalid_argument("eps.n_draws must be >= 1");
    if (cfg.reweight.spec.t_star > cfg.schedule.T)
      throw std::invalid_argument("reweight.t_star exceeds schedule T");
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }

  if (has_input(required, ConfigInput::denoiser))
    require_path(cfg.models.denoiser, "models.denoiser");
  if (has_input(required, ConfigInput::classifier))
    require_path(cfg.models.classifier, "models.classifier");
  if (has_input(required, ConfigInput::calibration))
    require_path(cfg.reweight.calibration, "reweight.calibration");
  if (has_input(required, ConfigInput::dataset_dir) ||
      cfg.dataset.kind == DatasetKind::directory)
    require_path(cfg.dataset.dir, "dataset.dir");

  cfg.config_hash = hex64(fnv1a(j.dump()));
  return cfg;
}

RunConfig load_run_config(const std::string& path, ConfigInput required) {
  std::ifstream is(path);
  if (!is) throw ConfigError("config: cannot open " + path);
  std::ostringstream ss;
  ss << is.rdbuf();
  return parse_run_config(ss.str(), required);
}

}  // namespace ssni
