#include "ssni/harness/cli.hpp"

#include <algorithm>
#include <filesystem>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "ssni/harness/classifier.hpp"
#include "ssni/harness/config.hpp"
#include "ssni/harness/evaluate.hpp"
#include "ssni/harness/plot.hpp"
#include "ssni/io.hpp"
#include "ssni/oracle.hpp"
#include "ssni/rng.hpp"

namespace ssni {

namespace {

namespace fs = std::filesystem;

struct CommonArgs {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
};

void add_common(CLI::App* cmd, CommonArgs& args, bool config_required = true) {
  auto* opt = cmd->add_option("--config", args.config, "run configuration JSON");
  if (config_required) opt->required();
  cmd->add_option("--seed", args.seed, "override the run seed");
  cmd->add_option("--out", args.out, "override the output directory");
}

// Loaded components with stable addresses for the non-owning pipeline views.
struct Bundle {
  RunConfig cfg;
  Dataset dataset;
  std::unique_ptr<Denoiser> denoiser;
  std::unique_ptr<MlpClassifier> classifier;
  std::unique_ptr<ScoreEstimator> score;
  ReweightStats stats;
  bool has_stats = false;

  DefensePipeline pipeline() const {
    DefensePipeline p;
    p.score = score.get();
    p.stats = has_stats ? &stats : nullptr;
    p.reweight = &cfg.reweight.spec;
    p.eps_opt = &cfg.eps.options;
    p.denoiser = denoiser.get();
    p.schedule = &cfg.schedule;
    p.purifier = &cfg.purifier;
    p.classifier = classifier.get();
    return p;
  }
};

std::uint64_t run_seed(const RunConfig&, const CommonArgs& args) {
  return args.seed.value_or(0);
}

std::string out_dir(const RunConfig& cfg, const CommonArgs& args) {
  std::string dir = args.out.empty() ? cfg.output_dir : args.out;
  fs::create_directories(dir);
  return dir;
}

std::unique_ptr<Bundle> load_bundle(const CommonArgs& args, ConfigInput required,
                                    bool want_dataset = true) {
  auto b = std::make_unique<Bundle>();
  bool needs_denoiser = has_input(required, ConfigInput::denoiser);
  b->cfg = load_run_config(args.config, required);
  if (want_dataset) b->dataset = make_dataset(b->cfg.dataset);
  if (needs_denoiser) b->denoiser = load_denoiser(b->cfg.models.denoiser);
  if (has_input(required, ConfigInput::classifier))
    b->classifier = load_classifier(b->cfg.models.classifier);
  if (has_input(required, ConfigInput::calibration)) {
    b->stats = load_reweight_stats(b->cfg.reweight.calibration);
    b->has_stats = true;
  }
  if (b->cfg.eps.backing == ScoreBacking::analytic) {
    Tensor mu0({b->cfg.eps.analytic_mu.size()}, b->cfg.eps.analytic_mu);
    b->score = std::make_unique<ScoreEstimator>(ScoreEstimator::analytic(
        std::move(mu0), b->cfg.eps.analytic_sigma_sq, b->cfg.schedule));
  } else if (b->denoiser != nullptr) {
    b->score = std::make_unique<ScoreEstimator>(
        ScoreEstimator::derived(*b->denoiser, b->cfg.schedule));
  }
  return b;
}

int cmd_train_diffusion(const CommonArgs& args) {
  auto cfg = load_run_config(args.config, ConfigInput::none);
  Dataset data = make_dataset(cfg.dataset);
  std::uint64_t seed = args.seed.value_or(0);
  TrainResult result = train_denoiser(data.xs, cfg.schedule, cfg.train, seed);

  std::string dir = out_dir(cfg, args);
  std::string path = cfg.models.denoiser.empty()
                         ? (fs::path(dir) / "denoiser.ckpt").string()
                         : cfg.models.denoiser;
  save_denoiser(path, *result.denoiser);

  nlohmann::json j;
  j["checkpoint"] = path;
  j["steps"] = result.loss_curve.size();
  j["holdout_before"] = result.holdout_before;
  j["holdout_after"] = result.holdout_after;
  if (!result.loss_curve.empty()) j["final_loss"] = result.loss_curve.back();
  j["seed"] = seed;
  j["config_hash"] = cfg.config_hash;
  io::atomic_write_file((fs::path(dir) / "train_diffusion.json").string(),
                        j.dump(2) + "\n");
  std::cout << "denoiser saved to " << path << " (holdout " << result.holdout_before
            << " -> " << result.holdout_after << ")\n";
  return 0;
}

int cmd_train_classifier(const CommonArgs& args) {
  auto cfg = load_run_config(args.config, ConfigInput::none);
  Dataset data = make_dataset(cfg.dataset);
  std::uint64_t seed = args.seed.value_or(0);
  ClassifierTrainResult result = train_classifier(data, cfg.train, seed);

  std::string dir = out_dir(cfg, args);
  std::string path = cfg.models.classifier.empty()
                         ? (fs::path(dir) / "classifier.ckpt").string()
                         : cfg.models.classifier;
  save_classifier(path, *result.classifier);

  nlohmann::json j;
  j["checkpoint"] = path;
  j["steps"] = result.loss_curve.size();
  j["holdout_accuracy"] = result.holdout_accuracy;
  j["seed"] = seed;
  j["config_hash"] = cfg.config_hash;
  io::atomic_write_file((fs::path(dir) / "train_classifier.json").string(),
                        j.dump(2) + "\n");
  std::cout << "classifier saved to " << path << " (holdout accuracy "
            << result.holdout_accuracy << ")\n";
  return 0;
}

int cmd_calibrate(const CommonArgs& args) {
  ConfigInput required = ConfigInput::none;
  {
    auto probe = load_run_config(args.config, ConfigInput::none);
    if (probe.eps.backing == ScoreBacking::derived) required = ConfigInput::denoiser;
  }
  auto b = load_bundle(args, required);
  if (b->score == nullptr)
    throw ConfigError("config: calibrate needs a denoiser or an analytic backing");
  std::uint64_t seed = run_seed(b->cfg, args);
  ReweightStats stats =
      calibrate_reference(*b->score, b->dataset.xs, b->cfg.eps.options, seed,
                          b->cfg.effective_workers());
  std::string dir = out_dir(b->cfg, args);
  std::string path = b->cfg.reweight.calibration.empty()
                         ? (fs::path(dir) / "calibration.json").string()
                         : b->cfg.reweight.calibration;
  save_reweight_stats(path, stats);
  std::cout << "calibration over " << stats.count << " samples saved to " << path
            << " (min " << stats.min << ", mean " << stats.mean << ", max "
            << stats.max << ")\n";
  return 0;
}

ConfigInput eval_inputs(const std::string& config_path) {
  auto probe = load_run_config(config_path, ConfigInput::none);
  ConfigInput req = ConfigInput::denoiser | ConfigInput::classifier;
  if (probe.reweight.spec.kind != ReweightKind::constant)
    req = req | ConfigInput::calibration;
  return req;
}

int cmd_attack(const CommonArgs& args) {
  auto b = load_bundle(args, eval_inputs(args.config));
  if (b->dataset.labels.empty())
    throw ConfigError("config: attack needs a labeled dataset");
  std::uint64_t seed = run_seed(b->cfg, args);
  auto idx = fixed_subset(b->dataset.size(), b->cfg.eval.subset_size, seed);

  Tensor xs = empty_batch(idx.size(), item_shape(b->dataset.xs));
  std::vector<int> ys(idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    set_batch_row(xs, i, batch_row(b->dataset.xs, idx[i]));
    ys[i] = b->dataset.labels[idx[i]];
  }

  DefensePipeline pipeline = b->pipeline();
  Tensor x_adv = run_attack(xs, ys, pipeline, b->cfg.attack, seed);

  // final per-sample losses under one surrogate draw at the crafted points
  std::vector<std::uint64_t> keys = index_keys(seed, idx.size());
  NoisePlan plan = NoisePlan::constant(
      idx.size(), std::clamp(b->cfg.reweight.spec.t_star, 0, b->cfg.schedule.T));
  if (b->cfg.reweight.spec.kind != ReweightKind::constant) {
    auto norms = eps_norm_batch(*b->score, x_adv, b->cfg.eps.options, keys,
                                b->cfg.effective_workers());
    plan = plan_for_batch(norms, b->stats, b->cfg.reweight.spec, b->cfg.schedule.T);
  }
  GradientResult last =
      surrogate_gradient(pipeline, x_adv, ys, plan, b->cfg.attack.surrogate_stride,
                         keys, derive_key({seed, 0x66696e61ULL}));

  std::string dir = out_dir(b->cfg, args);
  Dataset adv;
  adv.xs = x_adv;
  adv.labels = ys;
  adv.n_classes = b->dataset.n_classes;
  save_dataset_dir(adv, (fs::path(dir) / "adversarial").string());

  nlohmann::json j;
  j["spec_hash"] = b->cfg.config_hash;
  j["seed"] = seed;
  j["n"] = idx.size();
  j["sample_ids"] = idx;
  j["final_losses"] = last.losses;
  io::atomic_write_file((fs::path(dir) / "attack_manifest.json").string(),
                        j.dump(2) + "\n");
  std::cout << "adversarial batch of " << idx.size() << " samples written to " << dir
            << " (mean final loss " << last.mean_loss << ")\n";
  return 0;
}

int cmd_evaluate(const CommonArgs& args) {
  auto b = load_bundle(args, eval_inputs(args.config));
  std::string dir = out_dir(b->cfg, args);
  DefensePipeline pipeline = b->pipeline();

  std::optional<AttackSpec> attack;
  if (b->cfg.attack.pgd_iters > 0 && b->cfg.attack.epsilon > 0.0)
    attack = b->cfg.attack;

  std::vector<std::uint64_t> seeds = b->cfg.eval.seeds;
  if (args.seed.has_value()) seeds = {*args.seed};

  std::vector<double> std_acc, rob_acc;
  for (std::uint64_t s : seeds) {
    EvalOutput out = evaluate(pipeline, b->dataset, attack, s,
                              b->cfg.eval.subset_size, b->cfg.config_hash);
    std::string tag = "seed" + std::to_string(s);
    save_eval_report((fs::path(dir) / ("report_" + tag + ".json")).string(), out.report);
    save_per_sample_csv((fs::path(dir) / ("samples_" + tag + ".csv")).string(), out.rows);
    std_acc.push_back(out.report.standard_accuracy);
    rob_acc.push_back(out.report.robust_accuracy);
    std::cout << tag << ": standard " << out.report.standard_accuracy << ", robust "
              << out.report.robust_accuracy << "\n";
  }
  MeanStd s_ms = mean_std(std_acc), r_ms = mean_std(rob_acc);
  nlohmann::json j;
  j["standard"] = {{"mean", s_ms.mean}, {"std", s_ms.stddev}};
  j["robust"] = {{"mean", r_ms.mean}, {"std", r_ms.stddev}};
  j["seeds"] = seeds;
  j["config_hash"] = b->cfg.config_hash;
  io::atomic_write_file((fs::path(dir) / "summary.json").string(), j.dump(2) + "\n");
  std::cout << "summary: standard " << s_ms.mean << " +- " << s_ms.stddev << ", robust "
            << r_ms.mean << " +- " << r_ms.stddev << "\n";
  return 0;
}

int cmd_sweep_eps(const CommonArgs& args) {
  auto b = load_bundle(args, ConfigInput::denoiser | ConfigInput::classifier);
  if (b->dataset.labels.empty())
    throw ConfigError("config: sweep-eps needs a labeled dataset");
  if (b->score == nullptr) throw ConfigError("config: sweep-eps needs a score backing");
  std::uint64_t seed = run_seed(b->cfg, args);

  std::vector<double> budgets = b->cfg.sweep.budgets;
  if (budgets.empty()) {
    double e = b->cfg.attack.epsilon;
    budgets = {0.0, e / 4.0, e / 2.0, e};
  }

  std::size_t batch = std::min<std::size_t>(b->cfg.sweep.batch, b->dataset.size());
  auto idx = fixed_subset(b->dataset.size(), batch, seed);
  Tensor xs = empty_batch(idx.size(), item_shape(b->dataset.xs));
  std::vector<int> ys(idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    set_batch_row(xs, i, batch_row(b->dataset.xs, idx[i]));
    ys[i] = b->dataset.labels[idx[i]];
  }

  // perturbations from a plain classifier PGD (identity purifier)
  PurifierConfig identity_cfg;
  identity_cfg.runs = {PurifyRun{false, 0, 0.0}};
  identity_cfg.workers = b->cfg.effective_workers();
  ReweightSpec zero_spec;
  zero_spec.kind = ReweightKind::constant;
  zero_spec.t_star = 0;
  DefensePipeline undefended = b->pipeline();
  undefended.purifier = &identity_cfg;
  undefended.reweight = &zero_spec;

  std::vector<SweepPoint> points;
  for (double budget : budgets) {
    Tensor x_adv = xs;
    if (budget > 0.0) {
      AttackSpec spec = b->cfg.attack;
      spec.mode = AttackMode::pgd_eot;
      spec.epsilon = budget;
      spec.step_size = budget / 4.0;
      spec.eot_iters = 1;  // the identity purifier is deterministic
      x_adv = pgd_eot_attack(xs, ys, undefended, spec, seed);
    }
    auto keys = index_keys(derive_key({seed, 0x73777065ULL}), idx.size());
    auto norms = eps_norm_batch(*b->score, x_adv, b->cfg.eps.options, keys,
                                b->cfg.effective_workers());
    MeanStd ms = mean_std(norms);
    points.push_back(SweepPoint{budget, ms.mean, ms.stddev,
                                static_cast<int>(norms.size())});
    std::cout << "budget " << budget << ": mean EPS norm " << ms.mean << " +- "
              << ms.stddev << "\n";
  }
  PlotPaths paths = plot_norm_vs_eps(points, out_dir(b->cfg, args));
  std::cout << "wrote " << paths.csv << " and " << paths.svg << "\n";
  return 0;
}

int cmd_check_theory(const CommonArgs& args) {
  RunConfig cfg;
  if (!args.config.empty()) cfg = load_run_config(args.config, ConfigInput::none);
  std::uint64_t seed = args.seed.value_or(0);
  std::string dir = out_dir(cfg, args);

  nlohmann::json checks = nlohmann::json::array();
  bool all_pass = true;
  auto add_check = [&](const std::string& name, double value, double threshold,
                       bool pass) {
    checks.push_back({{"check", name},
                      {"value", value},
                      {"threshold", threshold},
                      {"pass", pass}});
    all_pass = all_pass && pass;
    std::cout << (pass ? "[pass] " : "[FAIL] ") << name << " (value " << value
              << ", threshold " << threshold << ")\n";
  };

  // score decomposition residual over random worlds
  {
    double worst = 0.0;
    for (int k = 0; k < 100; ++k) {
      RandomStream rng(derive_key({seed, 0x6c656d32ULL, static_cast<std::uint64_t>(k)}));
      int dim = 1 + static_cast<int>(rng.next_u64() % 4);
      oracle::GaussianWorld world;
      world.schedule = make_linear_schedule(200, 1e-4, 0.02);
      world.sigma0sq = 0.2 + 5.0 * rng.next_uniform();
      world.mu0 = Tensor({static_cast<std::size_t>(dim)});
      for (auto& v : world.mu0.data) v = 2.0 * rng.next_gaussian();
      Tensor x({static_cast<std::size_t>(dim)});
      for (auto& v : x.data) v = 3.0 * rng.next_gaussian();
      int t = 1 + static_cast<int>(rng.next_u64() % 200);
      worst = std::max(worst, oracle::check_lemma2(world, x, t));
    }
    add_check("score_decomposition_residual", worst, 1e-9, worst < 1e-9);
  }

  // norm separation trend on asymmetric worlds
  for (double s0 : {4.0, 9.0}) {
    oracle::GaussianWorld world;
    world.schedule = make_linear_schedule(1000, 1e-4, 0.02);
    world.sigma0sq = s0;
    world.mu0 = Tensor({2});
    Tensor x({2}, {1.5, -0.5});
    std::vector<std::pair<int, int>> pairs;
    for (int t2 = 100; t2 <= 900; t2 += 100) pairs.emplace_back(50, t2);
    auto table = oracle::check_score_norm_separation(world, x, pairs);
    double last_gap = table.rows.back().gap;
    add_check("norm_separation_sigma" + std::to_string(static_cast<int>(s0)),
              last_gap, 0.0, table.monotone && last_gap > 0.0);
  }

  // analytic score versus centered finite differences of the log density
  {
    oracle::GaussianWorld world;
    world.schedule = make_linear_schedule(100, 1e-3, 0.02);
    world.sigma0sq = 2.5;
    world.mu0 = Tensor({3}, {0.3, -0.7, 1.1});
    Tensor x({3}, {0.9, 0.2, -1.4});
    double worst = 0.0;
    for (int t : {0, 7, 40, 100}) {
      Tensor s = analytic_gaussian_score(world.mu0, world.sigma0sq, world.schedule, x, t);
      for (std::size_t i = 0; i < x.numel(); ++i) {
        Tensor hi = x, lo = x;
        const double h = 1e-4;
        hi.data[i] += h;
        lo.data[i] -= h;
        double fd = (oracle::log_marginal_density(world, hi, t) -
                     oracle::log_marginal_density(world, lo, t)) /
                    (2.0 * h);
        worst = std::max(worst, std::abs(fd - s.data[i]));
      }
    }
    add_check("analytic_score_finite_difference", worst, 1e-6, worst < 1e-6);
  }

  // constant reweighting equals the sample-shared pipeline bit-exactly
  {
    NoiseSchedule sched = make_linear_schedule(50, 1e-3, 0.05);
    TrainHyper arch;
    arch.hidden = 32;
    arch.blocks = 1;
    MlpDenoiser net({2}, sched.T, arch, derive_key({seed, 0x6e6574ULL}));
    RandomStream rng(derive_key({seed, 0x62617463ULL}));
    Tensor xs = empty_batch(6, {2});
    for (auto& v : xs.data) v = rng.next_gaussian();
    PurifierConfig cfg_p;
    bool same = oracle::check_special_case(net, sched, cfg_p, xs, 20, seed);
    bool differs = !oracle::check_special_case(net, sched, cfg_p, xs, 20, seed,
                                               seed + 1);
    add_check("constant_spec_bit_equality", same ? 1.0 : 0.0, 1.0, same);
    add_check("mismatched_seed_negative_control", differs ? 1.0 : 0.0, 1.0, differs);
  }

  nlohmann::json j;
  j["checks"] = checks;
  j["all_pass"] = all_pass;
  io::atomic_write_file((fs::path(dir) / "theory.json").string(), j.dump(2) + "\n");
  std::cout << (all_pass ? "all checks passed\n" : "some checks FAILED\n");
  return all_pass ? 0 : 1;
}

int cmd_plot(const CommonArgs& args, const std::string& csv) {
  RunConfig cfg;
  if (!args.config.empty()) cfg = load_run_config(args.config, ConfigInput::none);
  std::string dir = out_dir(cfg, args);
  std::string src = csv.empty() ? (fs::path(dir) / "norm_vs_eps.csv").string() : csv;
  auto points = load_sweep_csv(src);
  PlotPaths paths = plot_norm_vs_eps(points, dir);
  std::cout << "wrote " << paths.csv << " and " << paths.svg << "\n";
  return 0;
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
  CLI::App app{"sample-specific noise injection laboratory"};
  app.require_subcommand(1);

  CommonArgs train_d, train_c, calib, attack_a, eval_a, sweep_a, theory_a, plot_a;
  std::string plot_csv;

  add_common(app.add_subcommand("train-diffusion", "train the denoiser"), train_d);
  add_common(app.add_subcommand("train-classifier", "train the classifier"), train_c);
  add_common(app.add_subcommand("calibrate", "compute validation EPS statistics"), calib);
  add_common(app.add_subcommand("attack", "craft an adversarial batch"), attack_a);
  add_common(app.add_subcommand("evaluate", "standard/robust accuracy"), eval_a);
  add_common(app.add_subcommand("sweep-eps", "EPS norms across budgets"), sweep_a);
  add_common(app.add_subcommand("check-theory", "closed-form identity checks"), theory_a,
             false);
  auto* plot_cmd = app.add_subcommand("plot", "render a sweep CSV");
  add_common(plot_cmd, plot_a, false);
  plot_cmd->add_option("--csv", plot_csv, "sweep CSV to render");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    std::cout << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    std::cerr << app.help() << "\nerror: " << e.what() << "\n";
    return 2;
  }

  try {
    if (app.got_subcommand("train-diffusion")) return cmd_train_diffusion(train_d);
    if (app.got_subcommand("train-classifier")) return cmd_train_classifier(train_c);
    if (app.got_subcommand("calibrate")) return cmd_calibrate(calib);
    if (app.got_subcommand("attack")) return cmd_attack(attack_a);
    if (app.got_subcommand("evaluate")) return cmd_evaluate(eval_a);
    if (app.got_subcommand("sweep-eps")) return cmd_sweep_eps(sweep_a);
    if (app.got_subcommand("check-theory")) return cmd_check_theory(theory_a);
    if (app.got_subcommand("plot")) return cmd_plot(plot_a, plot_csv);
    std::cerr << app.help();
    return 2;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace ssni
