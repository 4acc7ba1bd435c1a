#include "ssni/harness/evaluate.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "ssni/io.hpp"
#include "ssni/rng.hpp"

namespace ssni {

namespace {

using clock = std::chrono::steady_clock;

double seconds_since(clock::time_point t0) {
  return std::chrono::duration<double>(clock::now() - t0).count();
}

Tensor gather_rows(const Tensor& xs, std::span<const std::size_t> idx) {
  Tensor out = empty_batch(idx.size(), item_shape(xs));
  for (std::size_t i = 0; i < idx.size(); ++i)
    set_batch_row(out, i, batch_row(xs, idx[i]));
  return out;
}

// defend() with a null score/stats tolerated for constant reweighting specs.
DefendResult call_defend(const DefensePipeline& d, const Tensor& xs,
                         const ReweightSpec& spec, std::uint64_t seed,
                         DefendTimings* t) {
  static const ReweightStats kUnusedStats = ReweightStats::from_norms({1.0}, 1, 1);
  static const EpsOptions kUnusedOpts{};
  const ReweightStats* stats = d.stats != nullptr ? d.stats : &kUnusedStats;
  const EpsOptions* opts = d.eps_opt != nullptr ? d.eps_opt : &kUnusedOpts;
  if (spec.kind != ReweightKind::constant &&
      (d.score == nullptr || d.stats == nullptr || d.eps_opt == nullptr))
    throw std::invalid_argument("evaluate: reweighting needs score, stats and eps options");
  if (d.score == nullptr) {
    ScoreEstimator dummy =
        ScoreEstimator::analytic(Tensor(item_shape(xs)), 1.0, *d.schedule);
    return defend(xs, dummy, *stats, spec, *opts, *d.denoiser, *d.schedule,
                  *d.purifier, *d.classifier, seed, t);
  }
  return defend(xs, *d.score, *stats, spec, *opts, *d.denoiser, *d.schedule,
                *d.purifier, *d.classifier, seed, t);
}

struct DefendPass {
  std::vector<int> labels;
  std::vector<double> eps_norms;
  std::vector<int> levels;
  std::vector<double> wall_ms;  // per row
  DefendTimings totals;
};

// Rows are defended one at a time so the per-sample wall clock is honest;
// content-keyed substreams make this bit-identical to one batched call.
DefendPass defend_rows(const DefensePipeline& d, const Tensor& xs, std::uint64_t seed) {
  std::size_t rows = batch_rows(xs);
  DefendPass pass;
  pass.labels.resize(rows);
  pass.eps_norms.resize(rows);
  pass.levels.resize(rows);
  pass.wall_ms.resize(rows);
  for (std::size_t i = 0; i < rows; ++i) {
    Tensor one = empty_batch(1, item_shape(xs));
    set_batch_row(one, 0, batch_row(xs, i));
    DefendTimings t;
    DefendResult r = call_defend(d, one, *d.reweight, seed, &t);
    pass.labels[i] = r.labels[0];
    pass.eps_norms[i] = r.eps_norms[0];
    pass.levels[i] = r.plan.levels[0];
    pass.wall_ms[i] =
        1000.0 * (t.reweight_seconds + t.purify_seconds + t.classify_seconds);
    pass.totals.reweight_seconds += t.reweight_seconds;
    pass.totals.purify_seconds += t.purify_seconds;
    pass.totals.classify_seconds += t.classify_seconds;
  }
  return pass;
}

}  // namespace

std::vector<std::size_t> fixed_subset(std::size_t dataset_size, std::size_t subset_size,
                                      std::uint64_t seed) {
  if (dataset_size == 0) throw std::invalid_argument("fixed_subset: empty dataset");
  if (subset_size == 0) throw std::invalid_argument("fixed_subset: empty subset");
  if (subset_size > dataset_size) subset_size = dataset_size;
  std::vector<std::size_t> order(dataset_size);
  std::iota(order.begin(), order.end(), 0);
  RandomStream rng(derive_key({seed, 0x73756273ULL}));
  for (std::size_t i = dataset_size; i > 1; --i)
    std::swap(order[i - 1], order[rng.next_u64() % i]);
  order.resize(subset_size);
  return order;
}

EvalOutput evaluate(const DefensePipeline& defense, const Dataset& dataset,
                    const std::optional<AttackSpec>& attack, std::uint64_t seed,
                    std::size_t subset_size, const std::string& config_hash) {
  if (defense.classifier == nullptr || defense.denoiser == nullptr ||
      defense.schedule == nullptr || defense.purifier == nullptr ||
      defense.reweight == nullptr)
    throw std::invalid_argument("evaluate: incomplete defense pipeline");
  if (dataset.labels.size() != dataset.size())
    throw std::invalid_argument("evaluate: dataset must be labeled");

  auto idx = fixed_subset(dataset.size(), subset_size, seed);
  Tensor xs = gather_rows(dataset.xs, idx);
  std::vector<int> ys(idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i) ys[i] = dataset.labels[idx[i]];

  DefendPass clean = defend_rows(defense, xs, seed);

  std::vector<int> robust_labels = clean.labels;
  if (attack.has_value()) {
    Tensor x_adv = run_attack(xs, ys, defense, *attack, seed);
    DefendPass adv = defend_rows(defense, x_adv, seed);
    robust_labels = adv.labels;
  }

  EvalOutput out;
  out.report.n_samples = static_cast<int>(idx.size());
  out.report.seed = seed;
  out.report.config_hash = config_hash;
  std::size_t std_correct = 0, rob_correct = 0;
  out.rows.resize(idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    bool cc = clean.labels[i] == ys[i];
    bool rc = robust_labels[i] == ys[i];
    std_correct += cc ? 1 : 0;
    rob_correct += rc ? 1 : 0;
    out.rows[i] = PerSampleRow{idx[i],          clean.eps_norms[i], clean.levels[i],
                               cc,              rc,                 clean.wall_ms[i]};
  }
  double n = static_cast<double>(idx.size());
  out.report.standard_accuracy = static_cast<double>(std_correct) / n;
  out.report.robust_accuracy = static_cast<double>(rob_correct) / n;
  out.report.timings.per_image_purify_seconds = clean.totals.purify_seconds / n;
  out.report.timings.reweight_overhead_seconds = clean.totals.reweight_seconds / n;
  return out;
}

MeanStd mean_std(std::span<const double> values) {
  MeanStd ms;
  if (values.empty()) return ms;
  double acc = 0.0;
  for (double v : values) acc += v;
  ms.mean = acc / static_cast<double>(values.size());
  if (values.size() > 1) {
    double sq = 0.0;
    for (double v : values) sq += (v - ms.mean) * (v - ms.mean);
    ms.stddev = std::sqrt(sq / static_cast<double>(values.size() - 1));
  }
  return ms;
}

SeedSummary evaluate_seeds(const DefensePipeline& defense, const Dataset& dataset,
                           const std::optional<AttackSpec>& attack,
                           std::span<const std::uint64_t> seeds, std::size_t subset_size,
                           const std::string& config_hash) {
  if (seeds.empty()) throw std::invalid_argument("evaluate_seeds: no seeds");
  SeedSummary summary;
  std::vector<double> std_acc, rob_acc;
  for (std::uint64_t s : seeds) {
    EvalOutput out = evaluate(defense, dataset, attack, s, subset_size, config_hash);
    std_acc.push_back(out.report.standard_accuracy);
    rob_acc.push_back(out.report.robust_accuracy);
    summary.reports.push_back(out.report);
  }
  summary.standard = mean_std(std_acc);
  summary.robust = mean_std(rob_acc);
  return summary;
}

OverheadReport measure_overhead(const DefensePipeline& defense,
                                const ReweightSpec& baseline_spec, const Tensor& batch,
                                std::uint64_t seed) {
  if (baseline_spec.kind != ReweightKind::constant)
    throw std::invalid_argument("measure_overhead: baseline spec must be constant");
  double n = static_cast<double>(batch_rows(batch));

  auto run_once = [&](const ReweightSpec& spec, DefendTimings& t) {
    call_defend(defense, batch, spec, seed, &t);
  };

  // warm-up pass, then the measured passes
  DefendTimings warm;
  run_once(baseline_spec, warm);

  DefendTimings base_t, ssni_t;
  run_once(baseline_spec, base_t);
  run_once(*defense.reweight, ssni_t);

  OverheadReport rep;
  rep.baseline_per_image_seconds =
      (base_t.reweight_seconds + base_t.purify_seconds + base_t.classify_seconds) / n;
  rep.ssni_per_image_seconds =
      (ssni_t.reweight_seconds + ssni_t.purify_seconds + ssni_t.classify_seconds) / n;
  rep.reweight_per_image_seconds = ssni_t.reweight_seconds / n;
  rep.delta_seconds = rep.ssni_per_image_seconds - rep.baseline_per_image_seconds;
  rep.ratio = rep.baseline_per_image_seconds > 0.0
                  ? rep.ssni_per_image_seconds / rep.baseline_per_image_seconds
                  : 0.0;
  return rep;
}

std::string eval_report_to_json(const EvalReport& report) {
  nlohmann::json j;
  j["standard_accuracy"] = report.standard_accuracy;
  j["robust_accuracy"] = report.robust_accuracy;
  j["n_samples"] = report.n_samples;
  j["seed"] = report.seed;
  j["timings"]["per_image_purify_seconds"] = report.timings.per_image_purify_seconds;
  j["timings"]["reweight_overhead_seconds"] = report.timings.reweight_overhead_seconds;
  j["config_hash"] = report.config_hash;
  return j.dump(2) + "\n";
}

EvalReport eval_report_from_json(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  EvalReport r;
  r.standard_accuracy = j.at("standard_accuracy").get<double>();
  r.robust_accuracy = j.at("robust_accuracy").get<double>();
  r.n_samples = j.at("n_samples").get<int>();
  r.seed = j.at("seed").get<std::uint64_t>();
  r.timings.per_image_purify_seconds =
      j.at("timings").at("per_image_purify_seconds").get<double>();
  r.timings.reweight_overhead_seconds =
      j.at("timings").at("reweight_overhead_seconds").get<double>();
  r.config_hash = j.at("config_hash").get<std::string>();
  return r;
}

void save_eval_report(const std::string& path, const EvalReport& report) {
  io::atomic_write_file(path, eval_report_to_json(report));
}

void save_per_sample_csv(const std::string& path, const std::vector<PerSampleRow>& rows) {
  std::ostringstream os;
  os << "sample_id,eps_norm,level,clean_correct,robust_correct,wall_ms\n";
  os.precision(17);
  for (const auto& r : rows)
    os << r.sample_id << ',' << r.eps_norm << ',' << r.level << ','
       << (r.clean_correct ? 1 : 0) << ',' << (r.robust_correct ? 1 : 0) << ','
       << r.wall_ms << '\n';
  io::atomic_write_file(path, os.str());
}

}  // namespace ssni
