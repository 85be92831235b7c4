#pragma once

#include "gmw/attack.hpp"
#include "gmw/centroid.hpp"
#include "gmw/errors.hpp"
#include "gmw/metrics.hpp"
#include "gmw/motion_io.hpp"
#include "gmw/rng.hpp"
#include "gmw/synth.hpp"
#include "gmw/wire.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <memory>
#include <numeric>
#include <optional>
#include <string>
#include <thread>
#include <vector>

namespace gmw {

inline const char *to_string(AttackMode m) { return m == AttackMode::targeted ? "targeted" : "untargeted"; }

inline AttackMode parse_attack_mode(const std::string &s) {
  if (s == "untargeted") return AttackMode::untargeted;
  if (s == "targeted") return AttackMode::targeted;
  throw ValidationError("mode must be untargeted or targeted, got " + s);
}

inline json attack_config_to_json(const AttackConfig &c) {
  json j;
  j["mode"] = to_string(c.mode);
  j["target_class"] = c.target_class;
  j["max_iters"] = c.max_iters;
  j["epsilon"] = c.epsilon ? json(*c.epsilon) : json(nullptr);
  j["lambda_init"] = c.lambda_init;
  j["beta_init"] = c.beta_init;
  j["lambda_floor"] = c.lambda_floor;
  j["beta_floor"] = c.beta_floor;
  j["adapt_up"] = c.adapt_up;
  j["adapt_down"] = c.adapt_down;
  j["joint_weights"] = c.joint_weights;
  j["torso_joints"] = c.torso_joints;
  j["torso_weight"] = c.torso_weight;
  j["limb_weight"] = c.limb_weight;
  j["manifold_projection"] = c.manifold_projection;
  j["projection"] = {{"w", c.projection.w},
                     {"max_solver_iters", c.projection.max_solver_iters},
                     {"grad_tolerance", c.projection.grad_tolerance},
                     {"bone_rel_tolerance", c.projection.bone_rel_tolerance},
                     {"limit_tolerance", c.projection.limit_tolerance}};
  j["rng_seed"] = c.rng_seed;
  j["query_budget"] = c.query_budget;
  j["init_search_steps"] = c.init_search_steps;
  j["max_pulls"] = c.max_pulls;
  return j;
}

/// Overlays the keys present in `j` onto `c`.
inline void merge_attack_config(AttackConfig &c, const json &j) {
  try {
    if (j.contains("mode")) c.mode = parse_attack_mode(j["mode"].get<std::string>());
    if (j.contains("target_class")) c.target_class = j["target_class"].get<int>();
    if (j.contains("max_iters")) c.max_iters = j["max_iters"].get<int>();
    if (j.contains("epsilon"))
      c.epsilon = j["epsilon"].is_null() ? std::nullopt : std::optional<double>(j["epsilon"].get<double>());
    if (j.contains("lambda_init")) c.lambda_init = j["lambda_init"].get<double>();
    if (j.contains("beta_init")) c.beta_init = j["beta_init"].get<double>();
    if (j.contains("lambda_floor")) c.lambda_floor = j["lambda_floor"].get<double>();
    if (j.contains("beta_floor")) c.beta_floor = j["beta_floor"].get<double>();
    if (j.contains("adapt_up")) c.adapt_up = j["adapt_up"].get<double>();
    if (j.contains("adapt_down")) c.adapt_down = j["adapt_down"].get<double>();
    if (j.contains("joint_weights")) c.joint_weights = j["joint_weights"].get<std::vector<double>>();
    if (j.contains("torso_joints")) c.torso_joints = j["torso_joints"].get<std::vector<std::string>>();
    if (j.contains("torso_weight")) c.torso_weight = j["torso_weight"].get<double>();
    if (j.contains("limb_weight")) c.limb_weight = j["limb_weight"].get<double>();
    if (j.contains("manifold_projection")) c.manifold_projection = j["manifold_projection"].get<bool>();
    if (j.contains("projection")) {
      const auto &p = j["projection"];
      if (p.contains("w")) c.projection.w = p["w"].get<double>();
      if (p.contains("max_solver_iters")) c.projection.max_solver_iters = p["max_solver_iters"].get<int>();
      if (p.contains("grad_tolerance")) c.projection.grad_tolerance = p["grad_tolerance"].get<double>();
      if (p.contains("bone_rel_tolerance")) c.projection.bone_rel_tolerance = p["bone_rel_tolerance"].get<double>();
      if (p.contains("limit_tolerance")) c.projection.limit_tolerance = p["limit_tolerance"].get<double>();
    }
    if (j.contains("rng_seed")) c.rng_seed = j["rng_seed"].get<std::uint64_t>();
    if (j.contains("query_budget")) c.query_budget = j["query_budget"].get<std::uint64_t>();
    if (j.contains("init_search_steps")) c.init_search_steps = j["init_search_steps"].get<int>();
    if (j.contains("max_pulls")) c.max_pulls = j["max_pulls"].get<int>();
  } catch (const json::exception &e) {
    throw ValidationError(std::string("bad attack config: ") + e.what());
  }
}

struct CampaignSpec {
  std::filesystem::path dataset;
  std::optional<std::filesystem::path> classifier; // built-in model file
  std::optional<std::string> endpoint;             // remote classifier
  int endpoint_timeout_ms = kDefaultTimeoutMs;
  std::size_t samples = 50;
  /// With mode == targeted and target_class < 0, each motion gets a random
  /// target different from its label.
  AttackConfig attack;
  std::filesystem::path out;
  std::uint64_t seed = 0;
  int parallel = 1;

  void validate() const {
    if (classifier.has_value() == endpoint.has_value())
      throw ValidationError("give exactly one of a classifier model or an endpoint");
    if (samples == 0) throw ValidationError("sample count must be positive");
    if (parallel < 1) throw ValidationError("parallel must be >= 1");
    if (out.empty()) throw ValidationError("output directory required");
    AttackConfig probe = attack;
    if (probe.mode == AttackMode::targeted && probe.target_class < 0) probe.target_class = 0;
    probe.validate();
  }
};

inline json campaign_spec_to_json(const CampaignSpec &s) {
  json j;
  j["dataset"] = s.dataset.string();
  j["classifier"] = s.classifier ? json(s.classifier->string()) : json(nullptr);
  j["endpoint"] = s.endpoint ? json(*s.endpoint) : json(nullptr);
  j["endpoint_timeout_ms"] = s.endpoint_timeout_ms;
  j["samples"] = s.samples;
  j["out"] = s.out.string();
  j["seed"] = s.seed;
  j["parallel"] = s.parallel;
  j["attack"] = attack_config_to_json(s.attack);
  return j;
}

struct MotionOutcome {
  std::size_t index = 0; // position in the dataset
  std::string id;
  std::optional<int> target_class;
  bool success = false;
  std::string status; // AttackStatus name, or "error"
  std::string error;
  std::string error_kind;
  std::optional<int> original_class;
  std::optional<int> adversarial_class;
  std::uint64_t queries = 0;
  int iterations = 0;
  double seed_l = 0.0;
  double initial_l = 0.0;
  double final_l = 0.0;
};

inline json outcome_to_json(const MotionOutcome &o) {
  auto opt = [](const std::optional<int> &v) { return v ? json(*v) : json(nullptr); };
  json j;
  j["id"] = o.id;
  j["dataset_index"] = o.index;
  j["target_class"] = opt(o.target_class);
  j["success"] = o.success;
  j["status"] = o.status;
  j["error"] = o.error.empty() ? json(nullptr) : json(o.error);
  j["error_kind"] = o.error_kind.empty() ? json(nullptr) : json(o.error_kind);
  j["original_class"] = opt(o.original_class);
  j["adversarial_class"] = opt(o.adversarial_class);
  j["queries"] = o.queries;
  j["iterations"] = o.iterations;
  j["seed_l"] = o.seed_l;
  j["initial_l"] = o.initial_l;
  j["final_l"] = o.final_l;
  return j;
}

inline std::string motion_id(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%05zu", index);
  return buf;
}

/// `count` distinct dataset indices, ascending, drawn with the campaign seed.
inline std::vector<std::size_t> sample_indices(std::size_t dataset_size, std::size_t count, std::uint64_t seed) {
  if (count > dataset_size)
    throw ValidationError("sample count " + std::to_string(count) + " exceeds dataset size " +
                          std::to_string(dataset_size));
  CounterRng rng = CounterRng::derive(seed, 2);
  std::vector<std::size_t> all(dataset_size);
  std::iota(all.begin(), all.end(), std::size_t{0});
  for (std::size_t i = 0; i < count; ++i) std::swap(all[i], all[i + rng.below(dataset_size - i)]);
  all.resize(count);
  std::sort(all.begin(), all.end());
  return all;
}

/// Uniform target class in [0, classes) other than `label`.
inline int draw_target_class(int classes, int label, std::uint64_t seed, std::size_t index) {
  if (classes < 2) throw InitializationError("targeted attack needs at least two classes");
  CounterRng rng = CounterRng::derive(seed, 3'000'000 + index);
  const int pick = static_cast<int>(rng.below(static_cast<std::uint64_t>(classes - 1)));
  return pick >= label && label >= 0 ? pick + 1 : pick;
}

/// Per-motion attack seed; independent of scheduling.
inline std::uint64_t motion_seed(std::uint64_t seed, std::size_t index) {
  return CounterRng::derive(seed, 1'000'000 + index).next_u64();
}

namespace detail {

inline const char *error_kind(const std::exception &e) {
  if (dynamic_cast<const TransportError *>(&e)) return "transport";
  if (dynamic_cast<const ProtocolError *>(&e)) return "protocol";
  if (dynamic_cast<const InitializationError *>(&e)) return "initialization";
  if (dynamic_cast<const BudgetExhausted *>(&e)) return "budget";
  if (dynamic_cast<const StructuralError *>(&e)) return "structural";
  if (dynamic_cast<const ValidationError *>(&e)) return "validation";
  return "error";
}

inline void write_trace(const std::filesystem::path &dir, const std::vector<TraceRow> &trace) {
  write_text_file(dir / "trace.csv", trace_csv(trace));
}

} // namespace detail

/// Attacks dataset[index] and persists its files under <out>/motions/<id>/.
inline MotionOutcome attack_one(const CampaignSpec &spec, const std::vector<Motion> &dataset, std::size_t index,
                                const std::shared_ptr<const CentroidModel> &model) {
  MotionOutcome o;
  o.index = index;
  o.id = motion_id(index);
  const auto dir = spec.out / "motions" / o.id;
  std::filesystem::create_directories(dir);
  const Motion &x = dataset[index];
  save_motion(x, dir / "original.json");

  std::vector<TraceRow> trace;
  try {
    std::unique_ptr<Classifier> classifier;
    if (model) {
      classifier = std::make_unique<CentroidClassifier>(model);
    } else {
      classifier = std::make_unique<RemoteClassifier>(open_endpoint(*spec.endpoint, spec.endpoint_timeout_ms));
    }
    AttackConfig cfg = spec.attack;
    cfg.rng_seed = motion_seed(spec.seed, index);
    if (cfg.mode == AttackMode::targeted && cfg.target_class < 0)
      cfg.target_class = draw_target_class(classifier->num_classes(), x.label().value_or(-1), spec.seed, index);
    if (cfg.mode == AttackMode::targeted) o.target_class = cfg.target_class;

    std::vector<Motion> pool;
    pool.reserve(dataset.size() - 1);
    for (std::size_t i = 0; i < dataset.size(); ++i)
      if (i != index) pool.push_back(dataset[i]);

    QueryGateway gateway(*classifier, cfg.query_budget);
    AttackResult r = gmw_attack(x, pool, *x.skeleton_ptr(), cfg, gateway);
    o.success = r.success;
    o.status = to_string(r.status);
    o.original_class = r.original_label.class_id;
    o.adversarial_class = r.adversarial_label.class_id;
    o.queries = r.queries;
    o.iterations = r.iterations;
    o.seed_l = r.seed_l;
    o.initial_l = r.initial_l;
    o.final_l = r.final_l;
    trace = std::move(r.trace);
    save_motion(r.adversarial.with_label(r.adversarial_label.class_id), dir / "adversarial.json");
  } catch (const AttackAborted &e) {
    trace = e.trace();
    o.status = "error";
    o.error = e.what();
    o.error_kind = e.kind();
    if (!trace.empty()) o.queries = trace.back().queries_cumulative;
  } catch (const std::exception &e) {
    o.status = "error";
    o.error = e.what();
    o.error_kind = detail::error_kind(e);
  }
  detail::write_trace(dir, trace);
  write_text_file(dir / "result.json", outcome_to_json(o).dump(2) + "\n");
  return o;
}

struct CampaignSummary {
  std::vector<MotionOutcome> outcomes; // sorted by motion id
  std::optional<MetricsReport> report;
  bool all_succeeded = false;
};

/// Recomputes the aggregate report from the pairs persisted under `out` and
/// writes report.csv / report.json. Only motions whose attack succeeded
/// contribute.
inline std::optional<MetricsReport> evaluate_campaign(const std::filesystem::path &out) {
  const json run = read_json_file(out / "run.json");
  const bool mp = run.at("spec").at("attack").at("manifold_projection").get<bool>();
  const std::string model_name = run.at("model_name").get<std::string>();
  AttackConfig attack;
  merge_attack_config(attack, run.at("spec").at("attack"));

  std::vector<std::filesystem::path> dirs;
  if (std::filesystem::exists(out / "motions"))
    for (const auto &e : std::filesystem::directory_iterator(out / "motions"))
      if (e.is_directory()) dirs.push_back(e.path());
  std::sort(dirs.begin(), dirs.end());

  std::vector<MotionPair> pairs;
  SkeletonPtr shared;
  for (const auto &d : dirs) {
    if (!std::filesystem::exists(d / "result.json")) continue;
    const json res = read_json_file(d / "result.json");
    if (!res.value("success", false)) continue;
    Motion original = load_motion(d / "original.json", shared);
    if (!shared) shared = original.skeleton_ptr();
    Motion adversarial = load_motion(d / "adversarial.json", shared);
    pairs.push_back({std::move(original), std::move(adversarial)});
  }

  if (pairs.empty()) {
    write_text_file(out / "report.csv", std::string(kReportColumns) + "\n");
    json doc = {{"model", model_name}, {"mp_flag", mp ? "MP" : "No MP"}, {"n_samples", 0}};
    write_text_file(out / "report.json", doc.dump(2) + "\n");
    return std::nullopt;
  }
  MetricsReport rep = compute_metrics(pairs, *shared, attack.projection, true);
  write_text_file(out / "report.csv", report_csv(model_name, mp, rep));
  write_text_file(out / "report.json", report_json(model_name, mp, rep).dump(2) + "\n");
  return rep;
}

namespace detail {
inline std::string utc_now() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}
} // namespace detail

/// Runs the whole campaign. Per-motion failures are recorded and do not stop
/// the others. Timestamps go to run.json only, so every other file is
/// reproducible for a fixed spec.
inline CampaignSummary run_campaign(const CampaignSpec &spec) {
  spec.validate();
  const std::vector<Motion> dataset = load_dataset(spec.dataset);
  const auto indices = sample_indices(dataset.size(), spec.samples, spec.seed);

  std::shared_ptr<const CentroidModel> model;
  if (spec.classifier) model = std::make_shared<const CentroidModel>(load_centroid_model(*spec.classifier));

  std::filesystem::create_directories(spec.out);
  json run;
  run["spec"] = campaign_spec_to_json(spec);
  run["model_name"] = model ? "centroid" : "remote";
  run["started_utc"] = detail::utc_now();
  run["hardware_threads"] = std::thread::hardware_concurrency();
  write_text_file(spec.out / "run.json", run.dump(2) + "\n");

  CampaignSummary summary;
  summary.outcomes.resize(indices.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t k = next++; k < indices.size(); k = next++)
      summary.outcomes[k] = attack_one(spec, dataset, indices[k], model);
  };
  const auto threads = std::min<std::size_t>(static_cast<std::size_t>(spec.parallel), indices.size());
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto &t : pool) t.join();
  }

  summary.all_succeeded = std::all_of(summary.outcomes.begin(), summary.outcomes.end(),
                                      [](const MotionOutcome &o) { return o.success; });
  json rows = json::array();
  for (const auto &o : summary.outcomes) rows.push_back(outcome_to_json(o));
  write_text_file(spec.out / "results.json", rows.dump(2) + "\n");
  summary.report = evaluate_campaign(spec.out);

  run["finished_utc"] = detail::utc_now();
  write_text_file(spec.out / "run.json", run.dump(2) + "\n");
  return summary;
}

} // namespace gmw
