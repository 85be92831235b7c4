#include "gmw/campaign.hpp"
#include "gmw/centroid.hpp"
#include "gmw/metrics.hpp"
#include "gmw/synth.hpp"
#include "gmw/wire.hpp"

#include <CLI11.hpp>

#include <csignal>
#include <cstdio>
#include <iostream>
#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

namespace {

using namespace gmw;

struct AttackFlags {
  std::string config;
  std::string mode;
  int target_class = -1;
  int max_iters = 0;
  double epsilon = 0.0;
  bool no_mp = false;
  std::uint64_t seed = 0;
  std::uint64_t budget = 0;
  std::string dataset, classifier, endpoint, out;
  std::size_t samples = 0;
  int parallel = 1;
  int timeout_ms = kDefaultTimeoutMs;
};

/// Config file first, then every flag that was actually given.
CampaignSpec build_spec(const AttackFlags &f, CLI::App &cmd) {
  CampaignSpec spec;
  spec.attack.torso_joints = humanoid_torso_joints();
  auto given = [&](const char *name) { return cmd.count(name) > 0; };

  if (!f.config.empty()) {
    const json doc = read_json_file(f.config);
    try {
      if (doc.contains("attack")) merge_attack_config(spec.attack, doc["attack"]);
      if (doc.contains("mode")) spec.attack.mode = parse_attack_mode(doc["mode"].get<std::string>());
      if (doc.contains("target_class")) spec.attack.target_class = doc["target_class"].get<int>();
      if (doc.contains("max_iters")) spec.attack.max_iters = doc["max_iters"].get<int>();
      if (doc.contains("epsilon") && !doc["epsilon"].is_null()) spec.attack.epsilon = doc["epsilon"].get<double>();
      if (doc.contains("no_mp")) spec.attack.manifold_projection = !doc["no_mp"].get<bool>();
      if (doc.contains("seed")) spec.seed = doc["seed"].get<std::uint64_t>();
      if (doc.contains("budget")) spec.attack.query_budget = doc["budget"].get<std::uint64_t>();
      if (doc.contains("dataset")) spec.dataset = doc["dataset"].get<std::string>();
      if (doc.contains("classifier") && !doc["classifier"].is_null())
        spec.classifier = doc["classifier"].get<std::string>();
      if (doc.contains("endpoint") && !doc["endpoint"].is_null()) spec.endpoint = doc["endpoint"].get<std::string>();
      if (doc.contains("out")) spec.out = doc["out"].get<std::string>();
      if (doc.contains("samples")) spec.samples = doc["samples"].get<std::size_t>();
      if (doc.contains("parallel")) spec.parallel = doc["parallel"].get<int>();
      if (doc.contains("timeout_ms")) spec.endpoint_timeout_ms = doc["timeout_ms"].get<int>();
    } catch (const json::exception &e) {
      throw ValidationError(std::string("bad config file: ") + e.what());
    }
  }

  if (given("--mode")) spec.attack.mode = parse_attack_mode(f.mode);
  if (given("--target-class")) spec.attack.target_class = f.target_class;
  if (given("--max-iters")) spec.attack.max_iters = f.max_iters;
  if (given("--epsilon")) spec.attack.epsilon = f.epsilon;
  if (given("--no-mp")) spec.attack.manifold_projection = false;
  if (given("--seed")) spec.seed = f.seed;
  if (given("--budget")) spec.attack.query_budget = f.budget;
  if (given("--dataset")) spec.dataset = f.dataset;
  if (given("--classifier")) {
    spec.classifier = f.classifier;
    spec.endpoint.reset();
  }
  if (given("--endpoint")) {
    spec.endpoint = f.endpoint;
    if (!given("--classifier")) spec.classifier.reset();
  }
  if (given("--out")) spec.out = f.out;
  if (given("--samples")) spec.samples = f.samples;
  if (given("--parallel")) spec.parallel = f.parallel;
  if (given("--timeout-ms")) spec.endpoint_timeout_ms = f.timeout_ms;
  if (spec.dataset.empty()) throw ValidationError("--dataset is required");
  return spec;
}

int serve_tcp(int port, Classifier &classifier, const SkeletonPtr &sk) {
  const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
  int one = 1;
  ::setsockopt(fd, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
  addr.sin_port = htons(static_cast<std::uint16_t>(port));
  if (::bind(fd, reinterpret_cast<sockaddr *>(&addr), sizeof addr) != 0 || ::listen(fd, 8) != 0) {
    std::perror("bind/listen");
    return 1;
  }
  std::cerr << "listening on 127.0.0.1:" << port << "\n";
  for (;;) {
    const int client = ::accept(fd, nullptr, nullptr);
    if (client < 0) continue;
    FdChannel channel(client, client, -1);
    try {
      serve_channel(channel, classifier, sk);
    } catch (const std::exception &e) {
      std::cerr << "session ended: " << e.what() << "\n";
    }
  }
}

} // namespace

int main(int argc, char **argv) {
  std::signal(SIGPIPE, SIG_IGN);
  CLI::App app{"Black-box adversarial attacks on skeletal motion classifiers"};
  app.require_subcommand(1);

  // gen-data
  GeneratorConfig gen;
  std::string gen_out;
  auto *gen_cmd = app.add_subcommand("gen-data", "Write a synthetic labeled motion corpus");
  gen_cmd->add_option("--out", gen_out, "Output directory")->required();
  gen_cmd->add_option("--classes", gen.classes, "Number of classes")->capture_default_str();
  gen_cmd->add_option("--per-class", gen.per_class, "Samples per class")->capture_default_str();
  gen_cmd->add_option("--frames", gen.frames, "Frames per motion")->capture_default_str();
  gen_cmd->add_option("--seed", gen.seed, "Generator seed")->capture_default_str();

  // train
  std::string train_dataset, train_out;
  std::size_t holdout_every = 0;
  auto *train_cmd = app.add_subcommand("train", "Fit the built-in nearest-centroid classifier");
  train_cmd->add_option("--dataset", train_dataset, "Dataset directory")->required();
  train_cmd->add_option("--out", train_out, "Model file")->required();
  train_cmd->add_option("--holdout-every", holdout_every,
                        "Hold out every k-th motion and report its accuracy (0: train on all)");

  // attack
  AttackFlags af;
  auto *attack_cmd = app.add_subcommand("attack", "Run an attack campaign");
  attack_cmd->add_option("--config", af.config, "JSON config mirroring the flags; flags override it");
  attack_cmd->add_option("--mode", af.mode, "untargeted | targeted");
  attack_cmd->add_option("--target-class", af.target_class, "Target class (targeted; default: random per motion)");
  attack_cmd->add_option("--max-iters", af.max_iters, "Iteration cap K");
  attack_cmd->add_option("--epsilon", af.epsilon, "Stopping distance");
  attack_cmd->add_flag("--no-mp", af.no_mp, "Disable manifold projection");
  attack_cmd->add_option("--seed", af.seed, "Campaign seed");
  attack_cmd->add_option("--budget", af.budget, "Query budget per motion");
  attack_cmd->add_option("--dataset", af.dataset, "Dataset directory");
  attack_cmd->add_option("--classifier", af.classifier, "Built-in model file");
  attack_cmd->add_option("--endpoint", af.endpoint, "Remote classifier: tcp://host:port or stdio:<command>");
  attack_cmd->add_option("--timeout-ms", af.timeout_ms, "Remote read timeout");
  attack_cmd->add_option("--out", af.out, "Output directory");
  attack_cmd->add_option("--samples", af.samples, "Number of motions to attack");
  attack_cmd->add_option("--parallel", af.parallel, "Concurrent attack instances");

  // eval
  std::string eval_out;
  auto *eval_cmd = app.add_subcommand("eval", "Recompute report.{csv,json} from a campaign directory");
  eval_cmd->add_option("--out", eval_out, "Campaign directory")->required();

  // report
  std::vector<std::string> report_dirs;
  auto *report_cmd = app.add_subcommand("report", "Print table rows for campaign directories");
  report_cmd->add_option("dirs", report_dirs, "Campaign directories")->required();

  // serve
  std::string serve_model, serve_dataset;
  int serve_port = 0;
  bool serve_stdio = false;
  auto *serve_cmd = app.add_subcommand("serve", "Serve a built-in model over the wire protocol");
  serve_cmd->add_option("--classifier", serve_model, "Built-in model file")->required();
  serve_cmd->add_option("--dataset", serve_dataset, "Dataset whose skeleton incoming frames use");
  serve_cmd->add_flag("--stdio", serve_stdio, "Speak the protocol on stdin/stdout");
  serve_cmd->add_option("--port", serve_port, "Listen on 127.0.0.1:PORT");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen_cmd) {
      const auto corpus = generate_corpus(gen);
      write_dataset(gen_out, corpus);
      std::cout << "wrote " << corpus.size() << " motions to " << gen_out << "\n";
      return 0;
    }
    if (*train_cmd) {
      const auto data = load_dataset(train_dataset);
      std::vector<Motion> train, held;
      for (std::size_t i = 0; i < data.size(); ++i)
        (holdout_every > 0 && i % holdout_every == 0 ? held : train).push_back(data[i]);
      const CentroidModel model = train_centroid(train);
      save_centroid_model(model, train_out);
      std::cout << "trained on " << train.size() << " motions, " << model.num_classes() << " classes\n";
      if (!held.empty()) {
        std::size_t ok = 0;
        for (const auto &m : held) ok += centroid_classify(model, m).class_id == *m.label();
        std::printf("holdout accuracy %.2f%% (%zu/%zu)\n", 100.0 * static_cast<double>(ok) / held.size(), ok,
                    held.size());
      }
      return 0;
    }
    if (*attack_cmd) {
      const CampaignSpec spec = build_spec(af, *attack_cmd);
      const auto summary = run_campaign(spec);
      std::size_t ok = 0;
      for (const auto &o : summary.outcomes) {
        ok += o.success;
        if (!o.success)
          std::cerr << "motion " << o.id << ": " << (o.error.empty() ? o.status : o.error_kind + ": " + o.error)
                    << "\n";
      }
      std::printf("success %zu/%zu\n", ok, summary.outcomes.size());
      if (summary.report)
        std::cout << format_table_row(spec.classifier ? "centroid" : "remote", spec.attack.manifold_projection,
                                      *summary.report)
                  << "\n";
      return summary.all_succeeded ? 0 : 2;
    }
    if (*eval_cmd) {
      const auto rep = evaluate_campaign(eval_out);
      if (!rep) {
        std::cout << "no successful motions to evaluate\n";
        return 2;
      }
      const json run = read_json_file(std::filesystem::path(eval_out) / "run.json");
      std::cout << format_table_row(run.at("model_name").get<std::string>(),
                                    run.at("spec").at("attack").at("manifold_projection").get<bool>(), *rep)
                << "\n";
      return 0;
    }
    if (*report_cmd) {
      for (const auto &d : report_dirs) {
        const json rep = read_json_file(std::filesystem::path(d) / "report.json");
        if (rep.value("n_samples", 0) == 0) {
          std::cout << rep.value("model", std::string("?")) << ", " << rep.value("mp_flag", std::string("?"))
                    << ", no samples\n";
          continue;
        }
        auto opt = [&](const char *k) {
          return rep[k].is_null() ? std::optional<double>() : std::optional<double>(rep[k].get<double>());
        };
        std::cout << format_table_row(rep["model"].get<std::string>(), rep["mp_flag"] == "MP", rep["l"].get<double>(),
                                      rep["delta_a"].get<double>(), opt("delta_alpha"),
                                      rep["bone_dev_pct"].get<double>(), opt("om_pct"))
                  << "\n";
      }
      return 0;
    }
    if (*serve_cmd) {
      auto model = std::make_shared<const CentroidModel>(load_centroid_model(serve_model));
      SkeletonPtr sk = serve_dataset.empty() ? humanoid_skeleton() : load_dataset(serve_dataset).front().skeleton_ptr();
      CentroidClassifier classifier(model);
      if (serve_stdio) {
        FdChannel channel(STDIN_FILENO, STDOUT_FILENO, -1);
        serve_channel(channel, classifier, sk);
        return 0;
      }
      if (serve_port <= 0) throw ValidationError("serve needs --stdio or --port");
      return serve_tcp(serve_port, classifier, sk);
    }
  } catch (const std::exception &e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
