#include "gmw/attack.hpp"
#include "gmw/centroid.hpp"
#include "gmw/synth.hpp"
#include "gmw/wire.hpp"
#include "support.hpp"

#include <gtest/gtest.h>

#include <cstdlib>
#include <functional>
#include <thread>

using namespace gmw;

namespace {

class CountingClassifier : public Classifier {
public:
  explicit CountingClassifier(std::size_t joints, int classes = 3) : joints_(joints), classes_(classes) {}
  int num_classes() const override { return classes_; }
  std::size_t num_joints() const override { return joints_; }
  Label classify(const Motion &mo) override {
    ++calls;
    return {mo.frames()(0, 0) > 0 ? 1 : 0};
  }
  int calls = 0;

private:
  std::size_t joints_;
  int classes_;
};

SkeletonPtr point_skeleton() {
  JointSpec root;
  root.name = "root";
  return make_skeleton({root});
}

Motion constant_motion(const SkeletonPtr &sk, std::size_t frames, double value, std::optional<int> label = {}) {
  return Motion(sk, Frames::Constant(static_cast<Eigen::Index>(frames), static_cast<Eigen::Index>(3 * sk->joint_count()), value),
                0.1, label);
}

/// Two connected channels; the second end goes to a server thread.
std::pair<std::unique_ptr<FdChannel>, std::unique_ptr<FdChannel>> channel_pair(int timeout_ms = 5000) {
  int fds[2];
  if (::socketpair(AF_UNIX, SOCK_STREAM, 0, fds) != 0) throw std::runtime_error("socketpair");
  return {std::make_unique<FdChannel>(fds[0], fds[0], timeout_ms), std::make_unique<FdChannel>(fds[1], fds[1], timeout_ms)};
}

/// Server thread that runs `body` on its end and closes it afterwards.
class ScriptedServer {
public:
  explicit ScriptedServer(std::unique_ptr<FdChannel> end, std::function<void(FdChannel &)> body)
      : thread_([end = std::move(end), body = std::move(body)]() mutable {
          try {
            body(*end);
          } catch (const std::exception &) {
          }
        }) {}
  ~ScriptedServer() { thread_.join(); }

private:
  std::thread thread_;
};

void handshake(FdChannel &ch, int classes, std::size_t joints) {
  const json hello = wire::parse(*ch.recv_line());
  ASSERT_EQ(hello["type"], "hello");
  ch.send_line(wire::ready(classes, joints, std::nullopt).dump());
}

struct World {
  SkeletonPtr sk = humanoid_skeleton();
  std::vector<Motion> corpus;
  std::shared_ptr<const CentroidModel> model;
  World() {
    GeneratorConfig g;
    g.classes = 4;
    g.per_class = 6;
    g.frames = 24;
    corpus = generate_corpus(g, sk);
    model = std::make_shared<const CentroidModel>(train_centroid(corpus));
  }
};

const World &world() {
  static const World w;
  return w;
}

AttackConfig attack_config(int iters) {
  AttackConfig cfg;
  cfg.max_iters = iters;
  cfg.torso_joints = humanoid_torso_joints();
  cfg.rng_seed = 9;
  return cfg;
}

} // namespace

TEST(Gateway, RepeatedQueriesAreEachCounted) {
  const auto sk = point_skeleton();
  CountingClassifier clf(1);
  QueryGateway gw(clf);
  const Motion mo = constant_motion(sk, 3, 0.5);
  EXPECT_EQ(gw.classify(mo, "seed"), gw.classify(mo, "seed"));
  EXPECT_EQ(gw.ledger().total, 2u);
  EXPECT_EQ(gw.ledger().per_phase.at("seed"), 2u);
  EXPECT_EQ(clf.calls, 2);
}

TEST(Gateway, BudgetIsHard) {
  const auto sk = point_skeleton();
  CountingClassifier clf(1);
  QueryGateway gw(clf, 5);
  for (int i = 0; i < 5; ++i) gw.classify(constant_motion(sk, 3, i));
  EXPECT_THROW(gw.classify(constant_motion(sk, 3, 9.0)), BudgetExhausted);
  EXPECT_EQ(gw.ledger().total, 5u);
  EXPECT_EQ(clf.calls, 5);
}

TEST(Gateway, ShapeMismatchNeverReachesClassifier) {
  CountingClassifier clf(2);
  QueryGateway gw(clf);
  EXPECT_THROW(gw.classify(constant_motion(point_skeleton(), 3, 1.0)), StructuralError);
  EXPECT_EQ(gw.ledger().total, 0u);
  EXPECT_EQ(clf.calls, 0);
}

TEST(Gateway, OutOfRangeLabelIsAProtocolError) {
  CountingClassifier clf(1, 1);
  QueryGateway gw(clf);
  EXPECT_THROW(gw.classify(constant_motion(point_skeleton(), 3, 1.0)), ProtocolError);
  EXPECT_EQ(gw.ledger().total, 0u);
}

TEST(Centroid, SingleSamplePerClassIsItsOwnCentroid) {
  const auto sk = point_skeleton();
  CounterRng rng(1);
  std::vector<Motion> data;
  for (int c = 0; c < 2; ++c) {
    Frames f(5, 3);
    for (Eigen::Index i = 0; i < f.size(); ++i) f.data()[i] = rng.normal();
    data.emplace_back(sk, f, 0.1, c);
  }
  const CentroidModel m = train_centroid(data, FeatureSpec{4, true, true});
  for (int c = 0; c < 2; ++c) {
    EXPECT_LT((m.centroids.row(c).transpose() - m.normalized_features(data[static_cast<std::size_t>(c)])).norm(), 1e-12);
    EXPECT_EQ(centroid_classify(m, data[static_cast<std::size_t>(c)]).class_id, c);
  }
}

TEST(Centroid, DuplicatedDatasetGivesTheSameModel) {
  const auto &w = world();
  std::vector<Motion> twice = w.corpus;
  twice.insert(twice.end(), w.corpus.begin(), w.corpus.end());
  const CentroidModel m = train_centroid(twice);
  EXPECT_LT((m.mean - w.model->mean).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT((m.scale - w.model->scale).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT((m.centroids - w.model->centroids).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(Centroid, TieGoesToLowerClass) {
  const auto sk = point_skeleton();
  CentroidModel m;
  m.spec = FeatureSpec{3, true, false};
  m.num_joints = 1;
  m.mean = Eigen::VectorXd::Zero(9);
  m.scale = Eigen::VectorXd::Ones(9);
  m.centroids = Eigen::MatrixXd::Constant(5, 9, 100.0);
  m.centroids.row(2).setConstant(-1.0);
  m.centroids.row(4).setConstant(1.0);
  EXPECT_EQ(centroid_classify(m, constant_motion(sk, 3, 0.0)).class_id, 2);
  EXPECT_EQ(centroid_classify(m, constant_motion(sk, 3, 0.01)).class_id, 4);
}

TEST(Centroid, FramesOutsideTheDownsampleAreIgnored) {
  const auto &w = world();
  const Motion &mo = w.corpus[3];
  const auto kept = downsample_indices(mo.frame_count(), w.model->spec.downsample_frames);
  CounterRng rng(2);
  Frames f = mo.frames();
  for (Eigen::Index t = 0; t < f.rows(); ++t)
    if (std::find(kept.begin(), kept.end(), static_cast<std::size_t>(t)) == kept.end())
      for (Eigen::Index c = 0; c < f.cols(); ++c) f(t, c) += 5.0 * rng.normal();
  EXPECT_EQ(w.model->normalized_features(mo.with_frames(f)), w.model->normalized_features(mo));
  EXPECT_EQ(centroid_classify(*w.model, mo.with_frames(f)), centroid_classify(*w.model, mo));
}

TEST(Centroid, HoldoutAccuracy) {
  GeneratorConfig g;
  g.classes = 8;
  g.per_class = 20;
  const auto corpus = generate_corpus(g);
  std::vector<Motion> train, test;
  for (std::size_t i = 0; i < corpus.size(); ++i) (i % 5 == 0 ? test : train).push_back(corpus[i]);
  const CentroidModel m = train_centroid(train);
  std::size_t right = 0;
  for (const auto &mo : test) right += centroid_classify(m, mo).class_id == *mo.label();
  EXPECT_GE(static_cast<double>(right) / static_cast<double>(test.size()), 0.95);
}

TEST(Centroid, JsonRoundTripIsExact) {
  const auto &w = world();
  gmw::test::TempDir dir("model");
  save_centroid_model(*w.model, dir.path() / "m.json");
  const CentroidModel back = load_centroid_model(dir.path() / "m.json");
  EXPECT_EQ(back.spec, w.model->spec);
  EXPECT_EQ(back.num_joints, w.model->num_joints);
  EXPECT_EQ(back.mean, w.model->mean);
  EXPECT_EQ(back.scale, w.model->scale);
  EXPECT_EQ(back.centroids, w.model->centroids);
  EXPECT_THROW(centroid_model_from_json(json{{"centroids", 3}}), Error);
}

TEST(Centroid, RejectsUnlabelledOrSingleClassData) {
  const auto sk = point_skeleton();
  std::vector<Motion> data{constant_motion(sk, 3, 0.0, 0), constant_motion(sk, 3, 1.0)};
  EXPECT_THROW(train_centroid(data), ValidationError);
  data[1] = constant_motion(sk, 3, 1.0, 0);
  EXPECT_THROW(train_centroid(data), ValidationError);
}

TEST(Wire, MessagesHaveFixedShape) {
  EXPECT_EQ(wire::hello().dump(), R"({"protocol":1,"type":"hello"})");
  EXPECT_EQ(wire::label(7, 2).dump(), R"({"class":2,"id":7,"type":"label"})");
  EXPECT_EQ(wire::error(std::nullopt, "x").dump(), R"({"id":null,"message":"x","type":"error"})");
  EXPECT_THROW(wire::parse("{"), ProtocolError);
  EXPECT_THROW(wire::parse(R"({"id":1})"), ProtocolError);
  EXPECT_THROW(wire::parse("[1,2]"), ProtocolError);
}

TEST(Wire, EchoServerRoundTrip) {
  const auto sk = point_skeleton();
  auto [client, server] = channel_pair();
  ScriptedServer srv(std::move(server), [](FdChannel &ch) {
    handshake(ch, 3, 1);
    while (auto line = ch.recv_line()) {
      const json msg = wire::parse(*line);
      EXPECT_EQ(msg["frames"].size(), 4u);
      ch.send_line(wire::label(msg["id"].get<std::uint64_t>(), 0).dump());
    }
  });
  RemoteClassifier remote(std::move(client));
  EXPECT_EQ(remote.num_classes(), 3);
  EXPECT_EQ(remote.num_joints(), 1u);
  EXPECT_FALSE(remote.expected_frames().has_value());
  for (int i = 0; i < 3; ++i) EXPECT_EQ(remote.classify(constant_motion(sk, 4, i)).class_id, 0);
}

TEST(Wire, MismatchedIdIsAProtocolError) {
  auto [client, server] = channel_pair();
  ScriptedServer srv(std::move(server), [](FdChannel &ch) {
    handshake(ch, 2, 1);
    const json msg = wire::parse(*ch.recv_line());
    ch.send_line(wire::label(msg["id"].get<std::uint64_t>() + 1, 0).dump());
  });
  RemoteClassifier remote(std::move(client));
  EXPECT_THROW(remote.classify(constant_motion(point_skeleton(), 3, 0.0)), ProtocolError);
}

TEST(Wire, ClassOutsideHandshakeIsAProtocolError) {
  auto [client, server] = channel_pair();
  ScriptedServer srv(std::move(server), [](FdChannel &ch) {
    handshake(ch, 2, 1);
    const json msg = wire::parse(*ch.recv_line());
    ch.send_line(wire::label(msg["id"].get<std::uint64_t>(), 2).dump());
  });
  RemoteClassifier remote(std::move(client));
  EXPECT_THROW(remote.classify(constant_motion(point_skeleton(), 3, 0.0)), ProtocolError);
}

TEST(Wire, SilentServerTimesOut) {
  auto [client, server] = channel_pair(200);
  ScriptedServer srv(std::move(server), [](FdChannel &ch) { ch.recv_line(); ch.recv_line(); });
  EXPECT_THROW(RemoteClassifier{std::move(client)}, TransportError);
}

TEST(Wire, ServerErrorsKeepTheSessionAlive) {
  const auto &w = world();
  auto [client, server] = channel_pair();
  CentroidClassifier clf(w.model);
  ScriptedServer srv(std::move(server), [&](FdChannel &ch) { serve_channel(ch, clf, w.sk); });
  client->send_line("not json");
  EXPECT_EQ(wire::parse(*client->recv_line())["type"], "error");
  client->send_line(R"({"type":"classify","id":4,"frames":[[1,2]]})");
  const json err = wire::parse(*client->recv_line());
  EXPECT_EQ(err["type"], "error");
  EXPECT_EQ(err["id"], 4);
  client->send_line(wire::classify(5, w.corpus[0]).dump());
  const json ok = wire::parse(*client->recv_line());
  EXPECT_EQ(ok["type"], "label");
  EXPECT_EQ(ok["class"], centroid_classify(*w.model, w.corpus[0]).class_id);
  client->shutdown_write();
}

TEST(Wire, ServerClosingMidAttackAbortsWithPartialTrace) {
  const auto &w = world();
  auto [client, server] = channel_pair();
  CentroidClassifier clf(w.model);
  ScriptedServer srv(std::move(server), [&](FdChannel &ch) {
    handshake(ch, clf.num_classes(), clf.num_joints());
    for (int answered = 0; answered < 40; ++answered) {
      const auto line = ch.recv_line();
      if (!line) return;
      const json msg = wire::parse(*line);
      Motion mo(w.sk, frames_from_json(msg["frames"], w.sk->joint_count()), 1.0 / 30.0);
      ch.send_line(wire::label(msg["id"].get<std::uint64_t>(), clf.classify(mo).class_id).dump());
    }
  });
  RemoteClassifier remote(std::move(client));
  QueryGateway gw(remote);
  std::vector<Motion> pool(w.corpus.begin() + 1, w.corpus.end());
  try {
    gmw_attack(w.corpus[0], pool, *w.sk, attack_config(100), gw);
    FAIL() << "attack should have aborted";
  } catch (const AttackAborted &e) {
    EXPECT_EQ(e.kind(), "transport");
    EXPECT_FALSE(e.trace().empty());
    std::size_t queries = 0;
    for (const auto &r : e.trace()) queries += is_query_phase(r.phase);
    EXPECT_EQ(queries, 40u);
    EXPECT_EQ(e.trace().back().queries_cumulative, 40u);
  }
}

TEST(Wire, AttackOverTheWireMatchesInProcess) {
  const auto &w = world();
  std::vector<Motion> pool(w.corpus.begin() + 1, w.corpus.end());
  const AttackConfig cfg = attack_config(30);

  CentroidClassifier local(w.model);
  QueryGateway gw_local(local);
  const AttackResult a = gmw_attack(w.corpus[0], pool, *w.sk, cfg, gw_local);

  auto [client, server] = channel_pair();
  CentroidClassifier served(w.model);
  ScriptedServer srv(std::move(server), [&](FdChannel &ch) { serve_channel(ch, served, w.sk); });
  RemoteClassifier remote(std::move(client));
  QueryGateway gw_remote(remote);
  const AttackResult b = gmw_attack(w.corpus[0], pool, *w.sk, cfg, gw_remote);

  EXPECT_EQ(trace_csv(a.trace), trace_csv(b.trace));
  EXPECT_EQ(a.adversarial.frames(), b.adversarial.frames());
  EXPECT_EQ(a.queries, b.queries);
}

TEST(Wire, TcpEndpoint) {
  const auto &w = world();
  const int lfd = ::socket(AF_INET, SOCK_STREAM, 0);
  ASSERT_GE(lfd, 0);
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
  addr.sin_port = 0;
  ASSERT_EQ(::bind(lfd, reinterpret_cast<sockaddr *>(&addr), sizeof addr), 0);
  ASSERT_EQ(::listen(lfd, 1), 0);
  socklen_t len = sizeof addr;
  ::getsockname(lfd, reinterpret_cast<sockaddr *>(&addr), &len);
  const int port = ntohs(addr.sin_port);

  CentroidClassifier clf(w.model);
  std::thread srv([&] {
    const int fd = ::accept(lfd, nullptr, nullptr);
    FdChannel ch(fd, fd);
    serve_channel(ch, clf, w.sk);
  });
  {
    RemoteClassifier remote(open_endpoint("tcp://127.0.0.1:" + std::to_string(port), 5000));
    for (std::size_t i = 0; i < 4; ++i)
      EXPECT_EQ(remote.classify(w.corpus[i]), centroid_classify(*w.model, w.corpus[i]));
  }
  srv.join();
  ::close(lfd);
  EXPECT_THROW(open_endpoint("tcp://127.0.0.1:" + std::to_string(port), 1000), TransportError);
  EXPECT_THROW(open_endpoint("udp://x:1"), ValidationError);
}

TEST(Wire, StdioEndpointThroughCli) {
  const char *cli = std::getenv("GMW_CLI");
  if (!cli) GTEST_SKIP() << "GMW_CLI not set";
  const auto &w = world();
  gmw::test::TempDir dir("stdio");
  save_centroid_model(*w.model, dir.path() / "m.json");
  RemoteClassifier remote(
      open_endpoint(std::string("stdio:") + cli + " serve --stdio --classifier " + (dir.path() / "m.json").string(), 10000));
  EXPECT_EQ(remote.num_classes(), w.model->num_classes());
  for (std::size_t i = 0; i < w.corpus.size(); i += 5)
    EXPECT_EQ(remote.classify(w.corpus[i]), centroid_classify(*w.model, w.corpus[i]));
}
