#include "gmw/attack.hpp"
#include "gmw/centroid.hpp"
#include "gmw/synth.hpp"
#include "support.hpp"

#include <gtest/gtest.h>

#include <functional>

using namespace gmw;

namespace {

class FnClassifier : public Classifier {
public:
  FnClassifier(int classes, std::size_t joints, std::function<int(const Motion &)> fn)
      : classes_(classes), joints_(joints), fn_(std::move(fn)) {}
  int num_classes() const override { return classes_; }
  std::size_t num_joints() const override { return joints_; }
  Label classify(const Motion &mo) override { return {fn_(mo)}; }

private:
  int classes_;
  std::size_t joints_;
  std::function<int(const Motion &)> fn_;
};

SkeletonPtr point_skeleton() {
  JointSpec root;
  root.name = "root";
  return make_skeleton({root});
}

Motion constant_motion(const SkeletonPtr &sk, double value, std::optional<int> label = std::nullopt) {
  return Motion(sk, Frames::Constant(3, static_cast<Eigen::Index>(3 * sk->joint_count()), value), 0.1, label);
}

struct SmallWorld {
  SkeletonPtr sk = humanoid_skeleton();
  std::vector<Motion> corpus;
  std::shared_ptr<const CentroidModel> model;

  SmallWorld() {
    GeneratorConfig g;
    g.classes = 4;
    g.per_class = 8;
    g.frames = 24;
    corpus = generate_corpus(g, sk);
    model = std::make_shared<const CentroidModel>(train_centroid(corpus));
  }

  std::vector<Motion> pool_without(std::size_t i) const {
    std::vector<Motion> pool;
    for (std::size_t k = 0; k < corpus.size(); ++k)
      if (k != i) pool.push_back(corpus[k]);
    return pool;
  }
};

const SmallWorld &world() {
  static const SmallWorld w;
  return w;
}

AttackConfig small_config(bool mp, int iters) {
  AttackConfig cfg;
  cfg.max_iters = iters;
  cfg.manifold_projection = mp;
  cfg.torso_joints = humanoid_torso_joints();
  cfg.rng_seed = 42;
  return cfg;
}

std::vector<double> iterate_ls(const std::vector<TraceRow> &trace) {
  std::vector<double> out;
  for (const auto &r : trace)
    if (r.phase == "init" || r.phase == "iterate") out.push_back(r.l);
  return out;
}

} // namespace

TEST(Exploration, OrthogonalNoisePassesThrough) {
  Eigen::VectorXd d(2), r(2);
  d << 1, 0;
  r << 0, 0.5;
  EXPECT_TRUE(orthogonal_component(r, d).isApprox(Eigen::Vector2d(0, 0.5)));
}

TEST(Exploration, ParallelNoiseVanishes) {
  Eigen::VectorXd d(2), r(2);
  d << 1, 0;
  r << 0.3, 0;
  EXPECT_EQ(orthogonal_component(r, d).norm(), 0.0);
}

TEST(Exploration, HandEvaluatedSlice) {
  Eigen::VectorXd diff(2), r(2);
  diff << 2, 0;
  r << 1, 1;
  const Eigen::VectorXd delta = exploration_slice(diff, r, 0.1);
  EXPECT_NEAR(delta[0], 0.0, 1e-15);
  EXPECT_NEAR(delta[1], 0.1 * std::sqrt(2.0), 1e-15);
}

TEST(Exploration, WeightsScaleJointColumns) {
  const auto sk = gmw::test::chain_skeleton();
  const Motion x(sk, Frames::Zero(3, 9), 0.1);
  const Frames delta = Frames::Ones(3, 9);
  const std::vector<double> w{0.3, 1.0, 0.0};
  const Motion out = apply_weighted_step(x, delta, w);
  EXPECT_EQ(out.frames().col(0), Eigen::VectorXd::Constant(3, 0.3));
  EXPECT_EQ(out.frames().col(4), Eigen::VectorXd::Constant(3, 1.0));
  EXPECT_EQ(out.frames().col(8), Eigen::VectorXd::Zero(3));
}

TEST(Exploration, StepIsOrthogonalPerAxis) {
  const auto &w = world();
  const Motion &x = w.corpus[0];
  const Motion &xa = w.corpus[9];
  CounterRng rng(1);
  const Eigen::Index joints = static_cast<Eigen::Index>(x.joint_count());
  for (int draw = 0; draw < 200; ++draw) {
    const Frames delta = exploration_step(xa, x, 0.7, rng);
    const Frames diff = x.frames() - xa.frames();
    for (Eigen::Index a = 0; a < 3; ++a) {
      double dot = 0.0, dn = 0.0;
      for (Eigen::Index t = 0; t < diff.rows(); ++t)
        for (Eigen::Index j = 0; j < joints; ++j) {
          dot += delta(t, 3 * j + a) * diff(t, 3 * j + a);
          dn += diff(t, 3 * j + a) * diff(t, 3 * j + a);
        }
      EXPECT_LT(std::abs(dot / std::sqrt(dn)), 1e-8);
    }
  }
}

TEST(Exploration, CoincidentSampleRejected) {
  const auto &w = world();
  CounterRng rng(1);
  EXPECT_THROW(exploration_step(w.corpus[0], w.corpus[0], 0.1, rng), ValidationError);
}

TEST(Probing, Endpoints) {
  const auto sk = point_skeleton();
  const Motion a = constant_motion(sk, 0.0), b = constant_motion(sk, 3.0);
  EXPECT_EQ(aimed_probing(a, b, 0.0).frames(), a.frames());
  EXPECT_EQ(aimed_probing(a, b, 1.0).frames(), b.frames());
  EXPECT_THROW(aimed_probing(a, b, 1.5), ValidationError);
}

TEST(Probing, QuarterStep) {
  const auto sk = point_skeleton();
  const Motion a = constant_motion(sk, 0.0);
  Frames t(3, 3);
  t << 1, 2, 0, 1, 2, 0, 1, 2, 0;
  const Motion out = aimed_probing(a, a.with_frames(t), 0.25);
  EXPECT_EQ(out.frames()(0, 0), 0.25);
  EXPECT_EQ(out.frames()(0, 1), 0.5);
}

TEST(Predicate, UntargetedAndTargeted) {
  AttackConfig u;
  EXPECT_FALSE(adversarial_predicate({3}, u, {3}));
  EXPECT_TRUE(adversarial_predicate({7}, u, {3}));
  AttackConfig t;
  t.mode = AttackMode::targeted;
  t.target_class = 5;
  EXPECT_TRUE(adversarial_predicate({5}, t, {3}));
  EXPECT_FALSE(adversarial_predicate({7}, t, {3}));
}

TEST(Config, Validation) {
  AttackConfig c;
  c.mode = AttackMode::targeted;
  EXPECT_THROW(c.validate(), ValidationError);
  AttackConfig b;
  b.beta_init = 0.0;
  EXPECT_THROW(b.validate(), ValidationError);
  AttackConfig w;
  w.torso_joints = {"tail"};
  EXPECT_THROW(resolve_joint_weights(w, *humanoid_skeleton()), ValidationError);
}

TEST(Initialize, SeedCarriesADifferentLabel) {
  const auto &w = world();
  CentroidClassifier cc(w.model);
  QueryGateway gw(cc);
  const auto pool = w.pool_without(0);
  const AttackResult r = gmw_attack(w.corpus[0], pool, *w.sk, small_config(false, 0), gw);
  EXPECT_NE(r.adversarial_label, r.original_label);
  EXPECT_TRUE(r.success);
  EXPECT_EQ(r.status, AttackStatus::max_iters);
  EXPECT_EQ(r.iterations, 0);
  EXPECT_EQ(r.initial_l, r.final_l);
  EXPECT_LT(r.initial_l, r.seed_l);
}

TEST(Initialize, TargetNobodyHasIsAnError) {
  const auto sk = point_skeleton();
  FnClassifier fn(6, 1, [](const Motion &) { return 1; });
  QueryGateway gw(fn);
  std::vector<Motion> pool{constant_motion(sk, 1.0), constant_motion(sk, 2.0)};
  AttackConfig cfg;
  cfg.mode = AttackMode::targeted;
  cfg.target_class = 4;
  cfg.manifold_projection = false;
  EXPECT_THROW(gmw_attack(constant_motion(sk, 0.0), pool, *sk, cfg, gw), InitializationError);
}

TEST(Initialize, TargetEqualToOriginalIsAnError) {
  const auto sk = point_skeleton();
  FnClassifier fn(6, 1, [](const Motion &) { return 4; });
  QueryGateway gw(fn);
  std::vector<Motion> pool{constant_motion(sk, 1.0)};
  AttackConfig cfg;
  cfg.mode = AttackMode::targeted;
  cfg.target_class = 4;
  cfg.manifold_projection = false;
  EXPECT_THROW(gmw_attack(constant_motion(sk, 0.0), pool, *sk, cfg, gw), InitializationError);
}

TEST(Initialize, SeedSelectionIsReproducibleAndReverified) {
  const auto sk = point_skeleton();
  // Stored labels lie; only members at 5 or above are adversarial.
  std::vector<Motion> pool;
  for (int i = 1; i <= 8; ++i) pool.push_back(constant_motion(sk, i, 0));
  FnClassifier fn(2, 1, [](const Motion &m) { return m.frames()(0, 0) >= 5.0 ? 1 : 0; });
  auto run = [&](std::uint64_t seed) {
    QueryGateway gw(fn);
    AttackConfig cfg;
    cfg.max_iters = 0;
    cfg.manifold_projection = false;
    cfg.rng_seed = seed;
    return gmw_attack(constant_motion(sk, 0.0), pool, *sk, cfg, gw);
  };
  const auto a = run(3), b = run(3);
  EXPECT_EQ(a.seed_l, b.seed_l);
  EXPECT_EQ(trace_csv(a.trace), trace_csv(b.trace));
  EXPECT_GE(a.seed_l, 5.0 * std::sqrt(9.0) / 3.0);
  // Bisection lands just past the boundary at 5.
  EXPECT_NEAR(a.adversarial.frames()(0, 0), 5.0, 1e-4);
  EXPECT_GE(a.adversarial.frames()(0, 0), 5.0);
}

TEST(Attack, LambdaFloorReturnsCurrentSample) {
  const auto sk = point_skeleton();
  const Motion x = constant_motion(sk, 0.0);
  Frames s(3, 3);
  s << 1, 2, 3, 1, 2, 3, 1, 2, 3;
  const Motion seed = x.with_frames(s);
  const Eigen::VectorXd dir = Eigen::Map<const Eigen::VectorXd>(s.data(), 9).normalized();
  // Adversarial only exactly on the far half of the segment towards the seed.
  FnClassifier fn(2, 1, [&](const Motion &m) {
    const Eigen::VectorXd v = Eigen::Map<const Eigen::VectorXd>(m.frames().data(), 9);
    const double along = v.dot(dir);
    return (v - along * dir).norm() < 1e-13 && along >= 0.5 * s.norm() ? 1 : 0;
  });
  QueryGateway gw(fn);
  AttackConfig cfg;
  cfg.manifold_projection = false;
  cfg.max_iters = 5;
  const auto r = gmw_attack(x, std::vector<Motion>{seed}, *sk, cfg, gw);
  EXPECT_EQ(r.status, AttackStatus::lambda_floor);
  EXPECT_TRUE(r.success);
  EXPECT_EQ(r.final_l, r.initial_l);
  int explores = 0;
  for (const auto &row : r.trace) explores += row.phase == "explore";
  // 0.1 * 0.5^k < 1e-10 first holds at k = 30.
  EXPECT_EQ(explores, 30);
}

TEST(Attack, BudgetExhaustionKeepsAdversarialSample) {
  const auto &w = world();
  CentroidClassifier cc(w.model);
  QueryGateway gw(cc, 120);
  const auto pool = w.pool_without(1);
  const auto r = gmw_attack(w.corpus[1], pool, *w.sk, small_config(false, 500), gw);
  EXPECT_EQ(r.status, AttackStatus::budget_exhausted);
  EXPECT_TRUE(r.success);
  EXPECT_EQ(r.queries, 120u);
}

TEST(Attack, EndToEndUntargetedWithProjection) {
  const auto &w = world();
  CentroidClassifier cc(w.model);
  QueryGateway gw(cc);
  const auto pool = w.pool_without(2);
  const auto cfg = small_config(true, 60);
  const auto r = gmw_attack(w.corpus[2], pool, *w.sk, cfg, gw);
  EXPECT_TRUE(r.success);
  EXPECT_LT(r.final_l, r.initial_l);
  EXPECT_LT(r.initial_l, r.seed_l);
  EXPECT_TRUE(check_on_manifold(r.adversarial, *w.sk, cfg.projection).on_manifold);
  EXPECT_EQ(centroid_classify(*w.model, r.adversarial), r.adversarial_label);

  const auto ls = iterate_ls(r.trace);
  ASSERT_EQ(ls.size(), 61u);
  for (std::size_t k = 1; k < ls.size(); ++k) EXPECT_LE(ls[k], ls[k - 1]);
  EXPECT_EQ(ls.back(), r.final_l);
}

TEST(Attack, TraceInvariants) {
  const auto &w = world();
  CentroidClassifier cc(w.model);
  QueryGateway gw(cc);
  const auto pool = w.pool_without(3);
  const auto r = gmw_attack(w.corpus[3], pool, *w.sk, small_config(false, 80), gw);
  std::uint64_t queries = 0;
  double explored_l = 0.0;
  for (const auto &row : r.trace) {
    if (is_query_phase(row.phase)) ++queries;
    EXPECT_EQ(row.queries_cumulative, queries);
    if (row.phase == "explore" && row.adversarial) explored_l = row.l;
    // Accepted probing strictly approaches x.
    if (row.phase == "probe" && row.adversarial) EXPECT_LT(row.l, explored_l);
    if (row.phase == "iterate" || row.phase == "init") EXPECT_TRUE(row.adversarial);
  }
  EXPECT_EQ(queries, r.queries);
  EXPECT_EQ(queries, gw.ledger().total);
}

TEST(Attack, TargetedReachesTheTarget) {
  const auto &w = world();
  CentroidClassifier cc(w.model);
  QueryGateway gw(cc);
  const auto pool = w.pool_without(4);
  auto cfg = small_config(true, 40);
  cfg.mode = AttackMode::targeted;
  cfg.target_class = 3;
  const auto r = gmw_attack(w.corpus[4], pool, *w.sk, cfg, gw);
  EXPECT_TRUE(r.success);
  EXPECT_EQ(r.adversarial_label.class_id, 3);
  EXPECT_LE(r.final_l, r.initial_l);
}

TEST(Attack, ReproducibleForAFixedSeed) {
  const auto &w = world();
  const auto pool = w.pool_without(5);
  auto run = [&] {
    CentroidClassifier cc(w.model);
    QueryGateway gw(cc);
    return gmw_attack(w.corpus[5], pool, *w.sk, small_config(true, 25), gw);
  };
  const auto a = run(), b = run();
  EXPECT_EQ(trace_csv(a.trace), trace_csv(b.trace));
  EXPECT_EQ(a.adversarial.frames(), b.adversarial.frames());
}

TEST(Attack, EpsilonStopsEarly) {
  const auto &w = world();
  CentroidClassifier cc(w.model);
  QueryGateway gw(cc);
  const auto pool = w.pool_without(6);
  auto cfg = small_config(false, 200);
  cfg.epsilon = 1e6;
  const auto r = gmw_attack(w.corpus[6], pool, *w.sk, cfg, gw);
  EXPECT_EQ(r.status, AttackStatus::converged_epsilon);
  EXPECT_LT(r.iterations, 200);
  EXPECT_TRUE(r.success);
}
