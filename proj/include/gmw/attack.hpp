#pragma once

#include "gmw/classifier.hpp"
#include "gmw/errors.hpp"
#include "gmw/manifold.hpp"
#include "gmw/motion.hpp"
#include "gmw/rng.hpp"
#include "gmw/skeleton.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace gmw {

enum class AttackMode { untargeted, targeted };

struct AttackConfig {
  AttackMode mode = AttackMode::untargeted;
  int target_class = -1; // used when mode == targeted
  int max_iters = 500;
  /// Stopping distance for l; unset means default_epsilon(skeleton).
  std::optional<double> epsilon;
  double lambda_init = 0.1;
  double beta_init = 0.1;
  double lambda_floor = 1e-10;
  double beta_floor = 1e-10;
  double adapt_up = 1.5;
  double adapt_down = 0.5;
  /// Explicit per-joint weights; when empty they come from `torso_joints`.
  std::vector<double> joint_weights;
  std::vector<std::string> torso_joints;
  double torso_weight = 0.3;
  double limb_weight = 1.0;
  bool manifold_projection = true;
  ProjectionConfig projection;
  std::uint64_t rng_seed = 0;
  std::uint64_t query_budget = 1'000'000;
  int init_search_steps = 20;
  int max_pulls = 64;

  void validate() const {
    if (mode == AttackMode::targeted && target_class < 0)
      throw ValidationError("targeted attack needs a target class");
    if (max_iters < 0) throw ValidationError("max_iters must be >= 0");
    if (epsilon && !(*epsilon >= 0.0)) throw ValidationError("epsilon must be >= 0");
    if (!(lambda_init > 0.0 && lambda_init <= 1.0)) throw ValidationError("lambda_init must lie in (0, 1]");
    if (!(beta_init > 0.0 && beta_init <= 1.0)) throw ValidationError("beta_init must lie in (0, 1]");
    if (!(adapt_down > 0.0 && adapt_down < 1.0 && adapt_up > 1.0))
      throw ValidationError("need 0 < adapt_down < 1 < adapt_up");
    if (!(lambda_floor > 0.0) || !(beta_floor > 0.0)) throw ValidationError("step floors must be positive");
    for (double w : joint_weights)
      if (!(w >= 0.0) || !std::isfinite(w)) throw ValidationError("joint weights must be finite and >= 0");
    if (!(torso_weight >= 0.0) || !(limb_weight >= 0.0)) throw ValidationError("joint weights must be >= 0");
    if (init_search_steps < 0 || max_pulls < 0) throw ValidationError("search step counts must be >= 0");
    projection.validate();
  }
};

/// W as a per-joint vector.
inline std::vector<double> resolve_joint_weights(const AttackConfig &cfg, const Skeleton &sk) {
  if (!cfg.joint_weights.empty()) {
    if (cfg.joint_weights.size() != sk.joint_count())
      throw ValidationError("joint_weights has " + std::to_string(cfg.joint_weights.size()) +
                            " entries, skeleton has " + std::to_string(sk.joint_count()) + " joints");
    return cfg.joint_weights;
  }
  std::vector<double> w(sk.joint_count(), cfg.limb_weight);
  for (const auto &name : cfg.torso_joints) {
    auto j = sk.find(name);
    if (!j) throw ValidationError("torso joint '" + name + "' not in skeleton");
    w[*j] = cfg.torso_weight;
  }
  return w;
}

/// 1% of the mean bone length, scaled by sqrt(joint count).
inline double default_epsilon(const Skeleton &sk) {
  return 0.01 * sk.mean_bone_length() * std::sqrt(static_cast<double>(sk.joint_count()));
}

/// Averaged joint position deviation of one motion pair: |x - x'|_2 / n.
inline double motion_distance(const Motion &a, const Motion &b) {
  require_same_shape(a, b);
  return (a.frames() - b.frames()).norm() / static_cast<double>(a.frame_count());
}

/// Part of R orthogonal to the unit vector d.
inline Eigen::VectorXd orthogonal_component(const Eigen::VectorXd &r, const Eigen::VectorXd &d) {
  return r - r.dot(d) * d;
}

/// One axis slice of the exploration step. `diff` is x_* - x'_* and `noise`
/// the normal draw; returns Delta_* (zero when diff is zero).
inline Eigen::VectorXd exploration_slice(const Eigen::VectorXd &diff, const Eigen::VectorXd &noise, double lambda) {
  const double dist = diff.norm();
  const double noise_norm = noise.norm();
  if (dist == 0.0 || noise_norm == 0.0) return Eigen::VectorXd::Zero(diff.size());
  const Eigen::VectorXd dir = diff / dist;
  const Eigen::VectorXd step = lambda * (noise / noise_norm) * dist;
  return orthogonal_component(step, dir);
}

/// Unweighted exploration step Delta for every coordinate, built per axis
/// from slices of length n*O. Consumes 3*n*O normal draws.
inline Frames exploration_step(const Motion &x_adv, const Motion &x, double lambda, CounterRng &rng) {
  require_same_shape(x_adv, x);
  const Frames diff = x.frames() - x_adv.frames();
  if (diff.squaredNorm() == 0.0) throw ValidationError("adversarial sample coincides with the original");
  const Eigen::Index n = diff.rows();
  const Eigen::Index joints = diff.cols() / 3;
  const Eigen::Index z = n * joints;
  Frames delta = Frames::Zero(n, diff.cols());
  Eigen::VectorXd slice(z), noise(z);
  for (Eigen::Index axis = 0; axis < 3; ++axis) {
    for (Eigen::Index i = 0; i < z; ++i) noise[i] = rng.normal();
    for (Eigen::Index t = 0; t < n; ++t)
      for (Eigen::Index j = 0; j < joints; ++j) slice[t * joints + j] = diff(t, 3 * j + axis);
    const Eigen::VectorXd step = exploration_slice(slice, noise, lambda);
    for (Eigen::Index t = 0; t < n; ++t)
      for (Eigen::Index j = 0; j < joints; ++j) delta(t, 3 * j + axis) = step[t * joints + j];
  }
  return delta;
}

/// x' + W Delta, with W scaling the three columns of each joint.
inline Motion apply_weighted_step(const Motion &x_adv, const Frames &delta, std::span<const double> weights) {
  if (weights.size() != x_adv.joint_count()) throw StructuralError("weight count does not match joints");
  Frames out = x_adv.frames();
  for (std::size_t j = 0; j < weights.size(); ++j)
    out.middleCols(static_cast<Eigen::Index>(3 * j), 3) += weights[j] * delta.middleCols(static_cast<Eigen::Index>(3 * j), 3);
  return x_adv.with_frames(std::move(out));
}

inline Motion random_exploration(const Motion &x_adv, const Motion &x, double lambda, std::span<const double> weights,
                                 CounterRng &rng) {
  return apply_weighted_step(x_adv, exploration_step(x_adv, x, lambda, rng), weights);
}

/// x' + beta (target - x').
inline Motion aimed_probing(const Motion &x_adv, const Motion &target, double beta) {
  require_same_shape(x_adv, target);
  if (!(beta >= 0.0 && beta <= 1.0)) throw ValidationError("probing step must lie in [0, 1]");
  return x_adv.with_frames(x_adv.frames() + beta * (target.frames() - x_adv.frames()));
}

inline bool adversarial_predicate(Label label, const AttackConfig &cfg, Label original) {
  if (cfg.mode == AttackMode::targeted) return label.class_id == cfg.target_class;
  return label != original;
}

struct TraceRow {
  int iteration;
  std::string phase;
  double lambda;
  double beta;
  double l;
  bool adversarial;
  std::uint64_t queries_cumulative;
};

/// Phases whose rows record a classifier query. "init" and "iterate" rows mark
/// the accepted sample after initialization and after each iteration.
inline bool is_query_phase(const std::string &phase) { return phase != "init" && phase != "iterate"; }

inline std::string trace_csv(const std::vector<TraceRow> &trace) {
  std::string out = "iteration,phase,lambda,beta,l,adversarial,queries_cumulative\n";
  char buf[160];
  for (const auto &r : trace) {
    std::snprintf(buf, sizeof buf, "%d,%s,%.17g,%.17g,%.17g,%d,%llu\n", r.iteration, r.phase.c_str(), r.lambda,
                  r.beta, r.l, r.adversarial ? 1 : 0, static_cast<unsigned long long>(r.queries_cumulative));
    out += buf;
  }
  return out;
}

enum class AttackStatus { converged_epsilon, lambda_floor, beta_floor, max_iters, budget_exhausted };

inline const char *to_string(AttackStatus s) {
  switch (s) {
  case AttackStatus::converged_epsilon: return "converged_epsilon";
  case AttackStatus::lambda_floor: return "lambda_floor";
  case AttackStatus::beta_floor: return "beta_floor";
  case AttackStatus::max_iters: return "max_iters";
  case AttackStatus::budget_exhausted: return "budget_exhausted";
  }
  return "unknown";
}

struct AttackState {
  Motion current;
  Label current_label;
  double lambda;
  double beta;
  int iteration = 0;
  std::uint64_t queries_used = 0;
  CounterRng rng;
};

struct AttackResult {
  Motion adversarial;
  Label adversarial_label;
  Label original_label;
  bool success = false;
  AttackStatus status = AttackStatus::max_iters;
  std::uint64_t queries = 0;
  int iterations = 0;
  double seed_l = 0.0;    // l of the pool seed before the initial search
  double initial_l = 0.0; // l of the initialized sample x'_0
  double final_l = 0.0;
  std::vector<TraceRow> trace;
};

/// A classifier transport or protocol failure stopped the attack; the trace up
/// to that point is kept.
class AttackAborted : public Error {
public:
  AttackAborted(const std::string &what, std::vector<TraceRow> trace, std::string kind = "transport")
      : Error(what), trace_(std::move(trace)), kind_(std::move(kind)) {}
  const std::vector<TraceRow> &trace() const noexcept { return trace_; }
  /// "transport" or "protocol".
  const std::string &kind() const noexcept { return kind_; }

private:
  std::vector<TraceRow> trace_;
  std::string kind_;
};

namespace detail {

/// Queries the gateway and appends the matching trace row.
class TracedOracle {
public:
  TracedOracle(QueryGateway &gateway, const AttackConfig &cfg, const Motion &original, std::vector<TraceRow> &trace)
      : gateway_(gateway), cfg_(cfg), original_(original), trace_(trace) {}

  Label label(const Motion &mo, const std::string &phase, int iteration, double lambda, double beta) {
    const Label l = gateway_.classify(mo, phase);
    last_ = l;
    const bool adv = original_label_ ? adversarial_predicate(l, cfg_, *original_label_) : false;
    trace_.push_back({iteration, phase, lambda, beta, motion_distance(mo, original_), adv, gateway_.ledger().total});
    return l;
  }

  bool adversarial(const Motion &mo, const std::string &phase, int iteration, double lambda, double beta) {
    const Label l = label(mo, phase, iteration, lambda, beta);
    return adversarial_predicate(l, cfg_, *original_label_);
  }

  void mark(const Motion &mo, const std::string &phase, int iteration, double lambda, double beta) {
    trace_.push_back({iteration, phase, lambda, beta, motion_distance(mo, original_), true, gateway_.ledger().total});
  }

  void set_original_label(Label l) { original_label_ = l; }
  Label last() const { return last_; }
  std::uint64_t queries() const { return gateway_.ledger().total; }

private:
  QueryGateway &gateway_;
  const AttackConfig &cfg_;
  const Motion &original_;
  std::vector<TraceRow> &trace_;
  std::optional<Label> original_label_;
  Label last_;
};

} // namespace detail

/// Blend of two motions in joint-angle space: angles move along the shortest
/// wrapped difference, root positions linearly. The result keeps rest bone
/// lengths exactly.
inline Motion angle_blend(const Motion &from, const Motion &to, const Skeleton &sk, double s) {
  const AngleMotion a = inverse_kinematics(from, sk);
  const AngleMotion b = inverse_kinematics(to, sk);
  AngleMotion m = a;
  m.root_positions = a.root_positions + s * (b.root_positions - a.root_positions);
  m.angles = a.angles + s * (b.angles - a.angles).unaryExpr([](double v) { return wrap_angle(v); });
  return forward_kinematics(m, sk);
}

/// Picks a pool motion the classifier puts on the adversarial side (visiting
/// the pool in a seeded random order, so the pick is uniform over qualifying
/// members), then bisects towards `x` for the closest point that stays
/// adversarial. The path is the straight segment in position space, or the
/// angle-space blend when `manifold` is given.
inline AttackState initialize_attack(const Motion &x, std::span<const Motion> pool, const AttackConfig &cfg,
                                     detail::TracedOracle &oracle, Label original, CounterRng rng,
                                     double *seed_l = nullptr, const Skeleton *manifold = nullptr) {
  std::vector<std::size_t> order(pool.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);

  std::optional<std::size_t> seed;
  Label seed_label;
  for (auto idx : order) {
    require_same_shape(pool[idx], x);
    const Label l = oracle.label(pool[idx], "seed", 0, cfg.lambda_init, cfg.beta_init);
    if (adversarial_predicate(l, cfg, original)) {
      seed = idx;
      seed_label = l;
      break;
    }
  }
  if (!seed) throw InitializationError("no pool motion satisfies the adversarial predicate");
  const Motion &seed_motion = pool[*seed];
  if (seed_l) *seed_l = motion_distance(seed_motion, x);

  auto point = [&](double s) {
    return manifold ? angle_blend(seed_motion, x, *manifold, s) : aimed_probing(seed_motion, x, s);
  };
  double lo = 0.0, hi = 1.0;
  Label lo_label = seed_label;
  for (int s = 0; s < cfg.init_search_steps; ++s) {
    const double mid = 0.5 * (lo + hi);
    const Label l = oracle.label(point(mid), "bisect", 0, cfg.lambda_init, cfg.beta_init);
    if (adversarial_predicate(l, cfg, original)) {
      lo = mid;
      lo_label = l;
    } else {
      hi = mid;
    }
  }
  Motion start = lo == 0.0 ? seed_motion.with_label(std::nullopt) : point(lo);
  return AttackState{std::move(start), lo_label, cfg.lambda_init, cfg.beta_init, 0, oracle.queries(), rng};
}

/// Hard-label attack from `x`. Each iteration explores orthogonally to the
/// direction of `x`, probes towards `x`, and (with manifold projection on)
/// projects onto the pose manifold, pulling the projection back towards the
/// last adversarial sample until the classifier agrees again.
///
/// Step scales shrink by adapt_down on failure and grow by adapt_up (capped
/// at 1) on success, persisting across iterations. An iteration's end point
/// replaces the current sample only if it is no farther from `x`; with
/// projection on, it must also have come straight out of the projection and
/// pass the manifold check, so the current sample never leaves the manifold.
inline AttackResult gmw_attack(const Motion &x, std::span<const Motion> pool, const Skeleton &sk,
                               const AttackConfig &cfg, QueryGateway &gateway) {
  cfg.validate();
  if (x.joint_count() != sk.joint_count()) throw StructuralError("motion does not match skeleton");
  const std::vector<double> weights = resolve_joint_weights(cfg, sk);
  const double epsilon = cfg.epsilon.value_or(default_epsilon(sk));

  std::vector<TraceRow> trace;
  detail::TracedOracle oracle(gateway, cfg, x, trace);
  CounterRng rng(cfg.rng_seed);

  std::optional<AttackState> state;
  AttackResult res{x, {}, {}};

  try {
    const Label original = oracle.label(x, "original", 0, cfg.lambda_init, cfg.beta_init);
    oracle.set_original_label(original);
    res.original_label = original;
    if (cfg.mode == AttackMode::targeted && cfg.target_class == original.class_id)
      throw InitializationError("target class equals the original class");

    state.emplace(initialize_attack(x, pool, cfg, oracle, original, CounterRng::derive(cfg.rng_seed, 1), &res.seed_l,
                                    cfg.manifold_projection ? &sk : nullptr));
    res.initial_l = motion_distance(state->current, x);
    oracle.mark(state->current, "init", 0, state->lambda, state->beta);

    res.status = AttackStatus::max_iters;
    for (int k = 1; k <= cfg.max_iters; ++k) {
      state->iteration = k;
      const double prev_l = motion_distance(state->current, x);

      // Random exploration.
      std::optional<Motion> explored;
      for (;;) {
        Motion cand = random_exploration(state->current, x, state->lambda, weights, rng);
        if (oracle.adversarial(cand, "explore", k, state->lambda, state->beta)) {
          state->lambda = std::min(1.0, state->lambda * cfg.adapt_up);
          explored.emplace(std::move(cand));
          break;
        }
        state->lambda *= cfg.adapt_down;
        if (state->lambda < cfg.lambda_floor) break;
      }
      if (!explored) {
        res.status = AttackStatus::lambda_floor;
        break;
      }

      // Aimed probing towards x.
      std::optional<Motion> probed;
      Label probed_label;
      for (;;) {
        Motion cand = aimed_probing(*explored, x, state->beta);
        if (oracle.adversarial(cand, "probe", k, state->lambda, state->beta)) {
          state->beta = std::min(1.0, state->beta * cfg.adapt_up);
          probed.emplace(std::move(cand));
          probed_label = oracle.last();
          break;
        }
        state->beta *= cfg.adapt_down;
        if (state->beta < cfg.beta_floor) break;
      }
      if (!probed) {
        res.status = AttackStatus::beta_floor;
        break;
      }

      // Manifold projection, pulled back towards the probed sample until adversarial.
      Motion end = *probed;
      Label end_label = probed_label;
      bool acceptable = true;
      if (cfg.manifold_projection) {
        Motion projected = project_to_manifold(*probed, x, sk, cfg.projection).motion;
        bool adv = oracle.adversarial(projected, "project", k, state->lambda, state->beta);
        acceptable = adv && check_on_manifold(projected, sk, cfg.projection).on_manifold;
        for (int pull = 0; !adv && pull < cfg.max_pulls; ++pull) {
          projected = aimed_probing(*probed, projected, state->beta);
          adv = oracle.adversarial(projected, "pull", k, state->lambda, state->beta);
        }
        if (adv) {
          end = std::move(projected);
          end_label = oracle.last();
        }
      }

      const double end_l = motion_distance(end, x);
      const bool accepted = acceptable && end_l <= prev_l;
      if (accepted) {
        state->current = std::move(end);
        state->current_label = end_label;
      }
      state->queries_used = oracle.queries();
      oracle.mark(state->current, "iterate", k, state->lambda, state->beta);
      res.iterations = k;
      if (accepted && end_l < epsilon) {
        res.status = AttackStatus::converged_epsilon;
        break;
      }
    }
  } catch (const BudgetExhausted &) {
    if (!state) throw;
    res.status = AttackStatus::budget_exhausted;
  } catch (const TransportError &e) {
    throw AttackAborted(e.what(), std::move(trace));
  } catch (const ProtocolError &e) {
    throw AttackAborted(e.what(), std::move(trace), "protocol");
  }

  res.adversarial = state->current;
  res.adversarial_label = state->current_label;
  res.success = adversarial_predicate(res.adversarial_label, cfg, res.original_label);
  res.final_l = motion_distance(res.adversarial, x);
  res.queries = gateway.ledger().total;
  res.trace = std::move(trace);
  return res;
}

} // namespace gmw
