#pragma once

#include "gmw/errors.hpp"
#include "gmw/kinematics.hpp"
#include "gmw/motion.hpp"
#include "gmw/skeleton.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <iomanip>
#include <limits>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

namespace gmw {

struct ProjectionConfig {
  double w = 0.3;                 // weight of the per-frame angular-acceleration term
  int max_solver_iters = 500;
  double grad_tolerance = 1e-6;   // projected-gradient norm at which the solver stops
  double bone_rel_tolerance = 1e-3;
  double limit_tolerance = 1e-4;  // radians

  void validate() const {
    if (!(w >= 0.0) || !std::isfinite(w)) throw ValidationError("projection weight w must be >= 0");
    if (max_solver_iters < 0) throw ValidationError("max_solver_iters must be >= 0");
    if (!(grad_tolerance > 0.0) || !(bone_rel_tolerance > 0.0) || !(limit_tolerance > 0.0))
      throw ValidationError("projection tolerances must be positive");
  }
};

struct BoneViolation {
  std::size_t frame;
  std::size_t bone;  // ordinal into Skeleton::bones()
  std::size_t joint; // child joint of the bone
  double relative_deviation;
};

struct LimitViolation {
  std::size_t frame;
  std::size_t joint;
  int axis; // 0 = x, 1 = y, 2 = z
  double exceedance; // radians beyond the limit
};

struct ManifoldReport {
  bool on_manifold = true;
  std::vector<BoneViolation> bone_violations;
  std::vector<LimitViolation> limit_violations;
};

/// Checks every frame for rest bone lengths and joint limits. Limits are
/// tested on the inverse-kinematics angles of the motion.
inline ManifoldReport check_on_manifold(const Motion &mo, const Skeleton &sk, const ProjectionConfig &cfg) {
  if (mo.joint_count() != sk.joint_count()) throw StructuralError("motion does not match skeleton");
  ManifoldReport report;
  const auto &bones = sk.bones();
  const Frames lengths = bone_lengths(mo);
  for (Eigen::Index t = 0; t < lengths.rows(); ++t)
    for (std::size_t b = 0; b < bones.size(); ++b) {
      const double rest = sk.rest_length(bones[b]);
      const double dev = std::abs(lengths(t, static_cast<Eigen::Index>(b)) - rest) / rest;
      if (dev > cfg.bone_rel_tolerance)
        report.bone_violations.push_back({static_cast<std::size_t>(t), b, bones[b], dev});
    }

  const AngleMotion am = inverse_kinematics(mo, sk);
  for (Eigen::Index t = 0; t < am.angles.rows(); ++t)
    for (std::size_t j = 0; j < sk.joint_count(); ++j)
      for (int a = 0; a < 3; ++a) {
        const double v = am.angles(t, static_cast<Eigen::Index>(3 * j) + a);
        const auto &spec = sk.joint(j);
        const double below = (spec.angle_min[a] - cfg.limit_tolerance) - v;
        const double above = v - (spec.angle_max[a] + cfg.limit_tolerance);
        if (below > 0.0) report.limit_violations.push_back({static_cast<std::size_t>(t), j, a, below});
        if (above > 0.0) report.limit_violations.push_back({static_cast<std::size_t>(t), j, a, above});
      }

  report.on_manifold = report.bone_violations.empty() && report.limit_violations.empty();
  return report;
}

/// Per-frame copies of the skeleton's joint limits.
struct AngleBounds {
  Frames lower;
  Frames upper;

  Frames clamp(const Frames &theta) const { return theta.cwiseMax(lower).cwiseMin(upper); }
};

inline AngleBounds angle_bounds(const Skeleton &sk, std::size_t frames) {
  const auto n = static_cast<Eigen::Index>(frames);
  const auto cols = static_cast<Eigen::Index>(3 * sk.joint_count());
  AngleBounds b{Frames(n, cols), Frames(n, cols)};
  for (std::size_t j = 0; j < sk.joint_count(); ++j)
    for (int a = 0; a < 3; ++a) {
      b.lower.col(static_cast<Eigen::Index>(3 * j) + a).setConstant(sk.joint(j).angle_min[a]);
      b.upper.col(static_cast<Eigen::Index>(3 * j) + a).setConstant(sk.joint(j).angle_max[a]);
    }
  return b;
}

/// f(theta') = |theta' - target|^2 + w |D theta' - reference_accel|^2, where
/// D is the second-difference operator and reference_accel = D theta of the
/// original motion.
struct AngleObjective {
  Frames target;
  Frames reference_accel;
  double w = 0.0;
  double dt = 1.0;

  double value(const Frames &theta) const {
    const double fit = (theta - target).squaredNorm();
    if (w == 0.0) return fit;
    return fit + w * (second_difference(theta, dt) - reference_accel).squaredNorm();
  }

  Frames gradient(const Frames &theta) const {
    Frames g = 2.0 * (theta - target);
    if (w != 0.0)
      g += 2.0 * w * second_difference_adjoint(second_difference(theta, dt) - reference_accel, dt);
    return g;
  }
};

enum class SolverStatus { converged, max_iterations, stalled };

inline const char *to_string(SolverStatus s) {
  switch (s) {
  case SolverStatus::converged: return "converged";
  case SolverStatus::max_iterations: return "max_iterations";
  case SolverStatus::stalled: return "stalled";
  }
  return "unknown";
}

struct SolverTraceRow {
  int iteration;
  double objective;
  double gradient_norm; // projected gradient
};

struct SolverResult {
  Frames solution;
  SolverStatus status = SolverStatus::converged;
  int iterations = 0;
  std::vector<SolverTraceRow> trace;
};

namespace detail {

/// Bands of H = 2 (I + w D^T D) for one channel of length n:
/// diag[i] = H(i,i), off1[i] = H(i,i+1), off2[i] = H(i,i+2).
struct PentaBands {
  std::vector<double> diag, off1, off2;

  PentaBands(std::size_t n, double w, double dt) : diag(n, 2.0), off1(n, 0.0), off2(n, 0.0) {
    const double s = 2.0 * w / (dt * dt * dt * dt);
    for (std::size_t t = 1; t + 1 < n; ++t) {
      diag[t - 1] += s;
      diag[t] += 4.0 * s;
      diag[t + 1] += s;
      off1[t - 1] += -2.0 * s;
      off1[t] += -2.0 * s;
      off2[t - 1] += s;
    }
  }

  double at(std::size_t i, std::size_t j) const {
    if (i > j) std::swap(i, j);
    switch (j - i) {
    case 0: return diag[i];
    case 1: return off1[i];
    case 2: return off2[i];
    default: return 0.0;
    }
  }
};

/// Solves H_FF d = rhs for the free indices `idx` (ascending). The restriction
/// of a pentadiagonal matrix to an index subset stays pentadiagonal in the
/// compressed ordering, so a banded Cholesky suffices.
inline void solve_free_block(const PentaBands &h, const std::vector<std::size_t> &idx,
                             std::vector<double> &rhs) {
  const std::size_t m = idx.size();
  std::vector<double> l0(m), l1(m, 0.0), l2(m, 0.0);
  for (std::size_t k = 0; k < m; ++k) {
    if (k >= 2) l2[k] = h.at(idx[k - 2], idx[k]) / l0[k - 2];
    if (k >= 1) {
      double a = h.at(idx[k - 1], idx[k]);
      if (k >= 2) a -= l2[k] * l1[k - 1];
      l1[k] = a / l0[k - 1];
    }
    const double d = h.at(idx[k], idx[k]) - l1[k] * l1[k] - l2[k] * l2[k];
    l0[k] = std::sqrt(d);
  }
  for (std::size_t k = 0; k < m; ++k) {
    double v = rhs[k];
    if (k >= 1) v -= l1[k] * rhs[k - 1];
    if (k >= 2) v -= l2[k] * rhs[k - 2];
    rhs[k] = v / l0[k];
  }
  for (std::size_t k = m; k-- > 0;) {
    double v = rhs[k];
    if (k + 1 < m) v -= l1[k + 1] * rhs[k + 1];
    if (k + 2 < m) v -= l2[k + 2] * rhs[k + 2];
    rhs[k] = v / l0[k];
  }
}

} // namespace detail

/// Box-constrained minimization of an AngleObjective by projected Newton
/// steps (Bertsekas): Newton on the free variables, clamp onto the box, halve
/// the step until the Armijo condition holds along the projection arc.
/// Every accepted iterate is feasible and the objective never increases.
inline SolverResult minimize_in_box(const AngleObjective &obj, const AngleBounds &bounds, const Frames &start,
                                    const ProjectionConfig &cfg) {
  constexpr double armijo = 1e-4;
  constexpr int max_halvings = 60;
  const Eigen::Index n = start.rows();
  const Eigen::Index channels = start.cols();
  const detail::PentaBands hess(static_cast<std::size_t>(n), obj.w, obj.dt);

  SolverResult res;
  res.solution = bounds.clamp(start);
  double f = obj.value(res.solution);

  std::vector<std::size_t> free_idx;
  std::vector<double> rhs;
  for (int iter = 0;; ++iter) {
    const Frames g = obj.gradient(res.solution);
    const Frames pg = res.solution - bounds.clamp(res.solution - g);
    const double pg_norm = pg.norm();
    res.trace.push_back({iter, f, pg_norm});
    res.iterations = iter;
    if (pg_norm <= cfg.grad_tolerance) {
      res.status = SolverStatus::converged;
      return res;
    }
    if (iter >= cfg.max_solver_iters) {
      res.status = SolverStatus::max_iterations;
      return res;
    }

    // Variables at a bound whose gradient pushes outward stay fixed.
    const double eps = std::min(1e-8, pg_norm);
    Frames dir = Frames::Zero(n, channels);
    for (Eigen::Index c = 0; c < channels; ++c) {
      free_idx.clear();
      rhs.clear();
      for (Eigen::Index t = 0; t < n; ++t) {
        const double v = res.solution(t, c);
        const double gi = g(t, c);
        const bool at_low = v <= bounds.lower(t, c) + eps && gi > 0.0;
        const bool at_high = v >= bounds.upper(t, c) - eps && gi < 0.0;
        if (at_low || at_high) continue;
        free_idx.push_back(static_cast<std::size_t>(t));
        rhs.push_back(-gi);
      }
      if (free_idx.empty()) continue;
      detail::solve_free_block(hess, free_idx, rhs);
      for (std::size_t k = 0; k < free_idx.size(); ++k) dir(static_cast<Eigen::Index>(free_idx[k]), c) = rhs[k];
    }

    double step = 1.0;
    bool accepted = false;
    for (int h = 0; h < max_halvings; ++h, step *= 0.5) {
      Frames cand = bounds.clamp(res.solution + step * dir);
      const double fc = obj.value(cand);
      const double decrease = (g.array() * (cand - res.solution).array()).sum();
      if (fc <= f + armijo * decrease && fc <= f) {
        res.solution = std::move(cand);
        f = fc;
        accepted = true;
        break;
      }
    }
    if (!accepted) {
      res.status = SolverStatus::stalled;
      return res;
    }
  }
}

inline constexpr int kLimitRefineRounds = 16;

struct ProjectionResult {
  Motion motion;
  AngleMotion angles;
  SolverResult solver;
};

/// Maps `perturbed` onto the pose manifold: inverse kinematics (rest bone
/// lengths), box-constrained angle fit that keeps the angular acceleration of
/// `original`, then forward kinematics. The root trajectory of `perturbed`
/// passes through unchanged.
inline ProjectionResult project_to_manifold(const Motion &perturbed, const Motion &original, const Skeleton &sk,
                                            const ProjectionConfig &cfg) {
  cfg.validate();
  require_same_shape(perturbed, original);
  const AngleMotion target = inverse_kinematics(perturbed, sk);
  const AngleMotion reference = inverse_kinematics(original, sk);

  // The acceleration term works in per-frame units (rad/frame^2) so that w
  // does not depend on the frame rate.
  AngleObjective obj;
  obj.target = target.angles;
  obj.reference_accel = second_difference(reference.angles, 1.0);
  obj.w = cfg.w;
  obj.dt = 1.0;

  const AngleBounds bounds = angle_bounds(sk, perturbed.frame_count());
  SolverResult solved = minimize_in_box(obj, bounds, target.angles, cfg);

  AngleMotion am;
  am.skeleton = perturbed.skeleton_ptr();
  am.root_positions = target.root_positions;
  am.angles = solved.solution;
  am.frame_dt = perturbed.frame_dt();
  Motion fk = forward_kinematics(am, sk);

  // Clamped Euler triples may carry twist about the bone, which positions
  // cannot express; the zero-twist angles of the result can then sit just
  // outside the box. Clamp those and repeat.
  for (int round = 0; round < kLimitRefineRounds; ++round) {
    const Frames canonical = inverse_kinematics(fk, sk).angles;
    const Frames clamped = bounds.clamp(canonical);
    if ((canonical - clamped).cwiseAbs().maxCoeff() <= 1e-10) break;
    am.angles = clamped;
    fk = forward_kinematics(am, sk);
  }
  return {perturbed.with_frames(fk.frames()), std::move(am), std::move(solved)};
}

inline std::string solver_trace_csv(const std::vector<SolverTraceRow> &trace) {
  std::ostringstream out;
  out << "iteration,objective,gradient_norm\n" << std::setprecision(17);
  for (const auto &row : trace) out << row.iteration << ',' << row.objective << ',' << row.gradient_norm << '\n';
  return out.str();
}

} // namespace gmw
