#pragma once

#include "gmw/errors.hpp"
#include "gmw/kinematics.hpp"
#include "gmw/motion.hpp"
#include "gmw/motion_io.hpp"
#include "gmw/rng.hpp"
#include "gmw/skeleton.hpp"

#include <Eigen/Geometry>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numbers>
#include <string>
#include <vector>

namespace gmw {

/// 21-joint humanoid, metres, y up, facing +z.
inline SkeletonPtr humanoid_skeleton() {
  struct Row {
    const char *name;
    int parent;
    double ox, oy, oz;
    double lim; // symmetric limit on every axis
  };
  // clang-format off
  static const Row rows[] = {
      {"hips", -1, 0, 0, 0, std::numbers::pi},
      {"spine", 0, 0, 0.10, 0, 0.8},
      {"chest", 1, 0, 0.25, 0, 0.8},
      {"neck", 2, 0, 0.20, 0, 0.8},
      {"head", 3, 0, 0.12, 0, 0.8},
      {"l_shoulder", 2, 0.15, 0.05, 0, 0.6},
      {"l_elbow", 5, 0.28, 0, 0, 1.4},
      {"l_wrist", 6, 0.25, 0, 0, 1.4},
      {"l_hand", 7, 0.08, 0, 0, 0.9},
      {"r_shoulder", 2, -0.15, 0.05, 0, 0.6},
      {"r_elbow", 9, -0.28, 0, 0, 1.4},
      {"r_wrist", 10, -0.25, 0, 0, 1.4},
      {"r_hand", 11, -0.08, 0, 0, 0.9},
      {"l_hip", 0, 0.09, -0.06, 0, 0.6},
      {"l_knee", 13, 0, -0.42, 0, 1.3},
      {"l_ankle", 14, 0, -0.40, 0, 1.3},
      {"l_toe", 15, 0, -0.05, 0.14, 0.9},
      {"r_hip", 0, -0.09, -0.06, 0, 0.6},
      {"r_knee", 17, 0, -0.42, 0, 1.3},
      {"r_ankle", 18, 0, -0.40, 0, 1.3},
      {"r_toe", 19, 0, -0.05, 0.14, 0.9},
  };
  // clang-format on
  std::vector<JointSpec> joints;
  for (const auto &r : rows) {
    JointSpec js;
    js.name = r.name;
    if (r.parent >= 0) js.parent = static_cast<std::size_t>(r.parent);
    js.offset = Vec3(r.ox, r.oy, r.oz);
    js.angle_min = Vec3::Constant(-r.lim);
    js.angle_max = Vec3::Constant(r.lim);
    joints.push_back(js);
  }
  return make_skeleton(std::move(joints));
}

/// Spine chain of humanoid_skeleton(), down-weighted during exploration.
inline std::vector<std::string> humanoid_torso_joints() { return {"hips", "spine", "chest", "neck", "head"}; }

struct GeneratorConfig {
  int classes = 8;
  int per_class = 40;
  int frames = 60;
  double frame_dt = 1.0 / 30.0;
  std::uint64_t seed = 7;
  /// Fraction of each joint's limit the swing pattern may use.
  double limit_usage = 0.55;

  void validate() const {
    if (classes < 2) throw ValidationError("need at least two classes");
    if (per_class < 1) throw ValidationError("need at least one sample per class");
    if (frames < static_cast<int>(kMinFrames)) throw ValidationError("need at least 3 frames");
    if (!(frame_dt > 0.0)) throw ValidationError("frame_dt must be positive");
    if (!(limit_usage > 0.0 && limit_usage < 1.0)) throw ValidationError("limit_usage must lie in (0, 1)");
  }
};

namespace detail {

struct SwingPattern {
  double base[2];
  double amp[2];
  double phase[2];
  double freq;
};

struct ClassPattern {
  std::vector<SwingPattern> joints; // per joint; root entry unused
  double drift[2];                  // root velocity in x and z, m/s
  double bob_amp, bob_freq;
};

inline double uniform(CounterRng &rng, double lo, double hi) { return lo + (hi - lo) * rng.uniform(); }

/// Two unit vectors spanning the plane orthogonal to `axis`.
inline std::pair<Vec3, Vec3> orthogonal_basis(const Vec3 &axis) {
  const Vec3 a = axis.normalized();
  const Vec3 ref = std::abs(a.z()) < 0.9 ? Vec3::UnitZ() : Vec3::UnitX();
  const Vec3 e1 = a.cross(ref).normalized();
  return {e1, a.cross(e1)};
}

inline ClassPattern make_class_pattern(const Skeleton &sk, CounterRng &rng) {
  ClassPattern p;
  p.joints.resize(sk.joint_count());
  for (auto &j : p.joints) {
    for (int k = 0; k < 2; ++k) {
      j.base[k] = uniform(rng, -0.2, 0.2);
      j.amp[k] = uniform(rng, 0.1, 0.35);
      j.phase[k] = uniform(rng, 0.0, 2.0 * std::numbers::pi);
    }
    j.freq = uniform(rng, 0.3, 1.5);
  }
  p.drift[0] = uniform(rng, -0.3, 0.3);
  p.drift[1] = uniform(rng, -0.3, 0.3);
  p.bob_amp = uniform(rng, 0.0, 0.04);
  p.bob_freq = uniform(rng, 0.5, 2.0);
  return p;
}

} // namespace detail

/// One motion of a class: every bone swings about axes orthogonal to its rest
/// offset (no twist), within `limit_usage` of the joint limit; the sample
/// perturbs amplitudes, phases and frequencies of the class pattern.
inline Motion synthesize_motion(const SkeletonPtr &sk, const detail::ClassPattern &cls, int label,
                                const GeneratorConfig &cfg, CounterRng &rng) {
  const std::size_t joints = sk->joint_count();
  const Eigen::Index n = cfg.frames;
  AngleMotion am;
  am.skeleton = sk;
  am.frame_dt = cfg.frame_dt;
  am.root_positions = Frames::Zero(n, 3);
  am.angles = Frames::Zero(n, static_cast<Eigen::Index>(3 * joints));

  struct SamplePattern {
    double base[2], amp[2], phase[2], freq;
  };
  std::vector<SamplePattern> sp(joints);
  for (std::size_t j = 0; j < joints; ++j) {
    const auto &c = cls.joints[j];
    for (int k = 0; k < 2; ++k) {
      sp[j].base[k] = c.base[k] + 0.02 * rng.normal();
      sp[j].amp[k] = c.amp[k] * detail::uniform(rng, 0.9, 1.1);
      sp[j].phase[k] = c.phase[k] + detail::uniform(rng, -0.25, 0.25);
    }
    sp[j].freq = c.freq * detail::uniform(rng, 0.95, 1.05);
  }
  const double root_x = 0.05 * rng.normal();
  const double root_z = 0.05 * rng.normal();

  for (Eigen::Index t = 0; t < n; ++t) {
    const double sec = static_cast<double>(t) * cfg.frame_dt;
    am.root_positions.row(t) << root_x + cls.drift[0] * sec,
        0.95 + cls.bob_amp * std::sin(2.0 * std::numbers::pi * cls.bob_freq * sec), root_z + cls.drift[1] * sec;
    for (std::size_t j = 0; j < joints; ++j) {
      const auto &spec = sk->joint(j);
      if (!spec.parent) continue;
      const double reach = cfg.limit_usage * spec.angle_max.cwiseMin(-spec.angle_min).minCoeff();
      const auto [e1, e2] = detail::orthogonal_basis(spec.offset);
      double c[2];
      for (int k = 0; k < 2; ++k) {
        const double s = sp[j].base[k] + sp[j].amp[k] * std::sin(2.0 * std::numbers::pi * sp[j].freq * sec + sp[j].phase[k]);
        c[k] = reach * std::clamp(s, -0.7, 0.7);
      }
      const Vec3 swing = c[0] * e1 + c[1] * e2;
      const double angle = swing.norm();
      const Mat3 r = angle > 0.0 ? Eigen::AngleAxisd(angle, swing / angle).toRotationMatrix() : Mat3::Identity();
      am.angles.row(t).segment<3>(static_cast<Eigen::Index>(3 * j)) = matrix_to_euler(r).transpose();
    }
  }
  return forward_kinematics(am, *sk).with_label(label);
}

/// Labeled corpus, class-major order; deterministic per seed.
inline std::vector<Motion> generate_corpus(const GeneratorConfig &cfg, const SkeletonPtr &sk = humanoid_skeleton()) {
  cfg.validate();
  std::vector<Motion> out;
  out.reserve(static_cast<std::size_t>(cfg.classes * cfg.per_class));
  for (int c = 0; c < cfg.classes; ++c) {
    CounterRng class_rng = CounterRng::derive(cfg.seed, 1000 + static_cast<std::uint64_t>(c));
    const auto pattern = detail::make_class_pattern(*sk, class_rng);
    for (int i = 0; i < cfg.per_class; ++i) {
      CounterRng sample_rng = CounterRng::derive(cfg.seed, 1'000'000 + static_cast<std::uint64_t>(c) * 100'000 +
                                                               static_cast<std::uint64_t>(i));
      out.push_back(synthesize_motion(sk, pattern, c, cfg, sample_rng));
    }
  }
  return out;
}

inline std::string dataset_file_name(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "motion_%05zu.json", index);
  return buf;
}

/// Writes `<dir>/manifest.json` plus one motion file per sample.
inline void write_dataset(const std::filesystem::path &dir, const std::vector<Motion> &motions) {
  std::filesystem::create_directories(dir);
  json files = json::array();
  int classes = 0;
  for (std::size_t i = 0; i < motions.size(); ++i) {
    const auto name = dataset_file_name(i);
    save_motion(motions[i], dir / name);
    const int label = motions[i].label().value_or(-1);
    classes = std::max(classes, label + 1);
    files.push_back({{"file", name}, {"label", label}});
  }
  json manifest;
  manifest["count"] = motions.size();
  manifest["classes"] = classes;
  manifest["files"] = std::move(files);
  write_text_file(dir / "manifest.json", manifest.dump(2) + "\n");
}

/// Loads a dataset written by write_dataset; all motions share one skeleton.
inline std::vector<Motion> load_dataset(const std::filesystem::path &dir) {
  const json manifest = read_json_file(dir / "manifest.json");
  if (!manifest.contains("files") || !manifest["files"].is_array())
    throw ValidationError("dataset manifest lacks a file list");
  std::vector<Motion> out;
  SkeletonPtr shared;
  for (const auto &entry : manifest["files"]) {
    Motion mo = load_motion(dir / entry.at("file").get<std::string>(), shared);
    if (!shared) shared = mo.skeleton_ptr();
    if (!out.empty() && !mo.same_shape(out.front())) throw StructuralError("dataset motions differ in shape");
    out.push_back(std::move(mo));
  }
  if (out.empty()) throw ValidationError("dataset is empty");
  return out;
}

} // namespace gmw
