#pragma once

#include "gmw/errors.hpp"
#include "gmw/kinematics.hpp"
#include "gmw/manifold.hpp"
#include "gmw/motion.hpp"
#include "gmw/motion_io.hpp"

#include <cmath>
#include <cstddef>
#include <cstdio>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace gmw {

struct MotionPair {
  Motion original;
  Motion adversarial;
};

struct SampleMetrics {
  std::size_t index;
  double l;
  double delta_a;
  std::optional<double> delta_alpha;
  double bone_dev_pct;
  double bone_dev_abs_pct;
  std::optional<bool> on_manifold;
};

/// Averaged deviations between original and adversarial motions.
///
/// l and the accelerations are sums of per-motion Euclidean norms over the
/// full motion vector, divided by n*N (l) or n*O*N (accelerations). Bone
/// deviation compares rest lengths B_i with the per-motion mean observed
/// length B'_i, signed as written; the absolute column averages
/// |B_i - B'_i(t)| / B_i over every frame instead, so violations cannot cancel.
struct MetricsReport {
  double l = 0.0;
  double delta_a = 0.0;
  std::optional<double> delta_alpha;
  double bone_dev_pct = 0.0;
  double bone_dev_abs_pct = 0.0;
  std::optional<double> om_pct;
  std::size_t sample_count = 0;
  std::vector<SampleMetrics> samples;
};

inline MetricsReport compute_metrics(std::span<const MotionPair> pairs, const Skeleton &sk, const ProjectionConfig &cfg,
                                     bool angle_space_available) {
  if (pairs.empty()) throw ValidationError("metrics need at least one motion pair");
  const auto &first = pairs.front().original;
  for (const auto &p : pairs) {
    require_same_shape(p.original, p.adversarial);
    require_same_shape(p.original, first);
  }
  if (first.joint_count() != sk.joint_count()) throw StructuralError("motions do not match skeleton");

  const double n = static_cast<double>(first.frame_count());
  const double joints = static_cast<double>(sk.joint_count());
  const double bones = static_cast<double>(sk.bone_count());
  const auto &bone_ids = sk.bones();

  MetricsReport rep;
  rep.sample_count = pairs.size();
  double sum_l = 0.0, sum_a = 0.0, sum_alpha = 0.0, sum_bone = 0.0, sum_bone_abs = 0.0;
  std::size_t on_manifold = 0;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const auto &x = pairs[i].original;
    const auto &xa = pairs[i].adversarial;
    const double dt = x.frame_dt();
    SampleMetrics s{i, 0.0, 0.0, std::nullopt, 0.0, 0.0, std::nullopt};

    const double dist = (x.frames() - xa.frames()).norm();
    const double acc = (second_difference(x.frames(), dt) - second_difference(xa.frames(), dt)).norm();
    s.l = dist / n;
    s.delta_a = acc / (n * joints);
    sum_l += dist;
    sum_a += acc;

    const Frames lengths = bone_lengths(xa);
    double signed_dev = 0.0, abs_dev = 0.0;
    for (std::size_t b = 0; b < bone_ids.size(); ++b) {
      const double rest = sk.rest_length(bone_ids[b]);
      const auto col = lengths.col(static_cast<Eigen::Index>(b));
      signed_dev += (rest - col.mean()) / rest;
      abs_dev += (col.array() - rest).abs().mean() / rest;
    }
    s.bone_dev_pct = 100.0 * signed_dev / bones;
    s.bone_dev_abs_pct = 100.0 * abs_dev / bones;
    sum_bone += signed_dev;
    sum_bone_abs += abs_dev;

    if (angle_space_available) {
      const Frames th = inverse_kinematics(x, sk).angles;
      const Frames tha = inverse_kinematics(xa, sk).angles;
      const double acc_ang = (second_difference(th, dt) - second_difference(tha, dt)).norm();
      s.delta_alpha = acc_ang / (n * joints);
      sum_alpha += acc_ang;
      const bool om = check_on_manifold(xa, sk, cfg).on_manifold;
      s.on_manifold = om;
      if (om) ++on_manifold;
    }
    rep.samples.push_back(s);
  }

  const double count = static_cast<double>(pairs.size());
  rep.l = sum_l / (n * count);
  rep.delta_a = sum_a / (n * joints * count);
  rep.bone_dev_pct = 100.0 * sum_bone / (bones * count);
  rep.bone_dev_abs_pct = 100.0 * sum_bone_abs / (bones * count);
  if (angle_space_available) {
    rep.delta_alpha = sum_alpha / (n * joints * count);
    rep.om_pct = 100.0 * static_cast<double>(on_manifold) / count;
  }
  return rep;
}

inline constexpr const char *kReportColumns =
    "model,mp_flag,l,delta_a,delta_alpha,bone_dev_pct,bone_dev_abs_pct,om_pct,n_samples";

namespace detail {
inline std::string exact(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}
inline std::string exact(const std::optional<double> &v) { return v ? exact(*v) : std::string("n/a"); }
} // namespace detail

inline std::string report_csv(const std::string &model, bool mp, const MetricsReport &r) {
  std::string out = std::string(kReportColumns) + "\n";
  out += model + ',' + (mp ? "MP" : "No MP") + ',' + detail::exact(r.l) + ',' + detail::exact(r.delta_a) + ',' +
         detail::exact(r.delta_alpha) + ',' + detail::exact(r.bone_dev_pct) + ',' + detail::exact(r.bone_dev_abs_pct) +
         ',' + detail::exact(r.om_pct) + ',' + std::to_string(r.sample_count) + '\n';
  return out;
}

inline json report_json(const std::string &model, bool mp, const MetricsReport &r) {
  auto opt = [](const std::optional<double> &v) { return v ? json(*v) : json(nullptr); };
  json doc;
  doc["model"] = model;
  doc["mp_flag"] = mp ? "MP" : "No MP";
  doc["l"] = r.l;
  doc["delta_a"] = r.delta_a;
  doc["delta_alpha"] = opt(r.delta_alpha);
  doc["bone_dev_pct"] = r.bone_dev_pct;
  doc["bone_dev_abs_pct"] = r.bone_dev_abs_pct;
  doc["om_pct"] = opt(r.om_pct);
  doc["n_samples"] = r.sample_count;
  json rows = json::array();
  for (const auto &s : r.samples) {
    json row;
    row["index"] = s.index;
    row["l"] = s.l;
    row["delta_a"] = s.delta_a;
    row["delta_alpha"] = opt(s.delta_alpha);
    row["bone_dev_pct"] = s.bone_dev_pct;
    row["bone_dev_abs_pct"] = s.bone_dev_abs_pct;
    row["on_manifold"] = s.on_manifold ? json(*s.on_manifold) : json(nullptr);
    rows.push_back(std::move(row));
  }
  doc["samples"] = std::move(rows);
  return doc;
}

/// Two-decimal table row: "model, MP, l, delta_a, delta_alpha, bone%, OM%".
inline std::string format_table_row(const std::string &model, bool mp, double l, double delta_a,
                                     std::optional<double> delta_alpha, double bone_dev_pct,
                                     std::optional<double> om_pct) {
  char buf[256];
  auto num = [](std::optional<double> v) {
    if (!v) return std::string("n/a");
    char b[64];
    std::snprintf(b, sizeof b, "%.2f", *v);
    return std::string(b);
  };
  auto pct = [&](std::optional<double> v) { return v ? num(v) + "%" : std::string("n/a"); };
  std::snprintf(buf, sizeof buf, "%s, %s, %s, %s, %s, %s, %s", model.c_str(), mp ? "MP" : "No MP", num(l).c_str(),
                num(delta_a).c_str(), num(delta_alpha).c_str(), pct(bone_dev_pct).c_str(), pct(om_pct).c_str());
  return buf;
}

inline std::string format_table_row(const std::string &model, bool mp, const MetricsReport &r) {
  return format_table_row(model, mp, r.l, r.delta_a, r.delta_alpha, r.bone_dev_pct, r.om_pct);
}

} // namespace gmw
