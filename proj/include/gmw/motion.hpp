#pragma once

#include "gmw/errors.hpp"
#include "gmw/skeleton.hpp"

#include <Eigen/Core>

#include <cmath>
#include <cstddef>
#include <numbers>
#include <optional>
#include <string>
#include <utility>

namespace gmw {

/// Row-major frame matrix: one row per frame, one column per scalar channel.
using Frames = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline constexpr std::size_t kMinFrames = 3;

/// Time series of joint positions. Column `3*j + a` holds axis `a` of joint `j`.
class Motion {
public:
  Motion(SkeletonPtr skeleton, Frames frames, double frame_dt,
         std::optional<int> label = std::nullopt)
      : skeleton_(std::move(skeleton)), frames_(std::move(frames)), frame_dt_(frame_dt),
        label_(label) {
    if (!skeleton_) throw StructuralError("motion without skeleton");
    if (frames_.cols() != static_cast<Eigen::Index>(3 * skeleton_->joint_count()))
      throw StructuralError("motion has " + std::to_string(frames_.cols()) +
                            " columns, skeleton needs " +
                            std::to_string(3 * skeleton_->joint_count()));
    if (frames_.rows() < static_cast<Eigen::Index>(kMinFrames))
      throw ValidationError("motion needs at least 3 frames, got " +
                            std::to_string(frames_.rows()));
    if (!frames_.allFinite()) throw ValidationError("motion has non-finite coordinates");
    if (!(frame_dt_ > 0.0) || !std::isfinite(frame_dt_))
      throw ValidationError("frame_dt must be positive");
  }

  const Skeleton &skeleton() const noexcept { return *skeleton_; }
  const SkeletonPtr &skeleton_ptr() const noexcept { return skeleton_; }
  const Frames &frames() const noexcept { return frames_; }
  double frame_dt() const noexcept { return frame_dt_; }
  const std::optional<int> &label() const noexcept { return label_; }

  std::size_t frame_count() const noexcept { return static_cast<std::size_t>(frames_.rows()); }
  std::size_t joint_count() const noexcept { return skeleton_->joint_count(); }

  Vec3 position(std::size_t frame, std::size_t joint) const {
    return frames_.row(static_cast<Eigen::Index>(frame))
        .segment<3>(static_cast<Eigen::Index>(3 * joint))
        .transpose();
  }

  /// Same skeleton and timing, new coordinates.
  Motion with_frames(Frames frames) const {
    return Motion(skeleton_, std::move(frames), frame_dt_, label_);
  }

  Motion with_label(std::optional<int> label) const {
    return Motion(skeleton_, frames_, frame_dt_, label);
  }

  bool same_shape(const Motion &other) const {
    return frames_.rows() == other.frames_.rows() && frames_.cols() == other.frames_.cols() &&
           (skeleton_ == other.skeleton_ || *skeleton_ == *other.skeleton_);
  }

private:
  SkeletonPtr skeleton_;
  Frames frames_;
  double frame_dt_;
  std::optional<int> label_;
};

inline void require_same_shape(const Motion &a, const Motion &b) {
  if (!a.same_shape(b)) throw StructuralError("motions differ in shape or skeleton");
}

/// Root trajectory plus per-frame joint rotations (Euler x, y, z per joint,
/// radians, wrapped to (-pi, pi]).
struct AngleMotion {
  SkeletonPtr skeleton;
  Frames root_positions; // n x 3
  Frames angles;         // n x 3*O
  double frame_dt = 1.0;

  std::size_t frame_count() const noexcept { return static_cast<std::size_t>(angles.rows()); }
};

/// Wrap an angle into (-pi, pi].
inline double wrap_angle(double a) {
  constexpr double two_pi = 2.0 * std::numbers::pi;
  double r = std::remainder(a, two_pi);
  if (r <= -std::numbers::pi) r += two_pi;
  return r;
}

/// Central second difference along rows, (s[t-1] - 2 s[t] + s[t+1]) / dt^2,
/// with the first and last rows set to zero.
inline Frames second_difference(const Frames &series, double dt) {
  const Eigen::Index n = series.rows();
  if (n < static_cast<Eigen::Index>(kMinFrames))
    throw StructuralError("second difference needs at least 3 rows");
  Frames out = Frames::Zero(n, series.cols());
  const double inv = 1.0 / (dt * dt);
  for (Eigen::Index t = 1; t + 1 < n; ++t)
    out.row(t) = (series.row(t - 1) - 2.0 * series.row(t) + series.row(t + 1)) * inv;
  return out;
}

/// Adjoint of second_difference: returns D^T y. Rows 0 and n-1 of `y` are
/// ignored since D never writes them.
inline Frames second_difference_adjoint(const Frames &y, double dt) {
  const Eigen::Index n = y.rows();
  if (n < static_cast<Eigen::Index>(kMinFrames))
    throw StructuralError("second difference needs at least 3 rows");
  Frames out = Frames::Zero(n, y.cols());
  const double inv = 1.0 / (dt * dt);
  for (Eigen::Index t = 1; t + 1 < n; ++t) {
    out.row(t - 1) += y.row(t) * inv;
    out.row(t) -= 2.0 * y.row(t) * inv;
    out.row(t + 1) += y.row(t) * inv;
  }
  return out;
}

} // namespace gmw
