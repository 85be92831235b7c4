#pragma once

#include "gmw/errors.hpp"

#include <Eigen/Core>

#include <cmath>
#include <cstddef>
#include <memory>
#include <numbers>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace gmw {

using Vec3 = Eigen::Vector3d;

/// One joint of the hierarchy. The offset is the bone vector from the parent,
/// expressed in the parent's rest frame; angle limits are Euler limits about
/// the x, y and z axes (intrinsic Z-Y-X convention, see kinematics.hpp).
struct JointSpec {
  std::string name;
  std::optional<std::size_t> parent;
  Vec3 offset = Vec3::Zero();
  Vec3 angle_min = Vec3::Constant(-std::numbers::pi);
  Vec3 angle_max = Vec3::Constant(std::numbers::pi);

  bool operator==(const JointSpec &) const = default;
};

/// Joint hierarchy with fixed bone offsets and per-joint angle limits.
///
/// Joints are stored in topological order: every parent precedes its
/// children and exactly one joint (the root) has no parent. Bones are
/// identified by their child joint, so bone `b` connects `parent(b)` to `b`.
class Skeleton {
public:
  explicit Skeleton(std::vector<JointSpec> joints) : joints_(std::move(joints)) {
    validate();
    for (std::size_t j = 0; j < joints_.size(); ++j) {
      if (j == root_) continue;
      bones_.push_back(j);
    }
  }

  std::size_t joint_count() const noexcept { return joints_.size(); }
  std::size_t bone_count() const noexcept { return bones_.size(); }
  std::size_t root_index() const noexcept { return root_; }

  const JointSpec &joint(std::size_t j) const { return joints_.at(j); }
  const std::vector<JointSpec> &joints() const noexcept { return joints_; }

  /// Child joint index of every bone, in joint order.
  const std::vector<std::size_t> &bones() const noexcept { return bones_; }

  /// Rest length of the bone ending at joint `j`.
  double rest_length(std::size_t j) const { return joints_.at(j).offset.norm(); }

  double mean_bone_length() const {
    double sum = 0.0;
    for (auto b : bones_) sum += rest_length(b);
    return bones_.empty() ? 0.0 : sum / static_cast<double>(bones_.size());
  }

  std::optional<std::size_t> find(const std::string &name) const {
    for (std::size_t j = 0; j < joints_.size(); ++j)
      if (joints_[j].name == name) return j;
    return std::nullopt;
  }

  bool operator==(const Skeleton &other) const { return joints_ == other.joints_; }

private:
  void validate() {
    if (joints_.empty()) throw ValidationError("skeleton has no joints");
    bool have_root = false;
    for (std::size_t j = 0; j < joints_.size(); ++j) {
      const auto &js = joints_[j];
      if (!js.parent) {
        if (have_root) throw ValidationError("skeleton has more than one root");
        have_root = true;
        root_ = j;
      } else {
        if (*js.parent >= j)
          throw ValidationError("joint '" + js.name + "' does not follow its parent");
        if (!(js.offset.norm() > 0.0) || !js.offset.allFinite())
          throw ValidationError("joint '" + js.name + "' has a zero-length offset");
      }
      if (!js.angle_min.allFinite() || !js.angle_max.allFinite())
        throw ValidationError("joint '" + js.name + "' has non-finite limits");
      if ((js.angle_min.array() > js.angle_max.array()).any())
        throw ValidationError("joint '" + js.name + "' has angle_min > angle_max");
    }
    if (!have_root) throw ValidationError("skeleton has no root");
  }

  std::vector<JointSpec> joints_;
  std::vector<std::size_t> bones_;
  std::size_t root_ = 0;
};

using SkeletonPtr = std::shared_ptr<const Skeleton>;

inline SkeletonPtr make_skeleton(std::vector<JointSpec> joints) {
  return std::make_shared<const Skeleton>(std::move(joints));
}

} // namespace gmw
