#pragma once

#include "gmw/errors.hpp"
#include "gmw/motion.hpp"
#include "gmw/skeleton.hpp"

#include <Eigen/Geometry>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

namespace gmw {

using Mat3 = Eigen::Matrix3d;

/// Bone vectors shorter than this have no usable direction.
inline constexpr double kLengthEpsilon = 1e-8;

/// Rotation for Euler angles (x, y, z), intrinsic Z-Y-X: R = Rz(z) Ry(y) Rx(x).
inline Mat3 euler_to_matrix(const Vec3 &xyz) {
  return (Eigen::AngleAxisd(xyz.z(), Vec3::UnitZ()) * Eigen::AngleAxisd(xyz.y(), Vec3::UnitY()) *
          Eigen::AngleAxisd(xyz.x(), Vec3::UnitX()))
      .toRotationMatrix();
}

/// Inverse of euler_to_matrix; y lands in [-pi/2, pi/2], x and z in (-pi, pi].
inline Vec3 matrix_to_euler(const Mat3 &r) {
  const double y = std::asin(std::clamp(-r(2, 0), -1.0, 1.0));
  const double z = std::atan2(r(1, 0), r(0, 0));
  const double x = std::atan2(r(2, 1), r(2, 2));
  return {wrap_angle(x), wrap_angle(y), wrap_angle(z)};
}

/// Angles -> positions. Joint j sits at parent + G_j * offset_j where
/// G_j = G_parent * R_j is the accumulated rotation; the root's rotation
/// orients the whole body.
inline Motion forward_kinematics(const AngleMotion &am, const Skeleton &sk) {
  const std::size_t joints = sk.joint_count();
  const Eigen::Index n = am.angles.rows();
  if (am.angles.cols() != static_cast<Eigen::Index>(3 * joints))
    throw StructuralError("angle motion joint count does not match skeleton");
  if (am.root_positions.rows() != n || am.root_positions.cols() != 3)
    throw StructuralError("root trajectory shape does not match angle frames");
  if (!am.skeleton) throw StructuralError("angle motion without skeleton");

  Frames out(n, static_cast<Eigen::Index>(3 * joints));
  std::vector<Mat3> global(joints);
  std::vector<Vec3> pos(joints);
  for (Eigen::Index t = 0; t < n; ++t) {
    for (std::size_t j = 0; j < joints; ++j) {
      const Vec3 angles = am.angles.row(t).segment<3>(static_cast<Eigen::Index>(3 * j)).transpose();
      const Mat3 local = euler_to_matrix(angles);
      const auto &spec = sk.joint(j);
      if (!spec.parent) {
        global[j] = local;
        pos[j] = am.root_positions.row(t).transpose();
      } else {
        global[j] = global[*spec.parent] * local;
        pos[j] = pos[*spec.parent] + global[j] * spec.offset;
      }
      out.row(t).segment<3>(static_cast<Eigen::Index>(3 * j)) = pos[j].transpose();
    }
  }
  return Motion(am.skeleton, std::move(out), am.frame_dt);
}

/// Positions -> angles. Each bone gets the minimal rotation carrying its rest
/// offset onto the observed direction (zero twist about the bone); observed
/// lengths are discarded, so FK of the result rebuilds the motion with rest
/// bone lengths. Root rotation is identity and the root trajectory is copied.
inline AngleMotion inverse_kinematics(const Motion &mo, const Skeleton &sk) {
  const std::size_t joints = sk.joint_count();
  if (mo.joint_count() != joints) throw StructuralError("motion joint count does not match skeleton");
  const Eigen::Index n = static_cast<Eigen::Index>(mo.frame_count());
  const auto &frames = mo.frames();

  AngleMotion am;
  am.skeleton = mo.skeleton_ptr();
  am.frame_dt = mo.frame_dt();
  am.root_positions = frames.middleCols(static_cast<Eigen::Index>(3 * sk.root_index()), 3);
  am.angles = Frames::Zero(n, static_cast<Eigen::Index>(3 * joints));

  std::vector<Mat3> global(joints);
  for (Eigen::Index t = 0; t < n; ++t) {
    for (std::size_t j = 0; j < joints; ++j) {
      const auto &spec = sk.joint(j);
      if (!spec.parent) {
        global[j] = Mat3::Identity();
        continue;
      }
      const std::size_t p = *spec.parent;
      const Vec3 bone = (frames.row(t).segment<3>(static_cast<Eigen::Index>(3 * j)) -
                         frames.row(t).segment<3>(static_cast<Eigen::Index>(3 * p)))
                            .transpose();
      const double len = bone.norm();
      if (!(len > kLengthEpsilon)) throw DegenerateBoneError(static_cast<std::size_t>(t), j, spec.name);
      const Vec3 local_dir = global[p].transpose() * (bone / len);
      const Mat3 local =
          Eigen::Quaterniond::FromTwoVectors(spec.offset.normalized(), local_dir).toRotationMatrix();
      global[j] = global[p] * local;
      am.angles.row(t).segment<3>(static_cast<Eigen::Index>(3 * j)) = matrix_to_euler(local).transpose();
    }
  }
  return am;
}

/// Observed bone lengths, n x T, column b for bone sk.bones()[b].
inline Frames bone_lengths(const Motion &mo) {
  const auto &sk = mo.skeleton();
  const auto &bones = sk.bones();
  const Eigen::Index n = static_cast<Eigen::Index>(mo.frame_count());
  Frames out(n, static_cast<Eigen::Index>(bones.size()));
  for (Eigen::Index t = 0; t < n; ++t)
    for (std::size_t b = 0; b < bones.size(); ++b) {
      const std::size_t j = bones[b];
      out(t, static_cast<Eigen::Index>(b)) =
          (mo.position(static_cast<std::size_t>(t), j) -
           mo.position(static_cast<std::size_t>(t), *sk.joint(j).parent))
              .norm();
    }
  return out;
}

} // namespace gmw
