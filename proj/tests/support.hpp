#pragma once

#include "gmw/kinematics.hpp"
#include "gmw/motion.hpp"
#include "gmw/rng.hpp"
#include "gmw/skeleton.hpp"

#include <Eigen/Geometry>

#include <atomic>
#include <filesystem>
#include <string>
#include <unistd.h>
#include <vector>

namespace gmw::test {

/// root -> a -> b along +x, unit offsets.
inline SkeletonPtr chain_skeleton(double limit = 3.14159) {
  std::vector<JointSpec> j(3);
  j[0].name = "root";
  j[1].name = "a";
  j[1].parent = 0;
  j[1].offset = Vec3(1, 0, 0);
  j[2].name = "b";
  j[2].parent = 1;
  j[2].offset = Vec3(1, 0, 0);
  for (std::size_t i = 1; i < 3; ++i) {
    j[i].angle_min = Vec3::Constant(-limit);
    j[i].angle_max = Vec3::Constant(limit);
  }
  return make_skeleton(std::move(j));
}

/// Random angles in [-spread, spread] * limit for every joint (root
/// included), with twist; root path is a random walk.
inline AngleMotion random_angle_motion(const SkeletonPtr &sk, std::size_t frames, CounterRng &rng,
                                       double spread = 0.9) {
  const auto n = static_cast<Eigen::Index>(frames);
  AngleMotion am;
  am.skeleton = sk;
  am.frame_dt = 1.0 / 30.0;
  am.root_positions = Frames::Zero(n, 3);
  am.angles = Frames::Zero(n, static_cast<Eigen::Index>(3 * sk->joint_count()));
  Vec3 root(0, 1, 0);
  for (Eigen::Index t = 0; t < n; ++t) {
    for (int a = 0; a < 3; ++a) root[a] += 0.01 * rng.normal();
    am.root_positions.row(t) = root.transpose();
    for (std::size_t j = 0; j < sk->joint_count(); ++j)
      for (int a = 0; a < 3; ++a) {
        const auto &s = sk->joint(j);
        const double mid = 0.5 * (s.angle_min[a] + s.angle_max[a]);
        const double half = 0.5 * (s.angle_max[a] - s.angle_min[a]);
        am.angles(t, static_cast<Eigen::Index>(3 * j) + a) = mid + spread * half * (2.0 * rng.uniform() - 1.0);
      }
  }
  return am;
}

/// Zero-twist, root-unrotated angles (the form inverse kinematics returns),
/// each swing within `spread` of the smallest limit of its joint.
inline AngleMotion random_swing_motion(const SkeletonPtr &sk, std::size_t frames, CounterRng &rng,
                                       double spread = 0.5) {
  AngleMotion am = random_angle_motion(sk, frames, rng);
  am.angles.setZero();
  for (Eigen::Index t = 0; t < am.angles.rows(); ++t)
    for (std::size_t j = 0; j < sk->joint_count(); ++j) {
      const auto &s = sk->joint(j);
      if (!s.parent) continue;
      const Vec3 axis_ref = s.offset.normalized();
      Vec3 r(rng.normal(), rng.normal(), rng.normal());
      r -= r.dot(axis_ref) * axis_ref;
      if (r.norm() < 1e-9) continue;
      const double reach = spread * std::min(s.angle_max.minCoeff(), -s.angle_min.maxCoeff());
      const double angle = reach * rng.uniform();
      const Mat3 rot = Eigen::AngleAxisd(angle, r.normalized()).toRotationMatrix();
      am.angles.row(t).segment<3>(static_cast<Eigen::Index>(3 * j)) = matrix_to_euler(rot).transpose();
    }
  return am;
}

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
  explicit TempDir(const std::string &tag) {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("gmw-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path &path() const { return path_; }

private:
  std::filesystem::path path_;
};

} // namespace gmw::test
