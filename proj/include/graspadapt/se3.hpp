#pragma once

#include <Eigen/Dense>
#include <Eigen/Geometry>
#include <cstdint>
#include <random>

#include "json.hpp"

namespace graspadapt {

// Tolerance used when checking algebraic identities (composition with an
// inverse, quaternion normalization) directly on library types.
inline constexpr double kComposeTol = 1e-12;
// Looser tolerance for chained-operation checks in tests.
inline constexpr double kTestTol = 1e-10;

// Deterministic random source. Wraps a seeded mt19937_64; `fork` derives an
// independent child stream from the original seed and an index, so parallel
// trials can draw without touching each other's state.
class RandomSource {
 public:
  explicit RandomSource(std::uint64_t seed);

  double uniform(double lo, double hi);
  // Zero-mean normal draw; sigma <= 0 returns 0 without consuming entropy.
  double gaussian(double sigma);
  Eigen::Vector3d unit_vector();

  RandomSource fork(std::uint64_t index) const;
  std::uint64_t seed() const { return seed_; }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
};

// Rigid transform: unit quaternion plus translation in meters. Also used for
// EEF displacements (motions expressed in the frame being moved).
struct Pose {
  Eigen::Quaterniond rotation{1.0, 0.0, 0.0, 0.0};
  Eigen::Vector3d translation{0.0, 0.0, 0.0};

  Pose() = default;
  Pose(const Eigen::Quaterniond& q, const Eigen::Vector3d& t);

  static Pose identity() { return Pose{}; }
  static Pose from_translation(const Eigen::Vector3d& t);
  // Rotation of `angle_deg` degrees about `axis` (normalized internally).
  static Pose from_axis_angle(const Eigen::Vector3d& axis, double angle_deg);
  static Pose from_matrix(const Eigen::Matrix4d& m);

  Eigen::Matrix4d matrix() const;
  Eigen::Vector3d apply(const Eigen::Vector3d& p) const;
};

// Position/orientation error split the way bench reports want it.
struct PoseError {
  double position_mm = 0.0;
  double orientation_deg = 0.0;
};

// Half-widths of a uniform per-axis sampling box around the identity:
// `position_halfwidth` meters on each translation axis and
// `orientation_halfwidth` degrees on each rotation axis.
struct SampleRange {
  double position_halfwidth = 0.0;
  double orientation_halfwidth = 0.0;

  SampleRange() = default;
  SampleRange(double pos_m, double orient_deg);

  bool contains(const SampleRange& other) const;
};

Pose compose(const Pose& a, const Pose& b);
Pose compose(const Pose& a, const Pose& b, const Pose& c);
Pose inverse(const Pose& p);

PoseError error_between(const Pose& a, const Pose& b);

// Uniform displacement inside `range`: per-axis uniform translation and a
// rotation composed as Rx*Ry*Rz from per-axis uniform angles. Draw order is
// fixed (tx, ty, tz, ax, ay, az) so streams are reproducible.
Pose sample_displacement(const SampleRange& range, RandomSource& rng);

// Factors a rotation as Rx(a)*Ry(b)*Rz(c) and returns (a, b, c) in degrees,
// with b in [-90, 90]. Matches the sample_displacement composition order, so
// displacements drawn from a SampleRange factor back into their per-axis
// angles as long as the halfwidth stays below 90 degrees.
Eigen::Vector3d euler_xyz_degrees(const Pose& p);

// Interpolates a displacement toward identity: translation scaled by `s`,
// rotation slerped from identity by `s`. s = 1 returns p, s = 0 identity.
Pose scale_toward_identity(const Pose& p, double s);

// JSON form {"t":[x,y,z],"q":[w,x,y,z]}. Writers normalize; readers reject
// quaternions whose norm deviates from 1 by more than 1e-6.
nlohmann::json pose_to_json(const Pose& p);
Pose pose_from_json(const nlohmann::json& j);

nlohmann::json range_to_json(const SampleRange& r);
SampleRange range_from_json(const nlohmann::json& j);

}  // namespace graspadapt
