#include "graspadapt/se3.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "graspadapt/errors.hpp"

namespace graspadapt {

namespace {

constexpr double kDegToRad = M_PI / 180.0;
constexpr double kRadToDeg = 180.0 / M_PI;

// splitmix64 finalizer; used to derive child seeds.
std::uint64_t mix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

}  // namespace

RandomSource::RandomSource(std::uint64_t seed) : seed_(seed), engine_(seed) {}

double RandomSource::uniform(double lo, double hi) {
  if (lo > hi) throw std::invalid_argument("uniform: lo > hi");
  std::uniform_real_distribution<double> dist(lo, hi);
  return dist(engine_);
}

double RandomSource::gaussian(double sigma) {
  if (sigma <= 0.0) return 0.0;
  std::normal_distribution<double> dist(0.0, sigma);
  return dist(engine_);
}

Eigen::Vector3d RandomSource::unit_vector() {
  const double z = uniform(-1.0, 1.0);
  const double phi = uniform(0.0, 2.0 * M_PI);
  const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
  return {r * std::cos(phi), r * std::sin(phi), z};
}

RandomSource RandomSource::fork(std::uint64_t index) const {
  return RandomSource(mix64(seed_ ^ mix64(index + 1)));
}

Pose::Pose(const Eigen::Quaterniond& q, const Eigen::Vector3d& t)
    : rotation(q), translation(t) {
  const double n = rotation.norm();
  if (!(n > 0.0) || !std::isfinite(n)) {
    throw std::invalid_argument("Pose: quaternion norm must be positive and finite");
  }
  rotation.normalize();
}

Pose Pose::from_translation(const Eigen::Vector3d& t) {
  return Pose(Eigen::Quaterniond::Identity(), t);
}

Pose Pose::from_axis_angle(const Eigen::Vector3d& axis, double angle_deg) {
  const double n = axis.norm();
  if (n == 0.0) throw std::invalid_argument("from_axis_angle: zero axis");
  return Pose(Eigen::Quaterniond(Eigen::AngleAxisd(angle_deg * kDegToRad, axis / n)),
              Eigen::Vector3d::Zero());
}

Pose Pose::from_matrix(const Eigen::Matrix4d& m) {
  return Pose(Eigen::Quaterniond(Eigen::Matrix3d(m.topLeftCorner<3, 3>())),
              m.topRightCorner<3, 1>());
}

Eigen::Matrix4d Pose::matrix() const {
  Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
  m.topLeftCorner<3, 3>() = rotation.toRotationMatrix();
  m.topRightCorner<3, 1>() = translation;
  return m;
}

Eigen::Vector3d Pose::apply(const Eigen::Vector3d& p) const {
  return rotation * p + translation;
}

SampleRange::SampleRange(double pos_m, double orient_deg)
    : position_halfwidth(pos_m), orientation_halfwidth(orient_deg) {
  if (pos_m < 0.0 || orient_deg < 0.0 || orient_deg > 180.0) {
    throw std::invalid_argument("SampleRange: halfwidths must be >= 0 and <= 180 deg");
  }
}

bool SampleRange::contains(const SampleRange& other) const {
  return other.position_halfwidth <= position_halfwidth &&
         other.orientation_halfwidth <= orientation_halfwidth;
}

Pose compose(const Pose& a, const Pose& b) {
  return Pose(a.rotation * b.rotation, a.rotation * b.translation + a.translation);
}

Pose compose(const Pose& a, const Pose& b, const Pose& c) {
  return compose(compose(a, b), c);
}

Pose inverse(const Pose& p) {
  const Eigen::Quaterniond qi = p.rotation.conjugate();
  return Pose(qi, -(qi * p.translation));
}

PoseError error_between(const Pose& a, const Pose& b) {
  PoseError e;
  e.position_mm = 1000.0 * (a.translation - b.translation).norm();
  // angularDistance resolves the quaternion double cover; result in [0, pi].
  e.orientation_deg = a.rotation.angularDistance(b.rotation) * kRadToDeg;
  return e;
}

Pose sample_displacement(const SampleRange& range, RandomSource& rng) {
  const double p = range.position_halfwidth;
  const double o = range.orientation_halfwidth;
  Eigen::Vector3d t;
  t.x() = rng.uniform(-p, p);
  t.y() = rng.uniform(-p, p);
  t.z() = rng.uniform(-p, p);
  const double ax = rng.uniform(-o, o) * kDegToRad;
  const double ay = rng.uniform(-o, o) * kDegToRad;
  const double az = rng.uniform(-o, o) * kDegToRad;
  const Eigen::Quaterniond q = Eigen::AngleAxisd(ax, Eigen::Vector3d::UnitX()) *
                               Eigen::AngleAxisd(ay, Eigen::Vector3d::UnitY()) *
                               Eigen::AngleAxisd(az, Eigen::Vector3d::UnitZ());
  return Pose(q, t);
}

Eigen::Vector3d euler_xyz_degrees(const Pose& p) {
  // R = Rx(a)Ry(b)Rz(c):
  //   R(0,2) = sin b, R(1,2) = -sin a cos b, R(2,2) = cos a cos b,
  //   R(0,1) = -cos b sin c, R(0,0) = cos b cos c.
  const Eigen::Matrix3d r = p.rotation.toRotationMatrix();
  const double b = std::asin(std::clamp(r(0, 2), -1.0, 1.0));
  const double a = std::atan2(-r(1, 2), r(2, 2));
  const double c = std::atan2(-r(0, 1), r(0, 0));
  return Eigen::Vector3d(a, b, c) * kRadToDeg;
}

Pose scale_toward_identity(const Pose& p, double s) {
  return Pose(Eigen::Quaterniond::Identity().slerp(s, p.rotation), s * p.translation);
}

nlohmann::json pose_to_json(const Pose& p) {
  Eigen::Quaterniond q = p.rotation.normalized();
  return nlohmann::json{
      {"t", {p.translation.x(), p.translation.y(), p.translation.z()}},
      {"q", {q.w(), q.x(), q.y(), q.z()}}};
}

Pose pose_from_json(const nlohmann::json& j) {
  const auto& t = j.at("t");
  const auto& q = j.at("q");
  if (t.size() != 3 || q.size() != 4) {
    throw FormatError("pose: expected 3 translation and 4 quaternion components");
  }
  const Eigen::Quaterniond quat(q[0].get<double>(), q[1].get<double>(),
                                q[2].get<double>(), q[3].get<double>());
  if (std::abs(quat.norm() - 1.0) > 1e-6) {
    throw FormatError("pose: quaternion norm deviates from 1 by more than 1e-6");
  }
  return Pose(quat, Eigen::Vector3d(t[0].get<double>(), t[1].get<double>(),
                                    t[2].get<double>()));
}

nlohmann::json range_to_json(const SampleRange& r) {
  return nlohmann::json{{"position_halfwidth", r.position_halfwidth},
                        {"orientation_halfwidth_deg", r.orientation_halfwidth}};
}

SampleRange range_from_json(const nlohmann::json& j) {
  return SampleRange(j.at("position_halfwidth").get<double>(),
                     j.at("orientation_halfwidth_deg").get<double>());
}

}  // namespace graspadapt
