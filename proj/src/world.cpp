#include "graspadapt/world.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "graspadapt/errors.hpp"

namespace graspadapt {

namespace {

// Smallest principal-axis spread; near zero means collinear.
double min_principal_spread(const std::vector<Eigen::Vector3d>& pts) {
  Eigen::Vector3d mean = Eigen::Vector3d::Zero();
  for (const auto& p : pts) mean += p;
  mean /= static_cast<double>(pts.size());
  Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
  for (const auto& p : pts) {
    const Eigen::Vector3d d = p - mean;
    cov += d * d.transpose();
  }
  cov /= static_cast<double>(pts.size());
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(cov);
  // Two leading eigenvalues nonzero <=> not collinear.
  return eig.eigenvalues()(1);
}

Eigen::Vector3d principal_spreads(const std::vector<Eigen::Vector3d>& pts) {
  Eigen::Vector3d mean = Eigen::Vector3d::Zero();
  for (const auto& p : pts) mean += p;
  mean /= static_cast<double>(pts.size());
  Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
  for (const auto& p : pts) {
    const Eigen::Vector3d d = p - mean;
    cov += d * d.transpose();
  }
  cov /= static_cast<double>(pts.size());
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(cov);
  return eig.eigenvalues().cwiseMax(0.0).cwiseSqrt();
}

void recenter(std::vector<Eigen::Vector3d>& pts) {
  Eigen::Vector3d mean = Eigen::Vector3d::Zero();
  for (const auto& p : pts) mean += p;
  mean /= static_cast<double>(pts.size());
  for (auto& p : pts) p -= mean;
}

// Appearance value derived from position: a gradient across the object's
// bounding box, normalized to [0,1].
std::vector<double> position_appearance(const std::vector<Eigen::Vector3d>& pts) {
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (const auto& p : pts) {
    const double s = p.x() + 0.6 * p.y() + 0.3 * p.z();
    lo = std::min(lo, s);
    hi = std::max(hi, s);
  }
  const double span = (hi > lo) ? (hi - lo) : 1.0;
  std::vector<double> a;
  a.reserve(pts.size());
  for (const auto& p : pts) {
    const double s = p.x() + 0.6 * p.y() + 0.3 * p.z();
    a.push_back((s - lo) / span);
  }
  return a;
}

// Irregular monotone spacing over [0, length]; non-uniform so the shape has
// no shift/flip self-symmetry along the row.
double row_position(int i, int count, double length, double exponent = 1.25) {
  if (count <= 1) return 0.0;
  const double u = static_cast<double>(i) / static_cast<double>(count - 1);
  return length * std::pow(u, exponent);
}

std::vector<Eigen::Vector3d> make_bar(int n, RandomSource& rng) {
  std::vector<Eigen::Vector3d> pts;
  pts.reserve(n);
  if (n <= 8) {
    // The documented 8-point fixture: two parallel 4-point rows along x
    // spanning 0.2 m, with distinct interior spacings so no half-turn maps
    // the set onto itself.
    const int row1 = (n + 1) / 2;
    const int row2 = n - row1;
    for (int i = 0; i < row1; ++i) {
      pts.emplace_back(row_position(i, row1, 0.2, 1.25), 0.0, 0.0);
    }
    for (int i = 0; i < row2; ++i) {
      pts.emplace_back(row_position(i, row2, 0.2, 1.6), 0.04, 0.015);
    }
    return pts;
  }
  // Dense bars: jittered fill of a 0.2 m slab plus a tab at one end. The
  // jitter avoids lattice aliasing under nearest-neighbor matching and the
  // tab removes the slab's half-turn symmetry.
  RandomSource r = rng.fork(0xBA);
  const int body = (7 * n) / 10;
  for (int i = 0; i < body; ++i) {
    pts.emplace_back(r.uniform(0.0, 0.2), r.uniform(0.0, 0.04), r.uniform(0.0, 0.015));
  }
  for (int i = body; i < n; ++i) {
    pts.emplace_back(r.uniform(0.14, 0.2), r.uniform(0.04, 0.07),
                     r.uniform(0.0, 0.015));
  }
  return pts;
}

std::vector<Eigen::Vector3d> make_lshape(int n) {
  // A long leg along x, a short leg along y, and a raised ridge over part of
  // the long leg; lengths all differ so no rotation maps the set to itself.
  const int leg1 = n / 2;
  const int leg2 = n / 4;
  const int ridge = n - leg1 - leg2;
  std::vector<Eigen::Vector3d> pts;
  pts.reserve(n);
  for (int i = 0; i < leg1; ++i) pts.emplace_back(row_position(i, leg1, 0.16), 0.0, 0.0);
  for (int i = 0; i < leg2; ++i) pts.emplace_back(0.0, row_position(i, leg2, 0.10) + 0.02, 0.0);
  for (int i = 0; i < ridge; ++i) pts.emplace_back(row_position(i, ridge, 0.07) + 0.01, 0.0, 0.02);
  return pts;
}

std::vector<Eigen::Vector3d> make_hammer(int n) {
  // Handle along x plus an off-center head block at the far end.
  const int handle = (2 * n) / 3;
  const int head = n - handle;
  std::vector<Eigen::Vector3d> pts;
  pts.reserve(n);
  const int layer = (handle + 1) / 2;
  for (int i = 0; i < layer; ++i) pts.emplace_back(row_position(i, layer, 0.17), 0.0, 0.0);
  for (int i = 0; i < handle - layer; ++i) {
    pts.emplace_back(row_position(i, handle - layer, 0.17), 0.012, 0.012);
  }
  // Head: small lattice, asymmetric in y about the handle.
  int side = std::max(2, static_cast<int>(std::round(std::cbrt(static_cast<double>(head)))));
  int placed = 0;
  for (int ix = 0; ix < side && placed < head; ++ix) {
    for (int iy = 0; iy < side && placed < head; ++iy) {
      for (int iz = 0; iz < side && placed < head; ++iz) {
        pts.emplace_back(0.17 + 0.03 * ix / std::max(1, side - 1),
                         -0.05 + 0.08 * iy / std::max(1, side - 1),
                         0.03 * iz / std::max(1, side - 1));
        ++placed;
      }
    }
  }
  return pts;
}

std::vector<Eigen::Vector3d> make_random_cloud(int n, RandomSource& rng) {
  // Rejection-sample anisotropic clouds until the principal-axis lengths are
  // pairwise distinct by at least 5%, so pose from shape is unambiguous.
  for (int attempt = 0; attempt < 1000; ++attempt) {
    RandomSource r = rng.fork(attempt);
    std::vector<Eigen::Vector3d> pts;
    pts.reserve(n);
    for (int i = 0; i < n; ++i) {
      pts.emplace_back(r.uniform(-0.10, 0.10), r.uniform(-0.06, 0.06),
                       r.uniform(-0.035, 0.035));
    }
    const Eigen::Vector3d s = principal_spreads(pts);
    if (s(0) > 1e-9 && s(1) > 1.05 * s(0) && s(2) > 1.05 * s(1)) return pts;
  }
  throw Error("make_object: failed to draw an asymmetric random cloud");
}

}  // namespace

void ObjectModel::validate() const {
  if (points.size() < 3) {
    throw std::invalid_argument("ObjectModel: need at least 3 points");
  }
  if (min_principal_spread(points) < 1e-12) {
    throw std::invalid_argument("ObjectModel: points are collinear");
  }
  if (appearance) {
    if (appearance->size() != points.size()) {
      throw std::invalid_argument("ObjectModel: appearance size mismatch");
    }
    for (double a : *appearance) {
      if (!(a >= 0.0 && a <= 1.0)) {
        throw std::invalid_argument("ObjectModel: appearance outside [0,1]");
      }
    }
  }
}

void CameraModel::validate() const {
  if (noise_sigma < 0.0) throw std::invalid_argument("CameraModel: noise_sigma < 0");
  if (dropout_uniform < 0.0 || dropout_uniform > 1.0) {
    throw std::invalid_argument("CameraModel: dropout_uniform outside [0,1]");
  }
}

Observation observe(const WorldState& state, RandomSource& rng) {
  state.object.validate();
  state.camera.validate();

  const Pose world_from_object = compose(state.eef_pose, state.grasp);
  const Pose camera_from_world = inverse(state.camera.pose_WC);
  const Pose camera_from_object = compose(camera_from_world, world_from_object);

  Observation obs;
  const bool with_appearance = state.object.appearance.has_value();
  if (with_appearance) obs.appearance.emplace();

  const double sigma = state.camera.noise_sigma;
  const double dropout = state.camera.dropout_uniform;
  bool any_occluded = false;

  for (std::size_t i = 0; i < state.object.points.size(); ++i) {
    const Eigen::Vector3d& p_obj = state.object.points[i];
    if (state.gripper_occlusion) {
      const Eigen::Vector3d p_eef = state.grasp.apply(p_obj);
      if (state.gripper_occlusion->contains(p_eef)) {
        any_occluded = true;
        continue;
      }
    }
    Eigen::Vector3d p_cam = camera_from_object.apply(p_obj);
    if (sigma > 0.0) {
      p_cam += Eigen::Vector3d(rng.gaussian(sigma), rng.gaussian(sigma),
                               rng.gaussian(sigma));
    }
    if (dropout > 0.0 && rng.uniform(0.0, 1.0) < dropout) continue;
    if (state.camera.dropout_region && state.camera.dropout_region->contains(p_cam)) {
      continue;
    }
    obs.points_C.push_back(p_cam);
    obs.point_ids.push_back(static_cast<std::int32_t>(i));
    if (with_appearance) obs.appearance->push_back((*state.object.appearance)[i]);
  }

  obs.mask_source = any_occluded ? MaskSource::occluded : MaskSource::full;
  if (obs.points_C.empty()) {
    throw EmptyObservation("observe: every point was occluded or dropped");
  }
  return obs;
}

WorldState move_eef(const WorldState& state, const Pose& displacement) {
  WorldState next = state;
  next.eef_pose = compose(state.eef_pose, displacement);
  if (!state.workspace.contains(next.eef_pose.translation)) {
    throw WorkspaceLimit("move_eef: commanded pose leaves the workspace box");
  }
  return next;
}

ObjectModel make_object(ObjectKind kind, int point_count, std::uint64_t seed) {
  if (point_count < 8) {
    throw std::invalid_argument("make_object: need at least 8 points");
  }
  RandomSource rng(seed);
  ObjectModel model;
  switch (kind) {
    case ObjectKind::bar:
      model.name = "bar";
      model.points = make_bar(point_count, rng);
      break;
    case ObjectKind::lshape:
      model.name = "lshape";
      model.points = make_lshape(point_count);
      break;
    case ObjectKind::hammer:
      model.name = "hammer";
      model.points = make_hammer(point_count);
      break;
    case ObjectKind::random:
      model.name = "random";
      model.points = make_random_cloud(point_count, rng);
      break;
  }
  recenter(model.points);
  model.appearance = position_appearance(model.points);
  model.validate();
  return model;
}

ObjectKind object_kind_from_string(const std::string& s) {
  if (s == "hammer") return ObjectKind::hammer;
  if (s == "lshape") return ObjectKind::lshape;
  if (s == "bar") return ObjectKind::bar;
  if (s == "random") return ObjectKind::random;
  throw std::invalid_argument("unknown object kind: " + s);
}

nlohmann::json object_to_json(const ObjectModel& o) {
  nlohmann::json pts = nlohmann::json::array();
  for (const auto& p : o.points) pts.push_back({p.x(), p.y(), p.z()});
  nlohmann::json j{{"name", o.name}, {"points", pts}};
  if (o.appearance) {
    j["appearance"] = *o.appearance;
  } else {
    j["appearance"] = nullptr;
  }
  return j;
}

ObjectModel object_from_json(const nlohmann::json& j) {
  ObjectModel o;
  o.name = j.at("name").get<std::string>();
  for (const auto& p : j.at("points")) {
    if (p.size() != 3) throw FormatError("object point needs 3 components");
    o.points.emplace_back(p[0].get<double>(), p[1].get<double>(), p[2].get<double>());
  }
  if (j.contains("appearance") && !j.at("appearance").is_null()) {
    o.appearance = j.at("appearance").get<std::vector<double>>();
  }
  o.validate();
  return o;
}

}  // namespace graspadapt
