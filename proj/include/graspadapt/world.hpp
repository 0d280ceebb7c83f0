#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "graspadapt/se3.hpp"

namespace graspadapt {

// Axis-aligned box given by center and half extents.
struct Box {
  Eigen::Vector3d center = Eigen::Vector3d::Zero();
  Eigen::Vector3d half_extents = Eigen::Vector3d::Zero();

  bool contains(const Eigen::Vector3d& p) const {
    return ((p - center).array().abs() <= half_extents.array()).all();
  }
};

// Half-space {p : normal . p > offset}; points inside it are discarded.
struct HalfSpace {
  Eigen::Vector3d normal = Eigen::Vector3d::UnitX();
  double offset = 0.0;

  bool contains(const Eigen::Vector3d& p) const { return normal.dot(p) > offset; }
};

// Point-set model of a grasped object, expressed in the object frame {O}.
// `appearance` is an optional per-point scalar in [0,1] standing in for a
// color channel; geometry alone stands in for depth.
struct ObjectModel {
  std::string name;
  std::vector<Eigen::Vector3d> points;
  std::optional<std::vector<double>> appearance;

  void validate() const;
};

// Fixed external camera. `pose_WC` is the true mount pose used to generate
// observations; `extrinsics_report_error` perturbs what calibration-dependent
// consumers are told the extrinsics are. noise/dropout model depth sensing
// defects; `dropout_region` removes a camera-frame half-space wholesale
// (specular / transparent surface failures).
struct CameraModel {
  Pose pose_WC;
  double noise_sigma = 0.0;
  double dropout_uniform = 0.0;
  std::optional<HalfSpace> dropout_region;
  Pose extrinsics_report_error;

  // What calibration-dependent methods believe the camera pose is.
  Pose believed_extrinsics() const { return compose(pose_WC, extrinsics_report_error); }
  void validate() const;
};

enum class MaskSource { full, occluded };

// Segmented view of the grasped object in the camera frame {C}. Carries no
// world- or EEF-frame quantities. `point_ids` tags each surviving point with
// the index of the model point it came from; it exists so that synthetic
// ground-truth correspondences can be formed for the correspondence-based
// registration baseline, is never serialized, and must not be read by
// alignment estimators.
struct Observation {
  std::vector<Eigen::Vector3d> points_C;
  std::optional<std::vector<double>> appearance;
  MaskSource mask_source = MaskSource::full;
  std::vector<std::int32_t> point_ids;
};

// Full kinematic state: EEF pose T_WE, rigid grasp T_EO, the object, the
// camera, an optional occlusion box at the gripper fingers (in {E}), and the
// reachable workspace for EEF translations.
struct WorldState {
  Pose eef_pose;
  Pose grasp;
  ObjectModel object;
  CameraModel camera;
  std::optional<Box> gripper_occlusion;
  Box workspace{Eigen::Vector3d::Zero(), Eigen::Vector3d(1.2, 1.2, 1.2)};
};

// Captures the object as seen from the camera: occlusion in {E}, rigid
// mapping into {C}, Gaussian noise, then uniform and region dropout.
// Deterministic for a given rng state. Throws EmptyObservation when no
// points survive.
Observation observe(const WorldState& state, RandomSource& rng);

// Applies an EEF displacement (expressed in {E}); the grasp is untouched.
// Throws WorkspaceLimit when the resulting translation leaves the workspace.
WorldState move_eef(const WorldState& state, const Pose& displacement);

enum class ObjectKind { hammer, lshape, bar, random };

// Deterministic desk-scale object generator. All kinds produce asymmetric
// point sets (no nontrivial self-symmetry) so that alignment from shape is
// well-posed, and carry a position-derived appearance channel.
ObjectModel make_object(ObjectKind kind, int point_count, std::uint64_t seed);

ObjectKind object_kind_from_string(const std::string& s);

nlohmann::json object_to_json(const ObjectModel& o);
ObjectModel object_from_json(const nlohmann::json& j);

}  // namespace graspadapt
