#pragma once

#include <utility>
#include <vector>

#include "graspadapt/se3.hpp"
#include "graspadapt/world.hpp"

namespace graspadapt {

// Paired source/target points in the camera frame. `outlier_fraction` is the
// declared contamination used when the pairs were synthesized.
struct Correspondences {
  std::vector<std::pair<Eigen::Vector3d, Eigen::Vector3d>> pairs;
  double outlier_fraction = 0.0;
};

// Rigid registration output: target ~= relative_pose_C o source.
struct RegistrationResult {
  Pose relative_pose_C;
  double rms_residual = 0.0;
  int iterations = 0;
  bool converged = false;
  std::vector<double> rms_history;
};

// Least-squares rigid fit from exact correspondences: centroid subtraction,
// cross-covariance SVD, rotation V*U^T with the usual reflection fix, then
// t = q_bar - R p_bar. Always returns a proper rotation. Throws
// DegenerateConfiguration for fewer than 3 pairs or collinear input.
RegistrationResult arun_svd(const Correspondences& c);

struct IcpConfig {
  int max_iterations = 50;
  // Stop when the mean residual changes by less than this (meters).
  double min_residual_delta = 1e-7;
  // Reject matches farther than trim_factor times the median match distance.
  double trim_factor = 3.0;
  // A "converged" result must also end below this RMS (meters); a run that
  // settles in a distant local minimum is reported non-converged.
  double converged_rms = 5e-3;
};

// Point-to-point ICP: nearest-neighbor matching (kd-tree) plus arun_svd per
// iteration, starting from `init`. Throws EmptyCloud on empty input.
RegistrationResult icp(const std::vector<Eigen::Vector3d>& source,
                       const std::vector<Eigen::Vector3d>& target, const Pose& init,
                       const IcpConfig& config = {});

// Ground-truth pairings between two observations of the same object (matched
// by model point id), contaminated with per-point Gaussian noise and a
// fraction of mismatched pairs. Stand-in for learned 2D-2D correspondences.
Correspondences make_synthetic_correspondences(const Observation& source,
                                               const Observation& target,
                                               double noise_sigma,
                                               double outlier_fraction,
                                               RandomSource& rng);

enum class BaselineMethod { icp, svd };

struct BaselineConfig {
  IcpConfig icp;
  double synthetic_noise_sigma = 0.002;
  double synthetic_outlier_fraction = 0.10;
};

// Registration-based corrective transform. Registers the deployment view
// onto the skill view in the camera frame, then conjugates the camera-frame
// relative pose into the EEF frame through the *believed* camera extrinsics:
//   corrective = E o rel_C o E^-1,  E = reference_eef^-1 o believed_extrinsics.
// Unlike the alignment estimators, the result depends on calibration quality.
Pose baseline_corrective(const Observation& skill_obs, const Observation& deploy_obs,
                         const Pose& believed_extrinsics, const Pose& reference_eef,
                         BaselineMethod method, const BaselineConfig& config,
                         RandomSource& rng);

}  // namespace graspadapt
