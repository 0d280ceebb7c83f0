#pragma once

#include <memory>
#include <vector>

#include "graspadapt/estimator.hpp"
#include "graspadapt/se3.hpp"
#include "graspadapt/world.hpp"

namespace graspadapt {

struct ServoConfig {
  int total_steps = 20;
  int coarse_steps = 10;
  // Fraction of each conjugated prediction actually applied; 1 replays the
  // full prediction per step, smaller values damp estimator jitter.
  double gain = 0.7;
  // Stop once a prediction is strictly below both thresholds; (0, 0)
  // disables early stopping.
  PoseError early_stop_eps{0.2, 0.1};

  void validate() const;
};

struct ServoStepRecord {
  Pose eef_pose;     // pose reached after applying this step
  Pose prediction;   // estimator output at this step
  Pose applied_step; // gain-scaled conjugated step actually applied
};

struct ServoTrace {
  std::vector<ServoStepRecord> steps;
  // Relative pose of the final EEF with respect to the reference pose: the
  // servoed estimate of the aligning displacement.
  Pose final_alignment;
  bool converged = false;
};

// Transforms an alignment prediction (valid at the reference pose) into the
// step to apply at the current EEF pose, which sits at `current_rel`
// relative to the reference:  step = current_rel^-1 o prediction o current_rel.
// At current_rel = identity this is the prediction itself.
Pose servo_step(const Pose& current_rel, const Pose& prediction);

// Closed-loop alignment: observe, predict (coarse stage first, fine stage
// after cfg.coarse_steps), conjugate, apply a gain-scaled step. The world is
// shared so that a ground-truth estimator wired to the same handle sees the
// EEF move. Starts from wherever the EEF currently is; the usual flows start
// at the reference pose. An empty observation holds position for that step,
// the way a robot skips a bad frame. Throws DivergedFromWorkspace if a step
// leaves the workspace.
ServoTrace run_servo(const std::shared_ptr<WorldState>& world, const Pose& reference_eef,
                     const TwoStageEstimator& est, const ServoConfig& cfg,
                     RandomSource& rng);

}  // namespace graspadapt
