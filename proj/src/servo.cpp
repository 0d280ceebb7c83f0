#include "graspadapt/servo.hpp"

#include <stdexcept>

#include "graspadapt/errors.hpp"

namespace graspadapt {

void ServoConfig::validate() const {
  if (total_steps < 1) throw std::invalid_argument("ServoConfig: total_steps >= 1");
  if (coarse_steps < 0 || coarse_steps > total_steps) {
    throw std::invalid_argument("ServoConfig: coarse_steps must lie in [0, total_steps]");
  }
  if (!(gain > 0.0 && gain <= 1.0)) {
    throw std::invalid_argument("ServoConfig: gain must lie in (0, 1]");
  }
}

Pose servo_step(const Pose& current_rel, const Pose& prediction) {
  return compose(inverse(current_rel), compose(prediction, current_rel));
}

ServoTrace run_servo(const std::shared_ptr<WorldState>& world, const Pose& reference_eef,
                     const TwoStageEstimator& est, const ServoConfig& cfg,
                     RandomSource& rng) {
  if (!world) throw std::invalid_argument("run_servo: null world handle");
  cfg.validate();

  ServoTrace trace;
  for (int step_idx = 0; step_idx < cfg.total_steps; ++step_idx) {
    Observation obs;
    try {
      obs = observe(*world, rng);
    } catch (const EmptyObservation&) {
      continue;  // bad frame: hold position, spend the step
    }
    const Stage stage = step_idx < cfg.coarse_steps ? Stage::coarse : Stage::fine;
    const Pose prediction = est.estimate(obs, stage);

    const PoseError to_identity = error_between(prediction, Pose::identity());
    if (to_identity.position_mm < cfg.early_stop_eps.position_mm &&
        to_identity.orientation_deg < cfg.early_stop_eps.orientation_deg) {
      trace.converged = true;
      break;
    }

    const Pose rel = compose(inverse(reference_eef), world->eef_pose);
    const Pose applied = scale_toward_identity(servo_step(rel, prediction), cfg.gain);
    try {
      *world = move_eef(*world, applied);
    } catch (const WorkspaceLimit&) {
      throw DivergedFromWorkspace("run_servo: EEF left the workspace");
    }
    trace.steps.push_back(ServoStepRecord{world->eef_pose, prediction, applied});
  }

  trace.final_alignment = compose(inverse(reference_eef), world->eef_pose);
  return trace;
}

}  // namespace graspadapt
