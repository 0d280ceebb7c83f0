#pragma once

#include <memory>
#include <string>
#include <vector>

#include "graspadapt/se3.hpp"
#include "graspadapt/servo.hpp"
#include "graspadapt/world.hpp"

namespace graspadapt {

// A skill trajectory: H EEF displacements, each expressed relative to the
// nominal initial EEF pose (waypoint t sits at initial_eef o displacements[t]).
struct SkillTrajectory {
  Pose initial_eef;
  std::vector<Pose> displacements;

  void validate() const;
};

// A skill bundled with the alignment of its grasp to the reference grasp,
// as produced by a completed servo run. One record serves any number of
// trajectories for the same object.
struct SkillRecord {
  SkillTrajectory trajectory;
  Pose skill_alignment;
  std::string object_name;
};

// Result of replaying a trajectory with a corrective transform inserted.
struct AdaptedExecution {
  Pose corrective;
  std::vector<Pose> eef_trace;     // world EEF poses, one per displacement
  std::vector<Pose> object_trace;  // eef_trace[t] o deployment grasp
};

// Servo the skill grasp into alignment with the reference grasp and bundle
// the result with the trajectory. The world's grasp is the skill grasp; the
// EEF normally starts at the reference pose.
SkillRecord acquire_skill(const std::shared_ptr<WorldState>& world,
                          const Pose& reference_eef, const TwoStageEstimator& est,
                          const ServoConfig& cfg, SkillTrajectory trajectory,
                          RandomSource& rng);

// corrective = skill_alignment^-1 o deployment_alignment. Inserted after
// each trajectory displacement it makes the object retrace its skill-grasp
// path under the deployment grasp.
Pose compute_corrective(const Pose& skill_alignment, const Pose& deployment_alignment);

// Replays the trajectory from `start_eef` with the corrective inserted:
// eef_trace[t] = start_eef o displacement[t] o corrective. The object trace
// uses the deployment grasp held in `deploy_world`. Throws WorkspaceLimit if
// any waypoint leaves the workspace.
AdaptedExecution execute_adapted(const SkillRecord& record, const Pose& corrective,
                                 const WorldState& deploy_world, const Pose& start_eef);

nlohmann::json skill_to_json(const SkillRecord& record);
SkillRecord skill_from_json(const nlohmann::json& j);

}  // namespace graspadapt
