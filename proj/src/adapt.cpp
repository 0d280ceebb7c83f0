#include "graspadapt/adapt.hpp"

#include <stdexcept>

#include "graspadapt/errors.hpp"

namespace graspadapt {

void SkillTrajectory::validate() const {
  if (displacements.empty()) {
    throw std::invalid_argument("SkillTrajectory: needs at least one displacement");
  }
}

SkillRecord acquire_skill(const std::shared_ptr<WorldState>& world,
                          const Pose& reference_eef, const TwoStageEstimator& est,
                          const ServoConfig& cfg, SkillTrajectory trajectory,
                          RandomSource& rng) {
  trajectory.validate();
  const ServoTrace trace = run_servo(world, reference_eef, est, cfg, rng);
  SkillRecord record;
  record.trajectory = std::move(trajectory);
  record.skill_alignment = trace.final_alignment;
  record.object_name = world->object.name;
  return record;
}

Pose compute_corrective(const Pose& skill_alignment, const Pose& deployment_alignment) {
  return compose(inverse(skill_alignment), deployment_alignment);
}

AdaptedExecution execute_adapted(const SkillRecord& record, const Pose& corrective,
                                 const WorldState& deploy_world, const Pose& start_eef) {
  record.trajectory.validate();
  AdaptedExecution exec;
  exec.corrective = corrective;
  exec.eef_trace.reserve(record.trajectory.displacements.size());
  exec.object_trace.reserve(record.trajectory.displacements.size());
  for (const Pose& displacement : record.trajectory.displacements) {
    const Pose eef = compose(start_eef, displacement, corrective);
    if (!deploy_world.workspace.contains(eef.translation)) {
      throw WorkspaceLimit("execute_adapted: waypoint leaves the workspace");
    }
    exec.eef_trace.push_back(eef);
    exec.object_trace.push_back(compose(eef, deploy_world.grasp));
  }
  return exec;
}

nlohmann::json skill_to_json(const SkillRecord& record) {
  nlohmann::json displacements = nlohmann::json::array();
  for (const auto& d : record.trajectory.displacements) {
    displacements.push_back(pose_to_json(d));
  }
  return nlohmann::json{
      {"trajectory",
       {{"initial_eef", pose_to_json(record.trajectory.initial_eef)},
        {"displacements", displacements}}},
      {"skill_alignment", pose_to_json(record.skill_alignment)},
      {"object", record.object_name}};
}

SkillRecord skill_from_json(const nlohmann::json& j) {
  SkillRecord record;
  try {
    const auto& traj = j.at("trajectory");
    record.trajectory.initial_eef = pose_from_json(traj.at("initial_eef"));
    for (const auto& d : traj.at("displacements")) {
      record.trajectory.displacements.push_back(pose_from_json(d));
    }
    record.skill_alignment = pose_from_json(j.at("skill_alignment"));
    record.object_name = j.at("object").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("skill record: ") + e.what());
  }
  record.trajectory.validate();
  return record;
}

}  // namespace graspadapt
