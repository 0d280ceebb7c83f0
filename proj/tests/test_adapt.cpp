#include <memory>

#include "doctest.h"
#include "graspadapt/adapt.hpp"
#include "graspadapt/errors.hpp"
#include "graspadapt/eval.hpp"
#include "test_helpers.hpp"

using namespace graspadapt;
using graspadapt::testing::clean_scene;
using graspadapt::testing::random_pose;

namespace {

SkillTrajectory line_trajectory(const Pose& initial_eef, int steps = 6) {
  SkillTrajectory traj;
  traj.initial_eef = initial_eef;
  for (int t = 1; t <= steps; ++t) {
    traj.displacements.push_back(compose(
        Pose::from_translation({0.02 * t, 0.0, -0.01 * t}),
        Pose::from_axis_angle(Eigen::Vector3d::UnitY(), 3.0 * t)));
  }
  return traj;
}

}  // namespace

TEST_CASE("acquire_skill: reference grasp needs no alignment") {
  const SceneConfig scene = clean_scene(64);
  const ReferenceSetup ref = reference_from_scene(scene);
  auto world = std::make_shared<WorldState>(world_from_scene(scene));

  auto oracle = std::make_shared<OracleEstimator>(world, ref, 0.0, 0.0, 1);
  RandomSource rng(2);
  const SkillRecord record =
      acquire_skill(world, ref.reference_eef, TwoStageEstimator{oracle}, ServoConfig{},
                    line_trajectory(world->eef_pose), rng);
  CHECK(error_between(record.skill_alignment, Pose::identity()).position_mm / 1000.0 <
        kComposeTol * 10);
}

TEST_CASE("acquire_skill: known grasp offset aligns exactly under the oracle") {
  const SceneConfig scene = clean_scene(64);
  const ReferenceSetup ref = reference_from_scene(scene);
  RandomSource rng(3);

  for (int i = 0; i < 10; ++i) {
    auto world = std::make_shared<WorldState>(world_from_scene(scene));
    world->grasp = compose(ref.reference_grasp, random_pose(rng, 0.05, 35.0));

    auto oracle = std::make_shared<OracleEstimator>(world, ref, 0.0, 0.0, 4);
    ServoConfig cfg;
    cfg.gain = 1.0;
    RandomSource servo_rng(5);
    const SkillRecord record =
        acquire_skill(world, ref.reference_eef, TwoStageEstimator{oracle}, cfg,
                      line_trajectory(ref.reference_eef), servo_rng);

    // The alignment maps the skill grasp onto the reference grasp.
    const Pose mapped = compose(record.skill_alignment, world->grasp);
    const PoseError e = error_between(mapped, ref.reference_grasp);
    CHECK(e.position_mm / 1000.0 < kComposeTol * 100);
    CHECK(e.orientation_deg * M_PI / 180.0 < 1e-10);
  }
}

TEST_CASE("compute_corrective: trivial cases and the grasp-transfer identity") {
  RandomSource rng(6);
  const Pose alignment = random_pose(rng, 0.1, 45.0);
  CHECK(error_between(compute_corrective(alignment, alignment), Pose::identity())
            .position_mm /
            1000.0 <
        kComposeTol * 10);

  const Pose deployment_only = compute_corrective(Pose::identity(), alignment);
  CHECK(error_between(deployment_only, alignment).position_mm < 1e-9);

  // With ground-truth alignments the corrective maps the deployment grasp
  // onto the skill grasp exactly.
  const Pose reference_grasp = random_pose(rng, 0.05, 30.0);
  for (int i = 0; i < 50; ++i) {
    const Pose skill_grasp = compose(reference_grasp, random_pose(rng, 0.08, 50.0));
    const Pose deploy_grasp = compose(reference_grasp, random_pose(rng, 0.08, 50.0));
    const Pose skill_alignment = compose(reference_grasp, inverse(skill_grasp));
    const Pose deploy_alignment = compose(reference_grasp, inverse(deploy_grasp));
    const Pose corrective = compute_corrective(skill_alignment, deploy_alignment);
    const PoseError e = error_between(compose(corrective, deploy_grasp), skill_grasp);
    CHECK(e.position_mm / 1000.0 < kComposeTol * 100);
    CHECK(e.orientation_deg * M_PI / 180.0 < 1e-10);
  }
}

TEST_CASE("execute_adapted: identity corrective replays the skill exactly") {
  const SceneConfig scene = clean_scene(64);
  WorldState world = world_from_scene(scene);
  const SkillTrajectory traj = line_trajectory(world.eef_pose);
  SkillRecord record{traj, Pose::identity(), world.object.name};

  const AdaptedExecution exec =
      execute_adapted(record, Pose::identity(), world, traj.initial_eef);
  REQUIRE(exec.eef_trace.size() == traj.displacements.size());
  for (std::size_t t = 0; t < traj.displacements.size(); ++t) {
    const Pose expected = compose(traj.initial_eef, traj.displacements[t]);
    CHECK(error_between(exec.eef_trace[t], expected).position_mm / 1000.0 <
          kComposeTol * 10);
    const Pose expected_obj = compose(expected, world.grasp);
    CHECK(error_between(exec.object_trace[t], expected_obj).position_mm / 1000.0 <
          kComposeTol * 10);
  }
}

TEST_CASE("execute_adapted: the adapted object trajectory matches the skill one") {
  const SceneConfig scene = clean_scene(64);
  RandomSource rng(7);

  for (int i = 0; i < 100; ++i) {
    WorldState skill_world = world_from_scene(scene);
    WorldState deploy_world = skill_world;
    skill_world.grasp = compose(scene.reference_grasp, random_pose(rng, 0.06, 45.0));
    deploy_world.grasp = compose(skill_world.grasp, random_pose(rng, 0.05, 45.0));

    const Pose start = compose(scene.reference_eef, random_pose(rng, 0.15, 60.0));
    const SkillTrajectory traj = line_trajectory(start, 5);
    SkillRecord record{traj, Pose::identity(), skill_world.object.name};

    // Ground-truth corrective straight from the two grasps.
    const Pose corrective = compose(skill_world.grasp, inverse(deploy_world.grasp));
    const AdaptedExecution adapted =
        execute_adapted(record, corrective, deploy_world, start);
    const AdaptedExecution nominal =
        execute_adapted(record, Pose::identity(), skill_world, start);

    for (std::size_t t = 0; t < traj.displacements.size(); ++t) {
      const PoseError e =
          error_between(adapted.object_trace[t], nominal.object_trace[t]);
      CHECK(e.position_mm / 1000.0 < 1e-9);
      CHECK(e.orientation_deg < 1e-7);
    }
  }
}

TEST_CASE("execute_adapted: start-pose independence of the relative trace") {
  const SceneConfig scene = clean_scene(64);
  RandomSource rng(8);
  WorldState deploy_world = world_from_scene(scene);
  deploy_world.grasp = compose(scene.reference_grasp, random_pose(rng, 0.05, 30.0));
  const Pose corrective = random_pose(rng, 0.03, 20.0);

  const Pose start_a = scene.reference_eef;
  const Pose start_b = compose(scene.reference_eef, random_pose(rng, 0.2, 70.0));
  const SkillTrajectory traj = line_trajectory(start_a, 5);
  SkillRecord record{traj, Pose::identity(), deploy_world.object.name};

  const AdaptedExecution a = execute_adapted(record, corrective, deploy_world, start_a);
  const AdaptedExecution b = execute_adapted(record, corrective, deploy_world, start_b);
  for (std::size_t t = 0; t < traj.displacements.size(); ++t) {
    const Pose rel_a = compose(inverse(start_a), a.object_trace[t]);
    const Pose rel_b = compose(inverse(start_b), b.object_trace[t]);
    const PoseError e = error_between(rel_a, rel_b);
    CHECK(e.position_mm / 1000.0 < kTestTol);
    CHECK(e.orientation_deg * M_PI / 180.0 < kTestTol);
  }
}

TEST_CASE("execute_adapted: corrective error propagates rigidly") {
  const SceneConfig scene = clean_scene(64);
  WorldState world = world_from_scene(scene);
  const SkillTrajectory traj = line_trajectory(world.eef_pose, 6);
  SkillRecord record{traj, Pose::identity(), world.object.name};

  const Pose clean = Pose::identity();
  const Pose offset = Pose::from_translation({0.005, 0.0, 0.0});
  const AdaptedExecution base = execute_adapted(record, clean, world, traj.initial_eef);
  const AdaptedExecution skewed =
      execute_adapted(record, offset, world, traj.initial_eef);
  for (std::size_t t = 0; t < traj.displacements.size(); ++t) {
    const PoseError e = error_between(base.object_trace[t], skewed.object_trace[t]);
    CHECK(e.position_mm == doctest::Approx(5.0).epsilon(1e-9));
    CHECK(e.orientation_deg < 1e-9);
  }
}

TEST_CASE("acquire then deploy with the retrieval estimator stays accurate") {
  SceneConfig scene = clean_scene(256);
  scene.collect_m = 1200;
  const ReferenceSetup ref = reference_from_scene(scene);
  const RetrievalBundle bundle = build_retrieval_bundle(scene, 21);
  const TwoStageEstimator est(bundle.coarse, bundle.fine);

  RandomSource rng(22);
  auto world = std::make_shared<WorldState>(world_from_scene(scene));
  world->grasp = compose(ref.reference_grasp, random_pose(rng, 0.05, 30.0));

  RandomSource servo_rng(23);
  const SkillRecord record =
      acquire_skill(world, ref.reference_eef, est, ServoConfig{},
                    line_trajectory(ref.reference_eef), servo_rng);

  const Pose mapped = compose(record.skill_alignment, world->grasp);
  const PoseError e = error_between(mapped, ref.reference_grasp);
  CHECK(e.position_mm < 5.0);
  CHECK(e.orientation_deg < 3.0);
}

TEST_CASE("skill record JSON round-trip") {
  const SceneConfig scene = clean_scene(64);
  RandomSource rng(9);
  SkillRecord record{line_trajectory(random_pose(rng, 0.2, 50.0)),
                     random_pose(rng, 0.05, 20.0), "bar"};
  const SkillRecord back = skill_from_json(skill_to_json(record));
  CHECK(back.object_name == record.object_name);
  CHECK(back.trajectory.displacements.size() == record.trajectory.displacements.size());
  CHECK(error_between(back.skill_alignment, record.skill_alignment).position_mm <
        1e-9);
  for (std::size_t t = 0; t < record.trajectory.displacements.size(); ++t) {
    CHECK(error_between(back.trajectory.displacements[t],
                        record.trajectory.displacements[t])
              .position_mm < 1e-9);
  }
}

TEST_CASE("execute_adapted: workspace violations throw") {
  const SceneConfig scene = clean_scene(64);
  WorldState world = world_from_scene(scene);
  world.workspace = Box{Eigen::Vector3d::Zero(), Eigen::Vector3d(0.05, 0.05, 0.05)};
  SkillTrajectory traj;
  traj.initial_eef = world.eef_pose;
  traj.displacements = {Pose::from_translation({0.5, 0.0, 0.0})};
  SkillRecord record{traj, Pose::identity(), world.object.name};
  CHECK_THROWS_AS(
      execute_adapted(record, Pose::identity(), world, traj.initial_eef),
      WorkspaceLimit);
}
