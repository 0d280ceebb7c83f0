#include <memory>

#include "doctest.h"
#include "graspadapt/errors.hpp"
#include "graspadapt/eval.hpp"
#include "graspadapt/servo.hpp"
#include "test_helpers.hpp"

using namespace graspadapt;
using graspadapt::testing::clean_scene;
using graspadapt::testing::random_pose;

namespace {

// Predicts a fixed pose regardless of the view.
class ConstantEstimator final : public AlignmentEstimator {
 public:
  explicit ConstantEstimator(Pose value) : value_(value) {}
  Pose estimate(const Observation&) const override { return value_; }
  SampleRange trained_range() const override { return SampleRange(10.0, 180.0); }

 private:
  Pose value_;
};

}  // namespace

TEST_CASE("servo_step: trivial and hand-computed cases") {
  RandomSource rng(1);
  const Pose prediction = random_pose(rng, 0.2, 60.0);
  const Pose passthrough = servo_step(Pose::identity(), prediction);
  CHECK(error_between(passthrough, prediction).position_mm < 1e-9);
  CHECK(error_between(passthrough, prediction).orientation_deg < 1e-9);

  const Pose rel = random_pose(rng, 0.2, 60.0);
  const Pose idle = servo_step(rel, Pose::identity());
  CHECK(error_between(idle, Pose::identity()).position_mm / 1000.0 < kComposeTol * 10);

  // Conjugation rotates a reference-frame step into the current EEF frame.
  const Pose quarter_turn = Pose::from_axis_angle(Eigen::Vector3d::UnitZ(), 90.0);
  const Pose step = servo_step(quarter_turn, Pose::from_translation({0.1, 0.0, 0.0}));
  CHECK(step.translation.isApprox(Eigen::Vector3d(0.0, -0.1, 0.0), 1e-12));
  CHECK(step.rotation.angularDistance(Eigen::Quaterniond::Identity()) < 1e-12);
  // Same answer via plain homogeneous matrices.
  const Eigen::Matrix4d oracle = quarter_turn.matrix().inverse() *
                                 Pose::from_translation({0.1, 0.0, 0.0}).matrix() *
                                 quarter_turn.matrix();
  CHECK(graspadapt::testing::matrix_delta(step, oracle) < 1e-12);
}

TEST_CASE("servo_step satisfies the frame-conjugation identity") {
  RandomSource rng(2);
  const Pose reference = random_pose(rng, 0.3, 80.0);
  for (int i = 0; i < 10000; ++i) {
    const Pose rel = random_pose(rng, 0.3, 80.0);
    const Pose prediction = random_pose(rng, 0.3, 80.0);
    // Applying the conjugated step at the current pose reaches the same
    // world pose as applying the prediction at the reference.
    const Pose current = compose(reference, rel);
    const Pose via_step = compose(current, servo_step(rel, prediction));
    const Pose via_reference = compose(reference, compose(prediction, rel));
    const PoseError e = error_between(via_step, via_reference);
    CHECK(e.position_mm / 1000.0 < 1e-10);
    CHECK(e.orientation_deg * M_PI / 180.0 < 1e-10);
  }
}

TEST_CASE("run_servo: zero-noise oracle with unit gain converges in one step") {
  const SceneConfig scene = clean_scene(64);
  const ReferenceSetup ref = reference_from_scene(scene);
  RandomSource rng(3);

  auto world = std::make_shared<WorldState>(world_from_scene(scene));
  world->grasp = compose(ref.reference_grasp, random_pose(rng, 0.05, 30.0));
  const Pose true_alignment =
      compose(ref.reference_grasp, inverse(world->grasp));

  auto audit = std::make_shared<TruthAudit>();
  auto oracle = std::make_shared<OracleEstimator>(world, ref, 0.0, 0.0, 5, audit);
  const TwoStageEstimator est{oracle};

  ServoConfig cfg;
  cfg.gain = 1.0;
  RandomSource servo_rng(4);
  const ServoTrace trace = run_servo(world, ref.reference_eef, est, cfg, servo_rng);

  CHECK(trace.steps.size() == 1);
  CHECK(trace.converged);
  const PoseError e = error_between(trace.final_alignment, true_alignment);
  CHECK(e.position_mm / 1000.0 < kComposeTol * 10);
  CHECK(e.orientation_deg * M_PI / 180.0 < 1e-10);
}

TEST_CASE("run_servo: readout equals the reference-relative final pose") {
  const SceneConfig scene = clean_scene(64);
  const ReferenceSetup ref = reference_from_scene(scene);
  RandomSource rng(5);
  auto world = std::make_shared<WorldState>(world_from_scene(scene));
  world->grasp = compose(ref.reference_grasp, random_pose(rng, 0.04, 25.0));

  auto oracle = std::make_shared<OracleEstimator>(world, ref, 0.002, 1.0, 7);
  ServoConfig cfg;
  cfg.total_steps = 6;
  cfg.coarse_steps = 3;
  RandomSource servo_rng(8);
  const ServoTrace trace =
      run_servo(world, ref.reference_eef, TwoStageEstimator{oracle}, cfg, servo_rng);
  const Pose expected = compose(inverse(ref.reference_eef), world->eef_pose);
  CHECK(error_between(trace.final_alignment, expected).position_mm == 0.0);
}

TEST_CASE("run_servo: identity predictions idle for the full budget") {
  const SceneConfig scene = clean_scene(64);
  auto world = std::make_shared<WorldState>(world_from_scene(scene));
  const Pose start = world->eef_pose;

  auto constant = std::make_shared<ConstantEstimator>(Pose::identity());
  ServoConfig cfg;
  cfg.total_steps = 7;
  cfg.coarse_steps = 4;
  cfg.early_stop_eps = PoseError{0.0, 0.0};  // strict compare: never triggers
  RandomSource rng(9);
  const ServoTrace trace =
      run_servo(world, start, TwoStageEstimator{constant}, cfg, rng);

  CHECK(trace.steps.size() == 7);
  CHECK(!trace.converged);
  for (const auto& rec : trace.steps) {
    CHECK(error_between(rec.eef_pose, start).position_mm / 1000.0 < kComposeTol * 10);
  }
  CHECK(error_between(trace.final_alignment, Pose::identity()).position_mm / 1000.0 <
        kComposeTol * 10);
}

TEST_CASE("run_servo: zero-noise oracle shrinks the error by exactly 1-gain") {
  const SceneConfig scene = clean_scene(64);
  const ReferenceSetup ref = reference_from_scene(scene);
  RandomSource rng(10);
  auto world = std::make_shared<WorldState>(world_from_scene(scene));
  world->grasp = compose(ref.reference_grasp, random_pose(rng, 0.05, 40.0));

  auto oracle = std::make_shared<OracleEstimator>(world, ref, 0.0, 0.0, 11);
  ServoConfig cfg;
  cfg.total_steps = 8;
  cfg.coarse_steps = 8;
  cfg.gain = 0.7;
  cfg.early_stop_eps = PoseError{0.0, 0.0};

  // Track the ideal aligned EEF pose for the grasp held in this world.
  const Pose aligned_eef = compose(
      ref.reference_eef, compose(ref.reference_grasp, inverse(world->grasp)));

  PoseError before = error_between(world->eef_pose, aligned_eef);
  RandomSource servo_rng(12);
  const ServoTrace trace =
      run_servo(world, ref.reference_eef, TwoStageEstimator{oracle}, cfg, servo_rng);
  for (const auto& rec : trace.steps) {
    const PoseError after = error_between(rec.eef_pose, aligned_eef);
    CHECK(after.position_mm == doctest::Approx(0.3 * before.position_mm).epsilon(1e-9));
    CHECK(after.orientation_deg ==
          doctest::Approx(0.3 * before.orientation_deg).epsilon(1e-9));
    before = after;
  }
}

TEST_CASE("run_servo: noisy oracle beats a single noisy shot on average") {
  const SceneConfig scene = clean_scene(64);
  const ReferenceSetup ref = reference_from_scene(scene);

  double servo_sum = 0.0;
  double single_sum = 0.0;
  const int trials = 200;
  for (int t = 0; t < trials; ++t) {
    RandomSource trial_rng(400 + t);
    const Pose grasp_offset = random_pose(trial_rng, 0.04, 25.0);

    for (bool single : {false, true}) {
      auto world = std::make_shared<WorldState>(world_from_scene(scene));
      world->grasp = compose(ref.reference_grasp, grasp_offset);
      const Pose true_alignment = compose(ref.reference_grasp, inverse(world->grasp));

      auto oracle =
          std::make_shared<OracleEstimator>(world, ref, 0.001, 0.5, 700 + t);
      ServoConfig cfg;
      cfg.total_steps = single ? 1 : 20;
      cfg.coarse_steps = single ? 1 : 10;
      cfg.gain = single ? 1.0 : 0.7;
      cfg.early_stop_eps = PoseError{0.0, 0.0};
      RandomSource servo_rng(13);
      const ServoTrace trace = run_servo(world, ref.reference_eef,
                                         TwoStageEstimator{oracle}, cfg, servo_rng);
      const double err = error_between(trace.final_alignment, true_alignment).position_mm;
      (single ? single_sum : servo_sum) += err;
    }
  }
  CHECK(servo_sum / trials <= single_sum / trials);
}

TEST_CASE("run_servo: leaving the workspace raises DivergedFromWorkspace") {
  const SceneConfig scene = clean_scene(64);
  auto world = std::make_shared<WorldState>(world_from_scene(scene));
  world->workspace = Box{Eigen::Vector3d::Zero(), Eigen::Vector3d(0.05, 0.05, 0.05)};

  auto runaway =
      std::make_shared<ConstantEstimator>(Pose::from_translation({0.2, 0.0, 0.0}));
  ServoConfig cfg;
  cfg.gain = 1.0;
  RandomSource rng(14);
  CHECK_THROWS_AS(
      run_servo(world, world->eef_pose, TwoStageEstimator{runaway}, cfg, rng),
      DivergedFromWorkspace);
}
