#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "graspadapt/errors.hpp"
#include "graspadapt/eval.hpp"
#include "test_helpers.hpp"

using namespace graspadapt;
using graspadapt::testing::clean_scene;

namespace {

// Minimal RFC-4180 row splitter for the parse-back test (no quoted fields in
// our reports).
std::vector<std::vector<std::string>> parse_csv(const std::string& text) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream is(text);
  for (std::string line; std::getline(is, line);) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::vector<std::string> row;
    std::istringstream ls(line);
    for (std::string cell; std::getline(ls, cell, ',');) row.push_back(cell);
    rows.push_back(row);
  }
  return rows;
}

}  // namespace

TEST_CASE("accuracy protocol: zero-noise oracle lands exactly on the reference") {
  SceneConfig scene = clean_scene(64);
  scene.deploy_eef_range = SampleRange(0.20, 40.0);
  scene.servo.gain = 1.0;
  const AccuracyReport report =
      run_accuracy_protocol(scene, {Method::oracle}, 4, 5, 1234);
  REQUIRE(report.rows.size() == 1);
  const AccuracyRow& row = report.rows[0];
  CHECK(row.n == 20);
  CHECK(row.mean_mm < 1e-6);
  CHECK(row.mean_deg < 1e-6);
  CHECK(row.std_mm < 1e-6);
  CHECK(row.per_dof_mean_mm < 1e-6);
  CHECK(row.object == "bar");
}

TEST_CASE("accuracy protocol: deterministic across repeats and thread counts") {
  SceneConfig scene = clean_scene(128);
  scene.collect_m = 300;
  scene.estimator.kind = "retrieval";
  scene.estimator.noise_t_mm = 1.0;
  scene.estimator.noise_r_deg = 0.5;
  scene.camera.noise_sigma = 0.001;
  scene.camera.dropout_uniform = 0.05;

  const std::vector<Method> methods{Method::retrieval, Method::icp, Method::svd};
  const AccuracyReport a = run_accuracy_protocol(scene, methods, 2, 2, 77, 1);
  const AccuracyReport b = run_accuracy_protocol(scene, methods, 2, 2, 77, 1);
  const AccuracyReport c = run_accuracy_protocol(scene, methods, 2, 2, 77, 4);
  CHECK(report_to_json(a).dump() == report_to_json(b).dump());
  CHECK(report_to_json(a).dump() == report_to_json(c).dump());
}

TEST_CASE("accuracy protocol: non-oracle methods never read ground truth") {
  SceneConfig scene = clean_scene(128);
  scene.collect_m = 200;
  scene.estimator.kind = "retrieval";
  const AccuracyReport report =
      run_accuracy_protocol(scene, {Method::retrieval, Method::icp}, 2, 2, 5);
  for (const auto& row : report.rows) {
    CHECK(row.truth_reads == 0);
  }
}

TEST_CASE("report emission: empty, JSON round-trip, CSV parse-back") {
  AccuracyReport empty;
  const auto path = std::filesystem::temp_directory_path() / "ga_empty.csv";
  emit_report(empty, ReportFormat::csv, path);
  {
    std::ifstream f(path);
    std::string text((std::istreambuf_iterator<char>(f)), {});
    CHECK(text == "object,method,mean_mm,std_mm,mean_deg,std_deg,n\n");
  }

  AccuracyReport report;
  report.seed = 9;
  report.grasps = 4;
  report.deployments = 5;
  for (int i = 0; i < 20; ++i) {
    AccuracyRow row;
    row.object = "object" + std::to_string(i % 5);
    row.method = i % 2 == 0 ? "retrieval" : "icp";
    row.n = 20;
    row.mean_mm = 0.1 * i + 0.0625;  // exercise exact binary fractions too
    row.std_mm = 0.01 * i;
    row.mean_deg = 0.2 * i;
    row.std_deg = 0.02 * i;
    row.per_dof_mean_mm = 0.05 * i;
    row.per_dof_mean_deg = 0.1 * i;
    report.rows.push_back(row);
    report.trial_errors.push_back({PoseError{1.0 * i, 0.5 * i}});
  }

  const AccuracyReport back = accuracy_report_from_json(report_to_json(report));
  CHECK(report_to_json(back).dump() == report_to_json(report).dump());

  const std::string csv = report_to_csv(report);
  const auto rows = parse_csv(csv);
  REQUIRE(rows.size() == 21);  // header + 20 data rows
  CHECK(rows[0] == std::vector<std::string>{"object", "method", "mean_mm", "std_mm",
                                            "mean_deg", "std_deg", "n"});
  for (std::size_t i = 1; i < rows.size(); ++i) {
    REQUIRE(rows[i].size() == 7);
    // Numeric cells parse back to the exact stored doubles.
    CHECK(std::stod(rows[i][2]) == report.rows[i - 1].mean_mm);
    CHECK(std::stod(rows[i][4]) == report.rows[i - 1].mean_deg);
  }
  std::filesystem::remove(path);
}

TEST_CASE("peg study: zero-noise oracle succeeds at every tolerance") {
  SceneConfig scene = clean_scene(128);
  scene.servo.gain = 1.0;
  const PegInHoleStudy study =
      run_peg_study(scene, {Method::oracle}, {2.0, 4.0, 8.0, 12.0}, 5, 31);
  REQUIRE(study.rows.size() == 4);
  for (const auto& row : study.rows) {
    CHECK(row.successes == row.trials);
  }
}

TEST_CASE("peg study: success is monotone in tolerance by construction") {
  SceneConfig scene = clean_scene(256);
  scene.collect_m = 400;
  scene.estimator.kind = "retrieval";
  scene.camera.noise_sigma = 0.001;
  const PegInHoleStudy study =
      run_peg_study(scene, {Method::retrieval, Method::icp}, {2.0, 4.0, 8.0, 12.0}, 4, 17);
  for (const std::string& method : {"retrieval", "icp"}) {
    int previous = -1;
    for (const auto& row : study.rows) {
      if (row.method != method) continue;
      CHECK(row.successes >= previous);
      previous = row.successes;
    }
  }
  const PegInHoleStudy back = peg_study_from_json(report_to_json(study));
  CHECK(report_to_json(back).dump() == report_to_json(study).dump());
}

TEST_CASE("scene JSON round-trip preserves the configuration") {
  SceneConfig scene = clean_scene(100);
  scene.camera.noise_sigma = 0.002;
  scene.camera.dropout_uniform = 0.1;
  scene.camera.dropout_region = HalfSpace{Eigen::Vector3d(0.0, 1.0, 0.0), 0.01};
  scene.estimator.kind = "retrieval";
  scene.estimator.noise_t_mm = 2.65;
  scene.estimator.noise_r_deg = 1.50;
  scene.collect_m = 123;
  scene.servo.gain = 0.5;
  scene.gripper_occlusion = Box{{0.0, 0.0, 0.02}, {0.015, 0.01, 0.02}};

  const SceneConfig back = scene_from_json(scene_to_json(scene));
  CHECK(scene_to_json(back).dump() == scene_to_json(scene).dump());
  CHECK(back.collect_m == 123);
  CHECK(back.estimator.noise_t_mm == 2.65);
  CHECK(back.camera.dropout_region.has_value());
  CHECK(back.gripper_occlusion.has_value());
}

TEST_CASE("insertion trajectory descends onto the target object pose") {
  RandomSource rng(1);
  const Pose grasp = graspadapt::testing::random_pose(rng, 0.05, 30.0);
  const Pose target(Eigen::Quaterniond(Eigen::AngleAxisd(M_PI / 2, Eigen::Vector3d::UnitY())),
                    Eigen::Vector3d(0.0, 0.45, -0.10));
  const SkillTrajectory traj = make_insertion_trajectory(grasp, target, 9);
  REQUIRE(traj.displacements.size() == 8);
  const Pose final_eef = compose(traj.initial_eef, traj.displacements.back());
  const Pose final_obj = compose(final_eef, grasp);
  CHECK(error_between(final_obj, target).position_mm / 1000.0 < kTestTol);
}
