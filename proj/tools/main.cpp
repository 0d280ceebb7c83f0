// graspadapt: simulate and evaluate grasp-to-grasp skill trajectory
// adaptation from self-supervised alignment data.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "graspadapt/adapt.hpp"
#include "graspadapt/collect.hpp"
#include "graspadapt/errors.hpp"
#include "graspadapt/estimator.hpp"
#include "graspadapt/eval.hpp"
#include "graspadapt/servo.hpp"

namespace ga = graspadapt;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitIoOrConfig = 1;
constexpr int kExitProtocol = 2;

struct CommonArgs {
  std::string scene_path;
  std::uint64_t seed = 0;
  std::string out_path;
  std::string dump_trace;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--scene", args.scene_path, "Scene config JSON (defaults when omitted)");
  cmd->add_option("--seed", args.seed, "Master seed")->capture_default_str();
  cmd->add_option("--out", args.out_path, "Output file path");
  cmd->add_option("--dump-trace", args.dump_trace, "Write a per-step JSONL servo trace");
}

ga::SceneConfig load_scene_or_default(const CommonArgs& args) {
  if (args.scene_path.empty()) return ga::SceneConfig::defaults();
  return ga::load_scene(args.scene_path);
}

void write_text(const std::string& path, const std::string& content) {
  std::ofstream f(path);
  if (!f) throw ga::IoError("cannot open " + path);
  f << content;
  if (!f) throw ga::IoError("write failed for " + path);
}

void emit_text(const CommonArgs& args, const std::string& text) {
  if (args.out_path.empty()) {
    std::cout << text;
  } else {
    write_text(args.out_path, text);
  }
}

void dump_servo_trace(const std::string& path, const ga::ServoTrace& trace,
                      const ga::Pose& reference_eef) {
  std::ofstream f(path);
  if (!f) throw ga::IoError("cannot open " + path);
  for (const auto& rec : trace.steps) {
    const ga::PoseError err = ga::error_between(rec.eef_pose, reference_eef);
    nlohmann::json line{{"eef", ga::pose_to_json(rec.eef_pose)},
                        {"prediction", ga::pose_to_json(rec.prediction)},
                        {"applied", ga::pose_to_json(rec.applied_step)},
                        {"error_to_reference",
                         {{"mm", err.position_mm}, {"deg", err.orientation_deg}}}};
    f << line.dump() << '\n';
  }
}

std::vector<ga::Method> parse_methods(const std::string& csv) {
  std::vector<ga::Method> methods;
  std::istringstream is(csv);
  for (std::string token; std::getline(is, token, ',');) {
    if (!token.empty()) methods.push_back(ga::method_from_string(token));
  }
  if (methods.empty()) throw std::invalid_argument("no methods given");
  return methods;
}

// The scene's two-stage estimator for a trial world. Retrieval reuses a
// prebuilt bundle; the oracle reads the live world handle.
ga::TwoStageEstimator scene_estimator(const ga::SceneConfig& scene,
                                      const std::shared_ptr<ga::WorldState>& world,
                                      std::uint64_t seed,
                                      std::optional<ga::RetrievalBundle>& bundle_cache) {
  if (scene.estimator.kind == "retrieval") {
    if (!bundle_cache) {
      bundle_cache =
          ga::build_retrieval_bundle(scene, ga::RandomSource(seed).fork(0xA11).seed());
    }
    return ga::TwoStageEstimator(bundle_cache->coarse, bundle_cache->fine);
  }
  return ga::make_oracle_stages(scene, world, seed, std::make_shared<ga::TruthAudit>());
}

int cmd_collect(const CommonArgs& args, double range_pos, double range_deg, int m) {
  ga::SceneConfig scene = load_scene_or_default(args);
  if (range_pos >= 0.0) scene.collect_range = ga::SampleRange(range_pos, range_deg);
  if (m > 0) scene.collect_m = m;
  const ga::WorldState world = ga::world_from_scene(scene);
  ga::RandomSource rng(args.seed);
  const ga::GraspDataset dataset =
      ga::collect_dataset(world, scene.collect_range, scene.collect_m, rng);
  if (args.out_path.empty()) throw ga::IoError("collect: --out is required");
  ga::save_dataset(dataset, args.out_path);
  std::cout << "collected " << dataset.entries.size() << " entries -> " << args.out_path
            << "\n";
  return kExitOk;
}

int cmd_build_estimator(const CommonArgs& args, const std::string& data_path) {
  const ga::SceneConfig scene = load_scene_or_default(args);
  ga::RetrievalConfig cfg;
  cfg.refine_icp = scene.estimator.refine_icp;
  cfg.descriptor_bins = scene.estimator.descriptor_bins;
  cfg.use_appearance = scene.estimator.use_appearance;

  ga::GraspDataset dataset;
  if (!data_path.empty()) {
    dataset = ga::load_dataset(data_path);
  } else {
    const ga::WorldState world = ga::world_from_scene(scene);
    ga::RandomSource rng(args.seed);
    dataset = ga::collect_dataset(world, scene.collect_range, scene.collect_m, rng);
  }
  const ga::RetrievalEstimator estimator(dataset, cfg);

  nlohmann::json manifest{
      {"entries", dataset.entries.size()},
      {"object", dataset.object_name},
      {"range", ga::range_to_json(dataset.range)},
      {"descriptor_bins", cfg.descriptor_bins},
      {"refine_icp", cfg.refine_icp},
      {"refinement_active", estimator.refinement_active()},
  };
  if (dataset.entries.size() >= 2) {
    const ga::PoseError spacing = ga::median_label_spacing(dataset);
    manifest["median_label_spacing"] = {{"mm", spacing.position_mm},
                                        {"deg", spacing.orientation_deg}};
  }
  if (estimator.refinement_active()) {
    manifest["camera_from_reference"] =
        ga::pose_to_json(estimator.camera_from_reference());
  }
  emit_text(args, manifest.dump(2) + "\n");
  return kExitOk;
}

int cmd_servo(const CommonArgs& args) {
  const ga::SceneConfig scene = load_scene_or_default(args);
  const ga::ReferenceSetup ref = ga::reference_from_scene(scene);
  ga::RandomSource rng(args.seed);

  auto world = std::make_shared<ga::WorldState>(ga::world_from_scene(scene));
  ga::RandomSource grasp_rng = rng.fork(1);
  world->grasp = ga::compose(scene.reference_grasp,
                             ga::sample_displacement(scene.grasp_range, grasp_rng));
  const ga::Pose true_alignment =
      ga::compose(scene.reference_grasp, ga::inverse(world->grasp));

  std::optional<ga::RetrievalBundle> bundle;
  const ga::TwoStageEstimator est = scene_estimator(scene, world, args.seed, bundle);
  ga::RandomSource servo_rng = rng.fork(2);
  const ga::ServoTrace trace =
      ga::run_servo(world, ref.reference_eef, est, scene.servo, servo_rng);

  const ga::PoseError err = ga::error_between(trace.final_alignment, true_alignment);
  nlohmann::json result{
      {"final_alignment", ga::pose_to_json(trace.final_alignment)},
      {"converged", trace.converged},
      {"steps", trace.steps.size()},
      {"error_vs_truth", {{"mm", err.position_mm}, {"deg", err.orientation_deg}}}};
  emit_text(args, result.dump(2) + "\n");
  if (!args.dump_trace.empty()) dump_servo_trace(args.dump_trace, trace, ref.reference_eef);
  return kExitOk;
}

int cmd_adapt(const CommonArgs& args, const std::string& skill_path,
              const std::string& skill_out, const std::string& deploy_grasp) {
  const ga::SceneConfig scene = load_scene_or_default(args);
  const ga::ReferenceSetup ref = ga::reference_from_scene(scene);
  ga::RandomSource rng(args.seed);

  std::optional<ga::RetrievalBundle> bundle;

  // Skill phase: load a prior record or acquire one now.
  ga::SkillRecord record;
  ga::RandomSource grasp_rng = rng.fork(1);
  const ga::Pose skill_grasp = ga::compose(
      scene.reference_grasp, ga::sample_displacement(scene.grasp_range, grasp_rng));
  if (!skill_path.empty()) {
    std::ifstream f(skill_path);
    if (!f) throw ga::IoError("cannot open " + skill_path);
    nlohmann::json j;
    try {
      f >> j;
    } catch (const nlohmann::json::exception& e) {
      throw ga::FormatError(std::string("skill: ") + e.what());
    }
    record = ga::skill_from_json(j);
  } else {
    auto world = std::make_shared<ga::WorldState>(ga::world_from_scene(scene));
    world->grasp = skill_grasp;
    const ga::TwoStageEstimator est = scene_estimator(scene, world, args.seed, bundle);
    const ga::Pose target(
        Eigen::Quaterniond(Eigen::AngleAxisd(M_PI / 2.0, Eigen::Vector3d::UnitY())),
        Eigen::Vector3d(0.0, 0.45, -0.10));
    ga::SkillTrajectory trajectory = ga::make_insertion_trajectory(skill_grasp, target, 9);
    ga::RandomSource servo_rng = rng.fork(2);
    record = ga::acquire_skill(world, ref.reference_eef, est, scene.servo,
                               std::move(trajectory), servo_rng);
  }
  if (!skill_out.empty()) write_text(skill_out, ga::skill_to_json(record).dump(2) + "\n");

  // Deployment phase.
  ga::Pose grasp = skill_grasp;
  if (deploy_grasp == "random") {
    ga::RandomSource deploy_rng = rng.fork(3);
    grasp = ga::compose(skill_grasp,
                        ga::sample_displacement(ga::SampleRange(0.05, 45.0), deploy_rng));
  } else if (deploy_grasp != "same") {
    throw std::invalid_argument("adapt: --deploy-grasp must be 'random' or 'same'");
  }
  auto world = std::make_shared<ga::WorldState>(ga::world_from_scene(scene));
  world->grasp = grasp;
  const ga::TwoStageEstimator est = scene_estimator(scene, world, args.seed, bundle);
  ga::RandomSource servo_rng = rng.fork(4);
  const ga::ServoTrace deploy_trace =
      ga::run_servo(world, ref.reference_eef, est, scene.servo, servo_rng);
  const ga::Pose corrective =
      ga::compute_corrective(record.skill_alignment, deploy_trace.final_alignment);

  ga::WorldState deploy_world = ga::world_from_scene(scene);
  deploy_world.grasp = grasp;
  const ga::AdaptedExecution exec = ga::execute_adapted(
      record, corrective, deploy_world, record.trajectory.initial_eef);

  nlohmann::json eef = nlohmann::json::array();
  nlohmann::json object = nlohmann::json::array();
  for (const auto& p : exec.eef_trace) eef.push_back(ga::pose_to_json(p));
  for (const auto& p : exec.object_trace) object.push_back(ga::pose_to_json(p));
  nlohmann::json result{{"corrective", ga::pose_to_json(exec.corrective)},
                        {"eef_trace", eef},
                        {"object_trace", object},
                        {"object", record.object_name}};
  emit_text(args, result.dump(2) + "\n");
  if (!args.dump_trace.empty()) {
    dump_servo_trace(args.dump_trace, deploy_trace, ref.reference_eef);
  }
  return kExitOk;
}

ga::Pose parse_extrinsics_error(const std::string& text) {
  // "10mm,5deg": translation offset along camera x, rotation about camera z.
  double mm = 0.0, deg = 0.0;
  if (!text.empty()) {
    std::istringstream is(text);
    std::string a, b;
    std::getline(is, a, ',');
    std::getline(is, b, ',');
    auto strip = [](std::string s, const std::string& suffix) {
      const auto pos = s.find(suffix);
      if (pos != std::string::npos) s = s.substr(0, pos);
      return std::stod(s);
    };
    mm = strip(a, "mm");
    if (!b.empty()) deg = strip(b, "deg");
  }
  return ga::compose(ga::Pose::from_translation({mm / 1000.0, 0.0, 0.0}),
                     ga::Pose::from_axis_angle(Eigen::Vector3d::UnitZ(), deg));
}

int cmd_baseline(const CommonArgs& args, const std::string& method_name,
                 const std::string& extrinsics_error) {
  ga::SceneConfig scene = load_scene_or_default(args);
  if (!extrinsics_error.empty()) {
    scene.camera.extrinsics_report_error = parse_extrinsics_error(extrinsics_error);
  }
  const ga::Method method = ga::method_from_string(method_name);
  if (method != ga::Method::icp && method != ga::Method::svd) {
    throw std::invalid_argument("baseline: method must be icp or svd");
  }

  const ga::WorldState base = ga::world_from_scene(scene);
  ga::RandomSource rng(args.seed);
  ga::RandomSource grasp_rng = rng.fork(1);
  const ga::Pose skill_grasp = ga::compose(
      scene.reference_grasp, ga::sample_displacement(scene.grasp_range, grasp_rng));
  ga::RandomSource delta_rng = rng.fork(2);
  const ga::Pose deploy_grasp = ga::compose(
      skill_grasp, ga::sample_displacement(ga::SampleRange(0.05, 30.0), delta_rng));

  ga::WorldState skill_world = base;
  skill_world.grasp = skill_grasp;
  ga::WorldState deploy_world = base;
  deploy_world.grasp = deploy_grasp;
  ga::RandomSource obs1 = rng.fork(3), obs2 = rng.fork(4), reg = rng.fork(5);
  const ga::Observation skill_obs = ga::observe(skill_world, obs1);
  const ga::Observation deploy_obs = ga::observe(deploy_world, obs2);

  const ga::Pose corrective = ga::baseline_corrective(
      skill_obs, deploy_obs, scene.camera.believed_extrinsics(), scene.reference_eef,
      method == ga::Method::icp ? ga::BaselineMethod::icp : ga::BaselineMethod::svd,
      scene.baseline, reg);

  const ga::Pose true_corrective = ga::compose(skill_grasp, ga::inverse(deploy_grasp));
  const ga::PoseError err = ga::error_between(corrective, true_corrective);
  nlohmann::json result{
      {"method", method_name},
      {"corrective", ga::pose_to_json(corrective)},
      {"error_vs_truth", {{"mm", err.position_mm}, {"deg", err.orientation_deg}}}};
  emit_text(args, result.dump(2) + "\n");
  return kExitOk;
}

int cmd_eval_accuracy(const CommonArgs& args, const std::string& methods_csv, int grasps,
                      int deployments, const std::string& format, int threads) {
  const ga::SceneConfig scene = load_scene_or_default(args);
  const ga::AccuracyReport report = ga::run_accuracy_protocol(
      scene, parse_methods(methods_csv), grasps, deployments, args.seed, threads);
  const ga::ReportFormat fmt =
      format == "csv" ? ga::ReportFormat::csv : ga::ReportFormat::json;
  if (args.out_path.empty()) {
    std::cout << (fmt == ga::ReportFormat::csv
                      ? ga::report_to_csv(report)
                      : ga::report_to_json(report).dump(2) + "\n");
  } else {
    ga::emit_report(report, fmt, args.out_path);
  }
  return kExitOk;
}

int cmd_eval_peg(const CommonArgs& args, const std::string& methods_csv,
                 const std::string& tolerances_csv, int trials, const std::string& format,
                 int threads) {
  const ga::SceneConfig scene = load_scene_or_default(args);
  std::vector<double> tolerances;
  std::istringstream is(tolerances_csv);
  for (std::string token; std::getline(is, token, ',');) {
    if (!token.empty()) tolerances.push_back(std::stod(token));
  }
  const ga::PegInHoleStudy study = ga::run_peg_study(
      scene, parse_methods(methods_csv), tolerances, trials, args.seed, threads);
  const ga::ReportFormat fmt =
      format == "csv" ? ga::ReportFormat::csv : ga::ReportFormat::json;
  if (args.out_path.empty()) {
    std::cout << (fmt == ga::ReportFormat::csv
                      ? ga::report_to_csv(study)
                      : ga::report_to_json(study).dump(2) + "\n");
  } else {
    ga::emit_report(study, fmt, args.out_path);
  }
  return kExitOk;
}

int cmd_report(const std::string& in_path, const std::string& format,
               const std::string& out_path) {
  std::ifstream f(in_path);
  if (!f) throw ga::IoError("cannot open " + in_path);
  nlohmann::json j;
  try {
    f >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ga::FormatError(std::string("report: ") + e.what());
  }
  const ga::ReportFormat fmt =
      format == "csv" ? ga::ReportFormat::csv : ga::ReportFormat::json;
  const std::string type = j.value("type", "");
  std::string text;
  if (type == "accuracy") {
    const ga::AccuracyReport report = ga::accuracy_report_from_json(j);
    text = fmt == ga::ReportFormat::csv ? ga::report_to_csv(report)
                                        : ga::report_to_json(report).dump(2) + "\n";
  } else if (type == "peg") {
    const ga::PegInHoleStudy study = ga::peg_study_from_json(j);
    text = fmt == ga::ReportFormat::csv ? ga::report_to_csv(study)
                                        : ga::report_to_json(study).dump(2) + "\n";
  } else {
    throw ga::FormatError("report: unknown report type '" + type + "'");
  }
  if (out_path.empty()) {
    std::cout << text;
  } else {
    write_text(out_path, text);
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"grasp-to-grasp skill adaptation simulator and evaluation harness"};
  app.require_subcommand(1);

  CommonArgs collect_args;
  double collect_range_pos = -1.0;
  double collect_range_deg = 60.0;
  int collect_m = 0;
  std::string collect_range_text;
  auto* collect = app.add_subcommand("collect", "Collect a self-supervised dataset");
  add_common(collect, collect_args);
  collect->add_option("--range", collect_range_text, "Sampling halfwidths 'pos_m,deg'");
  collect->add_option("--m", collect_m, "Entry count");

  CommonArgs build_args;
  std::string build_data;
  auto* build =
      app.add_subcommand("build-estimator", "Build and summarize a retrieval estimator");
  add_common(build, build_args);
  build->add_option("--data", build_data, "Dataset JSONL (collected on the fly when omitted)");

  CommonArgs servo_args;
  auto* servo = app.add_subcommand("servo", "Run one alignment servo episode");
  add_common(servo, servo_args);

  CommonArgs adapt_args;
  std::string adapt_skill, adapt_skill_out;
  std::string adapt_deploy = "random";
  auto* adapt = app.add_subcommand("adapt", "Acquire a skill and deploy it on a novel grasp");
  add_common(adapt, adapt_args);
  adapt->add_option("--skill", adapt_skill, "Existing skill record JSON");
  adapt->add_option("--skill-out", adapt_skill_out, "Write the acquired skill record here");
  adapt->add_option("--deploy-grasp", adapt_deploy, "'random' or 'same'")
      ->capture_default_str();

  CommonArgs baseline_args;
  std::string baseline_method = "icp", baseline_ext;
  auto* baseline = app.add_subcommand("baseline", "Single-shot registration baseline");
  add_common(baseline, baseline_args);
  baseline->add_option("--method", baseline_method, "icp|svd")->capture_default_str();
  baseline->add_option("--extrinsics-error", baseline_ext, "e.g. '10mm,5deg'");

  CommonArgs acc_args;
  std::string acc_methods = "oracle,retrieval,icp,svd", acc_format = "json";
  int acc_grasps = 4, acc_deployments = 5, acc_threads = 1;
  auto* acc = app.add_subcommand("eval-accuracy", "Corrective-transform accuracy study");
  add_common(acc, acc_args);
  acc->add_option("--methods", acc_methods, "Comma-separated methods")->capture_default_str();
  acc->add_option("--grasps", acc_grasps, "Skill grasp count")->capture_default_str();
  acc->add_option("--deployments", acc_deployments, "Deployments per grasp")
      ->capture_default_str();
  acc->add_option("--format", acc_format, "json|csv")->capture_default_str();
  acc->add_option("--threads", acc_threads, "Worker threads")->capture_default_str();

  CommonArgs peg_args;
  std::string peg_methods = "oracle,retrieval,icp,svd", peg_format = "json";
  std::string peg_tolerances = "2,4,8,12";
  int peg_trials = 5, peg_threads = 1;
  auto* peg = app.add_subcommand("eval-peg", "Peg-in-hole tolerance study");
  add_common(peg, peg_args);
  peg->add_option("--methods", peg_methods, "Comma-separated methods")->capture_default_str();
  peg->add_option("--tolerances", peg_tolerances, "Lateral tolerances in mm")
      ->capture_default_str();
  peg->add_option("--trials", peg_trials, "Trials per method")->capture_default_str();
  peg->add_option("--format", peg_format, "json|csv")->capture_default_str();
  peg->add_option("--threads", peg_threads, "Worker threads")->capture_default_str();

  std::string report_in, report_format = "csv", report_out;
  auto* report = app.add_subcommand("report", "Convert a JSON report to CSV or back");
  report->add_option("--in", report_in, "Input report JSON")->required();
  report->add_option("--format", report_format, "csv|json")->capture_default_str();
  report->add_option("--out", report_out, "Output path");

  CLI11_PARSE(app, argc, argv);

  try {
    if (!collect_range_text.empty()) {
      std::istringstream is(collect_range_text);
      std::string a, b;
      std::getline(is, a, ',');
      std::getline(is, b, ',');
      collect_range_pos = std::stod(a);
      if (!b.empty()) collect_range_deg = std::stod(b);
    }
    if (collect->parsed()) {
      return cmd_collect(collect_args, collect_range_pos, collect_range_deg, collect_m);
    }
    if (build->parsed()) return cmd_build_estimator(build_args, build_data);
    if (servo->parsed()) return cmd_servo(servo_args);
    if (adapt->parsed()) {
      return cmd_adapt(adapt_args, adapt_skill, adapt_skill_out, adapt_deploy);
    }
    if (baseline->parsed()) {
      return cmd_baseline(baseline_args, baseline_method, baseline_ext);
    }
    if (acc->parsed()) {
      return cmd_eval_accuracy(acc_args, acc_methods, acc_grasps, acc_deployments,
                               acc_format, acc_threads);
    }
    if (peg->parsed()) {
      return cmd_eval_peg(peg_args, peg_methods, peg_tolerances, peg_trials, peg_format,
                          peg_threads);
    }
    if (report->parsed()) return cmd_report(report_in, report_format, report_out);
  } catch (const ga::ProtocolViolation& e) {
    std::cerr << "protocol violation: " << e.what() << "\n";
    return kExitProtocol;
  } catch (const ga::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitIoOrConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitIoOrConfig;
  }
  return kExitIoOrConfig;
}
