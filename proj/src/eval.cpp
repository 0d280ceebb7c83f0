#include "graspadapt/eval.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <limits>
#include <sstream>
#include <thread>

#include "graspadapt/errors.hpp"

namespace graspadapt {

namespace {

// Shortest round-trip decimal form, matching the JSON emitter's precision.
std::string fmt_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  (void)ec;
  return std::string(buf, ptr);
}

// Index-addressed work loop; output slots are preallocated by the caller, so
// results are identical for any thread count.
void parallel_for(int n, int threads, const std::function<void(int)>& body) {
  threads = std::max(1, threads);
  if (threads == 1 || n <= 1) {
    for (int i = 0; i < n; ++i) body(i);
    return;
  }
  std::atomic<int> next{0};
  std::vector<std::thread> pool;
  const int workers = std::min(threads, n);
  pool.reserve(workers);
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (int i = next.fetch_add(1); i < n; i = next.fetch_add(1)) body(i);
    });
  }
  for (auto& t : pool) t.join();
}

nlohmann::json box_to_json(const Box& b) {
  return nlohmann::json{{"center", {b.center.x(), b.center.y(), b.center.z()}},
                        {"half_extents",
                         {b.half_extents.x(), b.half_extents.y(), b.half_extents.z()}}};
}

Box box_from_json(const nlohmann::json& j) {
  Box b;
  const auto& c = j.at("center");
  const auto& h = j.at("half_extents");
  b.center = Eigen::Vector3d(c[0].get<double>(), c[1].get<double>(), c[2].get<double>());
  b.half_extents =
      Eigen::Vector3d(h[0].get<double>(), h[1].get<double>(), h[2].get<double>());
  return b;
}

nlohmann::json camera_to_json(const CameraModel& c) {
  nlohmann::json j{{"pose_WC", pose_to_json(c.pose_WC)},
                   {"noise_sigma", c.noise_sigma},
                   {"dropout_uniform", c.dropout_uniform},
                   {"extrinsics_error", pose_to_json(c.extrinsics_report_error)}};
  if (c.dropout_region) {
    j["dropout_region"] =
        nlohmann::json{{"normal",
                        {c.dropout_region->normal.x(), c.dropout_region->normal.y(),
                         c.dropout_region->normal.z()}},
                       {"offset", c.dropout_region->offset}};
  } else {
    j["dropout_region"] = nullptr;
  }
  return j;
}

CameraModel camera_from_json(const nlohmann::json& j, const CameraModel& defaults) {
  CameraModel c = defaults;
  if (j.contains("pose_WC")) c.pose_WC = pose_from_json(j.at("pose_WC"));
  if (j.contains("noise_sigma")) c.noise_sigma = j.at("noise_sigma").get<double>();
  if (j.contains("dropout_uniform")) {
    c.dropout_uniform = j.at("dropout_uniform").get<double>();
  }
  if (j.contains("dropout_region") && !j.at("dropout_region").is_null()) {
    const auto& r = j.at("dropout_region");
    HalfSpace hs;
    const auto& n = r.at("normal");
    hs.normal = Eigen::Vector3d(n[0].get<double>(), n[1].get<double>(), n[2].get<double>());
    hs.offset = r.at("offset").get<double>();
    c.dropout_region = hs;
  } else if (j.contains("dropout_region")) {
    c.dropout_region.reset();
  }
  if (j.contains("extrinsics_error")) {
    c.extrinsics_report_error = pose_from_json(j.at("extrinsics_error"));
  }
  c.validate();
  return c;
}

nlohmann::json servo_to_json(const ServoConfig& s) {
  return nlohmann::json{{"total_steps", s.total_steps},
                        {"coarse_steps", s.coarse_steps},
                        {"gain", s.gain},
                        {"early_stop_mm", s.early_stop_eps.position_mm},
                        {"early_stop_deg", s.early_stop_eps.orientation_deg}};
}

ServoConfig servo_from_json(const nlohmann::json& j, const ServoConfig& defaults) {
  ServoConfig s = defaults;
  if (j.contains("total_steps")) s.total_steps = j.at("total_steps").get<int>();
  if (j.contains("coarse_steps")) s.coarse_steps = j.at("coarse_steps").get<int>();
  if (j.contains("gain")) s.gain = j.at("gain").get<double>();
  if (j.contains("early_stop_mm")) {
    s.early_stop_eps.position_mm = j.at("early_stop_mm").get<double>();
  }
  if (j.contains("early_stop_deg")) {
    s.early_stop_eps.orientation_deg = j.at("early_stop_deg").get<double>();
  }
  s.validate();
  return s;
}

nlohmann::json estimator_to_json(const EstimatorSpec& e) {
  return nlohmann::json{
      {"estimator", e.kind},
      {"noise_t_mm", e.noise_t_mm},
      {"noise_r_deg", e.noise_r_deg},
      {"refine_icp", e.refine_icp},
      {"descriptor_bins", e.descriptor_bins},
      {"fine_range", {e.fine_range.position_halfwidth, e.fine_range.orientation_halfwidth}},
      {"fine_m", e.fine_m},
      {"use_appearance", e.use_appearance}};
}

EstimatorSpec estimator_from_json(const nlohmann::json& j, const EstimatorSpec& defaults) {
  EstimatorSpec e = defaults;
  if (j.contains("estimator")) e.kind = j.at("estimator").get<std::string>();
  if (e.kind != "oracle" && e.kind != "retrieval") {
    throw FormatError("estimator kind must be 'oracle' or 'retrieval'");
  }
  if (j.contains("noise_t_mm")) e.noise_t_mm = j.at("noise_t_mm").get<double>();
  if (j.contains("noise_r_deg")) e.noise_r_deg = j.at("noise_r_deg").get<double>();
  if (j.contains("refine_icp")) e.refine_icp = j.at("refine_icp").get<bool>();
  if (j.contains("descriptor_bins")) e.descriptor_bins = j.at("descriptor_bins").get<int>();
  if (j.contains("fine_range")) {
    const auto& r = j.at("fine_range");
    e.fine_range = SampleRange(r[0].get<double>(), r[1].get<double>());
  }
  if (j.contains("fine_m")) e.fine_m = j.at("fine_m").get<int>();
  if (j.contains("use_appearance")) e.use_appearance = j.at("use_appearance").get<bool>();
  return e;
}

nlohmann::json baseline_to_json(const BaselineConfig& b) {
  return nlohmann::json{{"synthetic_noise_mm", b.synthetic_noise_sigma * 1000.0},
                        {"synthetic_outlier_fraction", b.synthetic_outlier_fraction},
                        {"icp",
                         {{"max_iterations", b.icp.max_iterations},
                          {"min_residual_delta", b.icp.min_residual_delta},
                          {"trim_factor", b.icp.trim_factor},
                          {"converged_rms", b.icp.converged_rms}}}};
}

BaselineConfig baseline_from_json(const nlohmann::json& j, const BaselineConfig& defaults) {
  BaselineConfig b = defaults;
  if (j.contains("synthetic_noise_mm")) {
    b.synthetic_noise_sigma = j.at("synthetic_noise_mm").get<double>() / 1000.0;
  }
  if (j.contains("synthetic_outlier_fraction")) {
    b.synthetic_outlier_fraction = j.at("synthetic_outlier_fraction").get<double>();
  }
  if (j.contains("icp")) {
    const auto& i = j.at("icp");
    if (i.contains("max_iterations")) b.icp.max_iterations = i.at("max_iterations").get<int>();
    if (i.contains("min_residual_delta")) {
      b.icp.min_residual_delta = i.at("min_residual_delta").get<double>();
    }
    if (i.contains("trim_factor")) b.icp.trim_factor = i.at("trim_factor").get<double>();
    if (i.contains("converged_rms")) b.icp.converged_rms = i.at("converged_rms").get<double>();
  }
  return b;
}

struct TrialResult {
  bool ok = false;
  PoseError error;
  double per_dof_mm = 0.0;
  double per_dof_deg = 0.0;
  std::uint64_t truth_reads = 0;
  std::string failure;
};

// Salts for deriving independent sub-streams from the study seed.
constexpr std::uint64_t kSaltDataset = 0xA11;
constexpr std::uint64_t kSaltSkillGrasp = 0xB22000;
constexpr std::uint64_t kSaltDeploy = 0xC33000;
constexpr std::uint64_t kSaltTrial = 0xD44000;

bool is_estimator_method(Method m) {
  return m == Method::oracle || m == Method::retrieval;
}

TwoStageEstimator make_trial_estimator(const SceneConfig& scene, Method method,
                                       const RetrievalBundle* bundle,
                                       const std::shared_ptr<WorldState>& world,
                                       std::uint64_t trial_seed,
                                       const std::shared_ptr<TruthAudit>& audit) {
  if (method == Method::oracle) {
    return make_oracle_stages(scene, world, trial_seed, audit);
  }
  return TwoStageEstimator(bundle->coarse, bundle->fine);
}

// One forward-kinematics accuracy trial. Displacing the EEF by N with the
// grasp unchanged emulates the deployment grasp N o skill_grasp seen from
// the reference pose, so the deployment servo runs against that grasp; the
// accurate corrective is then N^-1 and applying it from the displaced pose
// must land back on the reference. Ground truth appears only in the final
// error computation.
TrialResult accuracy_trial(const SceneConfig& scene, const WorldState& base_world,
                           const ReferenceSetup& ref, Method method,
                           const RetrievalBundle* bundle, const Pose& skill_grasp,
                           const Pose& deploy_displacement, RandomSource trial_rng) {
  TrialResult out;
  try {
    const Pose emulated_grasp = compose(deploy_displacement, skill_grasp);
    Pose corrective;
    auto audit = std::make_shared<TruthAudit>();
    if (is_estimator_method(method)) {
      auto world = std::make_shared<WorldState>(base_world);
      world->grasp = skill_grasp;
      const TwoStageEstimator est = make_trial_estimator(
          scene, method, bundle, world, trial_rng.fork(0).seed(), audit);

      RandomSource skill_rng = trial_rng.fork(1);
      const ServoTrace skill = run_servo(world, ref.reference_eef, est, scene.servo, skill_rng);

      world->eef_pose = ref.reference_eef;
      world->grasp = emulated_grasp;
      RandomSource deploy_rng = trial_rng.fork(2);
      const ServoTrace deploy =
          run_servo(world, ref.reference_eef, est, scene.servo, deploy_rng);

      corrective = compute_corrective(skill.final_alignment, deploy.final_alignment);
    } else {
      WorldState skill_world = base_world;
      skill_world.grasp = skill_grasp;
      RandomSource skill_rng = trial_rng.fork(1);
      const Observation skill_obs = observe(skill_world, skill_rng);

      WorldState deploy_world = base_world;
      deploy_world.grasp = emulated_grasp;
      RandomSource deploy_rng = trial_rng.fork(2);
      const Observation deploy_obs = observe(deploy_world, deploy_rng);

      RandomSource reg_rng = trial_rng.fork(3);
      corrective = baseline_corrective(
          skill_obs, deploy_obs, scene.camera.believed_extrinsics(), ref.reference_eef,
          method == Method::icp ? BaselineMethod::icp : BaselineMethod::svd,
          scene.baseline, reg_rng);
    }

    if (!is_estimator_method(method) || method == Method::retrieval) {
      if (audit->kinematic_reads != 0) {
        throw ProtocolViolation("accuracy trial: method read ground-truth kinematics");
      }
    }

    // An accurate corrective returns the displaced EEF to the reference.
    const Pose landed =
        compose(compose(ref.reference_eef, deploy_displacement), corrective);
    out.error = error_between(landed, ref.reference_eef);
    const Pose delta = compose(inverse(ref.reference_eef), landed);
    out.per_dof_mm = delta.translation.cwiseAbs().mean() * 1000.0;
    out.per_dof_deg = euler_xyz_degrees(delta).cwiseAbs().mean();
    out.truth_reads = audit->kinematic_reads;
    out.ok = true;
  } catch (const ProtocolViolation&) {
    throw;
  } catch (const Error& e) {
    out.failure = e.what();
  }
  return out;
}

struct PegTrialComputation {
  PegTrialDetail detail;
};

constexpr double kInsertionApproach = 0.12;
constexpr int kInsertionWaypoints = 9;

Pose insertion_target_pose() {
  // Object long axis (x) pointing straight down at a fixed hole location.
  return Pose(Eigen::Quaterniond(Eigen::AngleAxisd(M_PI / 2.0, Eigen::Vector3d::UnitY())),
              Eigen::Vector3d(0.0, 0.45, -0.10));
}

Eigen::Vector3d object_tip(const ObjectModel& object) {
  // Insertion end: the point farthest along +x in the object frame.
  Eigen::Vector3d tip = object.points.front();
  for (const auto& p : object.points) {
    if (p.x() > tip.x()) tip = p;
  }
  return tip;
}

// Deployment-grasp delta on the axes a finger grasp leaves free for an
// elongated object: slide along and spin about the long axis dominate.
Pose sample_grasp_delta(RandomSource& rng) {
  Eigen::Vector3d t(rng.uniform(-0.05, 0.05), rng.uniform(-0.004, 0.004),
                    rng.uniform(-0.004, 0.004));
  const double ax = rng.uniform(-90.0, 90.0) * M_PI / 180.0;
  const double ay = rng.uniform(-8.0, 8.0) * M_PI / 180.0;
  const double az = rng.uniform(-8.0, 8.0) * M_PI / 180.0;
  const Eigen::Quaterniond q = Eigen::AngleAxisd(ax, Eigen::Vector3d::UnitX()) *
                               Eigen::AngleAxisd(ay, Eigen::Vector3d::UnitY()) *
                               Eigen::AngleAxisd(az, Eigen::Vector3d::UnitZ());
  return Pose(q, t);
}

PegTrialDetail peg_trial(const SceneConfig& scene, const WorldState& base_world,
                         const ReferenceSetup& ref, Method method,
                         const RetrievalBundle* bundle, int trial_index,
                         RandomSource trial_rng) {
  PegTrialDetail detail;
  detail.method = method_to_string(method);
  detail.trial = trial_index;
  try {
    RandomSource grasp_rng = trial_rng.fork(0);
    const Pose skill_grasp =
        compose(scene.reference_grasp, sample_displacement(scene.grasp_range, grasp_rng));
    const Pose target = insertion_target_pose();
    SkillTrajectory trajectory =
        make_insertion_trajectory(skill_grasp, target, kInsertionWaypoints);

    auto audit = std::make_shared<TruthAudit>();
    Pose skill_alignment;
    Observation skill_obs;
    std::shared_ptr<WorldState> world;
    std::optional<TwoStageEstimator> est;

    if (is_estimator_method(method)) {
      world = std::make_shared<WorldState>(base_world);
      world->grasp = skill_grasp;
      est.emplace(make_trial_estimator(scene, method, bundle, world,
                                       trial_rng.fork(1).seed(), audit));
      RandomSource skill_rng = trial_rng.fork(2);
      const ServoTrace trace =
          run_servo(world, ref.reference_eef, *est, scene.servo, skill_rng);
      skill_alignment = trace.final_alignment;
    } else {
      WorldState skill_world = base_world;
      skill_world.grasp = skill_grasp;
      RandomSource skill_rng = trial_rng.fork(2);
      skill_obs = observe(skill_world, skill_rng);
    }

    RandomSource delta_rng = trial_rng.fork(3);
    const Pose deploy_grasp = compose(skill_grasp, sample_grasp_delta(delta_rng));

    Pose corrective;
    if (is_estimator_method(method)) {
      world->grasp = deploy_grasp;
      world->eef_pose = ref.reference_eef;
      RandomSource deploy_rng = trial_rng.fork(4);
      const ServoTrace trace =
          run_servo(world, ref.reference_eef, *est, scene.servo, deploy_rng);
      corrective = compute_corrective(skill_alignment, trace.final_alignment);
    } else {
      WorldState deploy_world = base_world;
      deploy_world.grasp = deploy_grasp;
      RandomSource deploy_rng = trial_rng.fork(4);
      const Observation deploy_obs = observe(deploy_world, deploy_rng);
      RandomSource reg_rng = trial_rng.fork(5);
      corrective = baseline_corrective(
          skill_obs, deploy_obs, scene.camera.believed_extrinsics(), ref.reference_eef,
          method == Method::icp ? BaselineMethod::icp : BaselineMethod::svd,
          scene.baseline, reg_rng);
    }

    if (method == Method::retrieval || !is_estimator_method(method)) {
      if (audit->kinematic_reads != 0) {
        throw ProtocolViolation("peg trial: method read ground-truth kinematics");
      }
    }

    SkillRecord record{trajectory, skill_alignment, base_world.object.name};
    WorldState deploy_world = base_world;
    deploy_world.grasp = deploy_grasp;
    const AdaptedExecution exec =
        execute_adapted(record, corrective, deploy_world, trajectory.initial_eef);

    const Pose final_object = exec.object_trace.back();
    const Eigen::Vector3d tip = object_tip(base_world.object);
    const Eigen::Vector3d tip_actual = final_object.apply(tip);
    const Eigen::Vector3d tip_designed = target.apply(tip);
    detail.lateral_mm = (tip_actual - tip_designed).head<2>().norm() * 1000.0;
    const Eigen::Vector3d axis_actual = final_object.rotation * Eigen::Vector3d::UnitX();
    const Eigen::Vector3d axis_designed = target.rotation * Eigen::Vector3d::UnitX();
    const double c = std::clamp(axis_actual.dot(axis_designed), -1.0, 1.0);
    detail.tilt_deg = std::acos(c) * 180.0 / M_PI;
    detail.completed = true;
  } catch (const ProtocolViolation&) {
    throw;
  } catch (const Error&) {
    detail.completed = false;
  }
  return detail;
}

}  // namespace

Method method_from_string(const std::string& s) {
  if (s == "oracle") return Method::oracle;
  if (s == "retrieval") return Method::retrieval;
  if (s == "icp") return Method::icp;
  if (s == "svd") return Method::svd;
  throw std::invalid_argument("unknown method: " + s);
}

std::string method_to_string(Method m) {
  switch (m) {
    case Method::oracle: return "oracle";
    case Method::retrieval: return "retrieval";
    case Method::icp: return "icp";
    case Method::svd: return "svd";
  }
  return "?";
}

SceneConfig SceneConfig::defaults() {
  SceneConfig s;
  // Camera 0.6 m in front of the reference pose, looking back at it:
  // camera x = world +y, camera y = world -z, camera z (view) = world -x.
  Eigen::Matrix3d r;
  r.col(0) = Eigen::Vector3d(0.0, 1.0, 0.0);
  r.col(1) = Eigen::Vector3d(0.0, 0.0, -1.0);
  r.col(2) = Eigen::Vector3d(-1.0, 0.0, 0.0);
  s.camera.pose_WC = Pose(Eigen::Quaterniond(r), Eigen::Vector3d(0.6, 0.0, 0.0));
  return s;
}

namespace {

std::string object_kind_to_string(ObjectKind k) {
  switch (k) {
    case ObjectKind::hammer: return "hammer";
    case ObjectKind::lshape: return "lshape";
    case ObjectKind::bar: return "bar";
    case ObjectKind::random: return "random";
  }
  return "bar";
}

}  // namespace

nlohmann::json scene_to_json(const SceneConfig& s) {
  nlohmann::json object;
  if (s.object_override) {
    object = nlohmann::json{{"model", object_to_json(*s.object_override)}};
  } else {
    object = nlohmann::json{{"kind", object_kind_to_string(s.object_kind)},
                            {"points", s.object_points},
                            {"seed", s.object_seed}};
  }

  nlohmann::json j{{"object", object},
                   {"camera", camera_to_json(s.camera)},
                   {"reference",
                    {{"eef", pose_to_json(s.reference_eef)},
                     {"grasp", pose_to_json(s.reference_grasp)}}},
                   {"workspace", box_to_json(s.workspace)},
                   {"range", range_to_json(s.collect_range)},
                   {"collect_m", s.collect_m},
                   {"grasp_range", range_to_json(s.grasp_range)},
                   {"deploy_eef_range", range_to_json(s.deploy_eef_range)},
                   {"estimator", estimator_to_json(s.estimator)},
                   {"servo", servo_to_json(s.servo)},
                   {"baseline", baseline_to_json(s.baseline)}};
  if (s.gripper_occlusion) {
    j["occlusion"] = box_to_json(*s.gripper_occlusion);
  } else {
    j["occlusion"] = nullptr;
  }
  return j;
}

SceneConfig scene_from_json(const nlohmann::json& j) {
  SceneConfig s = SceneConfig::defaults();
  try {
    if (j.contains("object")) {
      const auto& o = j.at("object");
      if (o.contains("model")) {
        s.object_override = object_from_json(o.at("model"));
      } else {
        if (o.contains("kind")) {
          s.object_kind = object_kind_from_string(o.at("kind").get<std::string>());
        }
        if (o.contains("points")) s.object_points = o.at("points").get<int>();
        if (o.contains("seed")) s.object_seed = o.at("seed").get<std::uint64_t>();
      }
    }
    if (j.contains("camera")) s.camera = camera_from_json(j.at("camera"), s.camera);
    if (j.contains("reference")) {
      const auto& r = j.at("reference");
      if (r.contains("eef")) s.reference_eef = pose_from_json(r.at("eef"));
      if (r.contains("grasp")) s.reference_grasp = pose_from_json(r.at("grasp"));
    }
    if (j.contains("occlusion")) {
      if (j.at("occlusion").is_null()) {
        s.gripper_occlusion.reset();
      } else {
        s.gripper_occlusion = box_from_json(j.at("occlusion"));
      }
    }
    if (j.contains("workspace")) s.workspace = box_from_json(j.at("workspace"));
    if (j.contains("range")) s.collect_range = range_from_json(j.at("range"));
    if (j.contains("collect_m")) s.collect_m = j.at("collect_m").get<int>();
    if (j.contains("grasp_range")) s.grasp_range = range_from_json(j.at("grasp_range"));
    if (j.contains("deploy_eef_range")) {
      s.deploy_eef_range = range_from_json(j.at("deploy_eef_range"));
    }
    if (j.contains("estimator")) {
      s.estimator = estimator_from_json(j.at("estimator"), s.estimator);
    }
    if (j.contains("servo")) s.servo = servo_from_json(j.at("servo"), s.servo);
    if (j.contains("baseline")) {
      s.baseline = baseline_from_json(j.at("baseline"), s.baseline);
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("scene: ") + e.what());
  }
  return s;
}

SceneConfig load_scene(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw IoError("load_scene: cannot open " + path.string());
  nlohmann::json j;
  try {
    f >> j;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("load_scene: ") + e.what());
  }
  return scene_from_json(j);
}

WorldState world_from_scene(const SceneConfig& s) {
  WorldState w;
  w.object = s.object_override
                 ? *s.object_override
                 : make_object(s.object_kind, s.object_points, s.object_seed);
  w.camera = s.camera;
  w.eef_pose = s.reference_eef;
  w.grasp = s.reference_grasp;
  w.gripper_occlusion = s.gripper_occlusion;
  w.workspace = s.workspace;
  return w;
}

ReferenceSetup reference_from_scene(const SceneConfig& s) {
  return ReferenceSetup{s.reference_eef, s.reference_grasp};
}

RetrievalBundle build_retrieval_bundle(const SceneConfig& scene, std::uint64_t seed) {
  const WorldState world = world_from_scene(scene);
  RandomSource rng(seed);

  RandomSource coarse_rng = rng.fork(kSaltDataset);
  const GraspDataset coarse_data =
      collect_dataset(world, scene.collect_range, scene.collect_m, coarse_rng);

  RetrievalConfig cfg;
  cfg.refine_icp = scene.estimator.refine_icp;
  cfg.descriptor_bins = scene.estimator.descriptor_bins;
  cfg.use_appearance = scene.estimator.use_appearance;

  RetrievalBundle bundle;
  bundle.coarse = std::make_shared<RetrievalEstimator>(coarse_data, cfg);
  if (coarse_data.entries.size() >= 2) {
    bundle.dataset_spacing = median_label_spacing(coarse_data);
  }

  // Fine stage: the slice of the coarse data near the reference if it is
  // dense enough, otherwise a dedicated short-range collection.
  bool built_fine = false;
  try {
    const GraspDataset sub = subset_by_range(coarse_data, scene.estimator.fine_range);
    if (sub.entries.size() >= 8) {
      bundle.fine = std::make_shared<RetrievalEstimator>(sub, cfg);
      built_fine = true;
    }
  } catch (const EmptySubset&) {
  }
  if (!built_fine && scene.estimator.fine_m >= 8) {
    RandomSource fine_rng = rng.fork(kSaltDataset + 1);
    const GraspDataset fine_data =
        collect_dataset(world, scene.estimator.fine_range, scene.estimator.fine_m, fine_rng);
    bundle.fine = std::make_shared<RetrievalEstimator>(fine_data, cfg);
    built_fine = true;
  }
  if (!built_fine) {
    bundle.fine = bundle.coarse;  // small-data fallback: reuse the coarse stage
  }
  return bundle;
}

TwoStageEstimator make_oracle_stages(const SceneConfig& scene,
                                     const std::shared_ptr<const WorldState>& world,
                                     std::uint64_t seed,
                                     const std::shared_ptr<TruthAudit>& audit) {
  auto oracle = std::make_shared<OracleEstimator>(
      world, reference_from_scene(scene), scene.estimator.noise_t_mm / 1000.0,
      scene.estimator.noise_r_deg, seed, audit, scene.collect_range);
  return TwoStageEstimator(oracle);
}

AccuracyReport run_accuracy_protocol(const SceneConfig& scene,
                                     const std::vector<Method>& methods, int grasps,
                                     int deployments, std::uint64_t seed, int threads) {
  if (grasps < 1 || deployments < 1) {
    throw std::invalid_argument("run_accuracy_protocol: need grasps, deployments >= 1");
  }
  if (methods.empty()) {
    throw std::invalid_argument("run_accuracy_protocol: no methods");
  }

  const WorldState base_world = world_from_scene(scene);
  const ReferenceSetup ref = reference_from_scene(scene);
  RandomSource master(seed);

  std::optional<RetrievalBundle> bundle;
  for (Method m : methods) {
    if (m == Method::retrieval && !bundle) {
      bundle = build_retrieval_bundle(scene, master.fork(kSaltDataset).seed());
    }
  }

  const int trials = grasps * deployments;
  // Trial draws depend only on (seed, index), never on the method, so the
  // same grasps and displacements are evaluated by every method.
  std::vector<Pose> skill_grasps(grasps);
  for (int g = 0; g < grasps; ++g) {
    RandomSource r = master.fork(kSaltSkillGrasp + static_cast<std::uint64_t>(g));
    skill_grasps[g] = compose(scene.reference_grasp,
                              sample_displacement(scene.grasp_range, r));
  }
  std::vector<Pose> deploy_displacements(trials);
  for (int t = 0; t < trials; ++t) {
    RandomSource r = master.fork(kSaltDeploy + static_cast<std::uint64_t>(t));
    deploy_displacements[t] = sample_displacement(scene.deploy_eef_range, r);
  }

  AccuracyReport report;
  report.seed = seed;
  report.grasps = grasps;
  report.deployments = deployments;

  for (Method method : methods) {
    std::vector<TrialResult> results(trials);
    std::atomic<bool> violation{false};
    parallel_for(trials, threads, [&](int t) {
      const int g = t / deployments;
      try {
        results[t] = accuracy_trial(scene, base_world, ref, method,
                                    bundle ? &*bundle : nullptr, skill_grasps[g],
                                    deploy_displacements[t],
                                    master.fork(kSaltTrial + static_cast<std::uint64_t>(t)));
      } catch (const ProtocolViolation&) {
        violation = true;
      }
    });
    if (violation) {
      throw ProtocolViolation("run_accuracy_protocol: ground-truth access audit failed");
    }

    AccuracyRow row;
    row.object = base_world.object.name;
    row.method = method_to_string(method);
    std::vector<PoseError> errors;
    double sum_mm = 0.0, sum_deg = 0.0, sum_dof_mm = 0.0, sum_dof_deg = 0.0;
    for (const auto& r : results) {
      if (!r.ok) continue;
      errors.push_back(r.error);
      sum_mm += r.error.position_mm;
      sum_deg += r.error.orientation_deg;
      sum_dof_mm += r.per_dof_mm;
      sum_dof_deg += r.per_dof_deg;
      row.truth_reads += r.truth_reads;
    }
    row.n = static_cast<int>(errors.size());
    if (row.n > 0) {
      row.mean_mm = sum_mm / row.n;
      row.mean_deg = sum_deg / row.n;
      row.per_dof_mean_mm = sum_dof_mm / row.n;
      row.per_dof_mean_deg = sum_dof_deg / row.n;
      double var_mm = 0.0, var_deg = 0.0;
      for (const auto& e : errors) {
        var_mm += (e.position_mm - row.mean_mm) * (e.position_mm - row.mean_mm);
        var_deg += (e.orientation_deg - row.mean_deg) * (e.orientation_deg - row.mean_deg);
      }
      row.std_mm = std::sqrt(var_mm / row.n);
      row.std_deg = std::sqrt(var_deg / row.n);
    }
    report.rows.push_back(row);
    report.trial_errors.push_back(std::move(errors));
  }
  return report;
}

SkillTrajectory make_insertion_trajectory(const Pose& skill_grasp,
                                          const Pose& target_object_pose, int waypoints) {
  if (waypoints < 2) {
    throw std::invalid_argument("make_insertion_trajectory: need >= 2 waypoints");
  }
  // Desired object poses: straight descent onto the target along world z.
  std::vector<Pose> eef_poses;
  eef_poses.reserve(waypoints);
  for (int k = 0; k < waypoints; ++k) {
    const double height =
        kInsertionApproach * (1.0 - static_cast<double>(k) / (waypoints - 1));
    const Pose object_pose(target_object_pose.rotation,
                           target_object_pose.translation + Eigen::Vector3d(0, 0, height));
    eef_poses.push_back(compose(object_pose, inverse(skill_grasp)));
  }
  SkillTrajectory traj;
  traj.initial_eef = eef_poses.front();
  for (int k = 1; k < waypoints; ++k) {
    traj.displacements.push_back(compose(inverse(traj.initial_eef), eef_poses[k]));
  }
  return traj;
}

PegInHoleStudy run_peg_study(const SceneConfig& scene, const std::vector<Method>& methods,
                             const std::vector<double>& tolerances_mm, int trials_per,
                             std::uint64_t seed, int threads) {
  if (trials_per < 1) throw std::invalid_argument("run_peg_study: trials_per >= 1");
  if (tolerances_mm.empty()) throw std::invalid_argument("run_peg_study: no tolerances");
  for (std::size_t i = 1; i < tolerances_mm.size(); ++i) {
    if (tolerances_mm[i] <= tolerances_mm[i - 1]) {
      throw std::invalid_argument("run_peg_study: tolerances must be strictly increasing");
    }
  }

  const WorldState base_world = world_from_scene(scene);
  const ReferenceSetup ref = reference_from_scene(scene);
  RandomSource master(seed);

  std::optional<RetrievalBundle> bundle;
  for (Method m : methods) {
    if (m == Method::retrieval && !bundle) {
      bundle = build_retrieval_bundle(scene, master.fork(kSaltDataset).seed());
    }
  }

  PegInHoleStudy study;
  study.tolerances_mm = tolerances_mm;
  study.trials_per = trials_per;
  study.seed = seed;

  for (Method method : methods) {
    std::vector<PegTrialDetail> details(trials_per);
    std::atomic<bool> violation{false};
    parallel_for(trials_per, threads, [&](int t) {
      try {
        details[t] = peg_trial(scene, base_world, ref, method,
                               bundle ? &*bundle : nullptr, t,
                               master.fork(kSaltTrial + static_cast<std::uint64_t>(t)));
      } catch (const ProtocolViolation&) {
        violation = true;
      }
    });
    if (violation) {
      throw ProtocolViolation("run_peg_study: ground-truth access audit failed");
    }

    // One simulated insertion is scored against every tolerance, so the
    // success count cannot decrease as the tolerance widens.
    for (double tol : tolerances_mm) {
      PegRow row;
      row.method = method_to_string(method);
      row.tolerance_mm = tol;
      row.trials = trials_per;
      for (const auto& d : details) {
        if (d.completed && d.lateral_mm < tol && d.tilt_deg < study.max_tilt_deg) {
          ++row.successes;
        }
      }
      study.rows.push_back(row);
    }
    study.details.insert(study.details.end(), details.begin(), details.end());
  }
  return study;
}

nlohmann::json report_to_json(const AccuracyReport& report) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : report.rows) {
    rows.push_back({{"object", r.object},
                    {"method", r.method},
                    {"n", r.n},
                    {"mean_mm", r.mean_mm},
                    {"std_mm", r.std_mm},
                    {"mean_deg", r.mean_deg},
                    {"std_deg", r.std_deg},
                    {"per_dof_mean_mm", r.per_dof_mean_mm},
                    {"per_dof_mean_deg", r.per_dof_mean_deg},
                    {"truth_reads", r.truth_reads}});
  }
  nlohmann::json trials = nlohmann::json::array();
  for (const auto& errs : report.trial_errors) {
    nlohmann::json per_row = nlohmann::json::array();
    for (const auto& e : errs) {
      per_row.push_back({{"mm", e.position_mm}, {"deg", e.orientation_deg}});
    }
    trials.push_back(per_row);
  }
  return nlohmann::json{{"type", "accuracy"},
                        {"seed", report.seed},
                        {"grasps", report.grasps},
                        {"deployments", report.deployments},
                        {"rows", rows},
                        {"trial_errors", trials}};
}

AccuracyReport accuracy_report_from_json(const nlohmann::json& j) {
  AccuracyReport report;
  try {
    if (j.at("type").get<std::string>() != "accuracy") {
      throw FormatError("not an accuracy report");
    }
    report.seed = j.at("seed").get<std::uint64_t>();
    report.grasps = j.at("grasps").get<int>();
    report.deployments = j.at("deployments").get<int>();
    for (const auto& r : j.at("rows")) {
      AccuracyRow row;
      row.object = r.at("object").get<std::string>();
      row.method = r.at("method").get<std::string>();
      row.n = r.at("n").get<int>();
      row.mean_mm = r.at("mean_mm").get<double>();
      row.std_mm = r.at("std_mm").get<double>();
      row.mean_deg = r.at("mean_deg").get<double>();
      row.std_deg = r.at("std_deg").get<double>();
      row.per_dof_mean_mm = r.at("per_dof_mean_mm").get<double>();
      row.per_dof_mean_deg = r.at("per_dof_mean_deg").get<double>();
      row.truth_reads = r.at("truth_reads").get<std::uint64_t>();
      report.rows.push_back(row);
    }
    for (const auto& errs : j.at("trial_errors")) {
      std::vector<PoseError> row;
      for (const auto& e : errs) {
        row.push_back(PoseError{e.at("mm").get<double>(), e.at("deg").get<double>()});
      }
      report.trial_errors.push_back(std::move(row));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("accuracy report: ") + e.what());
  }
  return report;
}

nlohmann::json report_to_json(const PegInHoleStudy& study) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : study.rows) {
    rows.push_back({{"method", r.method},
                    {"tolerance_mm", r.tolerance_mm},
                    {"successes", r.successes},
                    {"trials", r.trials}});
  }
  nlohmann::json details = nlohmann::json::array();
  for (const auto& d : study.details) {
    details.push_back({{"method", d.method},
                       {"trial", d.trial},
                       {"lateral_mm", d.lateral_mm},
                       {"tilt_deg", d.tilt_deg},
                       {"completed", d.completed}});
  }
  return nlohmann::json{{"type", "peg"},
                        {"seed", study.seed},
                        {"tolerances_mm", study.tolerances_mm},
                        {"trials_per", study.trials_per},
                        {"max_tilt_deg", study.max_tilt_deg},
                        {"rows", rows},
                        {"details", details}};
}

PegInHoleStudy peg_study_from_json(const nlohmann::json& j) {
  PegInHoleStudy study;
  try {
    if (j.at("type").get<std::string>() != "peg") throw FormatError("not a peg study");
    study.seed = j.at("seed").get<std::uint64_t>();
    study.tolerances_mm = j.at("tolerances_mm").get<std::vector<double>>();
    study.trials_per = j.at("trials_per").get<int>();
    study.max_tilt_deg = j.at("max_tilt_deg").get<double>();
    for (const auto& r : j.at("rows")) {
      PegRow row;
      row.method = r.at("method").get<std::string>();
      row.tolerance_mm = r.at("tolerance_mm").get<double>();
      row.successes = r.at("successes").get<int>();
      row.trials = r.at("trials").get<int>();
      study.rows.push_back(row);
    }
    for (const auto& d : j.at("details")) {
      PegTrialDetail detail;
      detail.method = d.at("method").get<std::string>();
      detail.trial = d.at("trial").get<int>();
      detail.lateral_mm = d.at("lateral_mm").get<double>();
      detail.tilt_deg = d.at("tilt_deg").get<double>();
      detail.completed = d.at("completed").get<bool>();
      study.details.push_back(detail);
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("peg study: ") + e.what());
  }
  return study;
}

std::string report_to_csv(const AccuracyReport& report) {
  std::ostringstream os;
  os << "object,method,mean_mm,std_mm,mean_deg,std_deg,n\n";
  for (const auto& r : report.rows) {
    os << r.object << ',' << r.method << ',' << fmt_double(r.mean_mm) << ','
       << fmt_double(r.std_mm) << ',' << fmt_double(r.mean_deg) << ','
       << fmt_double(r.std_deg) << ',' << r.n << '\n';
  }
  return os.str();
}

std::string report_to_csv(const PegInHoleStudy& study) {
  std::ostringstream os;
  os << "method,tolerance_mm,successes,trials,success_rate\n";
  for (const auto& r : study.rows) {
    const double rate =
        r.trials > 0 ? static_cast<double>(r.successes) / r.trials : 0.0;
    os << r.method << ',' << fmt_double(r.tolerance_mm) << ',' << r.successes << ','
       << r.trials << ',' << fmt_double(rate) << '\n';
  }
  return os.str();
}

namespace {

void write_file(const std::filesystem::path& path, const std::string& content) {
  std::ofstream f(path);
  if (!f) throw IoError("emit_report: cannot open " + path.string());
  f << content;
  if (!f) throw IoError("emit_report: write failed for " + path.string());
}

}  // namespace

void emit_report(const AccuracyReport& report, ReportFormat format,
                 const std::filesystem::path& path) {
  write_file(path, format == ReportFormat::csv ? report_to_csv(report)
                                               : report_to_json(report).dump(2) + "\n");
}

void emit_report(const PegInHoleStudy& study, ReportFormat format,
                 const std::filesystem::path& path) {
  write_file(path, format == ReportFormat::csv ? report_to_csv(study)
                                               : report_to_json(study).dump(2) + "\n");
}

}  // namespace graspadapt
