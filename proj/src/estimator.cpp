#include "graspadapt/estimator.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "graspadapt/errors.hpp"

namespace graspadapt {

namespace {

Eigen::Vector3d centroid_of(const std::vector<Eigen::Vector3d>& pts) {
  Eigen::Vector3d c = Eigen::Vector3d::Zero();
  for (const auto& p : pts) c += p;
  return c / static_cast<double>(pts.size());
}

// Recovers the camera pose relative to the reference EEF frame from the
// dataset alone. Writing G for that pose, N_i for the sampled displacement of
// entry i, and v for the (unknown) fixed object centroid in the EEF frame,
// each stored cloud centroid obeys
//   c_i = R_G (R_{N_i} v + t_{N_i}) + t_G.
// Alternating least squares over (G, v): given v the pair (R_G, t_G) is an
// absolute-orientation fit, given G the centroid v has a closed-form mean.
// Exact when sensing is exact; a biased estimate under dropout only degrades
// the refinement, whose fallback is the raw retrieved label.
bool recover_camera_from_reference(const GraspDataset& d, Pose& out) {
  const std::size_t n = d.entries.size();
  if (n < 8) return false;

  std::vector<Eigen::Matrix3d> rot(n);
  std::vector<Eigen::Vector3d> trans(n), cent(n);
  for (std::size_t i = 0; i < n; ++i) {
    const Pose displacement = inverse(d.entries[i].label);
    rot[i] = displacement.rotation.toRotationMatrix();
    trans[i] = displacement.translation;
    cent[i] = centroid_of(d.entries[i].observation.points_C);
  }

  Eigen::Vector3d v = Eigen::Vector3d::Zero();
  Pose g;
  for (int iter = 0; iter < 100; ++iter) {
    Correspondences c;
    c.pairs.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
      c.pairs.emplace_back(rot[i] * v + trans[i], cent[i]);
    }
    try {
      g = arun_svd(c).relative_pose_C;
    } catch (const DegenerateConfiguration&) {
      return false;
    }
    const Eigen::Matrix3d rg_t = g.rotation.toRotationMatrix().transpose();
    Eigen::Vector3d v_next = Eigen::Vector3d::Zero();
    for (std::size_t i = 0; i < n; ++i) {
      v_next += rot[i].transpose() * (rg_t * (cent[i] - g.translation) - trans[i]);
    }
    v_next /= static_cast<double>(n);
    const double delta = (v_next - v).norm();
    v = v_next;
    if (delta < 1e-14) break;
  }
  out = g;
  return true;
}

}  // namespace

OracleEstimator::OracleEstimator(std::shared_ptr<const WorldState> world,
                                 ReferenceSetup reference, double noise_t_m,
                                 double noise_r_deg, std::uint64_t seed,
                                 std::shared_ptr<TruthAudit> audit,
                                 SampleRange declared_range)
    : world_(std::move(world)),
      reference_(reference),
      noise_t_m_(noise_t_m),
      noise_r_deg_(noise_r_deg),
      rng_(seed),
      audit_(std::move(audit)),
      declared_range_(declared_range) {
  if (!world_) throw std::invalid_argument("OracleEstimator: null world handle");
}

Pose OracleEstimator::estimate(const Observation&) const {
  if (audit_) ++audit_->kinematic_reads;
  // The grasp currently seen by the camera looks, from the reference pose,
  // like the emulated grasp A = R^-1 T_WE T_EO; the displacement aligning it
  // with the reference grasp is rg A^-1.
  const Pose emulated = compose(inverse(reference_.reference_eef),
                                compose(world_->eef_pose, world_->grasp));
  const Pose truth = compose(reference_.reference_grasp, inverse(emulated));
  if (noise_t_m_ <= 0.0 && noise_r_deg_ <= 0.0) return truth;

  Eigen::Vector3d dt(rng_.gaussian(noise_t_m_), rng_.gaussian(noise_t_m_),
                     rng_.gaussian(noise_t_m_));
  const double angle_deg = rng_.gaussian(noise_r_deg_);
  const Eigen::Vector3d axis = rng_.unit_vector();
  Pose perturbation(Eigen::Quaterniond(Eigen::AngleAxisd(angle_deg * M_PI / 180.0, axis)),
                    dt);
  return compose(truth, perturbation);
}

namespace {

// Meters-per-radian weight tying rotation to translation in the label-space
// lookup metric; rotation enters through rotation-matrix entries, whose
// Frobenius distance is sqrt(2) * angle for small angles.
constexpr double kLabelRotationWeight = 0.1 / M_SQRT2;

Eigen::VectorXd label_to_coords(const Pose& label) {
  Eigen::VectorXd y(12);
  y.head<3>() = label.translation;
  const Eigen::Matrix3d r = label.rotation.toRotationMatrix();
  for (int k = 0; k < 9; ++k) y(3 + k) = kLabelRotationWeight * r(k / 3, k % 3);
  return y;
}

}  // namespace

RetrievalEstimator::RetrievalEstimator(GraspDataset dataset, RetrievalConfig config)
    : dataset_(std::move(dataset)), config_(config) {
  if (dataset_.entries.empty()) {
    throw EmptyDataset("RetrievalEstimator: dataset has no entries");
  }
  if (config_.descriptor_bins < 1) {
    throw std::invalid_argument("RetrievalEstimator: descriptor_bins must be >= 1");
  }

  appearance_weighting_ = config_.use_appearance;
  for (const auto& e : dataset_.entries) {
    if (!e.observation.appearance) appearance_weighting_ = false;
  }

  // Shared radial-histogram scale, so descriptors are comparable.
  max_radius_ = 0.0;
  max_count_ = 1;
  for (const auto& e : dataset_.entries) {
    const Eigen::Vector3d c = centroid_of(e.observation.points_C);
    for (const auto& p : e.observation.points_C) {
      max_radius_ = std::max(max_radius_, (p - c).norm());
    }
    max_count_ = std::max(max_count_, e.observation.points_C.size());
  }
  if (max_radius_ <= 0.0) max_radius_ = 1.0;

  const auto n = static_cast<Eigen::Index>(dataset_.entries.size());
  Eigen::MatrixXd raw(n, 28 + 2 * config_.descriptor_bins);
  for (Eigen::Index i = 0; i < n; ++i) {
    raw.row(i) = descriptor(dataset_.entries[i].observation);
  }
  mean_ = raw.colwise().mean();
  Eigen::MatrixXd centered = raw.rowwise() - mean_.transpose();
  scale_ = (centered.array().square().colwise().mean()).sqrt();
  for (Eigen::Index k = 0; k < scale_.size(); ++k) {
    if (scale_(k) < 1e-12) scale_(k) = 1.0;
  }

  label_coords_.resize(n, 12);
  for (Eigen::Index i = 0; i < n; ++i) {
    label_coords_.row(i) = label_to_coords(dataset_.entries[i].label).transpose();
  }
  features_ = centered.array().rowwise() / scale_.transpose().array();

  if (config_.refine_icp) {
    refine_ready_ = recover_camera_from_reference(dataset_, cam_from_ref_);
  }
}

Eigen::VectorXd RetrievalEstimator::descriptor(const Observation& o) const {
  if (o.points_C.empty()) throw EmptyObservation("descriptor: empty observation");
  const bool weighted = appearance_weighting_ && o.appearance.has_value();
  const auto n_pts = static_cast<double>(o.points_C.size());

  const Eigen::Vector3d c = centroid_of(o.points_C);
  Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
  Eigen::Vector3d skew = Eigen::Vector3d::Zero();
  Eigen::Vector3d weighted_offset = Eigen::Vector3d::Zero();
  double weight_sum = 0.0;
  for (std::size_t i = 0; i < o.points_C.size(); ++i) {
    const Eigen::Vector3d d = o.points_C[i] - c;
    cov += d * d.transpose();
    skew += d * d.squaredNorm();
    const double w = weighted ? (*o.appearance)[i] : 1.0;
    weighted_offset += w * d;
    weight_sum += w;
  }
  cov /= n_pts;
  skew /= n_pts;
  if (weight_sum > 0.0) weighted_offset /= weight_sum;

  // Principal axes with deterministic signs: orient each axis along the
  // third-moment direction, then the appearance offset, then its own largest
  // component. The first two rotate with the object, so the resulting basis
  // is a fixed body frame across poses.
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(cov);
  Eigen::Matrix3d axes = eig.eigenvectors();
  for (int k = 0; k < 3; ++k) {
    Eigen::Vector3d u = axes.col(k);
    double s = skew.dot(u);
    if (std::abs(s) < 1e-9) s = weighted_offset.dot(u);
    if (std::abs(s) < 1e-9) {
      int arg = 0;
      u.cwiseAbs().maxCoeff(&arg);
      s = u(arg);
    }
    if (s < 0.0) axes.col(k) = -u;
  }

  Eigen::VectorXd f(28 + 2 * config_.descriptor_bins);
  f(0) = n_pts / static_cast<double>(max_count_);  // visibility fraction
  f.segment<3>(1) = c;
  f(4) = cov(0, 0);
  f(5) = cov(0, 1);
  f(6) = cov(0, 2);
  f(7) = cov(1, 1);
  f(8) = cov(1, 2);
  f(9) = cov(2, 2);
  f.segment<3>(10) = axes.col(0);
  f.segment<3>(13) = axes.col(1);
  f.segment<3>(16) = axes.col(2);
  f.segment<3>(19) = axes.transpose() * c;  // centroid in the body frame
  f.segment<3>(22) = skew;
  f.segment<3>(25) = weighted_offset;

  Eigen::VectorXd radial = Eigen::VectorXd::Zero(config_.descriptor_bins);
  double total = 0.0;
  for (std::size_t i = 0; i < o.points_C.size(); ++i) {
    const double r = (o.points_C[i] - c).norm();
    int bin = static_cast<int>(std::floor(r / max_radius_ * config_.descriptor_bins));
    bin = std::clamp(bin, 0, config_.descriptor_bins - 1);
    const double w = weighted ? 0.25 + 0.75 * (*o.appearance)[i] : 1.0;
    radial(bin) += w;
    total += w;
  }
  if (total > 0.0) radial /= total;
  f.segment(28, config_.descriptor_bins) = radial;

  // Appearance-value histogram: under region dropout it fingerprints which
  // part of the object survived in view.
  Eigen::VectorXd tones = Eigen::VectorXd::Zero(config_.descriptor_bins);
  if (weighted) {
    for (std::size_t i = 0; i < o.points_C.size(); ++i) {
      int bin = static_cast<int>(std::floor((*o.appearance)[i] * config_.descriptor_bins));
      bin = std::clamp(bin, 0, config_.descriptor_bins - 1);
      tones(bin) += 1.0;
    }
    tones /= n_pts;
  }
  f.tail(config_.descriptor_bins) = tones;
  return f;
}

std::size_t RetrievalEstimator::nearest_entry(const Observation& o) const {
  const Eigen::VectorXd f = descriptor(o);
  const Eigen::VectorXd q = (f - mean_).array() / scale_.array();

  // Shortlist the view-space neighbors; their visibility pattern matches the
  // query's, so a ridge fit over them predicts the query label reliably.
  const Eigen::Index n = features_.rows();
  const Eigen::Index k = std::min<Eigen::Index>(config_.shortlist, n);
  std::vector<std::pair<double, Eigen::Index>> order(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    order[i] = {(features_.row(i).transpose() - q).squaredNorm(), i};
  }
  std::partial_sort(order.begin(), order.begin() + k, order.end());

  const Eigen::Index dims = features_.cols() + 1;
  Eigen::MatrixXd design(k, dims);
  Eigen::MatrixXd targets(k, 12);
  for (Eigen::Index j = 0; j < k; ++j) {
    design(j, 0) = 1.0;
    design.row(j).tail(features_.cols()) = features_.row(order[j].second);
    targets.row(j) = label_coords_.row(order[j].second);
  }
  const Eigen::MatrixXd gram =
      design.transpose() * design +
      1e-8 * static_cast<double>(k) * Eigen::MatrixXd::Identity(dims, dims);
  const Eigen::MatrixXd coeff = gram.ldlt().solve(design.transpose() * targets);

  Eigen::VectorXd phi(dims);
  phi(0) = 1.0;
  phi.tail(features_.cols()) = q;
  const Eigen::VectorXd z = coeff.transpose() * phi;

  // Final answer: the shortlisted entry whose label sits closest to the
  // predicted label coordinates.
  std::size_t best = static_cast<std::size_t>(order[0].second);
  double best_d = std::numeric_limits<double>::infinity();
  for (Eigen::Index j = 0; j < k; ++j) {
    const double d =
        (label_coords_.row(order[j].second).transpose() - z).squaredNorm();
    if (d < best_d) {
      best_d = d;
      best = static_cast<std::size_t>(order[j].second);
    }
  }
  return best;
}

Pose RetrievalEstimator::raw_estimate(const Observation& o) const {
  return dataset_.entries[nearest_entry(o)].label;
}

Pose RetrievalEstimator::estimate(const Observation& o) const {
  const std::size_t idx = nearest_entry(o);
  const Pose& label = dataset_.entries[idx].label;
  if (!refinement_active()) return label;

  // Register the stored cloud onto the query in the camera frame. The
  // camera-frame motion delta relates to the EEF-frame displacement delta by
  // conjugation with the camera-from-reference transform G:
  //   delta_C = G (N_query N_entry^-1) G^-1
  // so the query label follows as label_entry o G^-1 delta_C^-1 G.
  RegistrationResult reg;
  try {
    reg = icp(dataset_.entries[idx].observation.points_C, o.points_C,
              Pose::identity(), config_.icp);
  } catch (const EmptyCloud&) {
    return label;
  }
  if (!reg.converged || reg.rms_residual > config_.refine_max_rms) {
    return label;  // refinement diverged; keep the raw retrieval
  }
  const Pose correction = compose(inverse(cam_from_ref_),
                                  compose(inverse(reg.relative_pose_C), cam_from_ref_));
  return compose(label, correction);
}

RegistrationAlignmentEstimator::RegistrationAlignmentEstimator(
    Observation target_view, Pose believed_extrinsics, Pose reference_eef,
    IcpConfig config)
    : target_view_(std::move(target_view)),
      eef_from_camera_(compose(inverse(reference_eef), believed_extrinsics)),
      config_(config) {
  if (target_view_.points_C.empty()) {
    throw EmptyObservation("RegistrationAlignmentEstimator: empty target view");
  }
}

Pose RegistrationAlignmentEstimator::estimate(const Observation& o) const {
  const RegistrationResult reg =
      icp(o.points_C, target_view_.points_C, Pose::identity(), config_);
  return compose(eef_from_camera_,
                 compose(reg.relative_pose_C, inverse(eef_from_camera_)));
}

TwoStageEstimator::TwoStageEstimator(std::shared_ptr<const AlignmentEstimator> coarse,
                                     std::shared_ptr<const AlignmentEstimator> fine)
    : coarse_(std::move(coarse)), fine_(std::move(fine)) {
  if (!coarse_ || !fine_) throw std::invalid_argument("TwoStageEstimator: null stage");
  if (!coarse_->trained_range().contains(fine_->trained_range())) {
    throw std::invalid_argument(
        "TwoStageEstimator: fine range must lie inside the coarse range");
  }
}

TwoStageEstimator::TwoStageEstimator(std::shared_ptr<const AlignmentEstimator> single)
    : TwoStageEstimator(single, single) {}

Pose TwoStageEstimator::estimate(const Observation& o, Stage stage) const {
  return stage == Stage::coarse ? coarse_->estimate(o) : fine_->estimate(o);
}

}  // namespace graspadapt
