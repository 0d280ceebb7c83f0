#include "graspadapt/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "graspadapt/errors.hpp"

namespace graspadapt {

namespace {

// Minimal kd-tree for 3D nearest-neighbor queries over a fixed cloud.
class KdTree {
 public:
  explicit KdTree(const std::vector<Eigen::Vector3d>& pts) : pts_(pts) {
    index_.resize(pts.size());
    std::iota(index_.begin(), index_.end(), 0);
    nodes_.reserve(2 * pts.size());
    root_ = build(0, static_cast<int>(pts.size()), 0);
  }

  int nearest(const Eigen::Vector3d& q) const {
    int best = -1;
    double best_d2 = std::numeric_limits<double>::infinity();
    search(root_, q, best, best_d2);
    return best;
  }

 private:
  struct Node {
    int point = -1;
    int axis = 0;
    int left = -1;
    int right = -1;
  };

  int build(int lo, int hi, int depth) {
    if (lo >= hi) return -1;
    const int axis = depth % 3;
    const int mid = (lo + hi) / 2;
    std::nth_element(index_.begin() + lo, index_.begin() + mid, index_.begin() + hi,
                     [&](int a, int b) { return pts_[a][axis] < pts_[b][axis]; });
    Node node;
    node.point = index_[mid];
    node.axis = axis;
    const int id = static_cast<int>(nodes_.size());
    nodes_.push_back(node);
    nodes_[id].left = build(lo, mid, depth + 1);
    nodes_[id].right = build(mid + 1, hi, depth + 1);
    return id;
  }

  void search(int id, const Eigen::Vector3d& q, int& best, double& best_d2) const {
    if (id < 0) return;
    const Node& node = nodes_[id];
    const double d2 = (pts_[node.point] - q).squaredNorm();
    if (d2 < best_d2) {
      best_d2 = d2;
      best = node.point;
    }
    const double delta = q[node.axis] - pts_[node.point][node.axis];
    const int near = delta < 0.0 ? node.left : node.right;
    const int far = delta < 0.0 ? node.right : node.left;
    search(near, q, best, best_d2);
    if (delta * delta < best_d2) search(far, q, best, best_d2);
  }

  const std::vector<Eigen::Vector3d>& pts_;
  std::vector<int> index_;
  std::vector<Node> nodes_;
  int root_ = -1;
};

double rms_of(const std::vector<double>& sq) {
  double s = 0.0;
  for (double v : sq) s += v;
  return std::sqrt(s / static_cast<double>(sq.size()));
}

}  // namespace

RegistrationResult arun_svd(const Correspondences& c) {
  const std::size_t n = c.pairs.size();
  if (n < 3) throw DegenerateConfiguration("arun_svd: need at least 3 pairs");

  Eigen::Vector3d p_bar = Eigen::Vector3d::Zero();
  Eigen::Vector3d q_bar = Eigen::Vector3d::Zero();
  for (const auto& [p, q] : c.pairs) {
    p_bar += p;
    q_bar += q;
  }
  p_bar /= static_cast<double>(n);
  q_bar /= static_cast<double>(n);

  Eigen::Matrix3d h = Eigen::Matrix3d::Zero();
  double spread = 0.0;
  for (const auto& [p, q] : c.pairs) {
    h += (p - p_bar) * (q - q_bar).transpose();
    spread += (p - p_bar).squaredNorm();
  }

  // Collinear or coincident sources leave the fit rank-deficient.
  {
    Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
    for (const auto& [p, q] : c.pairs) {
      cov += (p - p_bar) * (p - p_bar).transpose();
    }
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(cov);
    if (spread < 1e-18 || eig.eigenvalues()(1) < 1e-16 * std::max(1.0, spread)) {
      throw DegenerateConfiguration("arun_svd: collinear or coincident points");
    }
  }

  Eigen::JacobiSVD<Eigen::Matrix3d> svd(h, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::Matrix3d u = svd.matrixU();
  Eigen::Matrix3d v = svd.matrixV();
  if ((v * u.transpose()).determinant() < 0.0) {
    v.col(2) *= -1.0;
  }
  const Eigen::Matrix3d r = v * u.transpose();
  const Eigen::Vector3d t = q_bar - r * p_bar;

  RegistrationResult result;
  result.relative_pose_C = Pose(Eigen::Quaterniond(r), t);
  double sq = 0.0;
  for (const auto& [p, q] : c.pairs) {
    sq += (q - (r * p + t)).squaredNorm();
  }
  result.rms_residual = std::sqrt(sq / static_cast<double>(n));
  result.iterations = 1;
  result.converged = true;
  return result;
}

RegistrationResult icp(const std::vector<Eigen::Vector3d>& source,
                       const std::vector<Eigen::Vector3d>& target, const Pose& init,
                       const IcpConfig& config) {
  if (source.empty() || target.empty()) {
    throw EmptyCloud("icp: empty input cloud");
  }

  const KdTree tree(target);
  Pose transform = init;
  RegistrationResult result;
  double prev_mean = std::numeric_limits<double>::infinity();

  for (int iter = 0; iter < config.max_iterations; ++iter) {
    // Match every transformed source point to its nearest target point.
    std::vector<std::pair<Eigen::Vector3d, Eigen::Vector3d>> matches;
    std::vector<double> dists;
    matches.reserve(source.size());
    dists.reserve(source.size());
    for (const auto& s : source) {
      const Eigen::Vector3d moved = transform.apply(s);
      const int j = tree.nearest(moved);
      matches.emplace_back(moved, target[j]);
      dists.push_back((target[j] - moved).norm());
    }

    std::vector<double> sorted = dists;
    std::nth_element(sorted.begin(), sorted.begin() + sorted.size() / 2, sorted.end());
    const double median = sorted[sorted.size() / 2];
    const double cutoff = config.trim_factor * std::max(median, 1e-12);

    Correspondences kept;
    for (std::size_t i = 0; i < matches.size(); ++i) {
      if (dists[i] <= cutoff) kept.pairs.push_back(matches[i]);
    }
    if (kept.pairs.size() < 3) {
      result.converged = false;
      break;
    }

    std::vector<double> all_sq(dists.size());
    for (std::size_t i = 0; i < dists.size(); ++i) all_sq[i] = dists[i] * dists[i];
    const double mean_residual =
        std::accumulate(dists.begin(), dists.end(), 0.0) / static_cast<double>(dists.size());
    result.rms_history.push_back(rms_of(all_sq));
    result.iterations = iter + 1;

    if (mean_residual < config.min_residual_delta ||
        std::abs(prev_mean - mean_residual) < config.min_residual_delta) {
      result.converged = true;
      break;
    }
    prev_mean = mean_residual;

    RegistrationResult step;
    try {
      step = arun_svd(kept);
    } catch (const DegenerateConfiguration&) {
      result.converged = false;
      break;
    }
    transform = compose(step.relative_pose_C, transform);
  }

  // Final residual after the last update.
  {
    std::vector<double> sq;
    sq.reserve(source.size());
    for (const auto& s : source) {
      const Eigen::Vector3d moved = transform.apply(s);
      const int j = tree.nearest(moved);
      sq.push_back((target[j] - moved).squaredNorm());
    }
    result.rms_residual = rms_of(sq);
  }

  result.relative_pose_C = transform;
  if (result.rms_residual > config.converged_rms) result.converged = false;
  return result;
}

Correspondences make_synthetic_correspondences(const Observation& source,
                                               const Observation& target,
                                               double noise_sigma,
                                               double outlier_fraction,
                                               RandomSource& rng) {
  if (source.point_ids.size() != source.points_C.size() ||
      target.point_ids.size() != target.points_C.size()) {
    throw std::invalid_argument(
        "make_synthetic_correspondences: observations lack point ids");
  }

  // Index target points by model id, then pair up the shared ids.
  std::vector<int> target_slot;
  {
    std::int32_t max_id = -1;
    for (auto id : source.point_ids) max_id = std::max(max_id, id);
    for (auto id : target.point_ids) max_id = std::max(max_id, id);
    target_slot.assign(static_cast<std::size_t>(max_id) + 1, -1);
    for (std::size_t j = 0; j < target.point_ids.size(); ++j) {
      target_slot[target.point_ids[j]] = static_cast<int>(j);
    }
  }

  Correspondences c;
  c.outlier_fraction = outlier_fraction;
  for (std::size_t i = 0; i < source.point_ids.size(); ++i) {
    const int j = target_slot[source.point_ids[i]];
    if (j < 0) continue;
    Eigen::Vector3d q = target.points_C[j];
    if (noise_sigma > 0.0) {
      q += Eigen::Vector3d(rng.gaussian(noise_sigma), rng.gaussian(noise_sigma),
                           rng.gaussian(noise_sigma));
    }
    c.pairs.emplace_back(source.points_C[i], q);
  }
  if (c.pairs.size() < 3) {
    throw DegenerateConfiguration("make_synthetic_correspondences: too few shared points");
  }

  // Contaminate: rewire a fraction of pairs to a random other target point.
  if (outlier_fraction > 0.0) {
    for (auto& [p, q] : c.pairs) {
      if (rng.uniform(0.0, 1.0) < outlier_fraction) {
        const std::size_t k = static_cast<std::size_t>(
            rng.uniform(0.0, static_cast<double>(target.points_C.size())));
        q = target.points_C[std::min(k, target.points_C.size() - 1)];
      }
    }
  }
  return c;
}

Pose baseline_corrective(const Observation& skill_obs, const Observation& deploy_obs,
                         const Pose& believed_extrinsics, const Pose& reference_eef,
                         BaselineMethod method, const BaselineConfig& config,
                         RandomSource& rng) {
  Pose rel_C;
  switch (method) {
    case BaselineMethod::icp: {
      const RegistrationResult reg =
          icp(deploy_obs.points_C, skill_obs.points_C, Pose::identity(), config.icp);
      rel_C = reg.relative_pose_C;
      break;
    }
    case BaselineMethod::svd: {
      const Correspondences c = make_synthetic_correspondences(
          deploy_obs, skill_obs, config.synthetic_noise_sigma,
          config.synthetic_outlier_fraction, rng);
      rel_C = arun_svd(c).relative_pose_C;
      break;
    }
  }
  const Pose e = compose(inverse(reference_eef), believed_extrinsics);
  return compose(e, rel_C, inverse(e));
}

}  // namespace graspadapt
