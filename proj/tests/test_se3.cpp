#include <cmath>

#include "doctest.h"
#include "graspadapt/errors.hpp"
#include "graspadapt/se3.hpp"
#include "test_helpers.hpp"

using namespace graspadapt;
using graspadapt::testing::matrix_compose;
using graspadapt::testing::matrix_delta;
using graspadapt::testing::random_pose;

TEST_CASE("compose: identity and inverse cases") {
  RandomSource rng(7);
  const Pose p = random_pose(rng);

  const Pose left = compose(Pose::identity(), p);
  CHECK(error_between(left, p).position_mm < 1e-9);
  CHECK(error_between(left, p).orientation_deg < 1e-9);

  const PoseError round = error_between(compose(p, inverse(p)), Pose::identity());
  CHECK(round.position_mm / 1000.0 < kComposeTol * 10);
  CHECK(round.orientation_deg * M_PI / 180.0 < 1e-10);
}

TEST_CASE("compose: hand-computed example checked against the matrix oracle") {
  const Pose a(Eigen::Quaterniond(Eigen::AngleAxisd(M_PI / 2, Eigen::Vector3d::UnitZ())),
               {1.0, 0.0, 0.0});
  const Pose b = Pose::from_translation({1.0, 0.0, 0.0});
  const Pose c = compose(a, b);

  // 90 deg about z maps +x to +y, so the second translation lands on +y.
  CHECK(c.translation.isApprox(Eigen::Vector3d(1.0, 1.0, 0.0), 1e-12));
  CHECK(c.rotation.angularDistance(a.rotation) < 1e-12);
  CHECK(matrix_delta(c, matrix_compose(a, b)) < 1e-12);
}

TEST_CASE("compose agrees with 4x4 matrix products on random pairs") {
  RandomSource rng(11);
  for (int i = 0; i < 200; ++i) {
    const Pose a = random_pose(rng);
    const Pose b = random_pose(rng);
    CHECK(matrix_delta(compose(a, b), matrix_compose(a, b)) < 1e-12);
  }
}

TEST_CASE("compose is associative within tolerance") {
  RandomSource rng(13);
  for (int i = 0; i < 200; ++i) {
    const Pose a = random_pose(rng);
    const Pose b = random_pose(rng);
    const Pose c = random_pose(rng);
    const Pose left = compose(compose(a, b), c);
    const Pose right = compose(a, compose(b, c));
    CHECK(error_between(left, right).position_mm / 1000.0 < kTestTol);
    CHECK(error_between(left, right).orientation_deg * M_PI / 180.0 < kTestTol);
  }
}

TEST_CASE("inverse: trivial cases and involution") {
  CHECK(error_between(inverse(Pose::identity()), Pose::identity()).position_mm == 0.0);

  const Pose t = Pose::from_translation({0.0, 0.0, 1.0});
  CHECK(inverse(t).translation.isApprox(Eigen::Vector3d(0.0, 0.0, -1.0), 1e-15));

  RandomSource rng(17);
  for (int i = 0; i < 100; ++i) {
    const Pose p = random_pose(rng);
    const PoseError e = error_between(inverse(inverse(p)), p);
    CHECK(e.position_mm / 1000.0 < kComposeTol * 10);
    CHECK(e.orientation_deg * M_PI / 180.0 < 1e-10);
  }
}

TEST_CASE("error_between: exact values") {
  RandomSource rng(19);
  const Pose p = random_pose(rng);
  const PoseError zero = error_between(p, p);
  CHECK(zero.position_mm == 0.0);
  CHECK(zero.orientation_deg < 1e-9);

  // 3-4-5 triangle in millimeters.
  Pose q = p;
  q.translation += Eigen::Vector3d(0.003, 0.004, 0.0);
  CHECK(error_between(p, q).position_mm == doctest::Approx(5.0).epsilon(1e-12));
  CHECK(error_between(p, q).orientation_deg < 1e-9);

  const Pose r = compose(p, Pose::from_axis_angle(Eigen::Vector3d::UnitX(), 10.0));
  CHECK(error_between(p, r).orientation_deg == doctest::Approx(10.0).epsilon(1e-9));
  CHECK(error_between(p, r).position_mm < 1e-9);
}

TEST_CASE("error_between is symmetric and handles the quaternion double cover") {
  RandomSource rng(23);
  for (int i = 0; i < 50; ++i) {
    const Pose a = random_pose(rng);
    const Pose b = random_pose(rng);
    const PoseError ab = error_between(a, b);
    const PoseError ba = error_between(b, a);
    CHECK(ab.position_mm == doctest::Approx(ba.position_mm).epsilon(1e-12));
    CHECK(ab.orientation_deg == doctest::Approx(ba.orientation_deg).epsilon(1e-9));
    CHECK(ab.orientation_deg >= 0.0);
    CHECK(ab.orientation_deg <= 180.0);

    Pose negated = a;
    negated.rotation.coeffs() *= -1.0;
    const PoseError flip = error_between(a, negated);
    CHECK(flip.position_mm == 0.0);
    CHECK(flip.orientation_deg < 1e-9);
  }
}

TEST_CASE("sample_displacement: degenerate range and determinism") {
  RandomSource rng(29);
  const SampleRange zero(0.0, 0.0);
  const Pose p = sample_displacement(zero, rng);
  CHECK(error_between(p, Pose::identity()).position_mm == 0.0);
  CHECK(error_between(p, Pose::identity()).orientation_deg < 1e-12);

  const SampleRange range(0.30, 60.0);
  RandomSource a(42), b(42);
  for (int i = 0; i < 20; ++i) {
    const Pose pa = sample_displacement(range, a);
    const Pose pb = sample_displacement(range, b);
    CHECK(pa.translation == pb.translation);
    CHECK(pa.rotation.coeffs() == pb.rotation.coeffs());
  }
}

TEST_CASE("sample_displacement: empirical translation means vanish") {
  const SampleRange range(0.30, 60.0);
  RandomSource rng(101);
  Eigen::Vector3d mean = Eigen::Vector3d::Zero();
  const int n = 10000;
  for (int i = 0; i < n; ++i) mean += sample_displacement(range, rng).translation;
  mean /= n;
  CHECK(mean.cwiseAbs().maxCoeff() < 0.005);  // within 5 mm of zero
}

TEST_CASE("sample_displacement stays inside its range and factors back") {
  const SampleRange range(0.25, 45.0);
  RandomSource rng(31);
  for (int i = 0; i < 500; ++i) {
    const Pose p = sample_displacement(range, rng);
    CHECK(p.translation.cwiseAbs().maxCoeff() <= range.position_halfwidth + 1e-12);
    const Eigen::Vector3d angles = euler_xyz_degrees(p);
    CHECK(angles.cwiseAbs().maxCoeff() <= range.orientation_halfwidth + 1e-9);
  }
}

TEST_CASE("euler_xyz_degrees inverts the per-axis rotation composition") {
  RandomSource rng(37);
  for (int i = 0; i < 200; ++i) {
    const double ax = rng.uniform(-80.0, 80.0);
    const double ay = rng.uniform(-80.0, 80.0);
    const double az = rng.uniform(-80.0, 80.0);
    const Eigen::Quaterniond q =
        Eigen::AngleAxisd(ax * M_PI / 180.0, Eigen::Vector3d::UnitX()) *
        Eigen::AngleAxisd(ay * M_PI / 180.0, Eigen::Vector3d::UnitY()) *
        Eigen::AngleAxisd(az * M_PI / 180.0, Eigen::Vector3d::UnitZ());
    const Eigen::Vector3d rec = euler_xyz_degrees(Pose(q, Eigen::Vector3d::Zero()));
    CHECK(rec.x() == doctest::Approx(ax).epsilon(1e-9));
    CHECK(rec.y() == doctest::Approx(ay).epsilon(1e-9));
    CHECK(rec.z() == doctest::Approx(az).epsilon(1e-9));
  }
}

TEST_CASE("scale_toward_identity scales translation and angle linearly") {
  const Pose p(Eigen::Quaterniond(Eigen::AngleAxisd(0.8, Eigen::Vector3d::UnitY())),
               {0.2, -0.1, 0.05});
  const Pose half = scale_toward_identity(p, 0.5);
  CHECK(half.translation.isApprox(0.5 * p.translation, 1e-12));
  CHECK(half.rotation.angularDistance(Eigen::Quaterniond::Identity()) ==
        doctest::Approx(0.4).epsilon(1e-12));

  const Pose full = scale_toward_identity(p, 1.0);
  CHECK(error_between(full, p).position_mm < 1e-9);
  CHECK(error_between(full, p).orientation_deg < 1e-9);

  const Pose none = scale_toward_identity(p, 0.0);
  CHECK(error_between(none, Pose::identity()).position_mm < 1e-9);
  CHECK(error_between(none, Pose::identity()).orientation_deg < 1e-9);
}

TEST_CASE("pose JSON round-trip and validation") {
  RandomSource rng(41);
  for (int i = 0; i < 20; ++i) {
    const Pose p = random_pose(rng);
    const Pose q = pose_from_json(pose_to_json(p));
    CHECK(q.translation == p.translation);
    CHECK(q.rotation.angularDistance(p.rotation) < 1e-15);
  }

  nlohmann::json bad{{"t", {0.0, 0.0, 0.0}}, {"q", {1.0, 0.1, 0.0, 0.0}}};
  CHECK_THROWS_AS(pose_from_json(bad), FormatError);
}

TEST_CASE("RandomSource forks are independent of parent draw state") {
  RandomSource a(5);
  RandomSource b(5);
  (void)a.uniform(0.0, 1.0);  // advance one parent, not the other
  RandomSource fa = a.fork(3);
  RandomSource fb = b.fork(3);
  for (int i = 0; i < 10; ++i) {
    CHECK(fa.uniform(0.0, 1.0) == fb.uniform(0.0, 1.0));
  }
}
