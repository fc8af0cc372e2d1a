#include <Eigen/Geometry>
#include <cmath>

#include "choreo/errors.hpp"
#include "choreo/motion.hpp"
#include "choreo/rng.hpp"
#include "doctest.h"

using namespace choreo;

namespace {

Eigen::Quaterniond random_unit_quaternion(Rng& rng) {
  Eigen::Quaterniond q(rng.normal(), rng.normal(), rng.normal(), rng.normal());
  q.normalize();
  return q;
}

// independent FK oracle: walk up the parent chain accumulating offsets
Vec3 chain_rest_position(const Skeleton& s, int j) {
  Vec3 p = Vec3::Zero();
  for (int k = j; k != -1; k = s.parent_index[k]) p += s.rest_offsets[k];
  return p;
}

}  // namespace

TEST_CASE("rot6d_to_matrix canonical and hand-derived cases") {
  Vec6 r;
  r << 1, 0, 0, 0, 1, 0;
  CHECK((rot6d_to_matrix(r) - Mat3::Identity()).norm() == 0.0);

  // Gram-Schmidt removes the projection of the second vector on the first
  r << 2, 0, 0, 1, 1, 0;
  CHECK((rot6d_to_matrix(r) - Mat3::Identity()).norm() < 1e-12);
}

TEST_CASE("rot6d round trip on random rotations") {
  Rng rng(11);
  for (int i = 0; i < 100; ++i) {
    const Mat3 R = random_unit_quaternion(rng).toRotationMatrix();
    const Mat3 back = rot6d_to_matrix(matrix_to_rot6d(R));
    CHECK((back - R).cwiseAbs().maxCoeff() < 1e-6);
    CHECK(std::abs(back.determinant() - 1.0) < 1e-9);
  }
}

TEST_CASE("rot6d degenerate inputs throw") {
  Vec6 r;
  r << 0, 0, 0, 0, 1, 0;
  CHECK_THROWS_AS(rot6d_to_matrix(r), DegenerateRotation);
  r << 1, 0, 0, 2, 0, 0;  // parallel
  CHECK_THROWS_AS(rot6d_to_matrix(r), DegenerateRotation);
  r << 1e-9, 0, 0, 0, 1, 0;
  CHECK_THROWS_AS(rot6d_to_matrix(r), DegenerateRotation);
}

TEST_CASE("matrix_to_rot6d columns and error check") {
  Vec6 id = matrix_to_rot6d(Mat3::Identity());
  Vec6 expect;
  expect << 1, 0, 0, 0, 1, 0;
  CHECK((id - expect).norm() == 0.0);

  const Mat3 Rz90 =
      Eigen::AngleAxisd(std::numbers::pi / 2, Vec3::UnitZ()).toRotationMatrix();
  const Vec6 r = matrix_to_rot6d(Rz90);
  Vec6 expect_z;
  expect_z << 0, 1, 0, -1, 0, 0;
  CHECK((r - expect_z).cwiseAbs().maxCoeff() < 1e-12);

  Mat3 bad = Mat3::Identity();
  bad(0, 0) = 1.5;
  CHECK_THROWS_AS(matrix_to_rot6d(bad), NotARotation);
}

TEST_CASE("quaternion slerp endpoints, half angle, antipodal flip") {
  Rng rng(5);
  const Eigen::Quaterniond q = random_unit_quaternion(rng);
  const Eigen::Quaterniond half = quaternion_slerp(q, q, 0.5);
  CHECK(std::abs(half.dot(q)) > 1.0 - 1e-12);

  const Eigen::Quaterniond id = Eigen::Quaterniond::Identity();
  const Eigen::Quaterniond z90(Eigen::AngleAxisd(std::numbers::pi / 2, Vec3::UnitZ()));
  const Eigen::Quaterniond mid = quaternion_slerp(id, z90, 0.5);
  const Eigen::AngleAxisd aa(mid);
  CHECK(std::abs(aa.angle() - std::numbers::pi / 4) < 1e-9);
  CHECK((aa.axis() - Vec3::UnitZ()).norm() < 1e-9);

  Eigen::Quaterniond neg;
  neg.coeffs() = -q.coeffs();
  for (double t : {0.0, 0.3, 0.7, 1.0}) {
    const Eigen::Quaterniond s = quaternion_slerp(q, neg, t);
    CHECK((s.coeffs() - q.coeffs()).cwiseAbs().maxCoeff() < 1e-12);
  }

  for (int i = 0; i < 50; ++i) {
    const Eigen::Quaterniond a = random_unit_quaternion(rng);
    const Eigen::Quaterniond b = random_unit_quaternion(rng);
    for (double t : {0.0, 0.25, 0.5, 0.75, 1.0}) {
      const Eigen::Quaterniond s = quaternion_slerp(a, b, t);
      CHECK(std::abs(s.norm() - 1.0) < 1e-6);
    }
    CHECK((quaternion_slerp(a, b, 0.0).coeffs() - a.coeffs()).cwiseAbs().maxCoeff() <
          1e-12);
  }
}

TEST_CASE("forward kinematics against the recursive rest-pose oracle") {
  const Skeleton skel = Skeleton::default_smpl24();
  Pose pose;  // identity rotations, zero root
  const auto pos = forward_kinematics(pose, skel);
  for (int j = 0; j < kNumJoints; ++j) {
    const Vec3 expect = chain_rest_position(skel, j);
    CHECK((pos.row(j).transpose() - expect).norm() < 1e-12);
  }

  // rigid translation
  pose.root_translation = Vec3(1, 2, 3);
  const auto shifted = forward_kinematics(pose, skel);
  for (int j = 0; j < kNumJoints; ++j)
    CHECK((shifted.row(j) - pos.row(j) - Eigen::RowVector3d(1, 2, 3)).norm() < 1e-12);

  // root rotation rotates every joint about the root
  Pose rotated;
  const Mat3 Rz = Eigen::AngleAxisd(std::numbers::pi / 2, Vec3::UnitZ()).toRotationMatrix();
  rotated.joint_rotations.row(0).head<3>() = Rz.col(0).transpose();
  rotated.joint_rotations.row(0).tail<3>() = Rz.col(1).transpose();
  const auto rot_pos = forward_kinematics(rotated, skel);
  for (int j = 0; j < kNumJoints; ++j) {
    const Vec3 expect = Rz * chain_rest_position(skel, j);
    CHECK((rot_pos.row(j).transpose() - expect).norm() < 1e-6);
  }
}

TEST_CASE("kinetic features: static, constant velocity, fps scaling, translation") {
  const Skeleton skel = Skeleton::default_smpl24();
  MotionSequence seq;
  seq.fps = 30.0;
  seq.frames.assign(10, Pose());
  CHECK(kinetic_features(seq, skel).norm() == 0.0);

  // root gliding at exactly 1 m/s
  for (int t = 0; t < 10; ++t)
    seq.frames[t].root_translation = Vec3(t / 30.0, 0, 0);
  const Eigen::VectorXd feat = kinetic_features(seq, skel);
  for (int j = 0; j < kNumJoints; ++j) CHECK(feat[j] == doctest::Approx(1.0).epsilon(1e-9));

  MotionSequence fast = seq;
  fast.fps = 60.0;
  const Eigen::VectorXd feat2 = kinetic_features(fast, skel);
  for (int j = 0; j < kNumJoints; ++j)
    CHECK(feat2[j] == doctest::Approx(4.0 * feat[j]).epsilon(1e-9));

  // invariance under global translation
  Rng rng(3);
  MotionSequence wavy;
  wavy.frames.resize(8);
  for (int t = 0; t < 8; ++t)
    wavy.frames[t].root_translation = Vec3(rng.normal(), rng.normal(), rng.normal());
  MotionSequence moved = wavy;
  for (auto& f : moved.frames) f.root_translation += Vec3(5, -2, 9);
  CHECK((kinetic_features(wavy, skel) - kinetic_features(moved, skel)).cwiseAbs().maxCoeff() <
        1e-9);

  MotionSequence tiny;
  tiny.frames.resize(1);
  CHECK_THROWS_AS(kinetic_features(tiny, skel), SequenceTooShort);
}

TEST_CASE("foot contact gating on height and speed") {
  const Skeleton skel = Skeleton::default_smpl24();
  const int T = 6;
  Eigen::MatrixXd pos = Eigen::MatrixXd::Zero(T, 72);

  // left foot pinned at height 0, right foot at 1 m
  for (int t = 0; t < T; ++t) pos(t, 3 * skel.right_foot_index + 1) = 1.0;
  auto contacts = detect_foot_contacts(pos, skel);
  for (int t = 0; t < T; ++t) {
    CHECK(contacts[t][0]);
    CHECK_FALSE(contacts[t][1]);
  }

  // low but fast foot fails the speed gate: 2 m/s at 30 fps
  for (int t = 0; t < T; ++t) pos(t, 3 * skel.left_foot_index) = t * 2.0 / 30.0;
  contacts = detect_foot_contacts(pos, skel, 0.08, 0.2, 30.0);
  for (int t = 0; t < T; ++t) CHECK_FALSE(contacts[t][0]);

  // last frame copies T-2
  Eigen::MatrixXd pos2 = Eigen::MatrixXd::Zero(2, 72);
  auto c2 = detect_foot_contacts(pos2, skel);
  CHECK(c2[1] == c2[0]);
}

TEST_CASE("pack/unpack round trip and shape errors") {
  Rng rng(17);
  GroupSequence g;
  g.dancers.resize(2);
  for (auto& d : g.dancers) {
    d.fps = 30.0;
    d.frames.resize(150);
    for (auto& f : d.frames) {
      f.root_translation = Vec3(rng.normal(), rng.normal(), rng.normal());
      for (int j = 0; j < kNumJoints; ++j) {
        const Mat3 R = random_unit_quaternion(rng).toRotationMatrix();
        f.joint_rotations.row(j).head<3>() = R.col(0).transpose();
        f.joint_rotations.row(j).tail<3>() = R.col(1).transpose();
      }
    }
  }
  const PackedGroup p = pack_group(g);
  CHECK(p.data.rows() == 300);
  CHECK(p.data.cols() == 147);
  const GroupSequence back = unpack_group(p);
  REQUIRE(back.n_dancers() == 2);
  for (int i = 0; i < 2; ++i)
    for (int t = 0; t < 150; ++t) {
      CHECK(back.dancers[i].frames[t].root_translation ==
            g.dancers[i].frames[t].root_translation);
      CHECK(back.dancers[i].frames[t].joint_rotations ==
            g.dancers[i].frames[t].joint_rotations);
    }

  PackedGroup bad = p;
  bad.data.resize(300, 146);
  CHECK_THROWS_AS(unpack_group(bad), BadShape);

  GroupSequence mismatched = g;
  mismatched.dancers[1].frames.pop_back();
  CHECK_THROWS_AS(pack_group(mismatched), BadShape);
}

TEST_CASE("skeleton file round trip matches the built-in default") {
  const Skeleton def = Skeleton::default_smpl24();
  const Skeleton loaded = Skeleton::load(CHOREO_SOURCE_DIR "/data/skeleton.json");
  CHECK(loaded.parent_index == def.parent_index);
  CHECK(loaded.left_foot_index == def.left_foot_index);
  CHECK(loaded.right_foot_index == def.right_foot_index);
  for (int j = 0; j < kNumJoints; ++j)
    CHECK((loaded.rest_offsets[j] - def.rest_offsets[j]).norm() == 0.0);

  Skeleton bad = def;
  bad.parent_index[3] = 7;  // parent after child
  CHECK_THROWS_AS(bad.validate(), BadSkeleton);
}
