#include "choreo/motion.hpp"

#include <cmath>
#include <fstream>

#include "choreo/errors.hpp"
#include "json.hpp"

namespace choreo {

namespace detail {

bool gram_schmidt_6d(const double* r6, double guard, Mat3& out) {
  Vec3 u(r6[0], r6[1], r6[2]);
  Vec3 v(r6[3], r6[4], r6[5]);
  const double g2 = guard * guard;
  const double nu = std::sqrt(u.squaredNorm() + g2);
  if (guard == 0.0 && nu < 1e-8) return false;
  const Vec3 a = u / nu;
  const Vec3 w = v - a.dot(v) * a;
  const double nw = std::sqrt(w.squaredNorm() + g2);
  if (guard == 0.0 && nw < 1e-8) return false;
  const Vec3 b = w / nw;
  out.col(0) = a;
  out.col(1) = b;
  out.col(2) = a.cross(b);
  return true;
}

bool fk_flat(const double* x, const Skeleton& skel, double guard, double* out72,
             double* locals, double* globals) {
  Mat3 L;
  Mat3 R[kNumJoints];
  Vec3 p[kNumJoints];
  for (int j = 0; j < kNumJoints; ++j) {
    if (!gram_schmidt_6d(x + 3 + 6 * j, guard, L)) return false;
    if (locals) Eigen::Map<Mat3>(locals + 9 * j) = L;
    const int par = skel.parent_index[j];
    if (par < 0) {
      p[j] = Vec3(x[0], x[1], x[2]);
      R[j] = L;
    } else {
      p[j] = p[par] + R[par] * skel.rest_offsets[j];
      R[j] = R[par] * L;
    }
    if (globals) Eigen::Map<Mat3>(globals + 9 * j) = R[j];
    out72[3 * j + 0] = p[j][0];
    out72[3 * j + 1] = p[j][1];
    out72[3 * j + 2] = p[j][2];
  }
  return true;
}

}  // namespace detail

void Skeleton::validate() const {
  if (parent_index[0] != -1) throw BadSkeleton("joint 0 must be the root");
  for (int j = 1; j < kNumJoints; ++j) {
    if (parent_index[j] < 0 || parent_index[j] >= j)
      throw BadSkeleton("parents must precede children (joint " +
                        std::to_string(j) + ")");
  }
  if (rest_offsets[0].norm() != 0.0) throw BadSkeleton("root offset must be zero");
  auto foot_ok = [](int i) { return i >= 0 && i < kNumJoints; };
  if (!foot_ok(left_foot_index) || !foot_ok(right_foot_index))
    throw BadSkeleton("foot indices out of range");
}

Skeleton Skeleton::default_smpl24() {
  Skeleton s;
  s.parent_index = {-1, 0, 0, 0, 1, 2, 3, 4,  5,  6,  7,  8,
                    9,  9, 9, 12, 13, 14, 16, 17, 18, 19, 20, 21};
  const double off[kNumJoints][3] = {
      {0, 0, 0},           {0.09, -0.05, 0},   {-0.09, -0.05, 0},
      {0, 0.11, 0},        {0, -0.38, 0},      {0, -0.38, 0},
      {0, 0.12, 0},        {0, -0.40, 0},      {0, -0.40, 0},
      {0, 0.06, 0},        {0, -0.06, 0.13},   {0, -0.06, 0.13},
      {0, 0.22, 0},        {0.07, 0.12, 0},    {-0.07, 0.12, 0},
      {0, 0.21, 0},        {0.09, 0.02, 0},    {-0.09, 0.02, 0},
      {0.26, 0, 0},        {-0.26, 0, 0},      {0.25, 0, 0},
      {-0.25, 0, 0},       {0.08, 0, 0},       {-0.08, 0, 0}};
  for (int j = 0; j < kNumJoints; ++j)
    s.rest_offsets[j] = Vec3(off[j][0], off[j][1], off[j][2]);
  s.left_foot_index = 10;
  s.right_foot_index = 11;
  s.validate();
  return s;
}

Skeleton Skeleton::load(const std::string& json_path) {
  std::ifstream in(json_path);
  if (!in) throw IoFailure("cannot open skeleton file: " + json_path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw BadSkeleton(std::string("skeleton json parse: ") + e.what());
  }
  Skeleton s;
  try {
    auto parents = j.at("parent_index").get<std::vector<int>>();
    auto offsets = j.at("rest_offsets").get<std::vector<std::vector<double>>>();
    if (parents.size() != kNumJoints || offsets.size() != kNumJoints)
      throw BadSkeleton("skeleton must have 24 joints");
    for (int i = 0; i < kNumJoints; ++i) {
      s.parent_index[i] = parents[i];
      if (offsets[i].size() != 3) throw BadSkeleton("offset must be a 3-vector");
      s.rest_offsets[i] = Vec3(offsets[i][0], offsets[i][1], offsets[i][2]);
    }
    s.left_foot_index = j.at("left_foot_index").get<int>();
    s.right_foot_index = j.at("right_foot_index").get<int>();
  } catch (const nlohmann::json::exception& e) {
    throw BadSkeleton(std::string("skeleton json fields: ") + e.what());
  }
  s.validate();
  return s;
}

void Skeleton::save(const std::string& json_path) const {
  nlohmann::json j;
  j["parent_index"] = parent_index;
  for (const auto& o : rest_offsets)
    j["rest_offsets"].push_back({o[0], o[1], o[2]});
  j["left_foot_index"] = left_foot_index;
  j["right_foot_index"] = right_foot_index;
  std::ofstream out(json_path);
  if (!out) throw IoFailure("cannot write skeleton file: " + json_path);
  out << j.dump(2) << "\n";
}

Pose::Pose() {
  for (int j = 0; j < kNumJoints; ++j) {
    joint_rotations.row(j) << 1, 0, 0, 0, 1, 0;
  }
}

Eigen::Matrix<double, kPoseDim, 1> Pose::flatten() const {
  Eigen::Matrix<double, kPoseDim, 1> v;
  v.head<3>() = root_translation;
  for (int j = 0; j < kNumJoints; ++j)
    v.segment<6>(3 + 6 * j) = joint_rotations.row(j).transpose();
  return v;
}

Pose Pose::from_flat(const Eigen::Ref<const Eigen::VectorXd>& v) {
  if (v.size() != kPoseDim)
    throw BadShape("pose vector must have 147 entries, got " +
                   std::to_string(v.size()));
  Pose p;
  p.root_translation = v.head<3>();
  for (int j = 0; j < kNumJoints; ++j)
    p.joint_rotations.row(j) = v.segment<6>(3 + 6 * j).transpose();
  return p;
}

Mat3 rot6d_to_matrix(const Vec6& r) {
  Mat3 R;
  if (!detail::gram_schmidt_6d(r.data(), 0.0, R))
    throw DegenerateRotation("6D rotation input is degenerate");
  return R;
}

Vec6 matrix_to_rot6d(const Mat3& R) {
  if (((R.transpose() * R) - Mat3::Identity()).cwiseAbs().maxCoeff() > 1e-4)
    throw NotARotation("matrix is not orthonormal within 1e-4");
  Vec6 r;
  r.head<3>() = R.col(0);
  r.tail<3>() = R.col(1);
  return r;
}

Eigen::Quaterniond quaternion_slerp(const Eigen::Quaterniond& q0,
                                    const Eigen::Quaterniond& q1, double t) {
  Eigen::Quaterniond b = q1;
  double dot = q0.dot(q1);
  if (dot < 0.0) {
    b.coeffs() = -b.coeffs();
    dot = -dot;
  }
  Eigen::Quaterniond out;
  if (dot > 1.0 - 1e-7) {
    out.coeffs() = (1.0 - t) * q0.coeffs() + t * b.coeffs();
  } else {
    const double theta = std::acos(std::min(dot, 1.0));
    const double s = std::sin(theta);
    out.coeffs() = (std::sin((1.0 - t) * theta) / s) * q0.coeffs() +
                   (std::sin(t * theta) / s) * b.coeffs();
  }
  out.normalize();
  return out;
}

Eigen::Matrix<double, kNumJoints, 3> forward_kinematics(const Pose& pose,
                                                        const Skeleton& skel) {
  const auto flat = pose.flatten();
  Eigen::Matrix<double, kNumJoints, 3, Eigen::RowMajor> out;
  if (!detail::fk_flat(flat.data(), skel, 0.0, out.data()))
    throw DegenerateRotation("pose contains a degenerate 6D rotation");
  return out;
}

Eigen::MatrixXd fk_positions(const MotionSequence& seq, const Skeleton& skel) {
  const int T = seq.n_frames();
  Eigen::MatrixXd out(T, 3 * kNumJoints);
  Eigen::Matrix<double, 1, 3 * kNumJoints> row;
  for (int t = 0; t < T; ++t) {
    const auto flat = seq.frames[t].flatten();
    if (!detail::fk_flat(flat.data(), skel, 0.0, row.data()))
      throw DegenerateRotation("frame " + std::to_string(t) +
                               " contains a degenerate 6D rotation");
    out.row(t) = row;
  }
  return out;
}

Eigen::VectorXd kinetic_features(const MotionSequence& seq, const Skeleton& skel) {
  const int T = seq.n_frames();
  if (T < 2) throw SequenceTooShort("kinetic features need T >= 2");
  const Eigen::MatrixXd pos = fk_positions(seq, skel);
  Eigen::VectorXd feat = Eigen::VectorXd::Zero(kNumJoints);
  for (int t = 0; t + 1 < T; ++t) {
    for (int j = 0; j < kNumJoints; ++j) {
      feat[j] += (pos.row(t + 1).segment<3>(3 * j) - pos.row(t).segment<3>(3 * j))
                     .squaredNorm();
    }
  }
  return feat * (seq.fps * seq.fps / (T - 1));
}

std::vector<std::array<bool, 2>> detect_foot_contacts(
    const Eigen::MatrixXd& positions, const Skeleton& skel,
    double height_thresh, double speed_thresh, double fps) {
  const int T = static_cast<int>(positions.rows());
  if (T < 2) throw SequenceTooShort("foot contacts need T >= 2");
  if (positions.cols() != 3 * kNumJoints)
    throw BadShape("positions must have 72 columns");
  const int feet[2] = {skel.left_foot_index, skel.right_foot_index};
  std::vector<std::array<bool, 2>> contacts(T);
  for (int t = 0; t + 1 < T; ++t) {
    for (int side = 0; side < 2; ++side) {
      const int j = feet[side];
      const double height = positions(t, 3 * j + 1);
      const double speed =
          (positions.row(t + 1).segment<3>(3 * j) - positions.row(t).segment<3>(3 * j))
              .norm() *
          fps;
      contacts[t][side] = height < height_thresh && speed < speed_thresh;
    }
  }
  contacts[T - 1] = contacts[T - 2];
  return contacts;
}

PackedGroup pack_group(const GroupSequence& g) {
  const int N = g.n_dancers();
  if (N < 1) throw BadShape("group must have at least one dancer");
  const int T = g.dancers[0].n_frames();
  const double fps = g.dancers[0].fps;
  if (T < 1) throw BadShape("sequences must have at least one frame");
  for (const auto& d : g.dancers) {
    if (d.n_frames() != T || d.fps != fps)
      throw BadShape("dancers must share frame count and fps");
  }
  PackedGroup p;
  p.n_dancers = N;
  p.n_frames = T;
  p.fps = fps;
  p.data.resize(N * T, kPoseDim);
  for (int i = 0; i < N; ++i)
    for (int t = 0; t < T; ++t)
      p.data.row(p.row(i, t)) = g.dancers[i].frames[t].flatten().transpose();
  return p;
}

GroupSequence unpack_group(const PackedGroup& p) {
  if (p.data.cols() != kPoseDim)
    throw BadShape("packed group must have 147 columns, got " +
                   std::to_string(p.data.cols()));
  if (p.n_dancers < 1 || p.n_frames < 1 ||
      p.data.rows() != static_cast<Eigen::Index>(p.n_dancers) * p.n_frames)
    throw BadShape("packed group row count does not match n_dancers*n_frames");
  GroupSequence g;
  g.dancers.resize(p.n_dancers);
  for (int i = 0; i < p.n_dancers; ++i) {
    g.dancers[i].fps = p.fps;
    g.dancers[i].frames.resize(p.n_frames);
    for (int t = 0; t < p.n_frames; ++t)
      g.dancers[i].frames[t] = Pose::from_flat(p.data.row(p.row(i, t)).transpose());
  }
  return g;
}

void orthogonalize_rotations(PackedGroup& p) {
  if (p.data.cols() != kPoseDim) throw BadShape("packed group must have 147 columns");
  Mat3 R;
  for (Eigen::Index r = 0; r < p.data.rows(); ++r) {
    for (int j = 0; j < kNumJoints; ++j) {
      const Vec6 b = p.data.row(r).segment<6>(3 + 6 * j).transpose();
      // guarded decode: sampler outputs may be arbitrarily scaled
      detail::gram_schmidt_6d(b.data(), 1e-9, R);
      p.data.row(r).segment<3>(3 + 6 * j) = R.col(0).transpose();
      p.data.row(r).segment<3>(6 + 6 * j) = R.col(1).transpose();
    }
  }
}

}  // namespace choreo
