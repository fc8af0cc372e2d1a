#pragma once

#include <Eigen/Dense>
#include <Eigen/Geometry>
#include <array>
#include <string>
#include <vector>

namespace choreo {

inline constexpr int kNumJoints = 24;
inline constexpr int kPoseDim = 147;  // 3 root + 24*6 rotations

using Vec3 = Eigen::Vector3d;
using Vec6 = Eigen::Matrix<double, 6, 1>;
using Mat3 = Eigen::Matrix3d;

struct Skeleton {
  std::array<int, kNumJoints> parent_index{};
  std::array<Vec3, kNumJoints> rest_offsets{};
  int left_foot_index = 10;
  int right_foot_index = 11;

  // throws BadSkeleton unless parent[0] = -1, 0 <= parent[j] < j for j > 0
  // (parents precede children; the SMPL-24 table satisfies this), and the
  // root offset is zero
  void validate() const;

  static Skeleton default_smpl24();
  static Skeleton load(const std::string& json_path);
  void save(const std::string& json_path) const;
};

// frame layout: [root(3), joint0(6), ..., joint23(6)]
struct Pose {
  Vec3 root_translation = Vec3::Zero();
  Eigen::Matrix<double, kNumJoints, 6, Eigen::RowMajor> joint_rotations;

  Pose();  // identity rotations, zero root

  Eigen::Matrix<double, kPoseDim, 1> flatten() const;
  static Pose from_flat(const Eigen::Ref<const Eigen::VectorXd>& v);  // BadShape
};

struct MotionSequence {
  std::vector<Pose> frames;
  double fps = 30.0;

  int n_frames() const { return static_cast<int>(frames.size()); }
};

struct GroupSequence {
  std::vector<MotionSequence> dancers;

  int n_dancers() const { return static_cast<int>(dancers.size()); }
  int n_frames() const { return dancers.empty() ? 0 : dancers.front().n_frames(); }
  double fps() const { return dancers.empty() ? 30.0 : dancers.front().fps; }
};

// packed (dancer-major) group tensor: row i*T + t is dancer i, frame t
struct PackedGroup {
  Eigen::MatrixXd data;  // (n_dancers*n_frames) x 147
  int n_dancers = 0;
  int n_frames = 0;
  double fps = 30.0;

  int row(int dancer, int frame) const { return dancer * n_frames + frame; }
};

Mat3 rot6d_to_matrix(const Vec6& r);         // DegenerateRotation
Vec6 matrix_to_rot6d(const Mat3& R);         // NotARotation
Eigen::Quaterniond quaternion_slerp(const Eigen::Quaterniond& q0,
                                    const Eigen::Quaterniond& q1, double t);

Eigen::Matrix<double, kNumJoints, 3> forward_kinematics(const Pose& pose,
                                                        const Skeleton& skel);

// all frames at once; row t holds [p0.xyz, p1.xyz, ...] (72 columns)
Eigen::MatrixXd fk_positions(const MotionSequence& seq, const Skeleton& skel);

// per-joint mean squared velocity, (1/(T-1)) sum ||dp||^2 * fps^2
Eigen::VectorXd kinetic_features(const MotionSequence& seq, const Skeleton& skel);

// positions: T x 72 as produced by fk_positions; [t][0]=left, [t][1]=right
std::vector<std::array<bool, 2>> detect_foot_contacts(
    const Eigen::MatrixXd& positions, const Skeleton& skel,
    double height_thresh = 0.08, double speed_thresh = 0.15, double fps = 30.0);

PackedGroup pack_group(const GroupSequence& g);      // BadShape if misaligned
GroupSequence unpack_group(const PackedGroup& p);    // BadShape if cols != 147

// re-encodes every 6D block through Gram-Schmidt so rotations are exactly
// orthonormal; used on sampler outputs
void orthogonalize_rotations(PackedGroup& p);

namespace detail {

// Gram-Schmidt 6D decode. guard > 0 smooths the two normalizations
// (sqrt(x+guard^2)) and never fails; guard = 0 is exact and returns false on
// a degenerate input (norm < 1e-8). For inputs with O(1) norms both modes
// produce bitwise-identical results, which keeps the differentiable FK and
// the strict API in exact agreement on real data.
bool gram_schmidt_6d(const double* r6, double guard, Mat3& out);

// flat-frame FK over x[147]; out72 = positions. locals/globals, when given,
// receive 24 column-major 3x3 matrices (stride 9) for the adjoint pass.
bool fk_flat(const double* x, const Skeleton& skel, double guard, double* out72,
             double* locals = nullptr, double* globals = nullptr);

}  // namespace detail

}  // namespace choreo
