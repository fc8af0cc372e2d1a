#pragma once

#include <Eigen/Dense>
#include <map>
#include <string>
#include <vector>

#include "choreo/motion.hpp"

namespace choreo {

// Scores from one evaluation run.  A metric that could not be computed
// (no audio for mmc, single-dancer groups for gmc/tif, too few groups for
// gmr, ...) is recorded in `omitted` with a reason; its value field is then
// meaningless, the JSON drops the key entirely and lists the reason under
// "omitted".
struct MetricReport {
  double fid = 0.0;
  double mmc = 0.0;
  double gendiv = 0.0;
  double pfc = 0.0;
  double gmr = 0.0;
  double gmc = 0.0;
  double tif = 0.0;
  std::vector<double> motion_change;
  std::map<std::string, std::string> omitted;

  bool is_omitted(const std::string& name) const {
    return omitted.count(name) > 0;
  }
  std::string to_json_string() const;
};

// Frechet distance between two Gaussians fit to the rows of feats_a/feats_b:
// |mu_a - mu_b|^2 + tr(Sa + Sb - 2 (Sa Sb)^{1/2}).  Covariances use the
// unbiased (n-1) normalizer.  The matrix square root comes from an
// eigendecomposition of the symmetrized product; eigenvalues below -1e-8 are
// rejected as NumericalFailure, small negatives are clipped to zero, and the
// final value is clipped at zero so rounding cannot make it negative.
// Throws TooFewSamples (fewer than 2 rows on either side), ShapeMismatch
// (column counts differ), NumericalFailure (non-finite input or failed
// eigensolve).
double frechet_distance(const Eigen::MatrixXd& feats_a,
                        const Eigen::MatrixXd& feats_b);

// Per-frame kinetic velocity: sum over joints of ||p_j(t+1) - p_j(t)|| * fps,
// length T-1.  Index t corresponds to the step from frame t to t+1.
// Throws SequenceTooShort for T < 2.
Eigen::VectorXd kinetic_velocity(const MotionSequence& seq,
                                 const Skeleton& skel);

// Beat alignment in [0, 1].  Motion beats are the strict local minima of the
// kinetic velocity after a centered moving average of width 5 (truncated at
// the ends); each contributes exp(-d^2 / (2 sigma^2)) where d is the distance
// in frames to the nearest music beat.  No motion beats -> 0.
// Throws SequenceTooShort (T < 5), NoBeats (beat_frames empty), BadConfig
// (sigma_frames <= 0).
double mmc_beat_alignment(const MotionSequence& motion, const Skeleton& skel,
                          const std::vector<int>& beat_frames,
                          double sigma_frames = 3.0);

// Mean pairwise L2 distance between kinetic_features vectors.
// Throws TooFewSamples for fewer than 2 motions.
double generation_diversity(const std::vector<MotionSequence>& motions,
                            const Skeleton& skel);

// Physical foot contact score, >= 0.  s_t = |a_COM(t)| * |v_lfoot(t)| *
// |v_rfoot(t)| with the center of mass taken as the mean of all FK joint
// positions; the sum of s_t is normalized by (T * max_t |a_COM(t)| + 1e-8).
// Accelerations are central differences and velocities forward differences,
// both in meters per frame (no fps factor; it cancels against the
// normalizer up to the residual foot-speed scale, which is documented as
// artifact-local).  Throws SequenceTooShort for T < 3.
double pfc(const MotionSequence& motion, const Skeleton& skel);

// Group movement correlation in [-100, 100]: mean over unordered dancer
// pairs of the lag-0 Pearson correlation between kinetic velocity series,
// times 100.  A pair where either series has zero variance contributes 0.
// Throws TooFewDancers (N < 2), SequenceTooShort (T < 2).
double gmc(const GroupSequence& group, const Skeleton& skel);

// Trajectory intersection frequency in [0, 1]: the fraction of frames where
// some pair of dancers has horizontal (x, z) root distance below
// 2 * collision_radius.  Throws TooFewDancers (N < 2), ShapeMismatch
// (dancers with different frame counts), BadConfig (radius <= 0).
double tif(const GroupSequence& group, double collision_radius = 0.25);

// 51-dim group descriptor: mean (24) and population std (24) of the dancers'
// kinetic features, then [mean, min, max] (3) over dancer pairs of the
// time-averaged 3-D root distance.  Throws TooFewDancers (N < 2).
Eigen::VectorXd gmr_group_feature(const GroupSequence& group,
                                  const Skeleton& skel);

// Frechet distance between the gmr_group_feature sets of two collections.
// Throws TooFewSamples for fewer than 2 groups on either side, plus
// anything gmr_group_feature or frechet_distance throws.
double gmr(const std::vector<GroupSequence>& groups_a,
           const std::vector<GroupSequence>& groups_b, const Skeleton& skel);

// Windowed motion change: K_i(t) = kinetic_features of dancer i over frames
// [t, t + window_frames); curve[t] = mean over dancers of
// ||K_i(t+1) - K_i(t)||.  Length T - window_frames.
// Throws BadConfig (window_frames < 2), SequenceTooShort (T < window + 1).
std::vector<double> motion_change_curve(const GroupSequence& group,
                                        int window_frames,
                                        const Skeleton& skel);

// Two-column CSV "frame,motion_change" with full-precision values.
// Throws IoFailure.
void write_motion_change_csv(const std::string& path,
                             const std::vector<double>& series);

}  // namespace choreo
