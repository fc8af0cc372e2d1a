#include "choreo/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>

#include <nlohmann/json.hpp>

#include "choreo/errors.hpp"

namespace choreo {
namespace {

// Symmetric PSD square root.  Eigenvalues below the cutoff reject the whole
// computation; the band [cutoff, 0) is rounding debris and clips to zero.
// The cutoff scales with the spectral radius: eigensolver error grows with
// the matrix norm, so an absolute test would reject legitimate
// rank-deficient covariances of large-magnitude features.
Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& m, double tol) {
  const Eigen::MatrixXd sym = 0.5 * (m + m.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(sym);
  if (eig.info() != Eigen::Success)
    throw NumericalFailure("eigendecomposition did not converge");
  Eigen::VectorXd lam = eig.eigenvalues();
  const double cutoff = -tol * std::max(1.0, std::abs(lam[lam.size() - 1]));
  for (int i = 0; i < lam.size(); ++i) {
    if (lam[i] < cutoff)
      throw NumericalFailure("matrix has eigenvalue " + std::to_string(lam[i]) +
                             " below " + std::to_string(cutoff));
    lam[i] = std::sqrt(std::max(lam[i], 0.0));
  }
  return eig.eigenvectors() * lam.asDiagonal() * eig.eigenvectors().transpose();
}

Eigen::MatrixXd sample_covariance(const Eigen::MatrixXd& x) {
  const Eigen::RowVectorXd mu = x.colwise().mean();
  const Eigen::MatrixXd centered = x.rowwise() - mu;
  return centered.transpose() * centered / static_cast<double>(x.rows() - 1);
}

// Lag-0 Pearson correlation; either series constant -> 0 by convention.
double pearson(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  const Eigen::VectorXd ac = a.array() - a.mean();
  const Eigen::VectorXd bc = b.array() - b.mean();
  const double den = ac.norm() * bc.norm();
  if (den == 0.0) return 0.0;
  return ac.dot(bc) / den;
}

int group_frames(const GroupSequence& g) {
  if (g.n_dancers() < 2) throw TooFewDancers("need at least two dancers");
  const int T = g.dancers[0].n_frames();
  for (const auto& d : g.dancers)
    if (d.n_frames() != T)
      throw ShapeMismatch("dancers have mismatched frame counts");
  return T;
}

// Mean over frames of the 3-D root distance between two dancers.
double mean_root_distance(const MotionSequence& a, const MotionSequence& b) {
  const int T = a.n_frames();
  double acc = 0.0;
  for (int t = 0; t < T; ++t)
    acc += (a.frames[t].root_translation - b.frames[t].root_translation).norm();
  return acc / T;
}

}  // namespace

std::string MetricReport::to_json_string() const {
  nlohmann::json j;
  const std::pair<const char*, double> scalars[] = {
      {"fid", fid}, {"mmc", mmc}, {"gendiv", gendiv}, {"pfc", pfc},
      {"gmr", gmr}, {"gmc", gmc}, {"tif", tif}};
  for (const auto& [name, value] : scalars)
    if (!is_omitted(name)) j[name] = value;
  if (!is_omitted("motion_change")) j["motion_change"] = motion_change;
  if (!omitted.empty()) j["omitted"] = omitted;
  return j.dump(2);
}

double frechet_distance(const Eigen::MatrixXd& feats_a,
                        const Eigen::MatrixXd& feats_b) {
  if (feats_a.rows() < 2 || feats_b.rows() < 2)
    throw TooFewSamples("frechet distance needs at least 2 samples per set");
  if (feats_a.cols() != feats_b.cols())
    throw ShapeMismatch("feature dimensions differ");
  if (!feats_a.allFinite() || !feats_b.allFinite())
    throw NumericalFailure("non-finite feature values");

  const Eigen::RowVectorXd mu_a = feats_a.colwise().mean();
  const Eigen::RowVectorXd mu_b = feats_b.colwise().mean();
  const Eigen::MatrixXd cov_a = sample_covariance(feats_a);
  const Eigen::MatrixXd cov_b = sample_covariance(feats_b);

  constexpr double kEigTol = 1e-8;
  const Eigen::MatrixXd root_a = psd_sqrt(cov_a, kEigTol);
  // (Sa Sb)^{1/2} shares its trace with the symmetric Sa^{1/2} Sb Sa^{1/2}.
  const Eigen::MatrixXd prod = root_a * cov_b * root_a;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(
      Eigen::MatrixXd(0.5 * (prod + prod.transpose())));
  if (eig.info() != Eigen::Success)
    throw NumericalFailure("eigendecomposition did not converge");
  const Eigen::VectorXd& plam = eig.eigenvalues();
  // same scale-aware cutoff as psd_sqrt (eigenvalues ascend, last is largest)
  const double cutoff =
      -kEigTol * std::max(1.0, std::abs(plam[plam.size() - 1]));
  double tr_sqrt = 0.0;
  for (int i = 0; i < plam.size(); ++i) {
    if (plam[i] < cutoff)
      throw NumericalFailure("product matrix has eigenvalue " +
                             std::to_string(plam[i]) + " below " +
                             std::to_string(cutoff));
    tr_sqrt += std::sqrt(std::max(plam[i], 0.0));
  }

  const double d = (mu_a - mu_b).squaredNorm() + cov_a.trace() +
                   cov_b.trace() - 2.0 * tr_sqrt;
  if (!std::isfinite(d)) throw NumericalFailure("non-finite distance");
  return std::max(d, 0.0);
}

Eigen::VectorXd kinetic_velocity(const MotionSequence& seq,
                                 const Skeleton& skel) {
  const int T = seq.n_frames();
  if (T < 2) throw SequenceTooShort("kinetic velocity needs T >= 2");
  const Eigen::MatrixXd pos = fk_positions(seq, skel);
  Eigen::VectorXd v = Eigen::VectorXd::Zero(T - 1);
  for (int t = 0; t + 1 < T; ++t)
    for (int j = 0; j < kNumJoints; ++j)
      v[t] += (pos.row(t + 1).segment<3>(3 * j) - pos.row(t).segment<3>(3 * j))
                  .norm();
  return v * seq.fps;
}

double mmc_beat_alignment(const MotionSequence& motion, const Skeleton& skel,
                          const std::vector<int>& beat_frames,
                          double sigma_frames) {
  if (motion.n_frames() < 5)
    throw SequenceTooShort("beat alignment needs T >= 5");
  if (beat_frames.empty()) throw NoBeats("no music beats supplied");
  if (sigma_frames <= 0.0) throw BadConfig("sigma_frames must be positive");

  const Eigen::VectorXd v = kinetic_velocity(motion, skel);
  const int L = static_cast<int>(v.size());

  // centered width-5 moving average, truncated at the ends
  Eigen::VectorXd smooth(L);
  for (int t = 0; t < L; ++t) {
    const int lo = std::max(0, t - 2);
    const int hi = std::min(L - 1, t + 2);
    smooth[t] = v.segment(lo, hi - lo + 1).mean();
  }

  double acc = 0.0;
  int n_beats = 0;
  for (int t = 1; t + 1 < L; ++t) {
    if (!(smooth[t] < smooth[t - 1] && smooth[t] < smooth[t + 1])) continue;
    double best = std::numeric_limits<double>::infinity();
    for (int b : beat_frames) best = std::min(best, std::abs(double(t - b)));
    acc += std::exp(-best * best / (2.0 * sigma_frames * sigma_frames));
    ++n_beats;
  }
  return n_beats == 0 ? 0.0 : acc / n_beats;
}

double generation_diversity(const std::vector<MotionSequence>& motions,
                            const Skeleton& skel) {
  const int n = static_cast<int>(motions.size());
  if (n < 2) throw TooFewSamples("diversity needs at least 2 motions");
  std::vector<Eigen::VectorXd> feats(n);
  for (int i = 0; i < n; ++i) feats[i] = kinetic_features(motions[i], skel);
  double acc = 0.0;
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) acc += (feats[i] - feats[j]).norm();
  return acc / (0.5 * n * (n - 1));
}

double pfc(const MotionSequence& motion, const Skeleton& skel) {
  const int T = motion.n_frames();
  if (T < 3) throw SequenceTooShort("pfc needs T >= 3");
  const Eigen::MatrixXd pos = fk_positions(motion, skel);

  Eigen::MatrixXd com(T, 3);
  for (int t = 0; t < T; ++t) {
    Vec3 c = Vec3::Zero();
    for (int j = 0; j < kNumJoints; ++j) c += pos.row(t).segment<3>(3 * j);
    com.row(t) = c / kNumJoints;
  }

  const int lf = 3 * skel.left_foot_index;
  const int rf = 3 * skel.right_foot_index;
  double sum = 0.0;
  double max_acc = 0.0;
  for (int t = 1; t + 1 < T; ++t) {
    const double a =
        (com.row(t + 1) - 2.0 * com.row(t) + com.row(t - 1)).norm();
    const double vl = (pos.row(t + 1).segment<3>(lf) - pos.row(t).segment<3>(lf)).norm();
    const double vr = (pos.row(t + 1).segment<3>(rf) - pos.row(t).segment<3>(rf)).norm();
    sum += a * vl * vr;
    max_acc = std::max(max_acc, a);
  }
  return sum / (T * max_acc + 1e-8);
}

double gmc(const GroupSequence& group, const Skeleton& skel) {
  const int T = group_frames(group);
  if (T < 2) throw SequenceTooShort("gmc needs T >= 2");
  const int n = group.n_dancers();
  std::vector<Eigen::VectorXd> vel(n);
  for (int i = 0; i < n; ++i) vel[i] = kinetic_velocity(group.dancers[i], skel);
  double acc = 0.0;
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) acc += pearson(vel[i], vel[j]);
  return 100.0 * acc / (0.5 * n * (n - 1));
}

double tif(const GroupSequence& group, double collision_radius) {
  if (collision_radius <= 0.0) throw BadConfig("collision radius must be positive");
  const int T = group_frames(group);
  if (T < 1) throw SequenceTooShort("tif needs T >= 1");
  const int n = group.n_dancers();
  const double thresh = 2.0 * collision_radius;
  int hits = 0;
  for (int t = 0; t < T; ++t) {
    bool collide = false;
    for (int i = 0; i < n && !collide; ++i) {
      const Vec3& a = group.dancers[i].frames[t].root_translation;
      for (int j = i + 1; j < n; ++j) {
        const Vec3& b = group.dancers[j].frames[t].root_translation;
        const double dx = a[0] - b[0];
        const double dz = a[2] - b[2];
        if (std::sqrt(dx * dx + dz * dz) < thresh) {
          collide = true;
          break;
        }
      }
    }
    if (collide) ++hits;
  }
  return static_cast<double>(hits) / T;
}

Eigen::VectorXd gmr_group_feature(const GroupSequence& group,
                                  const Skeleton& skel) {
  group_frames(group);
  const int n = group.n_dancers();

  Eigen::MatrixXd kin(n, kNumJoints);
  for (int i = 0; i < n; ++i)
    kin.row(i) = kinetic_features(group.dancers[i], skel).transpose();
  const Eigen::RowVectorXd mean = kin.colwise().mean();
  // population std (N in the denominator) so a two-dancer group is fine
  const Eigen::RowVectorXd var =
      (kin.rowwise() - mean).array().square().colwise().mean();

  double dist_sum = 0.0;
  double dist_min = std::numeric_limits<double>::infinity();
  double dist_max = 0.0;
  int n_pairs = 0;
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) {
      const double d = mean_root_distance(group.dancers[i], group.dancers[j]);
      dist_sum += d;
      dist_min = std::min(dist_min, d);
      dist_max = std::max(dist_max, d);
      ++n_pairs;
    }

  Eigen::VectorXd feat(2 * kNumJoints + 3);
  feat.segment(0, kNumJoints) = mean.transpose();
  feat.segment(kNumJoints, kNumJoints) = var.array().sqrt().matrix().transpose();
  feat[2 * kNumJoints] = dist_sum / n_pairs;
  feat[2 * kNumJoints + 1] = dist_min;
  feat[2 * kNumJoints + 2] = dist_max;
  return feat;
}

double gmr(const std::vector<GroupSequence>& groups_a,
           const std::vector<GroupSequence>& groups_b, const Skeleton& skel) {
  if (groups_a.size() < 2 || groups_b.size() < 2)
    throw TooFewSamples("gmr needs at least 2 groups per set");
  const int dim = 2 * kNumJoints + 3;
  Eigen::MatrixXd fa(groups_a.size(), dim), fb(groups_b.size(), dim);
  for (size_t i = 0; i < groups_a.size(); ++i)
    fa.row(i) = gmr_group_feature(groups_a[i], skel).transpose();
  for (size_t i = 0; i < groups_b.size(); ++i)
    fb.row(i) = gmr_group_feature(groups_b[i], skel).transpose();
  return frechet_distance(fa, fb);
}

std::vector<double> motion_change_curve(const GroupSequence& group,
                                        int window_frames,
                                        const Skeleton& skel) {
  if (window_frames < 2) throw BadConfig("window_frames must be >= 2");
  if (group.n_dancers() < 1) throw TooFewDancers("empty group");
  const int T = group.dancers[0].n_frames();
  for (const auto& d : group.dancers)
    if (d.n_frames() != T)
      throw ShapeMismatch("dancers have mismatched frame counts");
  if (T < window_frames + 1)
    throw SequenceTooShort("need T >= window_frames + 1");

  const int n = group.n_dancers();
  const int n_windows = T - window_frames + 1;

  std::vector<double> curve(T - window_frames, 0.0);
  for (int i = 0; i < n; ++i) {
    const MotionSequence& seq = group.dancers[i];
    const Eigen::MatrixXd pos = fk_positions(seq, skel);
    // per-step squared displacement, per joint
    Eigen::MatrixXd step(T - 1, kNumJoints);
    for (int t = 0; t + 1 < T; ++t)
      for (int j = 0; j < kNumJoints; ++j)
        step(t, j) = (pos.row(t + 1).segment<3>(3 * j) -
                      pos.row(t).segment<3>(3 * j))
                         .squaredNorm();

    // same accumulation order and scale expression as kinetic_features, so
    // a window here is bitwise equal to kinetic_features of the sliced range
    const double scale = seq.fps * seq.fps / (window_frames - 1);
    Eigen::MatrixXd feat(n_windows, kNumJoints);
    for (int w = 0; w < n_windows; ++w) {
      Eigen::RowVectorXd acc = Eigen::RowVectorXd::Zero(kNumJoints);
      for (int t = w; t < w + window_frames - 1; ++t) acc += step.row(t);
      feat.row(w) = acc * scale;
    }
    for (size_t t = 0; t < curve.size(); ++t)
      curve[t] += (feat.row(static_cast<int>(t) + 1) -
                   feat.row(static_cast<int>(t)))
                      .norm();
  }
  for (auto& c : curve) c /= n;
  return curve;
}

void write_motion_change_csv(const std::string& path,
                             const std::vector<double>& series) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoFailure("cannot write csv: " + path);
  out << "frame,motion_change\n";
  char buf[64];
  for (size_t t = 0; t < series.size(); ++t) {
    std::snprintf(buf, sizeof(buf), "%zu,%.17g\n", t, series[t]);
    out << buf;
  }
  out.flush();
  if (!out) throw IoFailure("write failed: " + path);
}

}  // namespace choreo
