#pragma once

#include <Eigen/Dense>
#include <utility>
#include <vector>

#include "choreo/rng.hpp"

namespace choreo {

// arrays are indexed 1..M; index 0 holds the conventional extensions
// beta_0 = 0, alpha_0 = 1, alpha_bar_0 = 1
struct NoiseSchedule {
  int M = 0;
  Eigen::VectorXd beta;
  Eigen::VectorXd alpha;
  Eigen::VectorXd alpha_bar;
};

NoiseSchedule build_cosine_schedule(int M, double s = 0.008);  // BadSteps

// fills in row-major element order so draws are layout-independent
Eigen::MatrixXd normal_matrix(Rng& rng, Eigen::Index rows, Eigen::Index cols);

// m in [0, M]; m = 0 returns x0 exactly
Eigen::MatrixXd q_sample(const Eigen::MatrixXd& x0, int m,
                         const Eigen::MatrixXd& eps, const NoiseSchedule& sched);

// unit-step posterior q(x_{m-1} | x_m, x0): mean = c0*x0 + cm*x_m,
// variance beta_tilde (scalar, isotropic)
struct PosteriorCoeffs {
  double c0 = 0.0;
  double cm = 0.0;
  double beta_tilde = 0.0;
};
PosteriorCoeffs posterior_coeffs(int m, const NoiseSchedule& sched);  // BadStep

std::pair<Eigen::MatrixXd, double> posterior_mean_variance(
    const Eigen::MatrixXd& x0, const Eigen::MatrixXd& x_m, int m,
    const NoiseSchedule& sched);

// gradient of the log consistency score at (x_m, m); implemented by the
// contrastive encoder
struct GuidanceEncoder {
  virtual ~GuidanceEncoder() = default;
  virtual Eigen::MatrixXd score_gradient(const Eigen::MatrixXd& x_m, int m) const = 0;
};

struct GuidanceConfig {
  double gamma = 0.0;
  const GuidanceEncoder* encoder = nullptr;
};

// one ancestral step; guided mean shift gamma * beta_tilde * grad; m = 1 is
// deterministic (zero posterior variance). rng is consumed only when m > 1.
Eigen::MatrixXd reverse_step_ddpm(const Eigen::MatrixXd& x_m,
                                  const Eigen::MatrixXd& x0_hat, int m,
                                  const NoiseSchedule& sched,
                                  const GuidanceConfig& guidance, Rng& rng);

// deterministic (eta = 0) step m -> m_prev; m_prev = m returns x_m unchanged
Eigen::MatrixXd reverse_step_ddim(const Eigen::MatrixXd& x_m,
                                  const Eigen::MatrixXd& x0_hat, int m,
                                  int m_prev, const NoiseSchedule& sched);

// uniform grid over [1, M], ascending, deduplicated, last element = M;
// the sampler walks it in reverse and finishes with grid[0] -> 0
std::vector<int> ddim_step_grid(int M, int n_steps);  // BadSteps

}  // namespace choreo
