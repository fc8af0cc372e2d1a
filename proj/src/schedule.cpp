#include "choreo/schedule.hpp"

#include <cmath>
#include <numbers>

#include "choreo/errors.hpp"

namespace choreo {

NoiseSchedule build_cosine_schedule(int M, double s) {
  if (M < 1) throw BadSteps("schedule needs M >= 1");
  NoiseSchedule sched;
  sched.M = M;
  sched.beta.setZero(M + 1);
  sched.alpha.setOnes(M + 1);
  sched.alpha_bar.setOnes(M + 1);

  auto f = [&](double m) {
    const double x = ((m / M + s) / (1.0 + s)) * std::numbers::pi / 2.0;
    const double c = std::cos(x);
    return c * c;
  };
  const double f0 = f(0.0);
  double prev = 1.0;
  for (int m = 1; m <= M; ++m) {
    const double raw = f(static_cast<double>(m)) / f0;
    double beta = 1.0 - raw / prev;
    beta = std::min(beta, 0.999);
    sched.beta[m] = beta;
    sched.alpha[m] = 1.0 - beta;
    // alpha_bar rebuilt from the clipped betas so the product identity is exact
    sched.alpha_bar[m] = sched.alpha_bar[m - 1] * sched.alpha[m];
    prev = raw;
  }
  return sched;
}

Eigen::MatrixXd normal_matrix(Rng& rng, Eigen::Index rows, Eigen::Index cols) {
  Eigen::MatrixXd out(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) out(r, c) = rng.normal();
  return out;
}

Eigen::MatrixXd q_sample(const Eigen::MatrixXd& x0, int m,
                         const Eigen::MatrixXd& eps, const NoiseSchedule& sched) {
  if (m < 0 || m > sched.M) throw BadStep("q_sample step out of [0, M]");
  if (x0.rows() != eps.rows() || x0.cols() != eps.cols())
    throw ShapeMismatch("x0 and eps shapes differ");
  if (m == 0) return x0;
  const double ab = sched.alpha_bar[m];
  return std::sqrt(ab) * x0 + std::sqrt(1.0 - ab) * eps;
}

PosteriorCoeffs posterior_coeffs(int m, const NoiseSchedule& sched) {
  if (m < 1 || m > sched.M) throw BadStep("posterior step out of [1, M]");
  const double ab_prev = sched.alpha_bar[m - 1];
  const double ab = sched.alpha_bar[m];
  const double beta = sched.beta[m];
  const double alpha = sched.alpha[m];
  PosteriorCoeffs c;
  c.c0 = std::sqrt(ab_prev) * beta / (1.0 - ab);
  c.cm = std::sqrt(alpha) * (1.0 - ab_prev) / (1.0 - ab);
  c.beta_tilde = (1.0 - ab_prev) / (1.0 - ab) * beta;
  return c;
}

std::pair<Eigen::MatrixXd, double> posterior_mean_variance(
    const Eigen::MatrixXd& x0, const Eigen::MatrixXd& x_m, int m,
    const NoiseSchedule& sched) {
  if (x0.rows() != x_m.rows() || x0.cols() != x_m.cols())
    throw ShapeMismatch("x0 and x_m shapes differ");
  const PosteriorCoeffs c = posterior_coeffs(m, sched);
  return {c.c0 * x0 + c.cm * x_m, c.beta_tilde};
}

Eigen::MatrixXd reverse_step_ddpm(const Eigen::MatrixXd& x_m,
                                  const Eigen::MatrixXd& x0_hat, int m,
                                  const NoiseSchedule& sched,
                                  const GuidanceConfig& guidance, Rng& rng) {
  if (x_m.rows() != x0_hat.rows() || x_m.cols() != x0_hat.cols())
    throw ShapeMismatch("x_m and x0_hat shapes differ");
  auto [mean, beta_tilde] = posterior_mean_variance(x0_hat, x_m, m, sched);
  if (guidance.gamma != 0.0) {
    if (!guidance.encoder)
      throw MissingEncoder("guidance with gamma != 0 needs an encoder");
    mean += guidance.gamma * beta_tilde * guidance.encoder->score_gradient(x_m, m);
  }
  if (m == 1) return mean;
  return mean + std::sqrt(beta_tilde) * normal_matrix(rng, x_m.rows(), x_m.cols());
}

Eigen::MatrixXd reverse_step_ddim(const Eigen::MatrixXd& x_m,
                                  const Eigen::MatrixXd& x0_hat, int m,
                                  int m_prev, const NoiseSchedule& sched) {
  if (m < 1 || m > sched.M || m_prev < 0 || m_prev > m)
    throw BadStepPair("need 0 <= m_prev <= m <= M");
  if (x_m.rows() != x0_hat.rows() || x_m.cols() != x0_hat.cols())
    throw ShapeMismatch("x_m and x0_hat shapes differ");
  if (m_prev == m) return x_m;
  const double ab = sched.alpha_bar[m];
  const double ab_prev = sched.alpha_bar[m_prev];
  const Eigen::MatrixXd eps_hat = (x_m - std::sqrt(ab) * x0_hat) / std::sqrt(1.0 - ab);
  return std::sqrt(ab_prev) * x0_hat + std::sqrt(1.0 - ab_prev) * eps_hat;
}

std::vector<int> ddim_step_grid(int M, int n_steps) {
  if (M < 1 || n_steps < 1) throw BadSteps("grid needs M >= 1 and n_steps >= 1");
  std::vector<int> grid;
  if (n_steps == 1) {
    grid.push_back(M);
    return grid;
  }
  for (int i = 0; i < n_steps; ++i) {
    const int m = 1 + static_cast<int>(std::lround(
                          static_cast<double>(M - 1) * i / (n_steps - 1)));
    if (grid.empty() || grid.back() != m) grid.push_back(m);
  }
  if (grid.back() != M) grid.push_back(M);
  return grid;
}

}  // namespace choreo
