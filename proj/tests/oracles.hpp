#pragma once

// Test-only oracles, independent of the library's implementation paths:
// quadrature, Kolmogorov-Smirnov, a plain-Eigen log-domain Sinkhorn, and a
// brute-force sequential importance sampler for linear-Gaussian models.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "dpf/rng.hpp"

namespace oracles {

// Integral of exp(log_density) over [-lim, lim]^2 on a regular grid.
inline double grid_quadrature_2d(
    const std::function<Eigen::VectorXd(const Eigen::MatrixXd&)>& log_density, double lim,
    double step) {
  const Eigen::Index n = static_cast<Eigen::Index>(std::round(2 * lim / step)) + 1;
  double integral = 0.0;
  Eigen::MatrixXd pts(n, 2);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      pts(j, 0) = -lim + static_cast<double>(i) * step;
      pts(j, 1) = -lim + static_cast<double>(j) * step;
    }
    integral += log_density(pts).array().exp().sum() * step * step;
  }
  return integral;
}

inline double grid_quadrature_1d(
    const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& log_density, double lim,
    double step) {
  const Eigen::Index n = static_cast<Eigen::Index>(std::round(2 * lim / step)) + 1;
  Eigen::VectorXd pts(n);
  for (Eigen::Index i = 0; i < n; ++i) pts[i] = -lim + static_cast<double>(i) * step;
  return log_density(pts).array().exp().sum() * step;
}

// Asymptotic Kolmogorov distribution Q(x) = 2 sum (-1)^{k-1} exp(-2 k^2 x^2).
inline double kolmogorov_pvalue(double d_stat, Eigen::Index n) {
  const double x = d_stat * (std::sqrt(static_cast<double>(n)) + 0.12 +
                             0.11 / std::sqrt(static_cast<double>(n)));
  double p = 0.0;
  for (int k = 1; k <= 100; ++k)
    p += 2.0 * (k % 2 == 1 ? 1.0 : -1.0) * std::exp(-2.0 * k * k * x * x);
  return std::clamp(p, 0.0, 1.0);
}

// One-sample KS statistic against a given CDF.
inline double ks_statistic(std::vector<double> samples,
                           const std::function<double(double)>& cdf) {
  std::sort(samples.begin(), samples.end());
  const double n = static_cast<double>(samples.size());
  double d = 0.0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const double F = cdf(samples[i]);
    d = std::max(d, std::abs(F - static_cast<double>(i) / n));
    d = std::max(d, std::abs(static_cast<double>(i + 1) / n - F));
  }
  return d;
}

inline double normal_cdf(double x, double mean, double std) {
  return 0.5 * std::erfc(-(x - mean) / (std * std::sqrt(2.0)));
}

// Log-domain Sinkhorn between (a, C) and uniform b, written directly against
// Eigen; returns the transport plan.
inline Eigen::MatrixXd sinkhorn_plan(const Eigen::MatrixXd& C, const Eigen::VectorXd& a,
                                     double eps, int max_iter, double tol) {
  const Eigen::Index n = C.rows();
  const Eigen::VectorXd log_a = a.array().log();
  const double log_b = -std::log(static_cast<double>(n));
  Eigen::VectorXd f = Eigen::VectorXd::Zero(n), g = Eigen::VectorXd::Zero(n);
  auto lse = [](const Eigen::ArrayXd& v) {
    const double m = v.maxCoeff();
    return m + std::log((v - m).exp().sum());
  };
  for (int it = 0; it < max_iter; ++it) {
    for (Eigen::Index i = 0; i < n; ++i)
      f[i] = eps * (log_a[i] - lse((g.transpose() - C.row(i)).array().transpose() / eps));
    for (Eigen::Index j = 0; j < n; ++j)
      g[j] = eps * (log_b - lse((f - C.col(j)).array() / eps));
    double residual = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      const double row = (((g.transpose() - C.row(i)).array() + f[i]) / eps).exp().sum();
      residual += std::abs(row - a[i]);
    }
    if (residual < tol) break;
  }
  Eigen::MatrixXd P(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    P.row(i) = (((g.transpose() - C.row(i)).array() + f[i]) / eps).exp();
  return P;
}

// Brute-force sequential importance sampler with systematic resampling for a
// random-walk-with-control scalar model; oracle for the Kalman filter. The
// standard error comes from independent replicates, so it includes the
// correlation introduced by resampling.
struct SisResult {
  std::vector<double> means;
  std::vector<double> std_errors;
};

inline std::vector<double> sis_single_run(double m0, double p0, double sig_dyn, double sig_meas,
                                          const std::vector<double>& actions,
                                          const std::vector<double>& obs, Eigen::Index n_samples,
                                          dpf::Rng& rng) {
  Eigen::VectorXd x(n_samples);
  for (Eigen::Index i = 0; i < n_samples; ++i)
    x[i] = dpf::rand_normal(rng, m0, std::sqrt(p0));
  Eigen::VectorXd logw = Eigen::VectorXd::Zero(n_samples);
  std::vector<double> means;
  for (std::size_t t = 0; t < obs.size(); ++t) {
    for (Eigen::Index i = 0; i < n_samples; ++i)
      x[i] += actions[t] + dpf::rand_normal(rng, 0.0, sig_dyn);
    logw.array() += -0.5 * ((obs[t] - x.array()) / sig_meas).square();
    const double m = logw.maxCoeff();
    Eigen::ArrayXd w = (logw.array() - m).exp();
    w /= w.sum();
    means.push_back((w * x.array()).sum());
    // systematic resample to keep the sampler healthy
    Eigen::VectorXd cdf(n_samples);
    double acc = 0;
    for (Eigen::Index i = 0; i < n_samples; ++i) {
      acc += w[i];
      cdf[i] = acc;
    }
    const double u0 = dpf::rand_uniform(rng, 0.0, 1.0 / static_cast<double>(n_samples));
    Eigen::VectorXd nx(n_samples);
    Eigen::Index j = 0;
    for (Eigen::Index i = 0; i < n_samples; ++i) {
      const double u = u0 + static_cast<double>(i) / static_cast<double>(n_samples);
      while (cdf[j] < u && j + 1 < n_samples) ++j;
      nx[i] = x[j];
    }
    x = nx;
    logw.setZero();
  }
  return means;
}

inline SisResult brute_force_sis(double m0, double p0, double sig_dyn, double sig_meas,
                                 const std::vector<double>& actions,
                                 const std::vector<double>& obs, Eigen::Index n_per_replicate,
                                 int n_replicates, dpf::Rng& rng) {
  const std::size_t T = obs.size();
  Eigen::MatrixXd all(n_replicates, static_cast<Eigen::Index>(T));
  for (int r = 0; r < n_replicates; ++r) {
    const auto means =
        sis_single_run(m0, p0, sig_dyn, sig_meas, actions, obs, n_per_replicate, rng);
    for (std::size_t t = 0; t < T; ++t) all(r, static_cast<Eigen::Index>(t)) = means[t];
  }
  SisResult out;
  for (std::size_t t = 0; t < T; ++t) {
    const Eigen::VectorXd col = all.col(static_cast<Eigen::Index>(t));
    const double mean = col.mean();
    const double sd = std::sqrt((col.array() - mean).square().sum() /
                                static_cast<double>(n_replicates - 1));
    out.means.push_back(mean);
    out.std_errors.push_back(sd / std::sqrt(static_cast<double>(n_replicates)));
  }
  return out;
}

}  // namespace oracles
