#pragma once

#include <Eigen/Dense>

#include <vector>

namespace dpf {

// Linear-Gaussian state-space model
//   x_t = A x_{t-1} + B a_t + w,  w ~ N(0, Q)
//   y_t = H x_t + v,              v ~ N(0, R)
// with x_0 ~ N(m0, P0).
struct LgssmParams {
  Eigen::MatrixXd A, B, Q, H, R;
  Eigen::VectorXd m0;
  Eigen::MatrixXd P0;
};

struct KalmanResult {
  std::vector<Eigen::VectorXd> means;        // posterior mean per step, t = 1..T
  std::vector<Eigen::MatrixXd> covariances;  // posterior covariance per step
};

// Exact recursive filter; throws on a non-positive-definite innovation or
// posterior covariance.
KalmanResult kalman_oracle(const LgssmParams& params, const std::vector<Eigen::VectorXd>& observations,
                           const std::vector<Eigen::VectorXd>& actions = {});

}  // namespace dpf
