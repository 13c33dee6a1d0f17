#include "dpf/kalman.hpp"

#include <stdexcept>

namespace dpf {

namespace {

void require_pd(const Eigen::MatrixXd& m, const char* what) {
  Eigen::LLT<Eigen::MatrixXd> llt(m);
  if (llt.info() != Eigen::Success)
    throw std::runtime_error(std::string("kalman_oracle: ") + what +
                             " is not positive definite");
}

}  // namespace

KalmanResult kalman_oracle(const LgssmParams& p, const std::vector<Eigen::VectorXd>& observations,
                           const std::vector<Eigen::VectorXd>& actions) {
  if (!actions.empty() && actions.size() != observations.size())
    throw std::runtime_error("kalman_oracle: actions/observations length mismatch");
  const Eigen::Index d = p.m0.size();
  if (p.A.rows() != d || p.A.cols() != d || p.Q.rows() != d || p.P0.rows() != d)
    throw std::runtime_error("kalman_oracle: inconsistent state dimensions");

  KalmanResult out;
  Eigen::VectorXd m = p.m0;
  Eigen::MatrixXd P = p.P0;
  require_pd(P + Eigen::MatrixXd::Identity(d, d) * 1e-300, "initial covariance");

  for (std::size_t t = 0; t < observations.size(); ++t) {
    // predict
    m = p.A * m;
    if (!actions.empty()) m += p.B * actions[t];
    P = p.A * P * p.A.transpose() + p.Q;

    // update
    const Eigen::VectorXd innovation = observations[t] - p.H * m;
    const Eigen::MatrixXd S = p.H * P * p.H.transpose() + p.R;
    require_pd(S, "innovation covariance");
    const Eigen::MatrixXd K = P * p.H.transpose() * S.llt().solve(
                                  Eigen::MatrixXd::Identity(S.rows(), S.cols()));
    m += K * innovation;
    P = (Eigen::MatrixXd::Identity(d, d) - K * p.H) * P;
    P = 0.5 * (P + P.transpose());  // keep symmetric
    require_pd(P + Eigen::MatrixXd::Identity(d, d) * 1e-300, "posterior covariance");

    out.means.push_back(m);
    out.covariances.push_back(P);
  }
  return out;
}

}  // namespace dpf
