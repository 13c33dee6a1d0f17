#include "dpf/grad_check.hpp"

#include <cmath>

namespace dpf {

double finite_difference_check(const std::function<Tensor(ParameterStore&)>& f,
                               ParameterStore& store, double step) {
  if (!(step > 0.0)) throw TensorError("finite_difference_check: step must be positive");

  store.zero_grad();
  Tape tape;
  double f0;
  {
    TapeScope scope(tape);
    Tensor loss = f(store);
    if (!loss.is_scalar()) throw TensorError("finite_difference_check: f must return a scalar");
    f0 = loss.value();
    if (!std::isfinite(f0)) throw TensorError("finite_difference_check: non-finite f output");
    backward(loss);
  }
  const Eigen::VectorXd analytic = store.flat_grads();

  NoGradGuard no_grad;
  const auto eval = [&]() {
    const double v = f(store).value();
    if (!std::isfinite(v)) throw TensorError("finite_difference_check: non-finite f output");
    return v;
  };

  double max_err = 0.0;
  Eigen::Index off = 0;
  for (auto& [name, t] : store) {
    for (Eigen::Index i = 0; i < t.size(); ++i) {
      const double orig = t.data()[i];
      t.data()[i] = orig + step;
      const double fp = eval();
      t.data()[i] = orig - step;
      const double fm = eval();
      t.data()[i] = orig;
      const double numeric = (fp - fm) / (2.0 * step);
      const double err = std::abs(analytic[off + i] - numeric) / std::max(1.0, std::abs(numeric));
      max_err = std::max(max_err, err);
    }
    off += t.size();
  }
  return max_err;
}

Eigen::MatrixXd numerical_jacobian(const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& f,
                                   const Eigen::VectorXd& x, double step) {
  const Eigen::VectorXd f0 = f(x);
  Eigen::MatrixXd J(f0.size(), x.size());
  Eigen::VectorXd xp = x;
  for (Eigen::Index j = 0; j < x.size(); ++j) {
    xp[j] = x[j] + step;
    const Eigen::VectorXd fp = f(xp);
    xp[j] = x[j] - step;
    const Eigen::VectorXd fm = f(xp);
    xp[j] = x[j];
    J.col(j) = (fp - fm) / (2.0 * step);
  }
  return J;
}

}  // namespace dpf
