#pragma once

#include <functional>

#include "dpf/param_store.hpp"
#include "dpf/tensor.hpp"

namespace dpf {

// Compares reverse-mode gradients of a deterministic scalar-valued function
// of the store against central finite differences over every parameter
// element. Returns max |analytic - numeric| / max(1, |numeric|).
double finite_difference_check(const std::function<Tensor(ParameterStore&)>& f,
                               ParameterStore& store, double step);

// Numerical Jacobian of a vector-valued function by central differences.
Eigen::MatrixXd numerical_jacobian(const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& f,
                                   const Eigen::VectorXd& x, double step);

}  // namespace dpf
