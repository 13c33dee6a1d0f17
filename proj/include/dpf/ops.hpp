#pragma once

#include <Eigen/Sparse>

#include "dpf/tensor.hpp"

namespace dpf {

// Elementwise binary ops accept operands of identical shape, a size-1
// (scalar) operand broadcast to the other, or a rank-1 right operand
// broadcast across the leading dimension of a rank-2 left operand.
// Any other shape pair is a hard error naming the op.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);

Tensor matmul(const Tensor& a, const Tensor& b);  // [m,k] x [k,n]
Tensor transpose(const Tensor& a);                // rank-2

Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);   // errors on non-positive input
Tensor tanh(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor softplus(const Tensor& a);
Tensor square(const Tensor& a);
Tensor sqrt(const Tensor& a);  // errors on non-positive input
Tensor negate(const Tensor& a);
Tensor sigmoid(const Tensor& a);

Tensor scale(const Tensor& a, double c);  // a * c
Tensor shift(const Tensor& a, double c);  // a + c

Tensor sum(const Tensor& a);       // full reduction -> scalar
Tensor mean(const Tensor& a);      // full reduction -> scalar
Tensor sum_last(const Tensor& a);  // [n,d] -> [n]
Tensor max_all(const Tensor& a);   // -> scalar; backward routes to the argmax

// Max-shifted log-sum-exp. Full reduction or over the last axis of [n,d].
Tensor logsumexp(const Tensor& a);
Tensor logsumexp_last(const Tensor& a);

Tensor slice(const Tensor& a, Eigen::Index start, Eigen::Index len);  // last axis
Tensor concat(const Tensor& a, const Tensor& b);                      // last axis
Tensor broadcast(const Tensor& a, Eigen::Index n);  // [d...] -> [n,d...]
Tensor reshape(const Tensor& a, Shape shape);

// Fused log N(z; mean, var*I), reduced over the last axis: [n,d] -> [n],
// [d] -> scalar. mean may match z, be rank-1 against rank-2 z, or be scalar;
// var is a positive scalar tensor.
Tensor gaussian_log_density(const Tensor& z, const Tensor& mean, const Tensor& var);
Tensor gaussian_log_density(const Tensor& z, double mean, double var);

// y = R * x for a constant sparse matrix R; x rank-1 [n] or rank-2 [1,n].
Tensor fixed_linear(const std::shared_ptr<const Eigen::SparseMatrix<double>>& R,
                    const Tensor& x);

// r_i = logsumexp_j((pot_j - C_ij) / eps) when over_cols, else
// r_j = logsumexp_i((pot_i - C_ij) / eps). Backward recomputes the softmax
// instead of storing the [n,n] intermediate.
Tensor sinkhorn_lse(const Tensor& cost, const Tensor& pot, double eps, bool over_cols);

// Entropic transport map applied to states: out_i = n * sum_j P_ji x_j with
// log P_ij = (f_i + g_j - C_ij) / eps.
Tensor ot_transport_apply(const Tensor& cost, const Tensor& f, const Tensor& g,
                          const Tensor& states, double eps);

// Row selection without gradient flow (index-based resampling).
Tensor gather_rows_nograd(const Tensor& a, const std::vector<Eigen::Index>& idx);

}  // namespace dpf
