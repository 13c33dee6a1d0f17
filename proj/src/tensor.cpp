#include "dpf/tensor.hpp"

#include <cmath>
#include <sstream>

namespace dpf {

namespace {
thread_local Tape* t_active_tape = nullptr;
}

Eigen::Index shape_size(const Shape& s) {
  Eigen::Index n = 1;
  for (Eigen::Index d : s) n *= d;
  return n;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << "]";
  return os.str();
}

Tensor::Tensor(Shape shape, Array value, bool requires_grad) {
  for (Eigen::Index d : shape)
    if (d <= 0) throw TensorError("non-positive dimension in shape " + shape_str(shape));
  if (shape_size(shape) != value.size())
    throw TensorError("shape " + shape_str(shape) + " does not match data length " +
                      std::to_string(value.size()));
  node_ = std::make_shared<detail::Node>();
  node_->shape = std::move(shape);
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

Tensor Tensor::scalar(double v, bool requires_grad) {
  return Tensor({1}, Array::Constant(1, v), requires_grad);
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  Array a = Array::Zero(shape_size(shape));
  return Tensor(std::move(shape), std::move(a), requires_grad);
}

Tensor Tensor::full(Shape shape, double v, bool requires_grad) {
  Array a = Array::Constant(shape_size(shape), v);
  return Tensor(std::move(shape), std::move(a), requires_grad);
}

Tensor Tensor::from_vector(const std::vector<double>& v, bool requires_grad) {
  Array a(static_cast<Eigen::Index>(v.size()));
  for (std::size_t i = 0; i < v.size(); ++i) a[static_cast<Eigen::Index>(i)] = v[i];
  return Tensor({static_cast<Eigen::Index>(v.size())}, std::move(a), requires_grad);
}

Tensor Tensor::from_flat(Shape shape, const Eigen::Ref<const Eigen::VectorXd>& v,
                         bool requires_grad) {
  return Tensor(std::move(shape), v.array(), requires_grad);
}

Eigen::Index Tensor::rows() const {
  if (rank() != 2) throw TensorError("rows(): tensor is not rank-2, shape " + shape_str(shape()));
  return shape()[0];
}

Eigen::Index Tensor::cols() const {
  if (rank() != 2) throw TensorError("cols(): tensor is not rank-2, shape " + shape_str(shape()));
  return shape()[1];
}

double Tensor::value() const {
  if (!is_scalar())
    throw TensorError("value(): tensor is not scalar, shape " + shape_str(shape()));
  return node().value[0];
}

Eigen::Map<const MatrixRM> Tensor::matrix() const {
  if (rank() != 2)
    throw TensorError("matrix(): tensor is not rank-2, shape " + shape_str(shape()));
  return Eigen::Map<const MatrixRM>(node().value.data(), shape()[0], shape()[1]);
}

Tensor& Tensor::set_requires_grad(bool rg) {
  node().requires_grad = rg;
  return *this;
}

const Array& Tensor::grad() const {
  detail::Node& n = node();
  if (n.grad.size() != n.value.size())
    throw TensorError("grad(): no gradient stored (run backward first)");
  return n.grad;
}

void Tensor::zero_grad() {
  detail::Node& n = node();
  if (n.grad.size()) n.grad.setZero();
}

Tensor Tensor::detach() const {
  return Tensor(shape(), data(), false);
}

Tape* Tape::active() { return t_active_tape; }

TapeScope::TapeScope(Tape& tape) : prev_(t_active_tape) { t_active_tape = &tape; }
TapeScope::~TapeScope() { t_active_tape = prev_; }

NoGradGuard::NoGradGuard() : prev_(t_active_tape) { t_active_tape = nullptr; }
NoGradGuard::~NoGradGuard() { t_active_tape = prev_; }

bool grad_enabled() { return t_active_tape != nullptr; }

void backward(const Tensor& loss) {
  if (!loss.is_scalar()) throw TensorError("backward(): loss is not scalar");
  Tape* tape = Tape::active();
  if (tape == nullptr || tape->steps_.empty()) return;
  auto node = loss.node_ptr();
  node->ensure_grad();
  node->grad[0] += 1.0;
  for (auto it = tape->steps_.rbegin(); it != tape->steps_.rend(); ++it) (*it)();
}

void check_finite(const Tensor& t, const char* what) {
  if (!t.data().isFinite().all())
    throw TensorError(std::string(what) + ": non-finite values");
}

}  // namespace dpf
