#pragma once

#include <Eigen/Dense>

#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace dpf {

using Array = Eigen::ArrayXd;
using Shape = std::vector<Eigen::Index>;
using MatrixRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

Eigen::Index shape_size(const Shape& s);
std::string shape_str(const Shape& s);

struct TensorError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

namespace detail {

struct Node {
  Shape shape;
  Array value;
  Array grad;  // empty until first accumulation
  bool requires_grad = false;

  void ensure_grad() {
    if (grad.size() != value.size()) grad = Array::Zero(value.size());
  }
};

}  // namespace detail

// Value-semantic handle over a shared autodiff node. Copies alias the same
// storage; gradients accumulate on the node during backward().
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, Array value, bool requires_grad = false);

  static Tensor scalar(double v, bool requires_grad = false);
  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double v, bool requires_grad = false);
  static Tensor from_vector(const std::vector<double>& v, bool requires_grad = false);
  static Tensor from_flat(Shape shape, const Eigen::Ref<const Eigen::VectorXd>& v,
                          bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node().shape; }
  Eigen::Index size() const { return node().value.size(); }
  Eigen::Index rank() const { return static_cast<Eigen::Index>(node().shape.size()); }
  bool is_scalar() const { return size() == 1; }
  // [n, d] accessors for rank-2 tensors
  Eigen::Index rows() const;
  Eigen::Index cols() const;

  double value() const;  // scalar tensors only
  const Array& data() const { return node().value; }
  Array& data() { return node().value; }
  Eigen::Map<const MatrixRM> matrix() const;  // rank-2 view

  bool requires_grad() const { return node().requires_grad; }
  Tensor& set_requires_grad(bool rg);
  bool has_grad() const { return defined() && node().grad.size() == size(); }
  const Array& grad() const;
  void zero_grad();

  // Same value, cut from the graph.
  Tensor detach() const;

  std::shared_ptr<detail::Node> node_ptr() const { return node_; }

 private:
  detail::Node& node() const {
    if (!node_) throw TensorError("use of undefined tensor");
    return *node_;
  }
  std::shared_ptr<detail::Node> node_;
};

// Dynamic tape: backward steps in recording order, replayed in reverse.
class Tape {
 public:
  void record(std::function<void()> step) { steps_.push_back(std::move(step)); }
  void clear() { steps_.clear(); }
  std::size_t size() const { return steps_.size(); }

  static Tape* active();

 private:
  friend class TapeScope;
  friend class NoGradGuard;
  friend void backward(const Tensor& loss);
  std::vector<std::function<void()>> steps_;
};

// Makes a tape the active recording target for the current thread.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* prev_;
};

// Disables recording for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  Tape* prev_;
};

// Reverse-mode accumulation of d(loss)/d(tensor) into .grad of every
// requires_grad tensor reachable from loss on the active tape.
// No-op on an empty (or absent) tape; throws if loss is not scalar.
void backward(const Tensor& loss);

bool grad_enabled();

void check_finite(const Tensor& t, const char* what);

}  // namespace dpf
