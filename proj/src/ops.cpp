#include "dpf/ops.hpp"

#include <algorithm>
#include <cmath>

namespace dpf {

namespace {

using NodePtr = std::shared_ptr<detail::Node>;

bool recording(std::initializer_list<const Tensor*> inputs) {
  if (Tape::active() == nullptr) return false;
  for (const Tensor* t : inputs)
    if (t->requires_grad()) return true;
  return false;
}

void record(Tensor& out, std::function<void()> step) {
  out.set_requires_grad(true);
  Tape::active()->record(std::move(step));
}

void accumulate(const NodePtr& n, const Array& g) {
  if (!n->requires_grad) return;
  n->ensure_grad();
  n->grad += g;
}

// How the right operand lines up with the left one.
enum class BinMode { Same, ScalarRight, ScalarLeft, TrailingRight };

BinMode binary_mode(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() == b.shape()) return BinMode::Same;
  if (b.size() == 1) return BinMode::ScalarRight;
  if (a.size() == 1) return BinMode::ScalarLeft;
  if (a.rank() == 2 && b.rank() == 1 && b.size() == a.shape()[1]) return BinMode::TrailingRight;
  throw TensorError(std::string(op) + ": incompatible shapes " + shape_str(a.shape()) + " and " +
                    shape_str(b.shape()));
}

// b expanded to a's layout for TrailingRight ([n,d] vs [d]).
Array tile_rows(const Array& b, Eigen::Index n) {
  const Eigen::Index d = b.size();
  Array out(n * d);
  Eigen::Map<MatrixRM>(out.data(), n, d).rowwise() =
      Eigen::Map<const Eigen::RowVectorXd>(b.data(), d);
  return out;
}

// Reduce a full-size gradient to a trailing [d] operand.
Array reduce_rows(const Array& g, Eigen::Index n, Eigen::Index d) {
  return Eigen::Map<const MatrixRM>(g.data(), n, d).colwise().sum().array().transpose();
}

Tensor unary(const Tensor& a, Array value,
             const std::function<Array(const detail::Node& a, const detail::Node& out)>& vjp) {
  Tensor out(a.shape(), std::move(value));
  if (recording({&a})) {
    NodePtr an = a.node_ptr(), on = out.node_ptr();
    record(out, [an, on, vjp] {
      if (on->grad.size() == 0) return;
      accumulate(an, vjp(*an, *on));
    });
  }
  return out;
}

}  // namespace

namespace {

// Expand either operand's value to the output layout for backward math.
Array expand_to(const Array& v, const detail::Node& out, BinMode mode, bool is_right) {
  if (v.size() == out.value.size()) return v;
  if (v.size() == 1) return Array::Constant(out.value.size(), v[0]);
  if (mode == BinMode::TrailingRight && is_right) return tile_rows(v, out.shape[0]);
  return v;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  const BinMode mode = binary_mode("add", a, b);
  Array value;
  Shape out_shape = (mode == BinMode::ScalarLeft) ? b.shape() : a.shape();
  switch (mode) {
    case BinMode::Same: value = a.data() + b.data(); break;
    case BinMode::ScalarRight: value = a.data() + b.data()[0]; break;
    case BinMode::ScalarLeft: value = a.data()[0] + b.data(); break;
    case BinMode::TrailingRight: value = a.data() + tile_rows(b.data(), a.shape()[0]); break;
  }
  Tensor out(std::move(out_shape), std::move(value));
  if (recording({&a, &b})) {
    NodePtr an = a.node_ptr(), bn = b.node_ptr(), on = out.node_ptr();
    record(out, [an, bn, on, mode] {
      if (on->grad.size() == 0) return;
      const Array& g = on->grad;
      if (an->requires_grad) {
        if (mode == BinMode::ScalarLeft)
          accumulate(an, Array::Constant(1, g.sum()));
        else
          accumulate(an, g);
      }
      if (bn->requires_grad) {
        if (mode == BinMode::ScalarRight)
          accumulate(bn, Array::Constant(1, g.sum()));
        else if (mode == BinMode::TrailingRight)
          accumulate(bn, reduce_rows(g, on->shape[0], bn->value.size()));
        else
          accumulate(bn, g);
      }
    });
  }
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  const BinMode mode = binary_mode("sub", a, b);
  Array value;
  Shape out_shape = (mode == BinMode::ScalarLeft) ? b.shape() : a.shape();
  switch (mode) {
    case BinMode::Same: value = a.data() - b.data(); break;
    case BinMode::ScalarRight: value = a.data() - b.data()[0]; break;
    case BinMode::ScalarLeft: value = a.data()[0] - b.data(); break;
    case BinMode::TrailingRight: value = a.data() - tile_rows(b.data(), a.shape()[0]); break;
  }
  Tensor out(std::move(out_shape), std::move(value));
  if (recording({&a, &b})) {
    NodePtr an = a.node_ptr(), bn = b.node_ptr(), on = out.node_ptr();
    record(out, [an, bn, on, mode] {
      if (on->grad.size() == 0) return;
      const Array& g = on->grad;
      if (an->requires_grad) {
        if (mode == BinMode::ScalarLeft)
          accumulate(an, Array::Constant(1, g.sum()));
        else
          accumulate(an, g);
      }
      if (bn->requires_grad) {
        if (mode == BinMode::ScalarRight)
          accumulate(bn, Array::Constant(1, -g.sum()));
        else if (mode == BinMode::TrailingRight)
          accumulate(bn, -reduce_rows(g, on->shape[0], bn->value.size()));
        else
          accumulate(bn, -g);
      }
    });
  }
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  const BinMode mode = binary_mode("mul", a, b);
  Array value;
  Shape out_shape = (mode == BinMode::ScalarLeft) ? b.shape() : a.shape();
  switch (mode) {
    case BinMode::Same: value = a.data() * b.data(); break;
    case BinMode::ScalarRight: value = a.data() * b.data()[0]; break;
    case BinMode::ScalarLeft: value = a.data()[0] * b.data(); break;
    case BinMode::TrailingRight: value = a.data() * tile_rows(b.data(), a.shape()[0]); break;
  }
  Tensor out(std::move(out_shape), std::move(value));
  if (recording({&a, &b})) {
    NodePtr an = a.node_ptr(), bn = b.node_ptr(), on = out.node_ptr();
    record(out, [an, bn, on, mode] {
      if (on->grad.size() == 0) return;
      const Array& g = on->grad;
      const Array bv = expand_to(bn->value, *on, mode, true);
      const Array av = expand_to(an->value, *on, mode, false);
      if (an->requires_grad) {
        Array ga = g * bv;
        if (mode == BinMode::ScalarLeft)
          accumulate(an, Array::Constant(1, ga.sum()));
        else
          accumulate(an, ga);
      }
      if (bn->requires_grad) {
        Array gb = g * av;
        if (mode == BinMode::ScalarRight)
          accumulate(bn, Array::Constant(1, gb.sum()));
        else if (mode == BinMode::TrailingRight)
          accumulate(bn, reduce_rows(gb, on->shape[0], bn->value.size()));
        else
          accumulate(bn, gb);
      }
    });
  }
  return out;
}

Tensor div(const Tensor& a, const Tensor& b) {
  const BinMode mode = binary_mode("div", a, b);
  if ((b.data() == 0.0).any()) throw TensorError("div: zero divisor");
  Array value;
  Shape out_shape = (mode == BinMode::ScalarLeft) ? b.shape() : a.shape();
  switch (mode) {
    case BinMode::Same: value = a.data() / b.data(); break;
    case BinMode::ScalarRight: value = a.data() / b.data()[0]; break;
    case BinMode::ScalarLeft: value = a.data()[0] / b.data(); break;
    case BinMode::TrailingRight: value = a.data() / tile_rows(b.data(), a.shape()[0]); break;
  }
  Tensor out(std::move(out_shape), std::move(value));
  if (recording({&a, &b})) {
    NodePtr an = a.node_ptr(), bn = b.node_ptr(), on = out.node_ptr();
    record(out, [an, bn, on, mode] {
      if (on->grad.size() == 0) return;
      const Array& g = on->grad;
      const Array bv = expand_to(bn->value, *on, mode, true);
      const Array av = expand_to(an->value, *on, mode, false);
      if (an->requires_grad) {
        Array ga = g / bv;
        if (mode == BinMode::ScalarLeft)
          accumulate(an, Array::Constant(1, ga.sum()));
        else
          accumulate(an, ga);
      }
      if (bn->requires_grad) {
        Array gb = -g * av / (bv * bv);
        if (mode == BinMode::ScalarRight)
          accumulate(bn, Array::Constant(1, gb.sum()));
        else if (mode == BinMode::TrailingRight)
          accumulate(bn, reduce_rows(gb, on->shape[0], bn->value.size()));
        else
          accumulate(bn, gb);
      }
    });
  }
  return out;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0])
    throw TensorError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " +
                      shape_str(b.shape()));
  const Eigen::Index m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  Array value(m * n);
  Eigen::Map<MatrixRM>(value.data(), m, n).noalias() = a.matrix() * b.matrix();
  Tensor out({m, n}, std::move(value));
  if (recording({&a, &b})) {
    NodePtr an = a.node_ptr(), bn = b.node_ptr(), on = out.node_ptr();
    record(out, [an, bn, on, m, k, n] {
      if (on->grad.size() == 0) return;
      Eigen::Map<const MatrixRM> g(on->grad.data(), m, n);
      if (an->requires_grad) {
        an->ensure_grad();
        Eigen::Map<MatrixRM> ga(an->grad.data(), m, k);
        Eigen::Map<const MatrixRM> bv(bn->value.data(), k, n);
        ga.noalias() += g * bv.transpose();
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        Eigen::Map<MatrixRM> gb(bn->grad.data(), k, n);
        Eigen::Map<const MatrixRM> av(an->value.data(), m, k);
        gb.noalias() += av.transpose() * g;
      }
    });
  }
  return out;
}

Tensor transpose(const Tensor& a) {
  if (a.rank() != 2) throw TensorError("transpose: tensor is not rank-2");
  const Eigen::Index m = a.shape()[0], n = a.shape()[1];
  Array value(m * n);
  Eigen::Map<MatrixRM>(value.data(), n, m) = a.matrix().transpose();
  Tensor out({n, m}, std::move(value));
  if (recording({&a})) {
    NodePtr an = a.node_ptr(), on = out.node_ptr();
    record(out, [an, on, m, n] {
      if (on->grad.size() == 0) return;
      if (!an->requires_grad) return;
      an->ensure_grad();
      Eigen::Map<MatrixRM>(an->grad.data(), m, n) +=
          Eigen::Map<const MatrixRM>(on->grad.data(), n, m).transpose();
    });
  }
  return out;
}

Tensor exp(const Tensor& a) {
  return unary(a, a.data().exp(),
               [](const detail::Node&, const detail::Node& o) -> Array { return o.grad * o.value; });
}

Tensor log(const Tensor& a) {
  if ((a.data() <= 0.0).any()) throw TensorError("log: non-positive input");
  return unary(a, a.data().log(), [](const detail::Node& n, const detail::Node& o) -> Array {
    return o.grad / n.value;
  });
}

Tensor tanh(const Tensor& a) {
  return unary(a, a.data().tanh(), [](const detail::Node&, const detail::Node& o) -> Array {
    return o.grad * (1.0 - o.value.square());
  });
}

Tensor relu(const Tensor& a) {
  return unary(a, a.data().max(0.0), [](const detail::Node& n, const detail::Node& o) -> Array {
    return o.grad * (n.value > 0.0).cast<double>();
  });
}

Tensor softplus(const Tensor& a) {
  // log(1 + e^x), linearized for large |x|
  Array v = a.data().unaryExpr([](double x) {
    if (x > 30.0) return x;
    if (x < -30.0) return std::exp(x);
    return std::log1p(std::exp(x));
  });
  return unary(a, std::move(v), [](const detail::Node& n, const detail::Node& o) -> Array {
    return o.grad * n.value.unaryExpr([](double x) { return 1.0 / (1.0 + std::exp(-x)); });
  });
}

Tensor square(const Tensor& a) {
  return unary(a, a.data().square(), [](const detail::Node& n, const detail::Node& o) -> Array {
    return o.grad * 2.0 * n.value;
  });
}

Tensor sqrt(const Tensor& a) {
  if ((a.data() <= 0.0).any()) throw TensorError("sqrt: non-positive input");
  return unary(a, a.data().sqrt(), [](const detail::Node&, const detail::Node& o) -> Array {
    return o.grad / (2.0 * o.value);
  });
}

Tensor negate(const Tensor& a) {
  return unary(a, -a.data(),
               [](const detail::Node&, const detail::Node& o) -> Array { return -o.grad; });
}

Tensor sigmoid(const Tensor& a) {
  Array v = a.data().unaryExpr([](double x) { return 1.0 / (1.0 + std::exp(-x)); });
  return unary(a, std::move(v), [](const detail::Node&, const detail::Node& o) -> Array {
    return o.grad * o.value * (1.0 - o.value);
  });
}

Tensor scale(const Tensor& a, double c) {
  return unary(a, a.data() * c,
               [c](const detail::Node&, const detail::Node& o) -> Array { return o.grad * c; });
}

Tensor shift(const Tensor& a, double c) {
  return unary(a, a.data() + c,
               [](const detail::Node&, const detail::Node& o) -> Array { return o.grad; });
}

Tensor sum(const Tensor& a) {
  Tensor out = Tensor::scalar(a.data().sum());
  if (recording({&a})) {
    NodePtr an = a.node_ptr(), on = out.node_ptr();
    record(out, [an, on] {
      if (on->grad.size() == 0) return;
      if (!an->requires_grad) return;
      an->ensure_grad();
      an->grad += on->grad[0];
    });
  }
  return out;
}

Tensor mean(const Tensor& a) {
  const double inv_n = 1.0 / static_cast<double>(a.size());
  Tensor out = Tensor::scalar(a.data().mean());
  if (recording({&a})) {
    NodePtr an = a.node_ptr(), on = out.node_ptr();
    record(out, [an, on, inv_n] {
      if (on->grad.size() == 0) return;
      if (!an->requires_grad) return;
      an->ensure_grad();
      an->grad += on->grad[0] * inv_n;
    });
  }
  return out;
}

Tensor sum_last(const Tensor& a) {
  if (a.rank() != 2) throw TensorError("sum_last: tensor is not rank-2");
  const Eigen::Index n = a.shape()[0], d = a.shape()[1];
  Array value = a.matrix().rowwise().sum().array();
  Tensor out({n}, std::move(value));
  if (recording({&a})) {
    NodePtr an = a.node_ptr(), on = out.node_ptr();
    record(out, [an, on, n, d] {
      if (on->grad.size() == 0) return;
      if (!an->requires_grad) return;
      an->ensure_grad();
      Eigen::Map<MatrixRM>(an->grad.data(), n, d).colwise() +=
          Eigen::Map<const Eigen::VectorXd>(on->grad.data(), n);
    });
  }
  return out;
}

Tensor max_all(const Tensor& a) {
  Eigen::Index arg = 0;
  const double m = a.data().maxCoeff(&arg);
  Tensor out = Tensor::scalar(m);
  if (recording({&a})) {
    NodePtr an = a.node_ptr(), on = out.node_ptr();
    record(out, [an, on, arg] {
      if (on->grad.size() == 0) return;
      if (!an->requires_grad) return;
      an->ensure_grad();
      an->grad[arg] += on->grad[0];
    });
  }
  return out;
}

Tensor logsumexp(const Tensor& a) {
  const double m = a.data().maxCoeff();
  double lse;
  if (!std::isfinite(m)) {
    lse = m;  // all -inf -> -inf
  } else {
    lse = m + std::log((a.data() - m).exp().sum());
  }
  Tensor out = Tensor::scalar(lse);
  if (recording({&a})) {
    NodePtr an = a.node_ptr(), on = out.node_ptr();
    record(out, [an, on] {
      if (on->grad.size() == 0) return;
      if (!an->requires_grad) return;
      if (!std::isfinite(on->value[0])) return;
      an->ensure_grad();
      an->grad += on->grad[0] * (an->value - on->value[0]).exp();
    });
  }
  return out;
}

Tensor logsumexp_last(const Tensor& a) {
  if (a.rank() != 2) throw TensorError("logsumexp_last: tensor is not rank-2");
  const Eigen::Index n = a.shape()[0], d = a.shape()[1];
  Array value(n);
  auto av = a.matrix();
  for (Eigen::Index i = 0; i < n; ++i) {
    const double m = av.row(i).maxCoeff();
    value[i] = std::isfinite(m) ? m + std::log((av.row(i).array() - m).exp().sum()) : m;
  }
  Tensor out({n}, std::move(value));
  if (recording({&a})) {
    NodePtr an = a.node_ptr(), on = out.node_ptr();
    record(out, [an, on, n, d] {
      if (on->grad.size() == 0) return;
      if (!an->requires_grad) return;
      an->ensure_grad();
      Eigen::Map<MatrixRM> ga(an->grad.data(), n, d);
      Eigen::Map<const MatrixRM> av(an->value.data(), n, d);
      for (Eigen::Index i = 0; i < n; ++i) {
        if (!std::isfinite(on->value[i])) continue;
        ga.row(i).array() += on->grad[i] * (av.row(i).array() - on->value[i]).exp();
      }
    });
  }
  return out;
}

Tensor slice(const Tensor& a, Eigen::Index start, Eigen::Index len) {
  const Eigen::Index d = a.shape().back();
  if (start < 0 || len <= 0 || start + len > d)
    throw TensorError("slice: range [" + std::to_string(start) + "," +
                      std::to_string(start + len) + ") out of bounds for last dim " +
                      std::to_string(d));
  const Eigen::Index rows = a.size() / d;
  Array value(rows * len);
  Eigen::Map<MatrixRM>(value.data(), rows, len) =
      Eigen::Map<const MatrixRM>(a.data().data(), rows, d).middleCols(start, len);
  Shape out_shape = a.shape();
  out_shape.back() = len;
  Tensor out(std::move(out_shape), std::move(value));
  if (recording({&a})) {
    NodePtr an = a.node_ptr(), on = out.node_ptr();
    record(out, [an, on, start, len, rows, d] {
      if (on->grad.size() == 0) return;
      if (!an->requires_grad) return;
      an->ensure_grad();
      Eigen::Map<MatrixRM>(an->grad.data(), rows, d).middleCols(start, len) +=
          Eigen::Map<const MatrixRM>(on->grad.data(), rows, len);
    });
  }
  return out;
}

Tensor concat(const Tensor& a, const Tensor& b) {
  if (a.rank() != b.rank())
    throw TensorError("concat: rank mismatch " + shape_str(a.shape()) + " vs " +
                      shape_str(b.shape()));
  for (Eigen::Index i = 0; i + 1 < a.rank(); ++i)
    if (a.shape()[i] != b.shape()[i])
      throw TensorError("concat: leading dims differ, " + shape_str(a.shape()) + " vs " +
                        shape_str(b.shape()));
  const Eigen::Index da = a.shape().back(), db = b.shape().back();
  const Eigen::Index rows = a.size() / da;
  Array value(rows * (da + db));
  Eigen::Map<MatrixRM> v(value.data(), rows, da + db);
  v.leftCols(da) = Eigen::Map<const MatrixRM>(a.data().data(), rows, da);
  v.rightCols(db) = Eigen::Map<const MatrixRM>(b.data().data(), rows, db);
  Shape out_shape = a.shape();
  out_shape.back() = da + db;
  Tensor out(std::move(out_shape), std::move(value));
  if (recording({&a, &b})) {
    NodePtr an = a.node_ptr(), bn = b.node_ptr(), on = out.node_ptr();
    record(out, [an, bn, on, rows, da, db] {
      if (on->grad.size() == 0) return;
      Eigen::Map<const MatrixRM> g(on->grad.data(), rows, da + db);
      if (an->requires_grad) {
        an->ensure_grad();
        Eigen::Map<MatrixRM>(an->grad.data(), rows, da) += g.leftCols(da);
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        Eigen::Map<MatrixRM>(bn->grad.data(), rows, db) += g.rightCols(db);
      }
    });
  }
  return out;
}

Tensor broadcast(const Tensor& a, Eigen::Index n) {
  if (n <= 0) throw TensorError("broadcast: non-positive count");
  const Eigen::Index d = a.size();
  Array value(n * d);
  Eigen::Map<MatrixRM>(value.data(), n, d).rowwise() =
      Eigen::Map<const Eigen::RowVectorXd>(a.data().data(), d);
  Shape out_shape;
  out_shape.push_back(n);
  for (Eigen::Index s : a.shape()) out_shape.push_back(s);
  Tensor out(std::move(out_shape), std::move(value));
  if (recording({&a})) {
    NodePtr an = a.node_ptr(), on = out.node_ptr();
    record(out, [an, on, n, d] {
      if (on->grad.size() == 0) return;
      if (!an->requires_grad) return;
      an->ensure_grad();
      an->grad +=
          Eigen::Map<const MatrixRM>(on->grad.data(), n, d).colwise().sum().array().transpose();
    });
  }
  return out;
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_size(shape) != a.size())
    throw TensorError("reshape: size mismatch, " + shape_str(a.shape()) + " -> " +
                      shape_str(shape));
  Tensor out(std::move(shape), a.data());
  if (recording({&a})) {
    NodePtr an = a.node_ptr(), on = out.node_ptr();
    record(out, [an, on] {
      if (on->grad.size() == 0) return;
      if (!an->requires_grad) return;
      an->ensure_grad();
      an->grad += on->grad;
    });
  }
  return out;
}

namespace {

// Shared shape handling for gaussian_log_density: z [n,d] or [d]; mean matches
// z, is [d] against [n,d], or is scalar.
struct GaussShapes {
  Eigen::Index n, d;
  bool scalar_out;
  enum { MeanSame, MeanRow, MeanScalar } mean_mode;
};

GaussShapes gauss_shapes(const Tensor& z, const Tensor& mean) {
  GaussShapes s{};
  if (z.rank() == 2) {
    s.n = z.shape()[0];
    s.d = z.shape()[1];
    s.scalar_out = false;
  } else if (z.rank() == 1) {
    s.n = 1;
    s.d = z.size();
    s.scalar_out = true;
  } else {
    throw TensorError("gaussian_log_density: z must be rank-1 or rank-2");
  }
  if (mean.shape() == z.shape())
    s.mean_mode = GaussShapes::MeanSame;
  else if (mean.size() == 1)
    s.mean_mode = GaussShapes::MeanScalar;
  else if (mean.rank() == 1 && mean.size() == s.d)
    s.mean_mode = GaussShapes::MeanRow;
  else
    throw TensorError("gaussian_log_density: mean shape " + shape_str(mean.shape()) +
                      " incompatible with z " + shape_str(z.shape()));
  return s;
}

constexpr double kLog2Pi = 1.8378770664093454836;

}  // namespace

Tensor gaussian_log_density(const Tensor& z, const Tensor& mean, const Tensor& var) {
  if (var.size() != 1) throw TensorError("gaussian_log_density: var must be scalar");
  const double v = var.data()[0];
  if (!(v > 0.0)) throw TensorError("gaussian_log_density: var must be positive");
  const GaussShapes s = gauss_shapes(z, mean);

  Eigen::Map<const MatrixRM> zm(z.data().data(), s.n, s.d);
  MatrixRM diff(s.n, s.d);
  switch (s.mean_mode) {
    case GaussShapes::MeanSame:
      diff = zm - Eigen::Map<const MatrixRM>(mean.data().data(), s.n, s.d);
      break;
    case GaussShapes::MeanRow:
      diff = zm.rowwise() - Eigen::Map<const Eigen::RowVectorXd>(mean.data().data(), s.d);
      break;
    case GaussShapes::MeanScalar:
      diff = zm.array() - mean.data()[0];
      break;
  }
  const double c = -0.5 * static_cast<double>(s.d) * (kLog2Pi + std::log(v));
  Array value = c - diff.array().square().rowwise().sum() / (2.0 * v);
  Tensor out = s.scalar_out ? Tensor({1}, std::move(value)) : Tensor({s.n}, std::move(value));
  if (recording({&z, &mean, &var})) {
    NodePtr zn = z.node_ptr(), mn = mean.node_ptr(), vn = var.node_ptr(), on = out.node_ptr();
    record(out, [zn, mn, vn, on, s, v] {
      if (on->grad.size() == 0) return;
      Eigen::Map<const MatrixRM> zm(zn->value.data(), s.n, s.d);
      MatrixRM diff(s.n, s.d);
      switch (s.mean_mode) {
        case GaussShapes::MeanSame:
          diff = zm - Eigen::Map<const MatrixRM>(mn->value.data(), s.n, s.d);
          break;
        case GaussShapes::MeanRow:
          diff = zm.rowwise() - Eigen::Map<const Eigen::RowVectorXd>(mn->value.data(), s.d);
          break;
        case GaussShapes::MeanScalar:
          diff = zm.array() - mn->value[0];
          break;
      }
      Eigen::Map<const Eigen::VectorXd> g(on->grad.data(), s.n);
      if (zn->requires_grad) {
        zn->ensure_grad();
        Eigen::Map<MatrixRM> gz(zn->grad.data(), s.n, s.d);
        gz.array() -= (diff.array().colwise() * g.array()) / v;
      }
      if (mn->requires_grad) {
        mn->ensure_grad();
        MatrixRM gm = (diff.array().colwise() * g.array()) / v;
        switch (s.mean_mode) {
          case GaussShapes::MeanSame:
            Eigen::Map<MatrixRM>(mn->grad.data(), s.n, s.d) += gm;
            break;
          case GaussShapes::MeanRow:
            mn->grad += gm.colwise().sum().array().transpose();
            break;
          case GaussShapes::MeanScalar:
            mn->grad[0] += gm.sum();
            break;
        }
      }
      if (vn->requires_grad) {
        vn->ensure_grad();
        const Array sq = diff.array().square().rowwise().sum();
        vn->grad[0] +=
            (g.array() * (sq / (2.0 * v * v) - static_cast<double>(s.d) / (2.0 * v))).sum();
      }
    });
  }
  return out;
}

Tensor gaussian_log_density(const Tensor& z, double mean, double var) {
  return gaussian_log_density(z, Tensor::scalar(mean), Tensor::scalar(var));
}

Tensor fixed_linear(const std::shared_ptr<const Eigen::SparseMatrix<double>>& R, const Tensor& x) {
  if (!R) throw TensorError("fixed_linear: null matrix");
  const bool rowvec = x.rank() == 2 && x.shape()[0] == 1;
  if (!rowvec && x.rank() != 1) throw TensorError("fixed_linear: x must be [n] or [1,n]");
  if (x.size() != R->cols())
    throw TensorError("fixed_linear: x length " + std::to_string(x.size()) +
                      " != matrix cols " + std::to_string(R->cols()));
  Eigen::VectorXd y = (*R) * Eigen::Map<const Eigen::VectorXd>(x.data().data(), x.size());
  Shape out_shape = rowvec ? Shape{1, R->rows()} : Shape{R->rows()};
  Tensor out(std::move(out_shape), y.array());
  if (recording({&x})) {
    NodePtr xn = x.node_ptr(), on = out.node_ptr();
    record(out, [R, xn, on] {
      if (on->grad.size() == 0) return;
      if (!xn->requires_grad) return;
      xn->ensure_grad();
      Eigen::Map<Eigen::VectorXd>(xn->grad.data(), xn->grad.size()) +=
          R->transpose() * Eigen::Map<const Eigen::VectorXd>(on->grad.data(), on->grad.size());
    });
  }
  return out;
}

namespace {

// Row/col logsumexp of (pot ⊕ -C)/eps without materializing softmax on the tape.
void sinkhorn_forward(const MatrixRM& C, const Eigen::VectorXd& pot, double eps, bool over_cols,
                      Eigen::VectorXd& r) {
  const Eigen::Index n = over_cols ? C.rows() : C.cols();
  r.resize(n);
  Array row;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (over_cols)
      row = (pot.transpose() - C.row(i)).array().transpose() / eps;
    else
      row = (pot - C.col(i)).array() / eps;
    const double m = row.maxCoeff();
    r[i] = std::isfinite(m) ? m + std::log((row - m).exp().sum()) : m;
  }
}

}  // namespace

Tensor sinkhorn_lse(const Tensor& cost, const Tensor& pot, double eps, bool over_cols) {
  if (cost.rank() != 2) throw TensorError("sinkhorn_lse: cost must be rank-2");
  const Eigen::Index rows = cost.shape()[0], cols = cost.shape()[1];
  if (pot.size() != (over_cols ? cols : rows))
    throw TensorError("sinkhorn_lse: potential length mismatch");
  if (!(eps > 0.0)) throw TensorError("sinkhorn_lse: eps must be positive");

  MatrixRM C = cost.matrix();
  Eigen::VectorXd p = Eigen::Map<const Eigen::VectorXd>(pot.data().data(), pot.size());
  Eigen::VectorXd r;
  sinkhorn_forward(C, p, eps, over_cols, r);
  Tensor out({r.size()}, r.array());
  if (recording({&cost, &pot})) {
    NodePtr cn = cost.node_ptr(), pn = pot.node_ptr(), on = out.node_ptr();
    record(out, [cn, pn, on, eps, over_cols, rows, cols] {
      if (on->grad.size() == 0) return;
      Eigen::Map<const MatrixRM> C(cn->value.data(), rows, cols);
      Eigen::Map<const Eigen::VectorXd> p(pn->value.data(), pn->value.size());
      const Eigen::Index n = over_cols ? rows : cols;
      const bool want_c = cn->requires_grad;
      const bool want_p = pn->requires_grad;
      if (want_c) cn->ensure_grad();
      if (want_p) pn->ensure_grad();
      for (Eigen::Index i = 0; i < n; ++i) {
        const double ri = on->value[i];
        if (!std::isfinite(ri)) continue;
        const double gi = on->grad[i];
        if (gi == 0.0) continue;
        // softmax weights s_j = exp((p_j - C_ij)/eps - r_i)
        Array s;
        if (over_cols)
          s = ((p.transpose() - C.row(i)).array().transpose() / eps - ri).exp();
        else
          s = ((p - C.col(i)).array() / eps - ri).exp();
        if (want_p) Eigen::Map<Array>(pn->grad.data(), pn->grad.size()) += (gi / eps) * s;
        if (want_c) {
          Eigen::Map<MatrixRM> gc(cn->grad.data(), rows, cols);
          if (over_cols)
            gc.row(i).array() -= (gi / eps) * s.transpose();
          else
            gc.col(i).array() -= (gi / eps) * s;
        }
      }
    });
  }
  return out;
}

Tensor ot_transport_apply(const Tensor& cost, const Tensor& f, const Tensor& g,
                          const Tensor& states, double eps) {
  if (cost.rank() != 2 || cost.shape()[0] != cost.shape()[1])
    throw TensorError("ot_transport_apply: cost must be square");
  const Eigen::Index n = cost.shape()[0];
  if (f.size() != n || g.size() != n || states.rank() != 2 || states.shape()[0] != n)
    throw TensorError("ot_transport_apply: shape mismatch");
  const Eigen::Index d = states.shape()[1];

  auto plan = [eps, n](const MatrixRM& C, const Eigen::VectorXd& fv,
                       const Eigen::VectorXd& gv) -> MatrixRM {
    MatrixRM P(n, n);
    P = (((-C).colwise() + fv).rowwise() + gv.transpose()) / eps;
    P = P.array().exp();
    return P;
  };

  MatrixRM C = cost.matrix();
  Eigen::VectorXd fv = Eigen::Map<const Eigen::VectorXd>(f.data().data(), n);
  Eigen::VectorXd gv = Eigen::Map<const Eigen::VectorXd>(g.data().data(), n);
  MatrixRM P = plan(C, fv, gv);
  Array value(n * d);
  Eigen::Map<MatrixRM>(value.data(), n, d).noalias() =
      static_cast<double>(n) * (P.transpose() * states.matrix());
  Tensor out({n, d}, std::move(value));
  if (recording({&cost, &f, &g, &states})) {
    NodePtr cn = cost.node_ptr(), fn = f.node_ptr(), gn = g.node_ptr(), sn = states.node_ptr(),
            on = out.node_ptr();
    record(out, [cn, fn, gn, sn, on, plan, eps, n, d] {
      if (on->grad.size() == 0) return;
      Eigen::Map<const MatrixRM> C(cn->value.data(), n, n);
      Eigen::Map<const Eigen::VectorXd> fv(fn->value.data(), n);
      Eigen::Map<const Eigen::VectorXd> gv(gn->value.data(), n);
      Eigen::Map<const MatrixRM> X(sn->value.data(), n, d);
      Eigen::Map<const MatrixRM> G(on->grad.data(), n, d);
      MatrixRM P = plan(C, fv, gv);
      const double N = static_cast<double>(n);
      if (sn->requires_grad) {
        sn->ensure_grad();
        Eigen::Map<MatrixRM>(sn->grad.data(), n, d).noalias() += N * (P * G);
      }
      // dOut_{i,k}/dP_{ji} = N * x_{j,k}; chain through log P = (f+g-C)/eps
      const bool want_c = cn->requires_grad, want_f = fn->requires_grad,
                 want_g = gn->requires_grad;
      if (want_c || want_f || want_g) {
        MatrixRM M = (X * G.transpose()).cwiseProduct(P) * (N / eps);  // M_{ji} term
        if (want_f) {
          fn->ensure_grad();
          Eigen::Map<Eigen::VectorXd>(fn->grad.data(), n) += M.rowwise().sum();
        }
        if (want_g) {
          gn->ensure_grad();
          Eigen::Map<Eigen::VectorXd>(gn->grad.data(), n) += M.colwise().sum().transpose();
        }
        if (want_c) {
          cn->ensure_grad();
          Eigen::Map<MatrixRM>(cn->grad.data(), n, n) -= M;
        }
      }
    });
  }
  return out;
}

Tensor gather_rows_nograd(const Tensor& a, const std::vector<Eigen::Index>& idx) {
  if (a.rank() != 2) throw TensorError("gather_rows_nograd: tensor is not rank-2");
  const Eigen::Index n = a.shape()[0], d = a.shape()[1];
  Array value(static_cast<Eigen::Index>(idx.size()) * d);
  Eigen::Map<MatrixRM> v(value.data(), static_cast<Eigen::Index>(idx.size()), d);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || idx[i] >= n) throw TensorError("gather_rows_nograd: index out of range");
    v.row(static_cast<Eigen::Index>(i)) = a.matrix().row(idx[i]);
  }
  return Tensor({static_cast<Eigen::Index>(idx.size()), d}, std::move(value));
}

}  // namespace dpf
