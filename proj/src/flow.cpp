#include "dpf/flow.hpp"

namespace dpf {

namespace {

MlpConfig subnet_config(const FlowConfig& c) {
  MlpConfig m;
  const Eigen::Index in = (c.data_dim == 1) ? c.cond_dim : c.data_dim + c.cond_dim;
  m.layer_widths.push_back(in);
  for (Eigen::Index i = 0; i < c.n_hidden_layers; ++i) m.layer_widths.push_back(c.hidden);
  m.layer_widths.push_back(c.data_dim);
  m.activation = Activation::Tanh;
  return m;
}

}  // namespace

ConditionalFlow::ConditionalFlow(FlowConfig config, std::string prefix)
    : config_(config), prefix_(std::move(prefix)) {
  if (config_.data_dim < 1) throw TensorError("ConditionalFlow: data_dim must be >= 1");
  if (config_.cond_dim < 1) throw TensorError("ConditionalFlow: cond_dim must be >= 1");
  if (config_.n_layers < 1) throw TensorError("ConditionalFlow: n_layers must be >= 1");
  layers_.reserve(static_cast<std::size_t>(config_.n_layers));
  for (Eigen::Index l = 0; l < config_.n_layers; ++l) {
    const std::string tag = prefix_ + ".c" + std::to_string(l);
    LayerNets nets{Mlp(subnet_config(config_), tag + ".s"), Mlp(subnet_config(config_), tag + ".t"),
                   Tensor(), Tensor()};
    Array keep = Array::Zero(config_.data_dim);
    if (config_.data_dim > 1) {
      // alternate even/odd passthrough dims per layer
      for (Eigen::Index k = 0; k < config_.data_dim; ++k)
        if (k % 2 == static_cast<Eigen::Index>(l % 2)) keep[k] = 1.0;
    }
    nets.mask_keep = Tensor({config_.data_dim}, keep);
    nets.mask_change = Tensor({config_.data_dim}, 1.0 - keep);
    layers_.push_back(std::move(nets));
  }
}

void ConditionalFlow::init(ParameterStore& store, Rng& rng) const {
  for (const auto& layer : layers_) {
    layer.s.init(store, rng, /*zero_final=*/true);
    layer.t.init(store, rng, /*zero_final=*/true);
  }
}

void ConditionalFlow::check_shapes(const Tensor& y, const Tensor& cond) const {
  if (y.rank() != 2 || y.shape()[1] != config_.data_dim)
    throw TensorError("ConditionalFlow: data shape " + shape_str(y.shape()) +
                      " != [n," + std::to_string(config_.data_dim) + "]");
  if (cond.rank() != 2 || cond.shape()[1] != config_.cond_dim)
    throw TensorError("ConditionalFlow: cond shape " + shape_str(cond.shape()) +
                      " != [n," + std::to_string(config_.cond_dim) + "]");
  if (y.shape()[0] != cond.shape()[0])
    throw TensorError("ConditionalFlow: batch mismatch between data and condition");
  check_finite(y, "ConditionalFlow data");
  check_finite(cond, "ConditionalFlow condition");
}

std::pair<Tensor, Tensor> ConditionalFlow::subnet_eval(const ParameterStore& store,
                                                       std::size_t layer,
                                                       const Tensor& passthrough,
                                                       const Tensor& cond) const {
  const auto& nets = layers_[layer];
  Tensor in = (config_.data_dim == 1) ? cond : concat(passthrough, cond);
  Tensor s_raw = nets.s.forward(store, in);
  Tensor s = scale(tanh(s_raw), config_.scale_bound);
  Tensor t = nets.t.forward(store, in);
  return {s, t};
}

FlowResult ConditionalFlow::forward(const ParameterStore& store, const Tensor& y,
                                    const Tensor& cond) const {
  check_shapes(y, cond);
  const Eigen::Index n = y.shape()[0];
  Tensor z = y;
  Tensor log_det = Tensor::zeros({n});
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const auto& nets = layers_[l];
    Tensor keep = mul(z, nets.mask_keep);
    auto [s, t] = subnet_eval(store, l, keep, cond);
    // z_b = y_b * exp(s) + t on the changed dims
    Tensor changed = mul(add(mul(z, exp(s)), t), nets.mask_change);
    z = add(keep, changed);
    log_det = add(log_det, sum_last(mul(s, nets.mask_change)));
  }
  return {z, log_det};
}

Tensor ConditionalFlow::inverse(const ParameterStore& store, const Tensor& z,
                                const Tensor& cond) const {
  check_shapes(z, cond);
  Tensor y = z;
  for (std::size_t l = layers_.size(); l-- > 0;) {
    const auto& nets = layers_[l];
    Tensor keep = mul(y, nets.mask_keep);
    auto [s, t] = subnet_eval(store, l, keep, cond);
    Tensor changed = mul(mul(sub(y, t), exp(negate(s))), nets.mask_change);
    y = add(keep, changed);
  }
  return y;
}

Tensor ConditionalFlow::log_prob(const ParameterStore& store, const Tensor& y,
                                 const Tensor& cond) const {
  FlowResult r = forward(store, y, cond);
  return add(standard_normal_log_prob(r.z), r.log_det);
}

Tensor ConditionalFlow::sample(const ParameterStore& store, const Tensor& cond, Eigen::Index n,
                               Rng& rng) const {
  if (n <= 0) throw TensorError("ConditionalFlow::sample: n must be positive");
  Tensor c = cond;
  if (cond.rank() == 1) c = reshape(cond, {1, cond.size()});
  if (c.shape()[0] == 1 && n > 1) c = broadcast(reshape(c, {c.shape()[1]}), n);
  Tensor z = standard_normal_sample(n, config_.data_dim, rng);
  return inverse(store, z, c);
}

Tensor standard_normal_log_prob(const Tensor& z) {
  return gaussian_log_density(z, 0.0, 1.0);
}

Tensor standard_normal_sample(Eigen::Index n, Eigen::Index d, Rng& rng) {
  Array v(n * d);
  for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = rand_normal(rng);
  return Tensor({n, d}, std::move(v));
}

}  // namespace dpf
