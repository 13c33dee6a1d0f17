#include "dpf/measurement.hpp"

namespace dpf {

const char* measurement_name(MeasurementKind kind) {
  switch (kind) {
    case MeasurementKind::CM: return "cm";
    case MeasurementKind::NN: return "nn";
    case MeasurementKind::COS: return "cos";
  }
  return "?";
}

MeasurementKind measurement_from_name(const std::string& name) {
  if (name == "cm") return MeasurementKind::CM;
  if (name == "nn") return MeasurementKind::NN;
  if (name == "cos") return MeasurementKind::COS;
  throw TensorError("unknown measurement variant '" + name + "' (expected cm|nn|cos)");
}

MeasurementConfig MeasurementConfig::make(MeasurementKind kind, const EncoderConfig& enc,
                                          Eigen::Index state_dim, double cond_scale) {
  MeasurementConfig c;
  c.kind = kind;
  c.encoder = enc;
  c.state_dim = state_dim;
  c.cond_scale = cond_scale;
  c.flow.data_dim = enc.feature_dim;
  c.flow.cond_dim = state_dim;
  return c;
}

namespace {

MlpConfig nn_head_config(const MeasurementConfig& c) {
  MlpConfig m;
  m.layer_widths = {c.encoder.feature_dim + c.state_dim, c.nn_hidden, c.nn_hidden, 1};
  m.activation = Activation::Tanh;
  return m;
}

MlpConfig embed_config(const MeasurementConfig& c) {
  MlpConfig m;
  m.layer_widths = {c.state_dim, c.embed_hidden, c.embed_hidden, c.encoder.feature_dim};
  m.activation = Activation::Tanh;
  return m;
}

}  // namespace

MeasurementModel::MeasurementModel(MeasurementConfig config, std::string prefix)
    : config_(std::move(config)), prefix_(std::move(prefix)) {
  switch (config_.kind) {
    case MeasurementKind::CM:
      flow_ = ConditionalFlow(config_.flow, prefix_ + ".flow");
      break;
    case MeasurementKind::NN:
      nn_head_ = Mlp(nn_head_config(config_), prefix_ + ".nn");
      break;
    case MeasurementKind::COS:
      embed_ = Mlp(embed_config(config_), prefix_ + ".embed");
      break;
  }
}

void MeasurementModel::init(ParameterStore& store, Rng& rng) const {
  switch (config_.kind) {
    case MeasurementKind::CM: flow_.init(store, rng); break;
    case MeasurementKind::NN: nn_head_.init(store, rng); break;
    case MeasurementKind::COS: embed_.init(store, rng); break;
  }
}

Tensor MeasurementModel::scaled_cond(const Tensor& particles) const {
  if (particles.rank() != 2 || particles.shape()[1] != config_.state_dim)
    throw TensorError("MeasurementModel: particles shape " + shape_str(particles.shape()) +
                      " != [N," + std::to_string(config_.state_dim) + "]");
  return scale(particles, config_.cond_scale);
}

Tensor MeasurementModel::log_likelihood(const ParameterStore& store, const Encoder& encoder,
                                        const Tensor& y, const Tensor& particles) const {
  Tensor features =
      (y.rank() == 1 && y.size() == config_.encoder.feature_dim) ? y : encoder.forward(store, y);
  return log_likelihood_features(store, features, particles);
}

Tensor MeasurementModel::log_likelihood_features(const ParameterStore& store,
                                                 const Tensor& features,
                                                 const Tensor& particles) const {
  const Eigen::Index n = particles.shape()[0];
  if (features.rank() != 1 || features.size() != config_.encoder.feature_dim)
    throw TensorError("MeasurementModel: feature shape " + shape_str(features.shape()) +
                      " != [" + std::to_string(config_.encoder.feature_dim) + "]");
  Tensor cond = scaled_cond(particles);
  Tensor e = broadcast(features, n);  // encode once, score every particle
  Tensor out;
  switch (config_.kind) {
    case MeasurementKind::CM:
      out = flow_.log_prob(store, e, cond);
      break;
    case MeasurementKind::NN: {
      Tensor raw = nn_head_.forward(store, concat(e, cond));
      out = log(shift(softplus(reshape(raw, {n})), config_.nn_eps_pos));
      break;
    }
    case MeasurementKind::COS: {
      Tensor emb = embed_.forward(store, cond);
      Tensor dots = sum_last(mul(e, emb));
      Tensor norm_e = sqrt(shift(sum_last(square(e)), 1e-12));
      Tensor norm_m = sqrt(shift(sum_last(square(emb)), 1e-12));
      Tensor cosine = div(dots, mul(norm_e, norm_m));
      out = scale(cosine, config_.cos_gamma);
      break;
    }
  }
  if (!out.data().isFinite().all())
    throw TensorError(std::string("measurement model '") + measurement_name(config_.kind) +
                      "': non-finite log-likelihood");
  return out;
}

Tensor MeasurementModel::nll_loss(const ParameterStore& store, const Tensor& features,
                                  const Tensor& states) const {
  if (config_.kind != MeasurementKind::CM)
    throw TensorError("nll_loss: only the cm variant defines an exact density");
  if (features.rank() != 2 || features.shape()[0] != states.shape()[0])
    throw TensorError("nll_loss: batch mismatch");
  if (features.shape()[0] < 1) throw TensorError("nll_loss: empty batch");
  Tensor cond = scaled_cond(states);
  return negate(mean(flow_.log_prob(store, features, cond)));
}

}  // namespace dpf
