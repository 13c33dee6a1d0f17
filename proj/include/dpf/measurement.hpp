#pragma once

#include <string>

#include "dpf/flow.hpp"
#include "dpf/nn.hpp"

namespace dpf {

enum class MeasurementKind { CM, NN, COS };

const char* measurement_name(MeasurementKind kind);
MeasurementKind measurement_from_name(const std::string& name);

struct MeasurementConfig {
  MeasurementKind kind = MeasurementKind::CM;
  EncoderConfig encoder;
  Eigen::Index state_dim = 2;
  double cond_scale = 1.0;    // applied to particle states before the nets
  FlowConfig flow;            // CM
  Eigen::Index nn_hidden = 64;   // NN head widths (two hidden layers)
  Eigen::Index embed_hidden = 64;  // COS state-embedding widths
  double cos_gamma = 20.0;    // sharpness of the cosine pseudo-likelihood
  double nn_eps_pos = 1e-6;   // positivity floor under the softplus map

  static MeasurementConfig make(MeasurementKind kind, const EncoderConfig& enc,
                                Eigen::Index state_dim, double cond_scale);
};

// Per-particle observation log-likelihoods. CM evaluates an exact conditional
// density of encoded features given the state; NN and COS are the
// unnormalized baselines.
class MeasurementModel {
 public:
  MeasurementModel() = default;
  MeasurementModel(MeasurementConfig config, std::string prefix);

  // Initializes the heads only; the shared encoder is owned by the caller.
  void init(ParameterStore& store, Rng& rng) const;

  // Encodes y internally, then scores every particle. y: [L,L,3] image (or a
  // raw feature vector matching d_e when no encoder pass is wanted).
  Tensor log_likelihood(const ParameterStore& store, const Encoder& encoder, const Tensor& y,
                        const Tensor& particles) const;

  // Same scoring on precomputed features (the filter encodes once per step).
  Tensor log_likelihood_features(const ParameterStore& store, const Tensor& features,
                                 const Tensor& particles) const;

  // Mean negative log-likelihood of (feature, state) pairs; CM only.
  Tensor nll_loss(const ParameterStore& store, const Tensor& features, const Tensor& states) const;

  const MeasurementConfig& config() const { return config_; }
  const ConditionalFlow& flow() const { return flow_; }

 private:
  Tensor scaled_cond(const Tensor& particles) const;

  MeasurementConfig config_;
  std::string prefix_;
  ConditionalFlow flow_;  // CM
  Mlp nn_head_;           // NN
  Mlp embed_;             // COS
};

}  // namespace dpf
