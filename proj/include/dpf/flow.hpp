#pragma once

#include <string>
#include <vector>

#include "dpf/nn.hpp"
#include "dpf/ops.hpp"
#include "dpf/param_store.hpp"
#include "dpf/rng.hpp"

namespace dpf {

struct FlowConfig {
  Eigen::Index data_dim = 2;
  Eigen::Index cond_dim = 2;
  Eigen::Index n_layers = 4;
  Eigen::Index hidden = 64;
  Eigen::Index n_hidden_layers = 2;
  double scale_bound = 5.0;  // s clamped to (-c, c) via c * tanh before exp
};

struct FlowResult {
  Tensor z;        // [n, d]
  Tensor log_det;  // [n]
};

// Stack of conditional affine coupling layers with alternating even/odd
// masks. Subnets take the masked-passthrough coordinates concatenated with
// the condition; zero-initialized final layers make the whole flow start as
// the identity. For data_dim == 1 the layers degenerate to conditional
// affine maps whose scale/shift depend on the condition alone.
class ConditionalFlow {
 public:
  ConditionalFlow() = default;
  ConditionalFlow(FlowConfig config, std::string prefix);

  void init(ParameterStore& store, Rng& rng) const;

  FlowResult forward(const ParameterStore& store, const Tensor& y, const Tensor& cond) const;
  Tensor inverse(const ParameterStore& store, const Tensor& z, const Tensor& cond) const;

  // log p_Z(T(y, cond)) + log|det dT/dy| with standard-normal base.
  Tensor log_prob(const ParameterStore& store, const Tensor& y, const Tensor& cond) const;

  // Draws n base samples and pulls them back through the inverse map.
  Tensor sample(const ParameterStore& store, const Tensor& cond, Eigen::Index n, Rng& rng) const;

  const FlowConfig& config() const { return config_; }

 private:
  struct LayerNets {
    Mlp s, t;
    Tensor mask_keep, mask_change;  // constant 0/1 vectors over data dims
  };

  // (s, t) for one layer given the passthrough part and condition.
  std::pair<Tensor, Tensor> subnet_eval(const ParameterStore& store, std::size_t layer,
                                        const Tensor& passthrough, const Tensor& cond) const;
  void check_shapes(const Tensor& y, const Tensor& cond) const;

  FlowConfig config_;
  std::string prefix_;
  std::vector<LayerNets> layers_;
};

// Standard-normal base density over [n, d] batches.
Tensor standard_normal_log_prob(const Tensor& z);
Tensor standard_normal_sample(Eigen::Index n, Eigen::Index d, Rng& rng);

}  // namespace dpf
