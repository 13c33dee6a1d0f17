#pragma once

#include <functional>
#include <optional>
#include <vector>

#include "dpf/flow.hpp"
#include "dpf/ops.hpp"
#include "dpf/param_store.hpp"
#include "dpf/rng.hpp"

namespace dpf {

struct ParticleEnsemble {
  Tensor states;       // [N, d]
  Tensor log_weights;  // [N], logsumexp == 0 after normalization
  int time_index = 0;

  Eigen::Index count() const { return states.shape()[0]; }
  Eigen::Index state_dim() const { return states.shape()[1]; }
};

// Initial distribution pi(x_0): uniform box (the disk task default) or a
// diagonal Gaussian (linear-Gaussian oracle tests).
struct PriorConfig {
  enum class Kind { UniformBox, Gaussian };
  Kind kind = Kind::UniformBox;
  Eigen::VectorXd lo, hi;     // UniformBox
  Eigen::VectorXd mean, std;  // Gaussian

  Eigen::Index dim() const { return kind == Kind::UniformBox ? lo.size() : mean.size(); }
  static PriorConfig box(Eigen::Index dim, double lo, double hi);
  static PriorConfig gaussian(Eigen::VectorXd mean, Eigen::VectorXd std);
};

// x_t = x_{t-1} + a_t + alpha, alpha ~ N(0, sigma^2 I). sigma is a scalar
// tensor so it can live in the ParameterStore and receive gradients.
struct DynamicModel {
  Tensor sigma;

  Tensor mean(const Tensor& states, const Eigen::VectorXd& action) const;
  Tensor sample(const Tensor& states, const Eigen::VectorXd& action, Rng& rng) const;
  Tensor log_density(const Tensor& next, const Tensor& prev, const Eigen::VectorXd& action) const;
};

enum class ProposalKind { Bootstrap, Cnf };

const char* proposal_name(ProposalKind kind);
ProposalKind proposal_from_name(const std::string& name);

// Bootstrap draws straight from the dynamic model. Cnf warps the dynamic
// perturbation through a conditional flow conditioned on the predicted state
// and the encoded observation; densities come from the change of variables.
struct ProposalModel {
  ProposalKind kind = ProposalKind::Bootstrap;
  ConditionalFlow flow;  // cnf only
  double cond_scale = 1.0;

  struct Result {
    Tensor states;       // [N, d]
    Tensor log_density;  // [N]
  };

  Result propose(const ParameterStore& store, const Tensor& prev_states,
                 const Eigen::VectorXd& action, const Tensor& features, const DynamicModel& dyn,
                 Rng& rng) const;
};

enum class ResamplerKind { Multinomial, Systematic, OtSinkhorn };

const char* resampler_name(ResamplerKind kind);
ResamplerKind resampler_from_name(const std::string& name);

struct ResamplerConfig {
  ResamplerKind kind = ResamplerKind::OtSinkhorn;
  double ot_eps = 0.5;
  int ot_max_iter = 500;
  double ot_tol = 1e-8;  // L1 marginal residual
};

ParticleEnsemble initialize(const PriorConfig& prior, Eigen::Index n_particles, Rng& rng);

// log w += measurement + dynamic - proposal, then logsumexp-normalize.
// Throws when every weight underflows to -inf.
ParticleEnsemble reweight(const ParticleEnsemble& ens, const Tensor& measurement_log_lik,
                          const Tensor& dynamic_log_density, const Tensor& proposal_log_density);

// Index-based variants stop gradients through the selection; the Sinkhorn
// variant transports states differentiably and errors if the marginals have
// not converged within the iteration budget.
ParticleEnsemble resample(const ResamplerConfig& cfg, const ParticleEnsemble& ens, Rng& rng);

Tensor estimate(const ParticleEnsemble& ens);  // weighted state mean, [d]

double effective_sample_size(const Eigen::Ref<const Eigen::VectorXd>& log_weights);

// Internals reused by tests: raw Sinkhorn potentials for (weights a, uniform b)
// over a cost tensor. Returns (f, g, final residual, iterations).
struct SinkhornResult {
  Tensor f, g;
  double residual = 0.0;
  int iterations = 0;
};
SinkhornResult sinkhorn_potentials(const Tensor& cost, const Tensor& log_a, double eps,
                                   int max_iter, double tol);

struct FilterHooks {
  // Optional observation embedding computed once per step (identity if null).
  std::function<Tensor(const ParameterStore&, const Tensor& y)> encode;
  // Per-particle log-likelihood of (possibly encoded) observation.
  std::function<Tensor(const ParameterStore&, const Tensor& features, const Tensor& states)>
      log_likelihood;
};

struct FilterConfig {
  Eigen::Index n_particles = 100;
  ResamplerConfig resampler;
  // Resample every step when < 0 (the default loop); otherwise only when
  // ESS < threshold * N.
  double ess_threshold = -1.0;
};

struct FilterResult {
  std::vector<Tensor> estimates;     // T+1 entries, each [d], on the tape
  Eigen::MatrixXd estimate_values;   // [T+1, d]
  Eigen::MatrixXd log_weights_history;  // [T+1, N] post-normalization
  Eigen::VectorXd ess_history;       // [T+1]
};

// Runs the full propose / weight / normalize / resample loop over T steps.
// observations[t] and actions.row(t) drive step t+1. Differentiable end to
// end with the Sinkhorn resampler.
FilterResult filter_trajectory(const ParameterStore& store, const FilterHooks& hooks,
                               const ProposalModel& proposal, const DynamicModel& dynamic,
                               const PriorConfig& prior, const std::vector<Tensor>& observations,
                               const Eigen::MatrixXd& actions, const FilterConfig& cfg, Rng& rng);

}  // namespace dpf
