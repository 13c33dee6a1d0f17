#include "dpf/smc.hpp"

#include <algorithm>
#include <cmath>

namespace dpf {

PriorConfig PriorConfig::box(Eigen::Index dim, double lo, double hi) {
  PriorConfig p;
  p.kind = Kind::UniformBox;
  p.lo = Eigen::VectorXd::Constant(dim, lo);
  p.hi = Eigen::VectorXd::Constant(dim, hi);
  return p;
}

PriorConfig PriorConfig::gaussian(Eigen::VectorXd mean, Eigen::VectorXd std) {
  PriorConfig p;
  p.kind = Kind::Gaussian;
  p.mean = std::move(mean);
  p.std = std::move(std);
  return p;
}

Tensor DynamicModel::mean(const Tensor& states, const Eigen::VectorXd& action) const {
  Tensor a({action.size()}, action.array());
  return add(states, a);
}

Tensor DynamicModel::sample(const Tensor& states, const Eigen::VectorXd& action, Rng& rng) const {
  const Eigen::Index n = states.shape()[0], d = states.shape()[1];
  Array noise(n * d);
  for (Eigen::Index i = 0; i < noise.size(); ++i) noise[i] = rand_normal(rng);
  Tensor xi({n, d}, std::move(noise));
  return add(mean(states, action), mul(xi, sigma));
}

Tensor DynamicModel::log_density(const Tensor& next, const Tensor& prev,
                                 const Eigen::VectorXd& action) const {
  return gaussian_log_density(next, mean(prev, action), square(sigma));
}

const char* proposal_name(ProposalKind kind) {
  return kind == ProposalKind::Bootstrap ? "bootstrap" : "cnf";
}

ProposalKind proposal_from_name(const std::string& name) {
  if (name == "bootstrap") return ProposalKind::Bootstrap;
  if (name == "cnf") return ProposalKind::Cnf;
  throw TensorError("unknown proposal variant '" + name + "' (expected bootstrap|cnf)");
}

ProposalModel::Result ProposalModel::propose(const ParameterStore& store,
                                             const Tensor& prev_states,
                                             const Eigen::VectorXd& action, const Tensor& features,
                                             const DynamicModel& dyn, Rng& rng) const {
  check_finite(prev_states, "propose: previous states");
  const Eigen::Index n = prev_states.shape()[0], d = prev_states.shape()[1];
  if (kind == ProposalKind::Bootstrap) {
    Tensor next = dyn.sample(prev_states, action, rng);
    return {next, dyn.log_density(next, prev_states, action)};
  }
  // cnf: warp the dynamic perturbation delta = T^{-1}(alpha) with
  // alpha ~ N(0, sigma^2). q(delta) = N(T(delta); 0, sigma^2) |det dT/ddelta|.
  Tensor predicted = dyn.mean(prev_states, action);
  Array noise(n * d);
  for (Eigen::Index i = 0; i < noise.size(); ++i) noise[i] = rand_normal(rng);
  Tensor alpha = mul(Tensor({n, d}, std::move(noise)), dyn.sigma);
  if (!features.defined())
    throw TensorError("cnf proposal requires encoded observation features");
  Tensor cond = concat(scale(predicted, cond_scale), broadcast(features, n));
  Tensor delta = flow.inverse(store, alpha, cond);
  FlowResult fwd = flow.forward(store, delta, cond);
  Tensor log_q = add(gaussian_log_density(fwd.z, Tensor::scalar(0.0), square(dyn.sigma)),
                     fwd.log_det);
  return {add(predicted, delta), log_q};
}

const char* resampler_name(ResamplerKind kind) {
  switch (kind) {
    case ResamplerKind::Multinomial: return "multinomial";
    case ResamplerKind::Systematic: return "systematic";
    case ResamplerKind::OtSinkhorn: return "ot";
  }
  return "?";
}

ResamplerKind resampler_from_name(const std::string& name) {
  if (name == "multinomial") return ResamplerKind::Multinomial;
  if (name == "systematic") return ResamplerKind::Systematic;
  if (name == "ot" || name == "ot_sinkhorn") return ResamplerKind::OtSinkhorn;
  throw TensorError("unknown resampler '" + name + "' (expected multinomial|systematic|ot)");
}

ParticleEnsemble initialize(const PriorConfig& prior, Eigen::Index n_particles, Rng& rng) {
  if (n_particles < 1) throw TensorError("initialize: need at least one particle");
  const Eigen::Index d = prior.dim();
  Array states(n_particles * d);
  for (Eigen::Index i = 0; i < n_particles; ++i)
    for (Eigen::Index k = 0; k < d; ++k)
      states[i * d + k] = prior.kind == PriorConfig::Kind::UniformBox
                              ? rand_uniform(rng, prior.lo[k], prior.hi[k])
                              : rand_normal(rng, prior.mean[k], prior.std[k]);
  ParticleEnsemble ens;
  ens.states = Tensor({n_particles, d}, std::move(states));
  ens.log_weights = Tensor::full({n_particles}, -std::log(static_cast<double>(n_particles)));
  ens.time_index = 0;
  return ens;
}

ParticleEnsemble reweight(const ParticleEnsemble& ens, const Tensor& measurement_log_lik,
                          const Tensor& dynamic_log_density, const Tensor& proposal_log_density) {
  const Eigen::Index n = ens.count();
  if (measurement_log_lik.size() != n || dynamic_log_density.size() != n ||
      proposal_log_density.size() != n)
    throw TensorError("reweight: input lengths do not match particle count");
  Tensor unnorm = sub(add(add(ens.log_weights, measurement_log_lik), dynamic_log_density),
                      proposal_log_density);
  Tensor norm = logsumexp(unnorm);
  if (!std::isfinite(norm.value()))
    throw TensorError("reweight: degenerate ensemble (all weights vanished) at time index " +
                      std::to_string(ens.time_index));
  ParticleEnsemble out;
  out.states = ens.states;
  out.log_weights = sub(unnorm, norm);
  out.time_index = ens.time_index;
  return out;
}

Tensor estimate(const ParticleEnsemble& ens) {
  Tensor w = reshape(exp(ens.log_weights), {1, ens.count()});
  return reshape(matmul(w, ens.states), {ens.state_dim()});
}

double effective_sample_size(const Eigen::Ref<const Eigen::VectorXd>& log_weights) {
  const double m = log_weights.maxCoeff();
  const Eigen::ArrayXd w = (log_weights.array() - m).exp();
  const double s1 = w.sum(), s2 = w.square().sum();
  return (s1 * s1) / s2;
}

namespace {

std::vector<Eigen::Index> multinomial_indices(const Eigen::VectorXd& weights, Rng& rng) {
  const Eigen::Index n = weights.size();
  Eigen::VectorXd cdf(n);
  double acc = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    acc += weights[i];
    cdf[i] = acc;
  }
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    const double u = rand_uniform(rng, 0.0, acc);
    idx[static_cast<std::size_t>(i)] =
        std::min<Eigen::Index>(n - 1, std::lower_bound(cdf.data(), cdf.data() + n, u) - cdf.data());
  }
  return idx;
}

std::vector<Eigen::Index> systematic_indices(const Eigen::VectorXd& weights, Rng& rng) {
  const Eigen::Index n = weights.size();
  const double total = weights.sum();
  const double u0 = rand_uniform(rng, 0.0, total / static_cast<double>(n));
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(n));
  double acc = weights[0];
  Eigen::Index j = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double u = u0 + static_cast<double>(i) * total / static_cast<double>(n);
    while (u > acc && j + 1 < n) acc += weights[++j];
    idx[static_cast<std::size_t>(i)] = j;
  }
  return idx;
}

}  // namespace

SinkhornResult sinkhorn_potentials(const Tensor& cost, const Tensor& log_a, double eps,
                                   int max_iter, double tol) {
  const Eigen::Index n = cost.shape()[0];
  const double log_b = -std::log(static_cast<double>(n));
  Tensor log_b_t = Tensor::full({n}, log_b);
  SinkhornResult out;
  out.f = Tensor::zeros({n});
  out.g = Tensor::zeros({n});
  double residual = std::numeric_limits<double>::infinity();
  int it = 0;
  for (; it < max_iter; ++it) {
    out.f = scale(sub(log_a, sinkhorn_lse(cost, out.g, eps, /*over_cols=*/true)), eps);
    out.g = scale(sub(log_b_t, sinkhorn_lse(cost, out.f, eps, /*over_cols=*/false)), eps);
    // L1 row-marginal residual, from plain values (kept off the tape)
    Eigen::Map<const MatrixRM> C(cost.data().data(), n, n);
    Eigen::Map<const Eigen::VectorXd> fv(out.f.data().data(), n);
    Eigen::Map<const Eigen::VectorXd> gv(out.g.data().data(), n);
    residual = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      const double row =
          (((gv.transpose() - C.row(i)).array() + fv[i]) / eps).exp().sum();
      residual += std::abs(row - std::exp(log_a.data()[i]));
    }
    if (residual < tol) {
      ++it;
      break;
    }
  }
  out.residual = residual;
  out.iterations = it;
  if (residual >= tol)
    throw TensorError("sinkhorn: no convergence after " + std::to_string(max_iter) +
                      " iterations (L1 residual " + std::to_string(residual) + ")");
  return out;
}

ParticleEnsemble resample(const ResamplerConfig& cfg, const ParticleEnsemble& ens, Rng& rng) {
  const Eigen::Index n = ens.count();
  ParticleEnsemble out;
  out.time_index = ens.time_index;
  out.log_weights = Tensor::full({n}, -std::log(static_cast<double>(n)));

  if (cfg.kind == ResamplerKind::OtSinkhorn) {
    // Pairwise squared distances, max-normalized.
    Tensor sq = sum_last(square(ens.states));
    Tensor gram = matmul(ens.states, transpose(ens.states));
    Tensor cost = sub(add(broadcast(sq, n), transpose(broadcast(sq, n))), scale(gram, 2.0));
    const double cmax = cost.data().maxCoeff();
    if (cmax > 0.0) cost = div(cost, max_all(cost));
    SinkhornResult sk = sinkhorn_potentials(cost, ens.log_weights, cfg.ot_eps, cfg.ot_max_iter,
                                            cfg.ot_tol);
    out.states = ot_transport_apply(cost, sk.f, sk.g, ens.states, cfg.ot_eps);
    return out;
  }

  Eigen::VectorXd w = ens.log_weights.data().exp().matrix();
  std::vector<Eigen::Index> idx = cfg.kind == ResamplerKind::Multinomial
                                      ? multinomial_indices(w, rng)
                                      : systematic_indices(w, rng);
  out.states = gather_rows_nograd(ens.states, idx);
  return out;
}

FilterResult filter_trajectory(const ParameterStore& store, const FilterHooks& hooks,
                               const ProposalModel& proposal, const DynamicModel& dynamic,
                               const PriorConfig& prior, const std::vector<Tensor>& observations,
                               const Eigen::MatrixXd& actions, const FilterConfig& cfg, Rng& rng) {
  const Eigen::Index T = static_cast<Eigen::Index>(observations.size());
  if (actions.rows() != T)
    throw TensorError("filter_trajectory: need one action per observation");
  const Eigen::Index d = prior.dim();

  FilterResult res;
  res.estimate_values.resize(T + 1, d);
  res.log_weights_history.resize(T + 1, cfg.n_particles);
  res.ess_history.resize(T + 1);

  ParticleEnsemble ens = initialize(prior, cfg.n_particles, rng);
  Tensor est = estimate(ens);
  res.estimates.push_back(est);
  res.estimate_values.row(0) = est.data().matrix().transpose();
  res.log_weights_history.row(0) = ens.log_weights.data().matrix().transpose();
  res.ess_history[0] = effective_sample_size(ens.log_weights.data().matrix());

  for (Eigen::Index t = 0; t < T; ++t) {
    const Eigen::VectorXd action = actions.row(t);
    Tensor features = hooks.encode ? hooks.encode(store, observations[static_cast<std::size_t>(t)])
                                   : observations[static_cast<std::size_t>(t)];

    auto [new_states, log_q] =
        proposal.propose(store, ens.states, action, features, dynamic, rng);
    Tensor log_dyn = dynamic.log_density(new_states, ens.states, action);
    Tensor log_lik = hooks.log_likelihood(store, features, new_states);

    ParticleEnsemble moved;
    moved.states = new_states;
    moved.log_weights = ens.log_weights;
    moved.time_index = static_cast<int>(t) + 1;
    ens = reweight(moved, log_lik, log_dyn, log_q);

    est = estimate(ens);
    res.estimates.push_back(est);
    res.estimate_values.row(t + 1) = est.data().matrix().transpose();
    res.log_weights_history.row(t + 1) = ens.log_weights.data().matrix().transpose();
    const double ess = effective_sample_size(ens.log_weights.data().matrix());
    res.ess_history[t + 1] = ess;

    const bool do_resample =
        cfg.ess_threshold < 0.0 || ess < cfg.ess_threshold * static_cast<double>(cfg.n_particles);
    if (do_resample) ens = resample(cfg.resampler, ens, rng);
  }
  return res;
}

}  // namespace dpf
