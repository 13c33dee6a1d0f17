#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "dpf/grad_check.hpp"
#include "dpf/kalman.hpp"
#include "dpf/train.hpp"

namespace fs = std::filesystem;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitRuntime = 3;

// Relative paths resolve against $DPF_DATA_ROOT when it is set.
fs::path resolve_path(const std::string& p) {
  fs::path path(p);
  if (path.is_relative()) {
    if (const char* root = std::getenv("DPF_DATA_ROOT")) return fs::path(root) / path;
  }
  return path;
}

struct EnvOptions {
  dpf::DiskWorldConfig config;
  void attach(CLI::App* app) {
    app->add_option("--image-size", config.image_size, "canvas size L (LxLx3 frames)");
    app->add_option("--distractors", config.n_distractors, "number of distractor disks");
    app->add_option("--target-radius", config.target_radius, "target disk radius in pixels");
    app->add_option("--distractor-radius-min", config.distractor_radius_min);
    app->add_option("--distractor-radius-max", config.distractor_radius_max);
    app->add_option("--sigma-action", config.sigma_action, "action noise std");
    app->add_option("--sigma-dynamic", config.sigma_dynamic, "dynamic noise std");
    app->add_option("--init-velocity-std", config.init_velocity_std);
    app->add_option("--length", config.trajectory_length, "steps per trajectory (T)");
    app->add_flag("--iid-actions", config.iid_actions,
                  "redraw the velocity each step instead of carrying it over");
  }
};

struct ModelOptions {
  dpf::ModelConfig config;
  std::string measurement = "cm", proposal = "bootstrap", resampler = "ot";
  void attach(CLI::App* app) {
    app->add_option("--measurement", measurement, "measurement model: cm|nn|cos")
        ->check(CLI::IsMember({"cm", "nn", "cos"}));
    app->add_option("--proposal", proposal, "proposal: bootstrap|cnf")
        ->check(CLI::IsMember({"bootstrap", "cnf"}));
    app->add_option("--particles", config.n_particles, "particle count N_p");
    app->add_option("--feature-dim", config.feature_dim, "encoder feature dimension d_e");
    app->add_option("--downsample", config.downsample_to, "encoder input resize target");
    app->add_option("--flow-layers", config.flow_layers);
    app->add_option("--flow-hidden", config.flow_hidden);
    app->add_option("--resampler", resampler, "resampler: ot|multinomial|systematic")
        ->check(CLI::IsMember({"ot", "multinomial", "systematic"}));
    app->add_option("--ot-eps", config.resampler.ot_eps, "Sinkhorn entropy regularization");
    app->add_option("--ot-max-iter", config.resampler.ot_max_iter);
    app->add_option("--ot-tol", config.resampler.ot_tol, "Sinkhorn L1 marginal tolerance");
    app->add_option("--ess-threshold", config.ess_threshold,
                    "resample only when ESS < threshold*N (negative: every step)");
  }
  dpf::ModelConfig resolve() {
    config.measurement = dpf::measurement_from_name(measurement);
    config.proposal = dpf::proposal_from_name(proposal);
    config.resampler.kind = dpf::resampler_from_name(resampler);
    return config;
  }
};

int cmd_simulate(const EnvOptions& env, long long n_traj, std::uint64_t seed,
                 const std::string& out, bool force) {
  const fs::path dir = resolve_path(out);
  if (fs::exists(dir / "manifest.txt") && !force)
    throw CLI::ValidationError("--out", "dataset already exists at '" + dir.string() +
                                            "' (use --force to overwrite)");
  env.config.validate();
  dpf::Rng rng(seed);
  dpf::generate_dataset(env.config, n_traj, rng, dir);
  const dpf::DatasetManifest m = dpf::read_manifest(dir);
  std::printf("wrote %lld trajectories (T=%lld, L=%lld) to %s\n",
              static_cast<long long>(m.n_trajectories),
              static_cast<long long>(m.config.trajectory_length),
              static_cast<long long>(m.config.image_size), dir.string().c_str());
  return kExitOk;
}

int cmd_train(dpf::TrainConfig cfg, const std::string& train_dir, const std::string& val_dir,
              const std::string& out_dir, bool resume) {
  const dpf::LoadedDataset train_data = dpf::load_dataset(resolve_path(train_dir));
  const dpf::LoadedDataset val_data = dpf::load_dataset(resolve_path(val_dir));
  std::printf("training %s: %zu train / %zu val trajectories, N_p=%lld\n",
              cfg.model.method_name().c_str(), train_data.trajectories.size(),
              val_data.trajectories.size(), static_cast<long long>(cfg.model.n_particles));
  const dpf::TrainResult res =
      dpf::train_run(cfg, train_data, val_data, resolve_path(out_dir), resume);
  std::printf("done: best val RMSE %.4f at epoch %lld (%lld epochs run)\n", res.best_val_rmse,
              static_cast<long long>(res.best_epoch), static_cast<long long>(res.epochs_run));
  std::printf("checkpoint: %s\nmetrics: %s\n", res.best_checkpoint.string().c_str(),
              res.metrics_csv.string().c_str());
  return kExitOk;
}

int cmd_evaluate(const std::string& checkpoint, const std::string& config_path,
                 const std::string& data_dir, int n_seeds, std::uint64_t seed_base,
                 const std::string& out_csv, int threads) {
  const fs::path ckpt = resolve_path(checkpoint);
  fs::path cfg_path = config_path.empty() ? ckpt.parent_path() / "config.txt"
                                          : resolve_path(config_path);
  const dpf::ModelConfig model_cfg = dpf::ModelConfig::load(cfg_path);
  const dpf::LoadedDataset test_data = dpf::load_dataset(resolve_path(data_dir));
  if (test_data.trajectories.empty()) throw std::runtime_error("evaluate: empty dataset");
  const dpf::ParameterStore store = dpf::ParameterStore::load(ckpt);
  const dpf::DpfModel model = dpf::DpfModel::bind(model_cfg, test_data.manifest.config, store);
  std::vector<std::uint64_t> seeds;
  for (int s = 0; s < n_seeds; ++s) seeds.push_back(seed_base + static_cast<std::uint64_t>(s));
  const dpf::EvalReport report = dpf::evaluate(model, store, test_data, seeds, threads);
  dpf::write_eval_csv(report, seeds, resolve_path(out_csv));
  std::printf("%s: overall test RMSE %.4f +/- %.4f over %d seeds\n",
              model_cfg.method_name().c_str(), report.overall_mean, report.overall_std, n_seeds);
  return kExitOk;
}

// ---- selftest: oracle suites (Jacobian, Kalman, quadrature, Sinkhorn) ----

struct CheckLine {
  std::string name;
  double value, threshold;
  bool pass;
};

void run_flow_jacobian(std::vector<CheckLine>& checks) {
  const Eigen::Index d = 4;
  dpf::FlowConfig fc;
  fc.data_dim = d;
  fc.cond_dim = 2;
  fc.n_layers = 4;
  fc.hidden = 16;
  dpf::ConditionalFlow flow(fc, "flow");
  dpf::ParameterStore store;
  dpf::Rng rng(7);
  flow.init(store, rng);
  for (const auto& key : store.keys())  // perturb away from the identity
    for (Eigen::Index i = 0; i < store.at(key).size(); ++i)
      store.at(key).data()[i] += dpf::rand_normal(rng, 0.0, 0.1);

  dpf::Tensor cond({1, 2}, (dpf::Array(2) << 0.3, -0.8).finished());
  dpf::Tensor y({1, d}, (dpf::Array(4) << 0.5, -1.2, 0.7, 0.1).finished());
  const dpf::FlowResult fr = flow.forward(store, y, cond);
  auto fwd = [&](const Eigen::VectorXd& x) {
    dpf::Tensor yx({1, d}, x.array());
    return Eigen::VectorXd(flow.forward(store, yx, cond).z.data().matrix());
  };
  const Eigen::MatrixXd J =
      dpf::numerical_jacobian(fwd, y.data().matrix(), 1e-6);
  const double log_det_num = std::log(std::abs(J.determinant()));
  const double err = std::abs(log_det_num - fr.log_det.data()[0]);
  checks.push_back({"flow_logdet_vs_numeric_jacobian", err, 1e-5, err < 1e-5});

  dpf::Tensor z = fr.z;
  dpf::Tensor back = flow.inverse(store, z, cond);
  const double rt = (back.data() - y.data()).abs().maxCoeff();
  checks.push_back({"flow_round_trip", rt, 1e-9, rt < 1e-9});
}

void run_flow_quadrature(std::vector<CheckLine>& checks) {
  dpf::FlowConfig fc;
  fc.data_dim = 2;
  fc.cond_dim = 2;
  fc.n_layers = 4;
  fc.hidden = 16;
  dpf::ConditionalFlow flow(fc, "flow");
  dpf::ParameterStore store;
  dpf::Rng rng(11);
  flow.init(store, rng);
  for (const auto& key : store.keys())
    for (Eigen::Index i = 0; i < store.at(key).size(); ++i)
      store.at(key).data()[i] += dpf::rand_normal(rng, 0.0, 0.1);

  dpf::Tensor cond({1, 2}, (dpf::Array(2) << -0.4, 0.9).finished());
  const double step = 0.05, lim = 6.0;
  const Eigen::Index grid = static_cast<Eigen::Index>(std::round(2 * lim / step)) + 1;
  double integral = 0.0;
  for (Eigen::Index i = 0; i < grid; ++i) {
    dpf::Array batch(grid * 2);
    for (Eigen::Index j = 0; j < grid; ++j) {
      batch[2 * j] = -lim + static_cast<double>(i) * step;
      batch[2 * j + 1] = -lim + static_cast<double>(j) * step;
    }
    dpf::Tensor y({grid, 2}, std::move(batch));
    dpf::Tensor c = dpf::broadcast(dpf::reshape(cond, {2}), grid);
    integral += flow.log_prob(store, y, c).data().exp().sum() * step * step;
  }
  const double err = std::abs(integral - 1.0);
  checks.push_back({"flow_density_quadrature", integral, 0.01, err < 0.01});
}

void run_kalman_checks(std::vector<CheckLine>& checks) {
  // scalar conjugate update: x~N(0,1), y = x + N(0,1), y=1 -> posterior N(0.5, 0.5)
  dpf::LgssmParams p;
  p.A = Eigen::MatrixXd::Identity(1, 1);
  p.B = Eigen::MatrixXd::Zero(1, 1);
  p.Q = Eigen::MatrixXd::Zero(1, 1);
  p.H = Eigen::MatrixXd::Identity(1, 1);
  p.R = Eigen::MatrixXd::Identity(1, 1);
  p.m0 = Eigen::VectorXd::Zero(1);
  p.P0 = Eigen::MatrixXd::Identity(1, 1);
  const auto kr = dpf::kalman_oracle(p, {Eigen::VectorXd::Constant(1, 1.0)});
  const double err = std::max(std::abs(kr.means[0][0] - 0.5),
                              std::abs(kr.covariances[0](0, 0) - 0.5));
  checks.push_back({"kalman_conjugate_update", err, 1e-12, err < 1e-12});

  // 2-D LGSSM: particle filter with the exact Gaussian likelihood vs Kalman
  const double sig_dyn = 1.0, sig_meas = 2.0;
  const Eigen::Index T = 10, N = 2000;
  dpf::Rng rng(3);
  Eigen::MatrixXd actions = Eigen::MatrixXd::Zero(T, 2);
  std::vector<Eigen::VectorXd> obs;
  Eigen::Vector2d x{8.0, 8.0};
  for (Eigen::Index t = 0; t < T; ++t) {
    actions.row(t) = Eigen::RowVector2d(dpf::rand_normal(rng), dpf::rand_normal(rng));
    x += actions.row(t).transpose();
    x += Eigen::Vector2d(dpf::rand_normal(rng, 0, sig_dyn), dpf::rand_normal(rng, 0, sig_dyn));
    obs.push_back(x + Eigen::Vector2d(dpf::rand_normal(rng, 0, sig_meas),
                                      dpf::rand_normal(rng, 0, sig_meas)));
  }
  dpf::LgssmParams lg;
  lg.A = Eigen::MatrixXd::Identity(2, 2);
  lg.B = Eigen::MatrixXd::Identity(2, 2);
  lg.Q = sig_dyn * sig_dyn * Eigen::MatrixXd::Identity(2, 2);
  lg.H = Eigen::MatrixXd::Identity(2, 2);
  lg.R = sig_meas * sig_meas * Eigen::MatrixXd::Identity(2, 2);
  lg.m0 = Eigen::VectorXd::Constant(2, 8.0);
  lg.P0 = 9.0 * Eigen::MatrixXd::Identity(2, 2);
  std::vector<Eigen::VectorXd> action_list;
  for (Eigen::Index t = 0; t < T; ++t) action_list.push_back(actions.row(t).transpose());
  const auto oracle = dpf::kalman_oracle(lg, obs, action_list);

  dpf::ParameterStore store;
  dpf::FilterHooks hooks;
  hooks.log_likelihood = [sig_meas](const dpf::ParameterStore&, const dpf::Tensor& y,
                                    const dpf::Tensor& states) {
    return dpf::gaussian_log_density(states, y, dpf::Tensor::scalar(sig_meas * sig_meas));
  };
  dpf::ProposalModel prop;
  dpf::DynamicModel dyn;
  dyn.sigma = dpf::Tensor::scalar(sig_dyn);
  dpf::FilterConfig fc;
  fc.n_particles = N;
  fc.resampler.kind = dpf::ResamplerKind::Systematic;
  std::vector<dpf::Tensor> obs_t;
  for (const auto& o : obs) obs_t.emplace_back(dpf::Shape{2}, dpf::Array(o.array()));
  dpf::Rng frng(17);
  const auto prior = dpf::PriorConfig::gaussian(lg.m0, Eigen::VectorXd::Constant(2, 3.0));
  const dpf::FilterResult res =
      dpf::filter_trajectory(store, hooks, prop, dyn, prior, obs_t, actions, fc, frng);
  double worst = 0.0;
  for (Eigen::Index t = 0; t < T; ++t) {
    const double post_std = std::sqrt(oracle.covariances[static_cast<std::size_t>(t)](0, 0));
    const double dist = (res.estimate_values.row(t + 1).transpose() -
                         oracle.means[static_cast<std::size_t>(t)])
                            .norm();
    worst = std::max(worst, dist / post_std);
  }
  checks.push_back({"lgssm_filter_vs_kalman", worst, 0.2, worst < 0.2});
}

void run_sinkhorn_checks(std::vector<CheckLine>& checks) {
  const Eigen::Index n = 64;
  dpf::Rng rng(23);
  dpf::Array states(n * 2);
  for (Eigen::Index i = 0; i < states.size(); ++i) states[i] = dpf::rand_uniform(rng, 0.0, 10.0);
  dpf::Array logw(n);
  for (Eigen::Index i = 0; i < n; ++i) logw[i] = dpf::rand_normal(rng);
  logw -= std::log((logw - logw.maxCoeff()).exp().sum()) + logw.maxCoeff();

  dpf::ParticleEnsemble ens;
  ens.states = dpf::Tensor({n, 2}, states);
  ens.log_weights = dpf::Tensor({n}, logw);
  dpf::ResamplerConfig rc;
  rc.kind = dpf::ResamplerKind::OtSinkhorn;
  rc.ot_eps = 0.1;
  rc.ot_max_iter = 5000;
  rc.ot_tol = 1e-8;
  dpf::ParticleEnsemble out = dpf::resample(rc, ens, rng);

  const Eigen::VectorXd w = logw.exp().matrix();
  const Eigen::RowVector2d mean_before =
      w.transpose() * ens.states.matrix();
  const Eigen::RowVector2d mean_after = out.states.matrix().colwise().mean();
  const Eigen::MatrixXd centered =
      ens.states.matrix().rowwise() - ens.states.matrix().colwise().mean();
  const double spread = std::sqrt(centered.array().square().sum() / static_cast<double>(n));
  const double drift = (mean_after - mean_before).norm() / spread;
  checks.push_back({"ot_resampling_mean_preservation", drift, 1e-2, drift < 1e-2});
}

int cmd_selftest(const std::string& out_csv) {
  std::vector<CheckLine> checks;
  run_flow_jacobian(checks);
  run_flow_quadrature(checks);
  run_kalman_checks(checks);
  run_sinkhorn_checks(checks);
  bool all_pass = true;
  for (const auto& c : checks) {
    std::printf("%-36s value=%-12.6g threshold=%-10g %s\n", c.name.c_str(), c.value, c.threshold,
                c.pass ? "PASS" : "FAIL");
    all_pass = all_pass && c.pass;
  }
  if (!out_csv.empty()) {
    std::ofstream os(resolve_path(out_csv), std::ios::trunc);
    os << "check,value,threshold,pass\n";
    for (const auto& c : checks) {
      char buf[64];
      std::snprintf(buf, sizeof(buf), "%.10g", c.value);
      os << c.name << "," << buf << "," << c.threshold << "," << (c.pass ? 1 : 0) << "\n";
    }
  }
  if (!all_pass) throw std::runtime_error("selftest: at least one oracle check failed");
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Differentiable particle filtering with flow-based measurement densities"};
  app.require_subcommand(1);

  // simulate
  auto* sim = app.add_subcommand("simulate", "generate a disk-tracking dataset");
  sim->set_config("--config");
  EnvOptions sim_env;
  sim_env.attach(sim);
  long long sim_n = 1;
  std::uint64_t sim_seed = 0;
  std::string sim_out = "dataset";
  bool sim_force = false;
  sim->add_option("--trajectories", sim_n, "number of trajectories")->required();
  sim->add_option("--seed", sim_seed, "master seed");
  sim->add_option("--out", sim_out, "output dataset directory")->required();
  sim->add_flag("--force", sim_force, "overwrite an existing dataset");

  // train
  auto* tr = app.add_subcommand("train", "train a differentiable particle filter");
  tr->set_config("--config");
  ModelOptions tr_model;
  tr_model.attach(tr);
  dpf::TrainConfig tr_cfg;
  std::string tr_train, tr_val, tr_out = "run";
  std::string tr_opt = "adam";
  bool tr_resume = false, tr_no_wall = false;
  tr->add_option("--train-data", tr_train, "training dataset directory")->required();
  tr->add_option("--val-data", tr_val, "validation dataset directory")->required();
  tr->add_option("--out", tr_out, "output directory (checkpoints + metrics)");
  tr->add_option("--epochs", tr_cfg.epochs);
  tr->add_option("--batch-size", tr_cfg.batch_size);
  tr->add_option("--lr", tr_cfg.learning_rate, "learning rate");
  tr->add_option("--clip", tr_cfg.clip_norm, "global gradient-norm clip (<=0 disables)");
  tr->add_option("--optimizer", tr_opt)->check(CLI::IsMember({"adam", "sgd"}));
  tr->add_option("--seed", tr_cfg.seed);
  tr->add_option("--threads", tr_cfg.n_threads, "worker threads (0 = hardware)");
  tr->add_option("--patience", tr_cfg.patience, "early-stopping patience in epochs");
  tr->add_flag("--resume", tr_resume, "continue from last.ckpt in --out");
  tr->add_flag("--no-wall-clock", tr_no_wall,
               "write 0 in the wall_seconds column (reproducible CSV bytes)");

  // evaluate
  auto* ev = app.add_subcommand("evaluate", "run a checkpoint on a test set");
  ev->set_config("--config-file");
  std::string ev_ckpt, ev_cfg, ev_data, ev_out = "eval.csv";
  int ev_nseeds = 5, ev_threads = 0;
  std::uint64_t ev_seed_base = 0;
  ev->add_option("--checkpoint", ev_ckpt)->required();
  ev->add_option("--model-config", ev_cfg, "model config echo (default: config.txt next to ckpt)");
  ev->add_option("--data", ev_data, "test dataset directory")->required();
  ev->add_option("--seeds", ev_nseeds, "number of filtering seeds");
  ev->add_option("--seed-base", ev_seed_base, "first seed value");
  ev->add_option("--out", ev_out, "report CSV path");
  ev->add_option("--threads", ev_threads);

  // selftest
  auto* st = app.add_subcommand("selftest", "run the oracle suites (Jacobian, Kalman, quadrature)");
  std::string st_out;
  st->add_option("--out", st_out, "also write results as CSV");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (sim->parsed()) return cmd_simulate(sim_env, sim_n, sim_seed, sim_out, sim_force);
    if (tr->parsed()) {
      tr_cfg.model = tr_model.resolve();
      tr_cfg.optimizer = tr_opt == "sgd" ? dpf::OptimizerKind::Sgd : dpf::OptimizerKind::Adam;
      tr_cfg.record_wall_time = !tr_no_wall;
      return cmd_train(tr_cfg, tr_train, tr_val, tr_out, tr_resume);
    }
    if (ev->parsed())
      return cmd_evaluate(ev_ckpt, ev_cfg, ev_data, ev_nseeds, ev_seed_base, ev_out, ev_threads);
    if (st->parsed()) return cmd_selftest(st_out);
  } catch (const CLI::Error& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitConfig;
}
