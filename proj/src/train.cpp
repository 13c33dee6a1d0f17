#include "dpf/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>
#include <thread>

namespace dpf {

Tensor loss_rmse(const std::vector<Tensor>& estimates, const Eigen::MatrixXd& truths) {
  const Eigen::Index n = static_cast<Eigen::Index>(estimates.size());
  if (n != truths.rows())
    throw TensorError("loss_rmse: " + std::to_string(n) + " estimates vs " +
                      std::to_string(truths.rows()) + " ground-truth rows");
  if (n < 2) throw TensorError("loss_rmse: need at least two steps");
  const double inv_T = 1.0 / static_cast<double>(n - 1);
  Tensor acc = Tensor::scalar(0.0);
  for (Eigen::Index t = 0; t < n; ++t) {
    Tensor truth({truths.cols()}, truths.row(t).array().transpose());
    acc = add(acc, sum(square(sub(estimates[static_cast<std::size_t>(t)], truth))));
  }
  Tensor msq = scale(acc, inv_T);
  if (msq.value() == 0.0) return msq;  // exact hit; sqrt'(0) is undefined
  return sqrt(msq);
}

Tensor loss_ae(const std::vector<Tensor>& images, const Encoder& encoder, const Decoder& decoder,
               const ParameterStore& store) {
  const Eigen::Index n = static_cast<Eigen::Index>(images.size());
  if (n < 2) throw TensorError("loss_ae: need at least two frames");
  const double inv_T = 1.0 / static_cast<double>(n - 1);
  Tensor acc = Tensor::scalar(0.0);
  for (const Tensor& y : images) {
    Tensor rec = decoder.forward(store, encoder.forward(store, y));
    Tensor diff = sub(rec, y);
    acc = add(acc, sum(square(diff)));
  }
  return scale(acc, inv_T);
}

Optimizer::Optimizer(OptimizerKind kind, double lr) : kind_(kind), lr_(lr) {}

void Optimizer::step(ParameterStore& store, Eigen::VectorXd grad, double clip_norm) {
  if (grad.size() != store.total_size()) throw TensorError("Optimizer::step: gradient size mismatch");
  if (clip_norm > 0.0) {
    const double norm = grad.norm();
    if (norm > clip_norm) grad *= clip_norm / norm;
  }
  Eigen::VectorXd values = store.flat_values();
  if (kind_ == OptimizerKind::Sgd) {
    values -= lr_ * grad;
    store.set_flat_values(values);
    ++step_count_;
    return;
  }
  if (m_.size() != grad.size()) {
    m_ = Eigen::VectorXd::Zero(grad.size());
    v_ = Eigen::VectorXd::Zero(grad.size());
  }
  ++step_count_;
  m_ = beta1_ * m_ + (1.0 - beta1_) * grad;
  v_ = beta2_ * v_.array().matrix() + (1.0 - beta2_) * grad.array().square().matrix();
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(step_count_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(step_count_));
  values.array() -=
      lr_ * (m_.array() / bc1) / ((v_.array() / bc2).sqrt() + eps_);
  store.set_flat_values(values);
}

void Optimizer::save(const std::filesystem::path& path) const {
  ParameterStore s;
  s.create("opt.meta", {4},
           (Array(4) << static_cast<double>(kind_ == OptimizerKind::Adam ? 1 : 0), lr_,
            static_cast<double>(step_count_), static_cast<double>(m_.size()))
               .finished());
  if (m_.size()) {
    s.create("opt.m", {m_.size()}, m_.array());
    s.create("opt.v", {v_.size()}, v_.array());
  }
  s.save(path);
}

void Optimizer::load(const std::filesystem::path& path, const ParameterStore& store) {
  ParameterStore s = ParameterStore::load(path);
  const Array meta = s.at("opt.meta").data();
  kind_ = meta[0] != 0.0 ? OptimizerKind::Adam : OptimizerKind::Sgd;
  lr_ = meta[1];
  step_count_ = static_cast<long>(meta[2]);
  const Eigen::Index n = static_cast<Eigen::Index>(meta[3]);
  if (n > 0) {
    if (n != store.total_size())
      throw TensorError("Optimizer::load: moment size does not match parameter store");
    m_ = s.at("opt.m").data().matrix();
    v_ = s.at("opt.v").data().matrix();
  } else {
    m_.resize(0);
    v_.resize(0);
  }
}

std::string ModelConfig::method_name() const {
  std::string name = proposal == ProposalKind::Cnf ? "CNF-DPF-" : "DPF-";
  switch (measurement) {
    case MeasurementKind::CM: return name + "CM";
    case MeasurementKind::NN: return name + "NN";
    case MeasurementKind::COS: return name + "COS";
  }
  return name + "?";
}

void ModelConfig::save(const std::filesystem::path& path) const {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw TensorError("ModelConfig: cannot write '" + path.string() + "'");
  os << "measurement = " << measurement_name(measurement) << "\n";
  os << "proposal = " << proposal_name(proposal) << "\n";
  os << "n_particles = " << n_particles << "\n";
  os << "feature_dim = " << feature_dim << "\n";
  os << "downsample_to = " << downsample_to << "\n";
  os << "encoder_hidden =";
  for (Eigen::Index h : encoder_hidden) os << " " << h;
  os << "\n";
  os << "flow_layers = " << flow_layers << "\n";
  os << "flow_hidden = " << flow_hidden << "\n";
  os << "resampler = " << resampler_name(resampler.kind) << "\n";
  os << "ot_eps = " << resampler.ot_eps << "\n";
  os << "ot_max_iter = " << resampler.ot_max_iter << "\n";
  os << "ot_tol = " << resampler.ot_tol << "\n";
  os << "ess_threshold = " << ess_threshold << "\n";
}

ModelConfig ModelConfig::load(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw TensorError("ModelConfig: cannot read '" + path.string() + "'");
  std::map<std::string, std::string> kv;
  std::string line;
  while (std::getline(is, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    auto trim = [](std::string s) {
      const auto a = s.find_first_not_of(" \t");
      const auto b = s.find_last_not_of(" \t\r");
      return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
    };
    kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  auto need = [&](const std::string& key) {
    auto it = kv.find(key);
    if (it == kv.end()) throw TensorError("ModelConfig: missing key '" + key + "'");
    return it->second;
  };
  ModelConfig c;
  c.measurement = measurement_from_name(need("measurement"));
  c.proposal = proposal_from_name(need("proposal"));
  c.n_particles = std::stoll(need("n_particles"));
  c.feature_dim = std::stoll(need("feature_dim"));
  c.downsample_to = std::stoll(need("downsample_to"));
  {
    std::istringstream hs(need("encoder_hidden"));
    c.encoder_hidden.clear();
    Eigen::Index h;
    while (hs >> h) c.encoder_hidden.push_back(h);
  }
  c.flow_layers = std::stoll(need("flow_layers"));
  c.flow_hidden = std::stoll(need("flow_hidden"));
  c.resampler.kind = resampler_from_name(need("resampler"));
  c.resampler.ot_eps = std::stod(need("ot_eps"));
  c.resampler.ot_max_iter = std::stoi(need("ot_max_iter"));
  c.resampler.ot_tol = std::stod(need("ot_tol"));
  c.ess_threshold = std::stod(need("ess_threshold"));
  return c;
}

namespace {

EncoderConfig encoder_config(const ModelConfig& cfg, const DiskWorldConfig& env) {
  EncoderConfig e;
  e.image_size = env.image_size;
  e.downsample_to = cfg.downsample_to;
  e.hidden = cfg.encoder_hidden;
  e.feature_dim = cfg.feature_dim;
  return e;
}

DpfModel assemble(const ModelConfig& cfg, const DiskWorldConfig& env) {
  DpfModel m;
  m.config = cfg;
  const EncoderConfig enc = encoder_config(cfg, env);
  m.encoder = Encoder(enc, "enc");
  m.decoder = Decoder(enc, "dec");
  // States are raw pixel coordinates; nets see them scaled to ~[0,1].
  const double cond_scale = 1.0 / static_cast<double>(env.image_size);
  MeasurementConfig mc = MeasurementConfig::make(cfg.measurement, enc, 2, cond_scale);
  mc.flow.n_layers = cfg.flow_layers;
  mc.flow.hidden = cfg.flow_hidden;
  m.measurement = MeasurementModel(mc, "meas");
  m.proposal.kind = cfg.proposal;
  m.proposal.cond_scale = cond_scale;
  if (cfg.proposal == ProposalKind::Cnf) {
    FlowConfig pf;
    pf.data_dim = 2;
    pf.cond_dim = 2 + cfg.feature_dim;
    pf.n_layers = cfg.flow_layers;
    pf.hidden = cfg.flow_hidden;
    m.proposal.flow = ConditionalFlow(pf, "prop.flow");
  }
  m.dynamic.sigma = Tensor::scalar(env.filter_noise_std());
  m.prior = PriorConfig::box(2, 0.0, static_cast<double>(env.image_size));
  return m;
}

}  // namespace

DpfModel DpfModel::build(const ModelConfig& cfg, const DiskWorldConfig& env, ParameterStore& store,
                         Rng& rng) {
  DpfModel m = assemble(cfg, env);
  m.encoder.init(store, rng);
  m.decoder.init(store, rng);
  m.measurement.init(store, rng);
  if (cfg.proposal == ProposalKind::Cnf) m.proposal.flow.init(store, rng);
  return m;
}

DpfModel DpfModel::bind(const ModelConfig& cfg, const DiskWorldConfig& env,
                        const ParameterStore& store, bool verify) {
  DpfModel m = assemble(cfg, env);
  if (verify) {
    // Shape-check by rebuilding the expected parameter set.
    ParameterStore expected;
    Rng rng(0);
    DpfModel::build(cfg, env, expected, rng);
    for (const auto& key : expected.keys()) {
      if (!store.has(key))
        throw TensorError("checkpoint/config mismatch: missing parameter '" + key + "'");
      if (store.at(key).shape() != expected.at(key).shape())
        throw TensorError("checkpoint/config mismatch: parameter '" + key + "' has shape " +
                          shape_str(store.at(key).shape()) + ", expected " +
                          shape_str(expected.at(key).shape()));
    }
  }
  return m;
}

FilterHooks DpfModel::hooks() const {
  FilterHooks h;
  const Encoder* enc = &encoder;
  const MeasurementModel* meas = &measurement;
  h.encode = [enc](const ParameterStore& store, const Tensor& y) {
    return enc->forward(store, y);
  };
  h.log_likelihood = [meas](const ParameterStore& store, const Tensor& features,
                            const Tensor& states) {
    return meas->log_likelihood_features(store, features, states);
  };
  return h;
}

FilterConfig DpfModel::filter_config() const {
  FilterConfig f;
  f.n_particles = config.n_particles;
  f.resampler = config.resampler;
  f.ess_threshold = config.ess_threshold;
  return f;
}

LoadedDataset load_dataset(const std::filesystem::path& dir) {
  LoadedDataset d;
  d.manifest = read_manifest(dir);
  d.trajectories.reserve(static_cast<std::size_t>(d.manifest.n_trajectories));
  for (Eigen::Index i = 0; i < d.manifest.n_trajectories; ++i)
    d.trajectories.push_back(read_trajectory(dir, d.manifest, i));
  return d;
}

FilterResult run_filter(const DpfModel& model, const ParameterStore& store,
                        const EnvTrajectory& traj, Rng& rng) {
  std::vector<Tensor> observations(traj.images.begin() + 1, traj.images.end());
  return filter_trajectory(store, model.hooks(), model.proposal, model.dynamic, model.prior,
                           observations, traj.actions, model.filter_config(), rng);
}

double trajectory_rmse(const Eigen::MatrixXd& estimates, const Eigen::MatrixXd& truths) {
  const Eigen::Index n = estimates.rows();
  const double sum_sq = (estimates - truths).array().square().rowwise().sum().sum();
  return std::sqrt(sum_sq / static_cast<double>(n - 1));
}

namespace {

struct WorkerOut {
  Eigen::VectorXd grad;
  double l_rmse = 0.0, l_ae = 0.0, l_overall = 0.0;
  std::string error;
};

int resolve_threads(int requested) {
  if (requested > 0) return requested;
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

// Runs fn(i) for i in [0, n) across workers; exceptions surface in order.
void parallel_for(Eigen::Index n, int n_threads, const std::function<void(Eigen::Index)>& fn) {
  const int workers = std::min<Eigen::Index>(std::max(1, n_threads), n);
  if (workers <= 1) {
    for (Eigen::Index i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::string> errors(static_cast<std::size_t>(workers));
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (Eigen::Index i = w; i < n; i += workers) fn(i);
      } catch (const std::exception& e) {
        errors[static_cast<std::size_t>(w)] = e.what();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (const auto& e : errors)
    if (!e.empty()) throw TensorError(e);
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

// round-trip exact, for resume state
std::string fmt17(double v) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

double epoch_seconds(const std::chrono::steady_clock::time_point& t0, bool record) {
  if (!record) return 0.0;
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

struct TrainMeta {
  Eigen::Index next_epoch = 0;
  double best_val = std::numeric_limits<double>::infinity();
  Eigen::Index best_epoch = -1;
  std::vector<double> val_history;
};

void save_meta(const std::filesystem::path& path, const TrainMeta& m) {
  std::ofstream os(path, std::ios::trunc);
  os << "next_epoch = " << m.next_epoch << "\n";
  os << "best_val = " << fmt17(m.best_val) << "\n";
  os << "best_epoch = " << m.best_epoch << "\n";
  os << "val_history =";
  for (double v : m.val_history) os << " " << fmt17(v);
  os << "\n";
}

TrainMeta load_meta(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw TensorError("train: cannot read meta file '" + path.string() + "'");
  TrainMeta m;
  std::string key, eq;
  while (is >> key >> eq) {
    if (key == "next_epoch") is >> m.next_epoch;
    else if (key == "best_val") is >> m.best_val;
    else if (key == "best_epoch") is >> m.best_epoch;
    else if (key == "val_history") {
      double v;
      while (is >> v) m.val_history.push_back(v);
    }
  }
  return m;
}

double validation_rmse(const DpfModel& model, const ParameterStore& store,
                       const LoadedDataset& data, std::uint64_t seed, Eigen::Index epoch,
                       int n_threads, double* ae_out) {
  const Eigen::Index n = static_cast<Eigen::Index>(data.trajectories.size());
  std::vector<double> rmse(static_cast<std::size_t>(n));
  std::vector<double> ae(static_cast<std::size_t>(n), 0.0);
  const bool want_ae = ae_out != nullptr;
  parallel_for(n, n_threads, [&](Eigen::Index i) {
    NoGradGuard no_grad;
    const auto& traj = data.trajectories[static_cast<std::size_t>(i)];
    Rng rng(derive_seed(seed, 0x7A11D, static_cast<std::uint64_t>(epoch),
                        static_cast<std::uint64_t>(i)));
    FilterResult res = run_filter(model, store, traj, rng);
    rmse[static_cast<std::size_t>(i)] = trajectory_rmse(res.estimate_values, traj.states);
    if (want_ae)
      ae[static_cast<std::size_t>(i)] =
          loss_ae(traj.images, model.encoder, model.decoder, store).value();
  });
  if (ae_out)
    *ae_out = std::accumulate(ae.begin(), ae.end(), 0.0) / static_cast<double>(n);
  return std::accumulate(rmse.begin(), rmse.end(), 0.0) / static_cast<double>(n);
}

}  // namespace

TrainResult train_run(const TrainConfig& cfg, const LoadedDataset& train_data,
                      const LoadedDataset& val_data, const std::filesystem::path& out_dir,
                      bool resume) {
  if (train_data.trajectories.empty() || val_data.trajectories.empty())
    throw TensorError("train_run: empty dataset");
  std::filesystem::create_directories(out_dir);
  const DiskWorldConfig& env = train_data.manifest.config;
  const int n_threads = resolve_threads(cfg.n_threads);

  ParameterStore store;
  Optimizer opt(cfg.optimizer, cfg.learning_rate);
  TrainMeta meta;
  DpfModel model;

  const auto last_ckpt = out_dir / "last.ckpt";
  const auto best_ckpt = out_dir / "best.ckpt";
  const auto opt_ckpt = out_dir / "optimizer.ckpt";
  const auto meta_path = out_dir / "train_meta.txt";
  const auto metrics_path = out_dir / "metrics.csv";

  if (resume) {
    store = ParameterStore::load(last_ckpt);
    model = DpfModel::bind(cfg.model, env, store);
    opt.load(opt_ckpt, store);
    meta = load_meta(meta_path);
  } else {
    Rng init_rng(derive_seed(cfg.seed, 0x1417));
    model = DpfModel::build(cfg.model, env, store, init_rng);
    cfg.model.save(out_dir / "config.txt");
    std::ofstream os(metrics_path, std::ios::trunc);
    os << "epoch,split,step_or_overall,rmse,loss_rmse,loss_ae,wall_seconds,seed\n";
  }

  const Eigen::Index n_train = static_cast<Eigen::Index>(train_data.trajectories.size());
  const Eigen::Index n_params = store.total_size();

  TrainResult result;
  result.best_val_rmse = meta.best_val;
  result.best_epoch = meta.best_epoch;
  result.val_rmse_per_epoch = meta.val_history;

  for (Eigen::Index epoch = meta.next_epoch; epoch < cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();

    // deterministic shuffle per (seed, epoch)
    std::vector<Eigen::Index> order(static_cast<std::size_t>(n_train));
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    Rng shuffle_rng(derive_seed(cfg.seed, 0x517FFE, static_cast<std::uint64_t>(epoch)));
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    double ep_rmse = 0.0, ep_ae = 0.0, ep_overall = 0.0;
    Eigen::Index done = 0;
    for (Eigen::Index start = 0; start < n_train; start += cfg.batch_size) {
      const Eigen::Index bsz = std::min<Eigen::Index>(cfg.batch_size, n_train - start);
      std::vector<WorkerOut> outs(static_cast<std::size_t>(bsz));
      parallel_for(bsz, n_threads, [&](Eigen::Index k) {
        const Eigen::Index traj_idx = order[static_cast<std::size_t>(start + k)];
        const auto& traj = train_data.trajectories[static_cast<std::size_t>(traj_idx)];
        ParameterStore local = store.clone();
        DpfModel local_model = DpfModel::bind(cfg.model, env, local, /*verify=*/false);
        Rng rng(derive_seed(cfg.seed, 0xF117E5, static_cast<std::uint64_t>(epoch),
                            static_cast<std::uint64_t>(traj_idx)));
        Tape tape;
        WorkerOut& out = outs[static_cast<std::size_t>(k)];
        {
          TapeScope scope(tape);
          FilterResult res = run_filter(local_model, local, traj, rng);
          Tensor l_r = loss_rmse(res.estimates, traj.states);
          Tensor l_a = loss_ae(traj.images, local_model.encoder, local_model.decoder, local);
          Tensor l = add(l_r, l_a);
          out.l_rmse = l_r.value();
          out.l_ae = l_a.value();
          out.l_overall = l.value();
          if (!std::isfinite(out.l_overall))
            throw TensorError("train_run: non-finite loss at epoch " + std::to_string(epoch) +
                              ", trajectory " + std::to_string(traj_idx) + " (rmse " +
                              fmt(out.l_rmse) + ", ae " + fmt(out.l_ae) + ")");
          backward(l);
        }
        out.grad = local.flat_grads();
      });

      Eigen::VectorXd grad = Eigen::VectorXd::Zero(n_params);
      for (const auto& o : outs) {  // fixed reduction order
        grad += o.grad;
        ep_rmse += o.l_rmse;
        ep_ae += o.l_ae;
        ep_overall += o.l_overall;
      }
      grad /= static_cast<double>(bsz);
      opt.step(store, std::move(grad), cfg.clip_norm);
      done += bsz;
    }
    ep_rmse /= static_cast<double>(done);
    ep_ae /= static_cast<double>(done);
    ep_overall /= static_cast<double>(done);

    double val_ae = 0.0;
    const double val_rmse =
        validation_rmse(model, store, val_data, cfg.seed, epoch, n_threads, &val_ae);
    meta.val_history.push_back(val_rmse);
    result.val_rmse_per_epoch.push_back(val_rmse);

    const double wall = epoch_seconds(t0, cfg.record_wall_time);
    {
      std::ofstream os(metrics_path, std::ios::app);
      os << epoch << ",train,overall," << fmt(ep_rmse) << "," << fmt(ep_rmse) << ","
         << fmt(ep_ae) << "," << fmt(wall) << "," << cfg.seed << "\n";
      os << epoch << ",val,overall," << fmt(val_rmse) << "," << fmt(val_rmse) << ","
         << fmt(val_ae) << "," << fmt(wall) << "," << cfg.seed << "\n";
    }

    if (val_rmse < meta.best_val) {
      meta.best_val = val_rmse;
      meta.best_epoch = epoch;
      store.save(best_ckpt);
    }
    meta.next_epoch = epoch + 1;
    store.save(last_ckpt);
    opt.save(opt_ckpt);
    save_meta(meta_path, meta);

    result.epochs_run = epoch + 1;
    if (cfg.patience > 0 && epoch - meta.best_epoch >= cfg.patience) break;
  }

  result.best_val_rmse = meta.best_val;
  result.best_epoch = meta.best_epoch;
  result.best_checkpoint = best_ckpt;
  result.metrics_csv = metrics_path;
  return result;
}

EvalReport evaluate(const DpfModel& model, const ParameterStore& store,
                    const LoadedDataset& test_data, const std::vector<std::uint64_t>& seeds,
                    int n_threads) {
  if (test_data.trajectories.empty()) throw TensorError("evaluate: empty dataset");
  if (seeds.empty()) throw TensorError("evaluate: need at least one seed");
  const Eigen::Index T = test_data.manifest.config.trajectory_length;
  const Eigen::Index n_traj = static_cast<Eigen::Index>(test_data.trajectories.size());
  const int workers = resolve_threads(n_threads);

  EvalReport report;
  report.per_step_rmse.resize(static_cast<Eigen::Index>(seeds.size()), T + 1);
  report.overall.resize(static_cast<Eigen::Index>(seeds.size()));

  for (std::size_t s = 0; s < seeds.size(); ++s) {
    Eigen::MatrixXd sq_err = Eigen::MatrixXd::Zero(n_traj, T + 1);
    parallel_for(n_traj, workers, [&](Eigen::Index i) {
      NoGradGuard no_grad;
      const auto& traj = test_data.trajectories[static_cast<std::size_t>(i)];
      Rng rng(derive_seed(seeds[s], 0xE7A1, static_cast<std::uint64_t>(i)));
      FilterResult res = run_filter(model, store, traj, rng);
      sq_err.row(i) =
          (res.estimate_values - traj.states).array().square().rowwise().sum().transpose();
    });
    // RMSE across the test set at each step, then averaged over steps.
    report.per_step_rmse.row(static_cast<Eigen::Index>(s)) =
        (sq_err.colwise().mean()).array().sqrt();
    report.overall[static_cast<Eigen::Index>(s)] =
        report.per_step_rmse.row(static_cast<Eigen::Index>(s)).mean();
  }
  report.overall_mean = report.overall.mean();
  if (seeds.size() > 1) {
    const double var =
        (report.overall.array() - report.overall_mean).square().sum() /
        static_cast<double>(seeds.size() - 1);
    report.overall_std = std::sqrt(var);
  }
  return report;
}

void write_eval_csv(const EvalReport& report, const std::vector<std::uint64_t>& seeds,
                    const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw TensorError("write_eval_csv: cannot open '" + path.string() + "'");
  os << "seed,step_or_overall,rmse\n";
  for (std::size_t s = 0; s < seeds.size(); ++s) {
    for (Eigen::Index t = 0; t < report.per_step_rmse.cols(); ++t)
      os << seeds[s] << "," << t << "," << fmt(report.per_step_rmse(static_cast<Eigen::Index>(s), t))
         << "\n";
    os << seeds[s] << ",overall," << fmt(report.overall[static_cast<Eigen::Index>(s)]) << "\n";
  }
  os << "all,overall_mean," << fmt(report.overall_mean) << "\n";
  os << "all,overall_std," << fmt(report.overall_std) << "\n";
}

}  // namespace dpf
