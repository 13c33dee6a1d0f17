#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "dpf/disk_env.hpp"
#include "dpf/measurement.hpp"
#include "dpf/smc.hpp"

namespace dpf {

struct LossBreakdown {
  double l_rmse = 0.0;
  double l_ae = 0.0;
  double l_overall = 0.0;
};

// sqrt((1/T) sum_{t=0..T} ||est_t - truth_t||^2). The sum runs over T+1
// terms with a 1/T normalizer; estimates.size() must equal truths.rows().
Tensor loss_rmse(const std::vector<Tensor>& estimates, const Eigen::MatrixXd& truths);

// (1/T) sum_{t=0..T} ||D(E(y_t)) - y_t||^2 over pixels.
Tensor loss_ae(const std::vector<Tensor>& images, const Encoder& encoder, const Decoder& decoder,
               const ParameterStore& store);

enum class OptimizerKind { Sgd, Adam };

class Optimizer {
 public:
  Optimizer() = default;
  Optimizer(OptimizerKind kind, double lr);

  // Applies one update from a flat gradient laid out in store key order.
  // clip_norm <= 0 disables clipping.
  void step(ParameterStore& store, Eigen::VectorXd grad, double clip_norm);

  void save(const std::filesystem::path& path) const;
  void load(const std::filesystem::path& path, const ParameterStore& store);

  OptimizerKind kind() const { return kind_; }
  long step_count() const { return step_count_; }

 private:
  OptimizerKind kind_ = OptimizerKind::Adam;
  double lr_ = 1e-3;
  double beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
  long step_count_ = 0;
  Eigen::VectorXd m_, v_;
};

struct ModelConfig {
  MeasurementKind measurement = MeasurementKind::CM;
  ProposalKind proposal = ProposalKind::Bootstrap;
  Eigen::Index n_particles = 100;
  Eigen::Index feature_dim = 32;
  Eigen::Index downsample_to = 24;
  std::vector<Eigen::Index> encoder_hidden = {256, 64};
  Eigen::Index flow_layers = 4;
  Eigen::Index flow_hidden = 64;
  ResamplerConfig resampler;
  double ess_threshold = -1.0;

  // "DPF-CM", "CNF-DPF-COS", ...
  std::string method_name() const;

  void save(const std::filesystem::path& path) const;
  static ModelConfig load(const std::filesystem::path& path);
};

// Everything the filter needs, bound to parameter names in a store.
struct DpfModel {
  ModelConfig config;
  Encoder encoder;
  Decoder decoder;
  MeasurementModel measurement;
  ProposalModel proposal;
  DynamicModel dynamic;
  PriorConfig prior;

  // Construct and initialize fresh parameters.
  static DpfModel build(const ModelConfig& cfg, const DiskWorldConfig& env, ParameterStore& store,
                        Rng& rng);
  // Construct against an existing store; verify checks every expected
  // parameter key and shape (skip for clones of an already-verified store).
  static DpfModel bind(const ModelConfig& cfg, const DiskWorldConfig& env,
                       const ParameterStore& store, bool verify = true);

  FilterHooks hooks() const;
  FilterConfig filter_config() const;
};

struct LoadedDataset {
  DatasetManifest manifest;
  std::vector<EnvTrajectory> trajectories;
};

LoadedDataset load_dataset(const std::filesystem::path& dir);

FilterResult run_filter(const DpfModel& model, const ParameterStore& store,
                        const EnvTrajectory& traj, Rng& rng);

double trajectory_rmse(const Eigen::MatrixXd& estimates, const Eigen::MatrixXd& truths);

struct TrainConfig {
  ModelConfig model;
  Eigen::Index epochs = 10;
  Eigen::Index batch_size = 8;
  double learning_rate = 1e-3;
  double clip_norm = 10.0;
  OptimizerKind optimizer = OptimizerKind::Adam;
  std::uint64_t seed = 0;
  int n_threads = 0;  // 0 = hardware concurrency
  Eigen::Index patience = 10;
  bool record_wall_time = true;  // false writes 0 so reruns are byte-identical
};

struct TrainResult {
  double best_val_rmse = 0.0;
  Eigen::Index best_epoch = 0;
  Eigen::Index epochs_run = 0;
  std::vector<double> val_rmse_per_epoch;
  std::filesystem::path best_checkpoint;
  std::filesystem::path metrics_csv;
};

// Full Algorithm-1 style loop: minibatches of trajectories, differentiable
// filtering, L_overall backward, optimizer step; per-epoch validation with
// early stopping; checkpoints and a metrics CSV under out_dir.
TrainResult train_run(const TrainConfig& cfg, const LoadedDataset& train_data,
                      const LoadedDataset& val_data, const std::filesystem::path& out_dir,
                      bool resume = false);

struct EvalReport {
  Eigen::MatrixXd per_step_rmse;  // [n_seeds, T+1]
  Eigen::VectorXd overall;        // [n_seeds]
  double overall_mean = 0.0;
  double overall_std = 0.0;
};

EvalReport evaluate(const DpfModel& model, const ParameterStore& store,
                    const LoadedDataset& test_data, const std::vector<std::uint64_t>& seeds,
                    int n_threads = 0);

void write_eval_csv(const EvalReport& report, const std::vector<std::uint64_t>& seeds,
                    const std::filesystem::path& path);

}  // namespace dpf
