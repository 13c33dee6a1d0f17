#pragma once

#include <Eigen/Dense>

#include <filesystem>
#include <string>
#include <vector>

#include "dpf/rng.hpp"
#include "dpf/tensor.hpp"

namespace dpf {

struct DiskWorldConfig {
  Eigen::Index image_size = 128;  // L, square RGB canvas
  int n_distractors = 25;
  double target_radius = 7.0;
  int distractor_radius_min = 3;
  int distractor_radius_max = 10;
  double sigma_action = 4.0;   // std of the action noise eps
  double sigma_dynamic = 2.0;  // std of the dynamic noise alpha
  double init_velocity_std = 1.0;
  Eigen::Index trajectory_length = 50;  // T
  bool iid_actions = false;  // false: velocity carries over as the realized action

  void validate() const;
  // The filter observes the pre-noise action, so its exact Gaussian
  // transition has variance sigma_action^2 + sigma_dynamic^2 per axis.
  double filter_noise_std() const;
};

// RGB palette; the target is always red, distractors draw from the rest.
Eigen::Vector3d disk_color(int color_index);
constexpr int kNumDistractorColors = 6;

struct DiskState {
  Eigen::Vector2d position;  // (x = column, y = row), pixels
  Eigen::Vector2d velocity;
  double radius = 0.0;
  int color = 0;  // index into the distractor palette; ignored for the target
};

struct WorldState {
  DiskState target;
  std::vector<DiskState> distractors;
};

struct StepRecord {
  Eigen::Vector2d action;        // a_t: target velocity before noise
  Eigen::Vector2d noisy_action;  // a_t + eps_t
};

WorldState init_world(const DiskWorldConfig& config, Rng& rng);
StepRecord step_world(WorldState& state, const DiskWorldConfig& config, Rng& rng);

// Black background; the target is drawn first so distractors may occlude it.
// No anti-aliasing: pixel (row i, col j) belongs to a disk at p with radius r
// iff (j - p.x)^2 + (i - p.y)^2 <= r^2. Off-canvas parts clip.
Tensor render(const WorldState& state, const DiskWorldConfig& config);

struct EnvTrajectory {
  Eigen::MatrixXd states;         // [T+1, 2] ground truth
  Eigen::MatrixXd actions;        // [T, 2] filter-visible actions
  Eigen::MatrixXd noisy_actions;  // [T, 2]
  std::vector<Tensor> images;     // T+1 frames [L, L, 3]
};

EnvTrajectory simulate_trajectory(const DiskWorldConfig& config, Rng& rng);

struct DatasetManifest {
  int format_version = 1;
  DiskWorldConfig config;
  Eigen::Index n_trajectories = 0;
};

// Dataset directory: manifest.txt (key = value lines) plus traj_NNNNN.bin
// records holding f32 frames [T+1,L,L,3], f64 states [T+1,2] and f64 actions
// [T,2], all little-endian.
void generate_dataset(const DiskWorldConfig& config, Eigen::Index n_trajectories, Rng& rng,
                      const std::filesystem::path& dir);

DatasetManifest read_manifest(const std::filesystem::path& dir);
EnvTrajectory read_trajectory(const std::filesystem::path& dir, const DatasetManifest& manifest,
                              Eigen::Index index);
void write_trajectory(const std::filesystem::path& dir, const DatasetManifest& manifest,
                      Eigen::Index index, const EnvTrajectory& traj);
void write_manifest(const std::filesystem::path& dir, const DatasetManifest& manifest);

}  // namespace dpf
