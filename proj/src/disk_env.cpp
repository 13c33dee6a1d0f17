#include "dpf/disk_env.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>

namespace dpf {

static_assert(std::endian::native == std::endian::little,
              "dataset format assumes a little-endian host");

void DiskWorldConfig::validate() const {
  if (image_size < 4) throw TensorError("DiskWorldConfig: image_size too small");
  if (n_distractors < 0) throw TensorError("DiskWorldConfig: n_distractors must be >= 0");
  if (target_radius <= 0.0) throw TensorError("DiskWorldConfig: target_radius must be positive");
  if (distractor_radius_min <= 0 || distractor_radius_max < distractor_radius_min)
    throw TensorError("DiskWorldConfig: bad distractor radius range");
  if (sigma_action < 0.0 || sigma_dynamic < 0.0)
    throw TensorError("DiskWorldConfig: noise stds must be >= 0");
  const double max_r = std::max(target_radius, static_cast<double>(distractor_radius_max));
  if (static_cast<double>(image_size) < 4.0 * max_r)
    throw TensorError("DiskWorldConfig: image_size must be at least 4x the largest radius");
  if (trajectory_length < 0) throw TensorError("DiskWorldConfig: negative trajectory length");
}

double DiskWorldConfig::filter_noise_std() const {
  return std::sqrt(sigma_action * sigma_action + sigma_dynamic * sigma_dynamic);
}

Eigen::Vector3d disk_color(int color_index) {
  switch (color_index) {
    case 0: return {0.0, 1.0, 0.0};  // green
    case 1: return {0.0, 0.0, 1.0};  // blue
    case 2: return {0.0, 1.0, 1.0};  // cyan
    case 3: return {1.0, 0.0, 1.0};  // purple
    case 4: return {1.0, 1.0, 0.0};  // yellow
    case 5: return {1.0, 1.0, 1.0};  // white
    default: throw TensorError("disk_color: index out of range");
  }
}

WorldState init_world(const DiskWorldConfig& config, Rng& rng) {
  config.validate();
  const double L = static_cast<double>(config.image_size);
  auto init_disk = [&](double radius, int color) {
    DiskState d;
    d.position = {rand_uniform(rng, 0.0, L), rand_uniform(rng, 0.0, L)};
    d.velocity = {rand_normal(rng, 0.0, config.init_velocity_std),
                  rand_normal(rng, 0.0, config.init_velocity_std)};
    d.radius = radius;
    d.color = color;
    return d;
  };
  WorldState w;
  w.target = init_disk(config.target_radius, -1);
  w.distractors.reserve(static_cast<std::size_t>(config.n_distractors));
  for (int i = 0; i < config.n_distractors; ++i) {
    std::uniform_int_distribution<int> radii(config.distractor_radius_min,
                                             config.distractor_radius_max);
    const double r = static_cast<double>(radii(rng));
    std::uniform_int_distribution<int> colors(0, kNumDistractorColors - 1);
    w.distractors.push_back(init_disk(r, colors(rng)));
  }
  return w;
}

namespace {

// One dynamics step for any disk: a = velocity, a_hat = a + eps,
// pos += a_hat + alpha, velocity' = a_hat (or fresh draw under iid actions).
StepRecord step_disk(DiskState& d, const DiskWorldConfig& config, Rng& rng) {
  StepRecord rec;
  rec.action = d.velocity;
  rec.noisy_action = {d.velocity[0] + rand_normal(rng, 0.0, config.sigma_action),
                      d.velocity[1] + rand_normal(rng, 0.0, config.sigma_action)};
  d.position[0] += rec.noisy_action[0] + rand_normal(rng, 0.0, config.sigma_dynamic);
  d.position[1] += rec.noisy_action[1] + rand_normal(rng, 0.0, config.sigma_dynamic);
  if (config.iid_actions) {
    d.velocity = {rand_normal(rng, 0.0, config.init_velocity_std),
                  rand_normal(rng, 0.0, config.init_velocity_std)};
  } else {
    d.velocity = rec.noisy_action;
  }
  return rec;
}

}  // namespace

StepRecord step_world(WorldState& state, const DiskWorldConfig& config, Rng& rng) {
  StepRecord rec = step_disk(state.target, config, rng);
  for (auto& d : state.distractors) step_disk(d, config, rng);
  return rec;
}

namespace {

void draw_disk(Array& img, Eigen::Index L, const Eigen::Vector2d& pos, double radius,
               const Eigen::Vector3d& rgb) {
  const double r2 = radius * radius;
  const Eigen::Index i_lo = std::max<Eigen::Index>(0, static_cast<Eigen::Index>(
                                                          std::floor(pos[1] - radius)));
  const Eigen::Index i_hi =
      std::min<Eigen::Index>(L - 1, static_cast<Eigen::Index>(std::ceil(pos[1] + radius)));
  const Eigen::Index j_lo = std::max<Eigen::Index>(0, static_cast<Eigen::Index>(
                                                          std::floor(pos[0] - radius)));
  const Eigen::Index j_hi =
      std::min<Eigen::Index>(L - 1, static_cast<Eigen::Index>(std::ceil(pos[0] + radius)));
  for (Eigen::Index i = i_lo; i <= i_hi; ++i) {
    for (Eigen::Index j = j_lo; j <= j_hi; ++j) {
      const double dx = static_cast<double>(j) - pos[0];
      const double dy = static_cast<double>(i) - pos[1];
      if (dx * dx + dy * dy <= r2) {
        const Eigen::Index base = (i * L + j) * 3;
        img[base] = rgb[0];
        img[base + 1] = rgb[1];
        img[base + 2] = rgb[2];
      }
    }
  }
}

}  // namespace

Tensor render(const WorldState& state, const DiskWorldConfig& config) {
  const Eigen::Index L = config.image_size;
  Array img = Array::Zero(L * L * 3);
  draw_disk(img, L, state.target.position, state.target.radius, {1.0, 0.0, 0.0});
  for (const auto& d : state.distractors)
    draw_disk(img, L, d.position, d.radius, disk_color(d.color));
  return Tensor({L, L, 3}, std::move(img));
}

EnvTrajectory simulate_trajectory(const DiskWorldConfig& config, Rng& rng) {
  const Eigen::Index T = config.trajectory_length;
  EnvTrajectory traj;
  traj.states.resize(T + 1, 2);
  traj.actions.resize(T, 2);
  traj.noisy_actions.resize(T, 2);
  WorldState w = init_world(config, rng);
  traj.states.row(0) = w.target.position.transpose();
  traj.images.push_back(render(w, config));
  for (Eigen::Index t = 0; t < T; ++t) {
    StepRecord rec = step_world(w, config, rng);
    traj.actions.row(t) = rec.action.transpose();
    traj.noisy_actions.row(t) = rec.noisy_action.transpose();
    traj.states.row(t + 1) = w.target.position.transpose();
    traj.images.push_back(render(w, config));
  }
  return traj;
}

namespace {

std::string traj_filename(Eigen::Index index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "traj_%05lld.bin", static_cast<long long>(index));
  return buf;
}

void write_f64(std::ofstream& os, const Eigen::MatrixXd& m) {
  // row-major on disk
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      const double v = m(i, j);
      os.write(reinterpret_cast<const char*>(&v), sizeof(double));
    }
}

Eigen::MatrixXd read_f64(std::ifstream& is, Eigen::Index rows, Eigen::Index cols) {
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) {
      double v;
      is.read(reinterpret_cast<char*>(&v), sizeof(double));
      m(i, j) = v;
    }
  if (!is) throw TensorError("dataset: truncated trajectory record");
  return m;
}

}  // namespace

void write_manifest(const std::filesystem::path& dir, const DatasetManifest& m) {
  std::ofstream os(dir / "manifest.txt", std::ios::trunc);
  if (!os) throw TensorError("dataset: cannot write manifest in '" + dir.string() + "'");
  os << "format_version = " << m.format_version << "\n";
  os << "n_trajectories = " << m.n_trajectories << "\n";
  os << "trajectory_length = " << m.config.trajectory_length << "\n";
  os << "image_size = " << m.config.image_size << "\n";
  os << "n_distractors = " << m.config.n_distractors << "\n";
  os << "target_radius = " << m.config.target_radius << "\n";
  os << "distractor_radius_min = " << m.config.distractor_radius_min << "\n";
  os << "distractor_radius_max = " << m.config.distractor_radius_max << "\n";
  os << "sigma_action = " << m.config.sigma_action << "\n";
  os << "sigma_dynamic = " << m.config.sigma_dynamic << "\n";
  os << "init_velocity_std = " << m.config.init_velocity_std << "\n";
  os << "iid_actions = " << (m.config.iid_actions ? 1 : 0) << "\n";
}

DatasetManifest read_manifest(const std::filesystem::path& dir) {
  std::ifstream is(dir / "manifest.txt");
  if (!is) throw TensorError("dataset: no manifest in '" + dir.string() + "'");
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
    if (it == kv.end()) throw TensorError("dataset: manifest missing key '" + key + "'");
    return it->second;
  };
  DatasetManifest m;
  m.format_version = std::stoi(need("format_version"));
  if (m.format_version != 1)
    throw TensorError("dataset: unsupported format version " + need("format_version"));
  m.n_trajectories = std::stoll(need("n_trajectories"));
  m.config.trajectory_length = std::stoll(need("trajectory_length"));
  m.config.image_size = std::stoll(need("image_size"));
  m.config.n_distractors = std::stoi(need("n_distractors"));
  m.config.target_radius = std::stod(need("target_radius"));
  m.config.distractor_radius_min = std::stoi(need("distractor_radius_min"));
  m.config.distractor_radius_max = std::stoi(need("distractor_radius_max"));
  m.config.sigma_action = std::stod(need("sigma_action"));
  m.config.sigma_dynamic = std::stod(need("sigma_dynamic"));
  m.config.init_velocity_std = std::stod(need("init_velocity_std"));
  m.config.iid_actions = std::stoi(need("iid_actions")) != 0;
  return m;
}

void write_trajectory(const std::filesystem::path& dir, const DatasetManifest& manifest,
                      Eigen::Index index, const EnvTrajectory& traj) {
  const Eigen::Index L = manifest.config.image_size;
  const Eigen::Index T = manifest.config.trajectory_length;
  if (static_cast<Eigen::Index>(traj.images.size()) != T + 1)
    throw TensorError("dataset: trajectory has wrong number of frames");
  std::ofstream os(dir / traj_filename(index), std::ios::binary | std::ios::trunc);
  if (!os) throw TensorError("dataset: cannot write trajectory record in '" + dir.string() + "'");
  std::vector<float> frame(static_cast<std::size_t>(L * L * 3));
  for (const Tensor& img : traj.images) {
    if (img.shape() != Shape{L, L, 3}) throw TensorError("dataset: frame shape mismatch");
    for (Eigen::Index k = 0; k < img.size(); ++k)
      frame[static_cast<std::size_t>(k)] = static_cast<float>(img.data()[k]);
    os.write(reinterpret_cast<const char*>(frame.data()),
             static_cast<std::streamsize>(frame.size() * sizeof(float)));
  }
  write_f64(os, traj.states);
  write_f64(os, traj.actions);
  if (!os) throw TensorError("dataset: write failed");
}

EnvTrajectory read_trajectory(const std::filesystem::path& dir, const DatasetManifest& manifest,
                              Eigen::Index index) {
  const Eigen::Index L = manifest.config.image_size;
  const Eigen::Index T = manifest.config.trajectory_length;
  std::ifstream is(dir / traj_filename(index), std::ios::binary);
  if (!is)
    throw TensorError("dataset: missing trajectory record " + traj_filename(index) + " in '" +
                      dir.string() + "'");
  EnvTrajectory traj;
  std::vector<float> frame(static_cast<std::size_t>(L * L * 3));
  for (Eigen::Index t = 0; t <= T; ++t) {
    is.read(reinterpret_cast<char*>(frame.data()),
            static_cast<std::streamsize>(frame.size() * sizeof(float)));
    if (!is) throw TensorError("dataset: truncated frames in " + traj_filename(index));
    Array img(L * L * 3);
    for (Eigen::Index k = 0; k < img.size(); ++k)
      img[k] = static_cast<double>(frame[static_cast<std::size_t>(k)]);
    traj.images.emplace_back(Shape{L, L, 3}, std::move(img));
  }
  traj.states = read_f64(is, T + 1, 2);
  traj.actions = read_f64(is, T, 2);
  traj.noisy_actions.resize(0, 2);
  return traj;
}

void generate_dataset(const DiskWorldConfig& config, Eigen::Index n_trajectories, Rng& rng,
                      const std::filesystem::path& dir) {
  config.validate();
  if (n_trajectories < 1) throw TensorError("generate_dataset: need at least one trajectory");
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw TensorError("generate_dataset: cannot create '" + dir.string() + "'");
  DatasetManifest m;
  m.config = config;
  m.n_trajectories = n_trajectories;
  write_manifest(dir, m);
  // Per-trajectory substreams so generation order (or parallelism) cannot
  // change the data.
  const std::uint64_t base = rng();
  for (Eigen::Index i = 0; i < n_trajectories; ++i) {
    Rng sub(derive_seed(base, static_cast<std::uint64_t>(i)));
    write_trajectory(dir, m, i, simulate_trajectory(config, sub));
  }
}

}  // namespace dpf
