#include "dpf/param_store.hpp"

#include <bit>
#include <cstdint>
#include <fstream>

namespace dpf {

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

namespace {
constexpr std::uint32_t kFormatVersion = 1;

template <typename T>
void write_pod(std::ofstream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::ifstream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw TensorError("checkpoint: truncated file");
  return v;
}
}  // namespace

Tensor& ParameterStore::create(const std::string& name, Shape shape, Array init) {
  if (params_.count(name)) throw TensorError("parameter '" + name + "' already exists");
  Tensor t(std::move(shape), std::move(init), true);
  return params_.emplace(name, std::move(t)).first->second;
}

Tensor& ParameterStore::create(const std::string& name, const Tensor& init) {
  return create(name, init.shape(), init.data());
}

Tensor& ParameterStore::at(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw TensorError("no parameter named '" + name + "'");
  return it->second;
}

const Tensor& ParameterStore::at(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw TensorError("no parameter named '" + name + "'");
  return it->second;
}

std::vector<std::string> ParameterStore::keys() const {
  std::vector<std::string> out;
  out.reserve(params_.size());
  for (const auto& [k, _] : params_) out.push_back(k);
  return out;
}

Eigen::Index ParameterStore::total_size() const {
  Eigen::Index n = 0;
  for (const auto& [_, t] : params_) n += t.size();
  return n;
}

void ParameterStore::zero_grad() {
  for (auto& [_, t] : params_) t.zero_grad();
}

ParameterStore ParameterStore::clone() const {
  ParameterStore out;
  for (const auto& [k, t] : params_) out.create(k, t.shape(), t.data());
  return out;
}

Eigen::VectorXd ParameterStore::flat_values() const {
  Eigen::VectorXd v(total_size());
  Eigen::Index off = 0;
  for (const auto& [_, t] : params_) {
    v.segment(off, t.size()) = t.data().matrix();
    off += t.size();
  }
  return v;
}

Eigen::VectorXd ParameterStore::flat_grads() const {
  Eigen::VectorXd v = Eigen::VectorXd::Zero(total_size());
  Eigen::Index off = 0;
  for (const auto& [_, t] : params_) {
    if (t.has_grad()) v.segment(off, t.size()) = t.grad().matrix();
    off += t.size();
  }
  return v;
}

void ParameterStore::set_flat_values(const Eigen::Ref<const Eigen::VectorXd>& v) {
  if (v.size() != total_size()) throw TensorError("set_flat_values: size mismatch");
  Eigen::Index off = 0;
  for (auto& [_, t] : params_) {
    t.data() = v.segment(off, t.size()).array();
    off += t.size();
  }
}

void ParameterStore::add_to_grads(const Eigen::Ref<const Eigen::VectorXd>& g) {
  if (g.size() != total_size()) throw TensorError("add_to_grads: size mismatch");
  Eigen::Index off = 0;
  for (auto& [_, t] : params_) {
    auto node = t.node_ptr();
    node->ensure_grad();
    node->grad += g.segment(off, t.size()).array();
    off += t.size();
  }
}

void ParameterStore::save(const std::filesystem::path& path) const {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw TensorError("checkpoint: cannot open '" + path.string() + "' for writing");
  write_pod<std::uint32_t>(os, kFormatVersion);
  write_pod<std::uint64_t>(os, params_.size());
  for (const auto& [k, t] : params_) {
    write_pod<std::uint64_t>(os, k.size());
    os.write(k.data(), static_cast<std::streamsize>(k.size()));
    write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(t.shape().size()));
    for (Eigen::Index d : t.shape()) write_pod<std::uint64_t>(os, static_cast<std::uint64_t>(d));
    os.write(reinterpret_cast<const char*>(t.data().data()),
             static_cast<std::streamsize>(t.size() * sizeof(double)));
  }
  if (!os) throw TensorError("checkpoint: write failed for '" + path.string() + "'");
}

ParameterStore ParameterStore::load(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw TensorError("checkpoint: cannot open '" + path.string() + "'");
  const auto version = read_pod<std::uint32_t>(is);
  if (version != kFormatVersion)
    throw TensorError("checkpoint: unsupported format version " + std::to_string(version));
  const auto count = read_pod<std::uint64_t>(is);
  ParameterStore out;
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto klen = read_pod<std::uint64_t>(is);
    std::string key(klen, '\0');
    is.read(key.data(), static_cast<std::streamsize>(klen));
    const auto rank = read_pod<std::uint32_t>(is);
    Shape shape(rank);
    for (auto& d : shape) d = static_cast<Eigen::Index>(read_pod<std::uint64_t>(is));
    Array data(shape_size(shape));
    is.read(reinterpret_cast<char*>(data.data()),
            static_cast<std::streamsize>(data.size() * sizeof(double)));
    if (!is) throw TensorError("checkpoint: truncated payload in '" + path.string() + "'");
    out.create(key, std::move(shape), std::move(data));
  }
  return out;
}

}  // namespace dpf
