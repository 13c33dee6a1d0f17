#pragma once

#include <filesystem>
#include <map>
#include <string>

#include "dpf/tensor.hpp"

namespace dpf {

// Named map of trainable tensors. Keys are unique; iteration is in sorted
// key order, which fixes gradient-vector layout and checkpoint bytes.
class ParameterStore {
 public:
  Tensor& create(const std::string& name, Shape shape, Array init);
  Tensor& create(const std::string& name, const Tensor& init);

  bool has(const std::string& name) const { return params_.count(name) > 0; }
  Tensor& at(const std::string& name);
  const Tensor& at(const std::string& name) const;

  std::vector<std::string> keys() const;
  std::size_t count() const { return params_.size(); }
  Eigen::Index total_size() const;

  void zero_grad();

  // Fresh nodes with copied values; grads not carried over.
  ParameterStore clone() const;

  // Flat views in key order (missing grads read as zero).
  Eigen::VectorXd flat_values() const;
  Eigen::VectorXd flat_grads() const;
  void set_flat_values(const Eigen::Ref<const Eigen::VectorXd>& v);
  void add_to_grads(const Eigen::Ref<const Eigen::VectorXd>& g);

  // Binary checkpoint: u32 version, u64 count, then per key (sorted):
  // u64 key length, key bytes, u32 rank, u64 dims, little-endian f64 payload.
  void save(const std::filesystem::path& path) const;
  static ParameterStore load(const std::filesystem::path& path);

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

 private:
  std::map<std::string, Tensor> params_;
};

}  // namespace dpf
