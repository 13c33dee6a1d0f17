#pragma once

#include <Eigen/Sparse>

#include <memory>
#include <string>
#include <vector>

#include "dpf/ops.hpp"
#include "dpf/param_store.hpp"
#include "dpf/rng.hpp"

namespace dpf {

enum class Activation { Tanh, Relu };

struct MlpConfig {
  std::vector<Eigen::Index> layer_widths;  // input, hidden..., output
  Activation activation = Activation::Tanh;
  bool final_tanh = false;

  void validate() const;
  // Closed-form weight + bias count.
  Eigen::Index param_count() const;
};

// Fully connected net whose parameters live in a ParameterStore under
// "<prefix>.l<i>.W" / "<prefix>.l<i>.b".
class Mlp {
 public:
  Mlp() = default;
  Mlp(MlpConfig config, std::string prefix);

  // Uniform fan-in init (Xavier for tanh, He for relu); zero_final zeroes the
  // last layer so the net starts as the constant-0 map.
  void init(ParameterStore& store, Rng& rng, bool zero_final = false) const;

  Tensor forward(const ParameterStore& store, const Tensor& input) const;

  const MlpConfig& config() const { return config_; }
  const std::string& prefix() const { return prefix_; }

 private:
  MlpConfig config_;
  std::string prefix_;
};

struct EncoderConfig {
  Eigen::Index image_size = 128;    // square L x L x 3 input
  Eigen::Index downsample_to = 24;  // bilinear resize target
  std::vector<Eigen::Index> hidden = {256, 64};
  Eigen::Index feature_dim = 32;
};

// E: image [L,L,3] in [0,1] -> feature vector [d_e]. Bilinear downsample is a
// constant sparse linear map, so the whole encoder stays differentiable in
// the image.
class Encoder {
 public:
  Encoder() = default;
  Encoder(EncoderConfig config, std::string prefix);

  void init(ParameterStore& store, Rng& rng) const;
  Tensor forward(const ParameterStore& store, const Tensor& image) const;

  const EncoderConfig& config() const { return config_; }

 private:
  EncoderConfig config_;
  std::string prefix_;
  Mlp mlp_;
  std::shared_ptr<const Eigen::SparseMatrix<double>> resize_;
};

// D: feature [d_e] -> image [L,L,3], logistic-bounded to [0,1]. Mirrors the
// encoder's hidden widths.
class Decoder {
 public:
  Decoder() = default;
  Decoder(EncoderConfig config, std::string prefix);

  void init(ParameterStore& store, Rng& rng) const;
  Tensor forward(const ParameterStore& store, const Tensor& feature) const;

  const EncoderConfig& config() const { return config_; }

 private:
  EncoderConfig config_;
  std::string prefix_;
  Mlp mlp_;
};

// Sparse row-major-flattened bilinear resize for [size,size,3] -> [to,to,3].
std::shared_ptr<const Eigen::SparseMatrix<double>> make_bilinear_resize(Eigen::Index size,
                                                                        Eigen::Index to);

}  // namespace dpf
