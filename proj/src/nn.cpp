#include "dpf/nn.hpp"

#include <cmath>

namespace dpf {

void MlpConfig::validate() const {
  if (layer_widths.size() < 3)
    throw TensorError("MlpConfig: need at least one hidden layer (got " +
                      std::to_string(layer_widths.size()) + " widths)");
  for (Eigen::Index w : layer_widths)
    if (w <= 0) throw TensorError("MlpConfig: non-positive layer width");
}

Eigen::Index MlpConfig::param_count() const {
  Eigen::Index n = 0;
  for (std::size_t i = 0; i + 1 < layer_widths.size(); ++i)
    n += layer_widths[i] * layer_widths[i + 1] + layer_widths[i + 1];
  return n;
}

Mlp::Mlp(MlpConfig config, std::string prefix)
    : config_(std::move(config)), prefix_(std::move(prefix)) {
  config_.validate();
}

void Mlp::init(ParameterStore& store, Rng& rng, bool zero_final) const {
  const auto& w = config_.layer_widths;
  for (std::size_t i = 0; i + 1 < w.size(); ++i) {
    const Eigen::Index fan_in = w[i], fan_out = w[i + 1];
    const bool last = (i + 2 == w.size());
    double bound;
    if (config_.activation == Activation::Relu)
      bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    else
      bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    Array W(fan_in * fan_out);
    if (last && zero_final) {
      W.setZero();
    } else {
      for (Eigen::Index k = 0; k < W.size(); ++k) W[k] = rand_uniform(rng, -bound, bound);
    }
    const std::string tag = prefix_ + ".l" + std::to_string(i);
    store.create(tag + ".W", {fan_in, fan_out}, std::move(W));
    store.create(tag + ".b", {fan_out}, Array::Zero(fan_out));
  }
}

Tensor Mlp::forward(const ParameterStore& store, const Tensor& input) const {
  const auto& w = config_.layer_widths;
  if (input.rank() != 2 || input.shape()[1] != w.front())
    throw TensorError("Mlp(" + prefix_ + "): input " + shape_str(input.shape()) +
                      " does not match first layer width " + std::to_string(w.front()));
  Tensor h = input;
  for (std::size_t i = 0; i + 1 < w.size(); ++i) {
    const std::string tag = prefix_ + ".l" + std::to_string(i);
    h = add(matmul(h, store.at(tag + ".W")), store.at(tag + ".b"));
    const bool last = (i + 2 == w.size());
    if (!last)
      h = (config_.activation == Activation::Relu) ? relu(h) : tanh(h);
    else if (config_.final_tanh)
      h = tanh(h);
  }
  return h;
}

std::shared_ptr<const Eigen::SparseMatrix<double>> make_bilinear_resize(Eigen::Index size,
                                                                        Eigen::Index to) {
  const Eigen::Index channels = 3;
  auto R = std::make_shared<Eigen::SparseMatrix<double>>(to * to * channels,
                                                         size * size * channels);
  std::vector<Eigen::Triplet<double>> trips;
  trips.reserve(static_cast<std::size_t>(to * to * channels * 4));
  const double s = static_cast<double>(size) / static_cast<double>(to);
  auto src_flat = [size, channels](Eigen::Index i, Eigen::Index j, Eigen::Index c) {
    return (i * size + j) * channels + c;
  };
  for (Eigen::Index oi = 0; oi < to; ++oi) {
    for (Eigen::Index oj = 0; oj < to; ++oj) {
      const double fi = (static_cast<double>(oi) + 0.5) * s - 0.5;
      const double fj = (static_cast<double>(oj) + 0.5) * s - 0.5;
      const Eigen::Index i0 = static_cast<Eigen::Index>(std::floor(fi));
      const Eigen::Index j0 = static_cast<Eigen::Index>(std::floor(fj));
      const double wi = fi - static_cast<double>(i0);
      const double wj = fj - static_cast<double>(j0);
      const Eigen::Index ia = std::clamp<Eigen::Index>(i0, 0, size - 1);
      const Eigen::Index ib = std::clamp<Eigen::Index>(i0 + 1, 0, size - 1);
      const Eigen::Index ja = std::clamp<Eigen::Index>(j0, 0, size - 1);
      const Eigen::Index jb = std::clamp<Eigen::Index>(j0 + 1, 0, size - 1);
      for (Eigen::Index c = 0; c < channels; ++c) {
        const Eigen::Index row = (oi * to + oj) * channels + c;
        trips.emplace_back(row, src_flat(ia, ja, c), (1 - wi) * (1 - wj));
        trips.emplace_back(row, src_flat(ia, jb, c), (1 - wi) * wj);
        trips.emplace_back(row, src_flat(ib, ja, c), wi * (1 - wj));
        trips.emplace_back(row, src_flat(ib, jb, c), wi * wj);
      }
    }
  }
  R->setFromTriplets(trips.begin(), trips.end());
  R->makeCompressed();
  return R;
}

namespace {

MlpConfig encoder_mlp_config(const EncoderConfig& c) {
  MlpConfig m;
  m.layer_widths.push_back(c.downsample_to * c.downsample_to * 3);
  for (Eigen::Index h : c.hidden) m.layer_widths.push_back(h);
  m.layer_widths.push_back(c.feature_dim);
  m.activation = Activation::Tanh;
  return m;
}

MlpConfig decoder_mlp_config(const EncoderConfig& c) {
  MlpConfig m;
  m.layer_widths.push_back(c.feature_dim);
  for (auto it = c.hidden.rbegin(); it != c.hidden.rend(); ++it) m.layer_widths.push_back(*it);
  m.layer_widths.push_back(c.image_size * c.image_size * 3);
  m.activation = Activation::Tanh;
  return m;
}

}  // namespace

Encoder::Encoder(EncoderConfig config, std::string prefix)
    : config_(config),
      prefix_(std::move(prefix)),
      mlp_(encoder_mlp_config(config), prefix_),
      resize_(make_bilinear_resize(config.image_size, config.downsample_to)) {}

void Encoder::init(ParameterStore& store, Rng& rng) const { mlp_.init(store, rng); }

Tensor Encoder::forward(const ParameterStore& store, const Tensor& image) const {
  const Eigen::Index L = config_.image_size;
  if (image.shape() != Shape{L, L, 3})
    throw TensorError("Encoder: image shape " + shape_str(image.shape()) + " != expected " +
                      shape_str({L, L, 3}));
  Tensor flat = reshape(image, {L * L * 3});
  Tensor small = fixed_linear(resize_, flat);
  Tensor row = reshape(small, {1, small.size()});
  Tensor features = mlp_.forward(store, row);
  return reshape(features, {config_.feature_dim});
}

Decoder::Decoder(EncoderConfig config, std::string prefix)
    : config_(config), prefix_(std::move(prefix)), mlp_(decoder_mlp_config(config), prefix_) {}

void Decoder::init(ParameterStore& store, Rng& rng) const { mlp_.init(store, rng); }

Tensor Decoder::forward(const ParameterStore& store, const Tensor& feature) const {
  if (feature.shape() != Shape{config_.feature_dim})
    throw TensorError("Decoder: feature shape " + shape_str(feature.shape()) + " != expected [" +
                      std::to_string(config_.feature_dim) + "]");
  Tensor row = reshape(feature, {1, config_.feature_dim});
  Tensor logits = mlp_.forward(store, row);
  Tensor bounded = sigmoid(logits);
  const Eigen::Index L = config_.image_size;
  return reshape(bounded, {L, L, 3});
}

}  // namespace dpf
