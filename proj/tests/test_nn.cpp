#include <doctest.h>

#include "dpf/grad_check.hpp"
#include "dpf/nn.hpp"

using namespace dpf;

namespace {

Tensor random_image(Eigen::Index L, Rng& rng) {
  Array v(L * L * 3);
  for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = rand_uniform(rng);
  return Tensor({L, L, 3}, std::move(v));
}

}  // namespace

TEST_CASE("mlp: zero-initialized final layer maps everything to zero") {
  MlpConfig cfg;
  cfg.layer_widths = {3, 8, 2};
  Mlp mlp(cfg, "m");
  ParameterStore store;
  Rng rng(1);
  mlp.init(store, rng, /*zero_final=*/true);
  Tensor x({2, 3}, (Array(6) << 1, -2, 3, 0.5, 0.1, -0.7).finished());
  Tensor y = mlp.forward(store, x);
  CHECK(y.data().abs().maxCoeff() == 0.0);
}

TEST_CASE("mlp: identity weights compose to elementwise tanh") {
  MlpConfig cfg;
  cfg.layer_widths = {2, 2, 2};
  Mlp mlp(cfg, "m");
  ParameterStore store;
  Rng rng(1);
  mlp.init(store, rng);
  store.at("m.l0.W").data() = (Array(4) << 1, 0, 0, 1).finished();
  store.at("m.l0.b").data().setZero();
  store.at("m.l1.W").data() = (Array(4) << 1, 0, 0, 1).finished();
  store.at("m.l1.b").data().setZero();
  Tensor x({1, 2}, (Array(2) << 0.3, -0.2).finished());
  Tensor y = mlp.forward(store, x);
  CHECK(y.data()[0] == doctest::Approx(std::tanh(0.3)));
  CHECK(y.data()[1] == doctest::Approx(std::tanh(-0.2)));
}

TEST_CASE("mlp: duplicated batch rows give identical outputs") {
  MlpConfig cfg;
  cfg.layer_widths = {4, 16, 3};
  Mlp mlp(cfg, "m");
  ParameterStore store;
  Rng rng(3);
  mlp.init(store, rng);
  Array row(4);
  for (Eigen::Index i = 0; i < 4; ++i) row[i] = rand_normal(rng);
  Array both(8);
  both << row, row;
  Tensor y = mlp.forward(store, Tensor({2, 4}, both));
  for (Eigen::Index j = 0; j < 3; ++j) CHECK(y.data()[j] == y.data()[3 + j]);
}

TEST_CASE("mlp: width mismatch and bad configs are errors") {
  MlpConfig cfg;
  cfg.layer_widths = {4, 8, 2};
  Mlp mlp(cfg, "m");
  ParameterStore store;
  Rng rng(3);
  mlp.init(store, rng);
  CHECK_THROWS_AS(mlp.forward(store, Tensor::zeros({1, 5})), TensorError);
  MlpConfig bad;
  bad.layer_widths = {4, 2};  // no hidden layer
  CHECK_THROWS_AS(Mlp(bad, "x"), TensorError);
}

TEST_CASE("parameter count matches the closed form") {
  MlpConfig cfg;
  cfg.layer_widths = {7, 5, 3, 2};
  Mlp mlp(cfg, "m");
  ParameterStore store;
  Rng rng(3);
  mlp.init(store, rng);
  CHECK(store.total_size() == cfg.param_count());
  CHECK(cfg.param_count() == 7 * 5 + 5 + 5 * 3 + 3 + 3 * 2 + 2);

  EncoderConfig ec;
  ec.image_size = 8;
  ec.downsample_to = 6;
  ec.hidden = {16, 8};
  ec.feature_dim = 4;
  ParameterStore store2;
  Encoder enc(ec, "enc");
  enc.init(store2, rng);
  const Eigen::Index in = 6 * 6 * 3;
  CHECK(store2.total_size() == in * 16 + 16 + 16 * 8 + 8 + 8 * 4 + 4);
}

TEST_CASE("encoder: all-black image through zero-init output layer gives zero features") {
  EncoderConfig ec;
  ec.image_size = 8;
  ec.downsample_to = 6;
  ec.hidden = {8};
  ec.feature_dim = 4;
  Encoder enc(ec, "enc");
  ParameterStore store;
  Rng rng(5);
  enc.init(store, rng);
  store.at("enc.l1.W").data().setZero();
  Tensor e = enc.forward(store, Tensor::zeros({8, 8, 3}));
  CHECK(e.shape() == Shape{4});
  CHECK(e.data().abs().maxCoeff() == 0.0);
}

TEST_CASE("encoder: deterministic, validates shape, differentiable") {
  EncoderConfig ec;
  ec.image_size = 6;
  ec.downsample_to = 4;
  ec.hidden = {8};
  ec.feature_dim = 3;
  Encoder enc(ec, "enc");
  ParameterStore store;
  Rng rng(5);
  enc.init(store, rng);
  Tensor img = random_image(6, rng);
  Tensor e1 = enc.forward(store, img);
  Tensor e2 = enc.forward(store, img);
  for (Eigen::Index i = 0; i < 3; ++i) CHECK(e1.data()[i] == e2.data()[i]);
  CHECK_THROWS_AS(enc.forward(store, Tensor::zeros({5, 5, 3})), TensorError);

  auto f = [&](ParameterStore& s) { return sum(enc.forward(s, img)); };
  CHECK(finite_difference_check(f, store, 1e-5) < 1e-4);
}

TEST_CASE("decoder: zero-init final layer yields the constant 0.5 image") {
  EncoderConfig ec;
  ec.image_size = 6;
  ec.downsample_to = 4;
  ec.hidden = {8};
  ec.feature_dim = 3;
  Decoder dec(ec, "dec");
  ParameterStore store;
  Rng rng(7);
  dec.init(store, rng);
  store.at("dec.l1.W").data().setZero();  // logits 0 -> logistic map -> 0.5
  Tensor img = dec.forward(store, Tensor::zeros({3}));
  CHECK(img.shape() == Shape{6, 6, 3});
  CHECK(img.data().minCoeff() == doctest::Approx(0.5));
  CHECK(img.data().maxCoeff() == doctest::Approx(0.5));
}

TEST_CASE("autoencoder round trip: shape preserved, output bounded, error finite") {
  EncoderConfig ec;
  ec.image_size = 6;
  ec.downsample_to = 4;
  ec.hidden = {8};
  ec.feature_dim = 3;
  Encoder enc(ec, "enc");
  Decoder dec(ec, "dec");
  ParameterStore store;
  Rng rng(9);
  enc.init(store, rng);
  dec.init(store, rng);
  Tensor y = random_image(6, rng);
  Tensor rec = dec.forward(store, enc.forward(store, y));
  CHECK(rec.shape() == y.shape());
  CHECK(rec.data().minCoeff() >= 0.0);
  CHECK(rec.data().maxCoeff() <= 1.0);
  const double err = (rec.data() - y.data()).square().sum();
  CHECK(std::isfinite(err));
  CHECK(err >= 0.0);
}

TEST_CASE("bilinear resize: identity at equal sizes, preserves constants") {
  auto R = make_bilinear_resize(4, 4);
  Eigen::VectorXd x(4 * 4 * 3);
  Rng rng(13);
  for (Eigen::Index i = 0; i < x.size(); ++i) x[i] = rand_uniform(rng);
  const Eigen::VectorXd y = (*R) * x;
  CHECK((y - x).cwiseAbs().maxCoeff() < 1e-12);

  auto R2 = make_bilinear_resize(4, 2);
  Eigen::VectorXd ones = Eigen::VectorXd::Ones(4 * 4 * 3);
  const Eigen::VectorXd c = (*R2) * ones;
  CHECK((c.array() - 1.0).abs().maxCoeff() < 1e-12);
}

TEST_CASE("encoder/decoder gradients through the reconstruction loss") {
  EncoderConfig ec;
  ec.image_size = 5;
  ec.downsample_to = 4;
  ec.hidden = {6};
  ec.feature_dim = 2;
  Encoder enc(ec, "enc");
  Decoder dec(ec, "dec");
  ParameterStore store;
  Rng rng(21);
  enc.init(store, rng);
  dec.init(store, rng);
  Tensor y = random_image(5, rng);
  auto f = [&](ParameterStore& s) {
    Tensor rec = dec.forward(s, enc.forward(s, y));
    return sum(square(sub(rec, y)));
  };
  CHECK(finite_difference_check(f, store, 1e-5) < 1e-4);
}
