#include <doctest.h>

#include "dpf/grad_check.hpp"
#include "dpf/measurement.hpp"
#include "dpf/train.hpp"
#include "oracles.hpp"

using namespace dpf;

namespace {

struct Fixture {
  MeasurementConfig cfg;
  MeasurementModel model;
  Encoder encoder;
  ParameterStore store;

  Fixture(MeasurementKind kind, Eigen::Index d_e, std::uint64_t seed, double perturb = 0.0,
          Eigen::Index image_size = 8) {
    EncoderConfig ec;
    ec.image_size = image_size;
    ec.downsample_to = 6;
    ec.hidden = {16};
    ec.feature_dim = d_e;
    cfg = MeasurementConfig::make(kind, ec, 2, 1.0 / static_cast<double>(image_size));
    cfg.flow.hidden = 16;
    model = MeasurementModel(cfg, "meas");
    encoder = Encoder(ec, "enc");
    Rng rng(seed);
    encoder.init(store, rng);
    model.init(store, rng);
    if (perturb > 0.0)
      for (const auto& key : store.keys())
        for (Eigen::Index i = 0; i < store.at(key).size(); ++i)
          store.at(key).data()[i] += rand_normal(rng, 0.0, perturb);
  }
};

Tensor random_states(Eigen::Index n, Rng& rng, double lo = 0.0, double hi = 8.0) {
  Array v(n * 2);
  for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = rand_uniform(rng, lo, hi);
  return Tensor({n, 2}, std::move(v));
}

Tensor random_image(Eigen::Index L, Rng& rng) {
  Array v(L * L * 3);
  for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = rand_uniform(rng);
  return Tensor({L, L, 3}, std::move(v));
}

Eigen::VectorXd normalized_weights(const Tensor& log_lik) {
  Eigen::ArrayXd lw = log_lik.data();
  lw -= lw.maxCoeff();
  Eigen::ArrayXd w = lw.exp();
  return (w / w.sum()).matrix();
}

}  // namespace

TEST_CASE("cm at identity init: identical log-likelihoods, uniform weights") {
  Fixture f(MeasurementKind::CM, 4, 1);
  Rng rng(2);
  Tensor y = random_image(8, rng);
  Tensor states = random_states(10, rng);
  Tensor ll = f.model.log_likelihood(f.store, f.encoder, y, states);
  REQUIRE(ll.size() == 10);
  for (Eigen::Index i = 1; i < 10; ++i) CHECK(ll.data()[i] == ll.data()[0]);
  const Eigen::VectorXd w = normalized_weights(ll);
  for (Eigen::Index i = 0; i < 10; ++i) CHECK(w[i] == doctest::Approx(0.1).epsilon(1e-12));
}

TEST_CASE("cos: a particle whose embedding equals the features scores gamma") {
  Fixture f(MeasurementKind::COS, 3, 3, 0.1);
  Rng rng(4);
  Tensor states = random_states(5, rng);
  // evaluate the embedding of particle 0 and use it as the feature vector
  Tensor cond = scale(states, f.cfg.cond_scale);
  Tensor emb = Mlp({{2, f.cfg.embed_hidden, f.cfg.embed_hidden, 3}, Activation::Tanh, false},
                   "meas.embed")
                   .forward(f.store, cond);
  Array e0 = emb.data().segment(0, 3);
  Tensor ll = f.model.log_likelihood_features(f.store, Tensor({3}, e0), states);
  CHECK(ll.data()[0] == doctest::Approx(f.cfg.cos_gamma).epsilon(1e-9));
  CHECK(ll.data().maxCoeff() == doctest::Approx(ll.data()[0]));
}

TEST_CASE("nn: outputs finite and positive-backed; gradient reaches particles") {
  Fixture f(MeasurementKind::NN, 3, 5, 0.2);
  Rng rng(6);
  Tensor y = random_image(8, rng);
  Tensor states = random_states(7, rng);
  states.set_requires_grad(true);
  Tape tape;
  {
    TapeScope scope(tape);
    Tensor ll = f.model.log_likelihood(f.store, f.encoder, y, states);
    CHECK(ll.data().isFinite().all());
    backward(sum(ll));
  }
  CHECK(states.grad().isFinite().all());
}

TEST_CASE("all variants produce finite gradients w.r.t. particle positions") {
  for (MeasurementKind kind : {MeasurementKind::CM, MeasurementKind::NN, MeasurementKind::COS}) {
    Fixture f(kind, 3, 7, 0.15);
    Rng rng(8);
    Tensor y = random_image(8, rng);
    Tensor states = random_states(6, rng);
    states.set_requires_grad(true);
    Tape tape;
    {
      TapeScope scope(tape);
      backward(sum(f.model.log_likelihood(f.store, f.encoder, y, states)));
    }
    CHECK(states.grad().isFinite().all());
  }
}

TEST_CASE("cm validity: density over features integrates to one (d_e = 1 and 2)") {
  // d_e = 2: grid quadrature over feature space for 10 random conditions
  {
    Fixture f(MeasurementKind::CM, 2, 9, 0.1);
    Rng rng(10);
    for (int rep = 0; rep < 10; ++rep) {
      Tensor state = random_states(1, rng);
      const double integral = oracles::grid_quadrature_2d(
          [&](const Eigen::MatrixXd& pts) {
            Eigen::VectorXd out(pts.rows());
            for (Eigen::Index i = 0; i < pts.rows(); ++i) {
              Tensor e({2}, pts.row(i).array().transpose());
              out[i] = f.model.log_likelihood_features(f.store, e, state).data()[0];
            }
            return out;
          },
          6.0, 0.1);
      CHECK(integral == doctest::Approx(1.0).epsilon(0.01));
    }
  }
  // d_e = 1
  {
    Fixture f(MeasurementKind::CM, 1, 11, 0.1);
    Rng rng(12);
    for (int rep = 0; rep < 10; ++rep) {
      Tensor state = random_states(1, rng);
      const double integral = oracles::grid_quadrature_1d(
          [&](const Eigen::VectorXd& pts) {
            Eigen::VectorXd out(pts.size());
            for (Eigen::Index i = 0; i < pts.size(); ++i) {
              Tensor e({1}, Array::Constant(1, pts[i]));
              out[i] = f.model.log_likelihood_features(f.store, e, state).data()[0];
            }
            return out;
          },
          8.0, 0.01);
      CHECK(integral == doctest::Approx(1.0).epsilon(0.01));
    }
  }
}

TEST_CASE("cm two-particle toy: log-likelihood gap matches quadrature-normalized ratio") {
  Fixture f(MeasurementKind::CM, 1, 13, 0.15);
  Rng rng(14);
  Tensor states = random_states(2, rng);
  Tensor e({1}, Array::Constant(1, 0.4));
  Tensor ll = f.model.log_likelihood_features(f.store, e, states);

  auto log_z = [&](Eigen::Index which) {
    Tensor s({1, 2}, states.data().segment(which * 2, 2));
    return std::log(oracles::grid_quadrature_1d(
        [&](const Eigen::VectorXd& pts) {
          Eigen::VectorXd out(pts.size());
          for (Eigen::Index i = 0; i < pts.size(); ++i) {
            Tensor ei({1}, Array::Constant(1, pts[i]));
            out[i] = f.model.log_likelihood_features(f.store, ei, s).data()[0];
          }
          return out;
        },
        10.0, 0.005));
  };
  // oracle: normalized log-density gap
  const double gap_model = ll.data()[0] - ll.data()[1];
  const double gap_oracle = (ll.data()[0] - log_z(0)) - (ll.data()[1] - log_z(1));
  CHECK(std::abs(gap_model - gap_oracle) < 1e-6);
}

TEST_CASE("baselines do not normalize: quadrature far from one") {
  Fixture fnn(MeasurementKind::NN, 2, 15, 0.2);
  Fixture fcos(MeasurementKind::COS, 2, 16, 0.2);
  Rng rng(17);
  Tensor state = random_states(1, rng);
  auto integral_of = [&](Fixture& f) {
    return oracles::grid_quadrature_2d(
        [&](const Eigen::MatrixXd& pts) {
          Eigen::VectorXd out(pts.rows());
          for (Eigen::Index i = 0; i < pts.rows(); ++i) {
            Tensor e({2}, pts.row(i).array().transpose());
            out[i] = f.model.log_likelihood_features(f.store, e, state).data()[0];
          }
          return out;
        },
        6.0, 0.1);
  };
  CHECK(std::abs(integral_of(fnn) - 1.0) > 0.05);
  CHECK(std::abs(integral_of(fcos) - 1.0) > 0.05);
}

TEST_CASE("weight normalization is shift invariant") {
  Fixture f(MeasurementKind::CM, 3, 18, 0.2);
  Rng rng(19);
  Tensor y = random_image(8, rng);
  Tensor states = random_states(8, rng);
  Tensor ll = f.model.log_likelihood(f.store, f.encoder, y, states);
  const Eigen::VectorXd w1 = normalized_weights(ll);
  const Eigen::VectorXd w2 = normalized_weights(shift(ll, 123.456));
  CHECK((w1 - w2).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("nll_loss: identity init equals base NLL; repeated pair matches single") {
  Fixture f(MeasurementKind::CM, 3, 20);
  Rng rng(21);
  Array feats(3);
  for (Eigen::Index i = 0; i < 3; ++i) feats[i] = rand_normal(rng);
  Tensor one({1, 3}, feats);
  Array rep(9);
  rep << feats, feats, feats;
  Tensor three({3, 3}, rep);
  Tensor s1 = random_states(1, rng);
  Array s3v(6);
  s3v << s1.data(), s1.data(), s1.data();
  Tensor s3({3, 2}, s3v);

  const double nll1 = f.model.nll_loss(f.store, one, s1).value();
  const double nll3 = f.model.nll_loss(f.store, three, s3).value();
  CHECK(nll1 == doctest::Approx(nll3).epsilon(1e-12));
  const double base = -standard_normal_log_prob(one).data()[0];
  CHECK(nll1 == doctest::Approx(base).epsilon(1e-12));

  CHECK_THROWS_AS(f.model.nll_loss(f.store, Tensor::zeros({1, 3}), Tensor::zeros({2, 2})),
                  TensorError);
}

TEST_CASE("nll decreases under optimization on a fixed batch") {
  Fixture f(MeasurementKind::CM, 2, 22);
  Rng rng(23);
  const Eigen::Index n = 64;
  Array feats(n * 2), states_v(n * 2);
  for (Eigen::Index i = 0; i < n; ++i) {
    states_v[2 * i] = rand_uniform(rng, 0.0, 8.0);
    states_v[2 * i + 1] = rand_uniform(rng, 0.0, 8.0);
    feats[2 * i] = 0.3 * states_v[2 * i] + rand_normal(rng, 0.0, 0.3);
    feats[2 * i + 1] = rand_normal(rng, 0.0, 0.5);
  }
  Tensor e({n, 2}, feats);
  Tensor x({n, 2}, states_v);
  const double nll0 = f.model.nll_loss(f.store, e, x).value();
  Optimizer opt(OptimizerKind::Adam, 3e-3);
  double last = nll0;
  for (int step = 0; step < 100; ++step) {
    f.store.zero_grad();
    Tape tape;
    {
      TapeScope scope(tape);
      backward(f.model.nll_loss(f.store, e, x));
    }
    opt.step(f.store, f.store.flat_grads(), 0.0);
    last = f.model.nll_loss(f.store, e, x).value();
  }
  CHECK(last < nll0);
}

TEST_CASE("variant name round trip and unknown names") {
  CHECK(measurement_from_name("cm") == MeasurementKind::CM);
  CHECK(measurement_from_name("nn") == MeasurementKind::NN);
  CHECK(measurement_from_name("cos") == MeasurementKind::COS);
  CHECK_THROWS_AS(measurement_from_name("gauss"), TensorError);
}
