#include <doctest.h>

#include "dpf/flow.hpp"
#include "dpf/grad_check.hpp"
#include "dpf/train.hpp"
#include "oracles.hpp"

using namespace dpf;

namespace {

ConditionalFlow make_flow(ParameterStore& store, FlowConfig cfg, std::uint64_t seed,
                          double perturb = 0.0) {
  ConditionalFlow flow(cfg, "flow");
  Rng rng(seed);
  flow.init(store, rng);
  if (perturb > 0.0)
    for (const auto& key : store.keys())
      for (Eigen::Index i = 0; i < store.at(key).size(); ++i)
        store.at(key).data()[i] += rand_normal(rng, 0.0, perturb);
  return flow;
}

Tensor random_batch(Eigen::Index n, Eigen::Index d, Rng& rng, double s = 1.0) {
  Array v(n * d);
  for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = rand_normal(rng, 0.0, s);
  return Tensor({n, d}, std::move(v));
}

}  // namespace

TEST_CASE("zero-initialized flow is the identity with zero log-det") {
  FlowConfig cfg;
  cfg.data_dim = 4;
  cfg.cond_dim = 2;
  ParameterStore store;
  ConditionalFlow flow = make_flow(store, cfg, 1);
  Rng rng(2);
  Tensor y = random_batch(5, 4, rng);
  Tensor cond = random_batch(5, 2, rng);
  FlowResult r = flow.forward(store, y, cond);
  CHECK((r.z.data() - y.data()).abs().maxCoeff() == 0.0);
  CHECK(r.log_det.data().abs().maxCoeff() == 0.0);
  Tensor back = flow.inverse(store, y, cond);
  CHECK((back.data() - y.data()).abs().maxCoeff() == 0.0);

  // log_prob equals the base density exactly at the identity
  Tensor lp = flow.log_prob(store, y, cond);
  Tensor base = standard_normal_log_prob(y);
  CHECK((lp.data() - base.data()).abs().maxCoeff() == 0.0);
}

TEST_CASE("zero-init flow, y = 0, d = 2 gives -ln(2pi)") {
  FlowConfig cfg;
  cfg.data_dim = 2;
  cfg.cond_dim = 2;
  ParameterStore store;
  ConditionalFlow flow = make_flow(store, cfg, 1);
  Tensor y = Tensor::zeros({1, 2});
  Tensor cond = Tensor::zeros({1, 2});
  CHECK(flow.log_prob(store, y, cond).data()[0] ==
        doctest::Approx(-1.8378770664).epsilon(1e-10));
}

TEST_CASE("invertibility: 1000 random round trips below 1e-9") {
  FlowConfig cfg;
  cfg.data_dim = 6;
  cfg.cond_dim = 3;
  ParameterStore store;
  ConditionalFlow flow = make_flow(store, cfg, 3, 0.2);
  Rng rng(4);
  double worst = 0.0;
  for (int rep = 0; rep < 10; ++rep) {
    Tensor y = random_batch(100, 6, rng, 1.5);
    Tensor cond = random_batch(100, 3, rng);
    FlowResult r = flow.forward(store, y, cond);
    Tensor back = flow.inverse(store, r.z, cond);
    worst = std::max(worst, (back.data() - y.data()).abs().maxCoeff());
    // and forward of inverse
    Tensor z = random_batch(100, 6, rng);
    Tensor yy = flow.inverse(store, z, cond);
    FlowResult r2 = flow.forward(store, yy, cond);
    worst = std::max(worst, (r2.z.data() - z.data()).abs().maxCoeff());
  }
  CHECK(worst < 1e-9);
}

TEST_CASE("analytic log-det matches the numerical Jacobian at d in {2,4,8}") {
  for (Eigen::Index d : {2, 4, 8}) {
    FlowConfig cfg;
    cfg.data_dim = d;
    cfg.cond_dim = 2;
    cfg.hidden = 16;
    ParameterStore store;
    ConditionalFlow flow = make_flow(store, cfg, 10 + static_cast<std::uint64_t>(d), 0.15);
    Rng rng(20 + static_cast<std::uint64_t>(d));
    for (int rep = 0; rep < 5; ++rep) {
      Tensor y = random_batch(1, d, rng);
      Tensor cond = random_batch(1, 2, rng);
      FlowResult r = flow.forward(store, y, cond);
      auto fwd = [&](const Eigen::VectorXd& x) {
        Tensor yx({1, d}, x.array());
        return Eigen::VectorXd(flow.forward(store, yx, cond).z.data().matrix());
      };
      const Eigen::MatrixXd J = numerical_jacobian(fwd, y.data().matrix(), 1e-6);
      const double logdet_num = std::log(std::abs(J.determinant()));
      CHECK(std::abs(logdet_num - r.log_det.data()[0]) < 1e-5);
    }
  }
}

TEST_CASE("permuting the batch permutes outputs identically") {
  FlowConfig cfg;
  cfg.data_dim = 3;
  cfg.cond_dim = 2;
  ParameterStore store;
  ConditionalFlow flow = make_flow(store, cfg, 5, 0.2);
  Rng rng(6);
  Tensor y = random_batch(4, 3, rng);
  Tensor cond = random_batch(4, 2, rng);
  FlowResult r = flow.forward(store, y, cond);
  // reversed batch
  Array yr(y.size()), cr(cond.size());
  for (Eigen::Index i = 0; i < 4; ++i) {
    yr.segment(i * 3, 3) = y.data().segment((3 - i) * 3, 3);
    cr.segment(i * 2, 2) = cond.data().segment((3 - i) * 2, 2);
  }
  FlowResult rr = flow.forward(store, Tensor({4, 3}, yr), Tensor({4, 2}, cr));
  for (Eigen::Index i = 0; i < 4; ++i) {
    CHECK(rr.log_det.data()[i] == r.log_det.data()[3 - i]);
    for (Eigen::Index k = 0; k < 3; ++k)
      CHECK(rr.z.data()[i * 3 + k] == r.z.data()[(3 - i) * 3 + k]);
  }
}

TEST_CASE("2-D density integrates to one under grid quadrature") {
  FlowConfig cfg;
  cfg.data_dim = 2;
  cfg.cond_dim = 2;
  cfg.hidden = 16;
  ParameterStore store;
  ConditionalFlow flow = make_flow(store, cfg, 7, 0.1);
  Tensor cond_row({1, 2}, (Array(2) << 0.5, -1.0).finished());
  const double integral = oracles::grid_quadrature_2d(
      [&](const Eigen::MatrixXd& pts) {
        Tensor y({pts.rows(), 2}, Array(pts.reshaped<Eigen::RowMajor>().array()));
        Tensor c = broadcast(reshape(cond_row, {2}), pts.rows());
        return Eigen::VectorXd(flow.log_prob(store, y, c).data().matrix());
      },
      6.0, 0.05);
  CHECK(integral == doctest::Approx(1.0).epsilon(0.01));
}

TEST_CASE("base distribution normalizes at d=1") {
  const double integral = oracles::grid_quadrature_1d(
      [&](const Eigen::VectorXd& pts) {
        Tensor z({pts.size(), 1}, pts.array());
        return Eigen::VectorXd(standard_normal_log_prob(z).data().matrix());
      },
      8.0, 0.01);
  CHECK(integral == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("gradient of mean NLL passes the finite-difference check") {
  FlowConfig cfg;
  cfg.data_dim = 3;
  cfg.cond_dim = 2;
  cfg.hidden = 8;
  cfg.n_layers = 2;
  ParameterStore store;
  ConditionalFlow flow = make_flow(store, cfg, 9, 0.2);
  Rng rng(10);
  Tensor y = random_batch(6, 3, rng);
  Tensor cond = random_batch(6, 2, rng);
  auto f = [&](ParameterStore& s) { return negate(mean(flow.log_prob(s, y, cond))); };
  CHECK(finite_difference_check(f, store, 1e-5) < 1e-4);
}

TEST_CASE("1-D conditional flow learns N(sin x, 0.25) to within 0.05 nats") {
  FlowConfig cfg;
  cfg.data_dim = 1;
  cfg.cond_dim = 1;
  cfg.n_layers = 4;
  cfg.hidden = 32;
  ParameterStore store;
  ConditionalFlow flow = make_flow(store, cfg, 11);

  Rng rng(12);
  const Eigen::Index n_train = 1024, n_test = 2048;
  auto sample_pairs = [&](Eigen::Index n, Tensor& y, Tensor& x) {
    Array xv(n), yv(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      xv[i] = rand_uniform(rng, -3.0, 3.0);
      yv[i] = std::sin(xv[i]) + rand_normal(rng, 0.0, 0.5);
    }
    x = Tensor({n, 1}, std::move(xv));
    y = Tensor({n, 1}, std::move(yv));
  };
  Tensor y_train, x_train, y_test, x_test;
  sample_pairs(n_train, y_train, x_train);
  sample_pairs(n_test, y_test, x_test);

  Optimizer opt(OptimizerKind::Adam, 5e-3);
  for (int step = 0; step < 600; ++step) {
    store.zero_grad();
    Tape tape;
    {
      TapeScope scope(tape);
      backward(negate(mean(flow.log_prob(store, y_train, x_train))));
    }
    opt.step(store, store.flat_grads(), 0.0);
  }
  double nll;
  {
    NoGradGuard ng;
    nll = -mean(flow.log_prob(store, y_test, x_test)).value();
  }
  // closed-form true-model NLL on the held-out data
  const Array residual = y_test.data() - x_test.data().sin();
  const double true_nll =
      0.5 * std::log(2.0 * M_PI * 0.25) + (residual.square() / (2.0 * 0.25)).mean();
  CHECK(std::abs(nll - true_nll) < 0.05);

  // CLT: mean of 1e5 draws at x = 0 is 0 +/- 0.01
  Rng srng(13);
  NoGradGuard ng;
  Tensor cond0 = Tensor::zeros({1, 1});
  Tensor draws = flow.sample(store, cond0, 100000, srng);
  CHECK(std::abs(draws.data().mean()) < 0.01);
}

TEST_CASE("sampling: zero-init flow returns the base draws; seeds reproduce") {
  FlowConfig cfg;
  cfg.data_dim = 2;
  cfg.cond_dim = 1;
  ParameterStore store;
  ConditionalFlow flow = make_flow(store, cfg, 14);
  Tensor cond = Tensor::zeros({1, 1});
  Rng r1(15), r2(15), r3(15);
  Tensor s1 = flow.sample(store, cond, 64, r1);
  Tensor s2 = flow.sample(store, cond, 64, r2);
  Tensor base = standard_normal_sample(64, 2, r3);
  CHECK((s1.data() - s2.data()).abs().maxCoeff() == 0.0);
  CHECK((s1.data() - base.data()).abs().maxCoeff() == 0.0);
}

TEST_CASE("non-finite inputs are rejected") {
  FlowConfig cfg;
  cfg.data_dim = 2;
  cfg.cond_dim = 1;
  ParameterStore store;
  ConditionalFlow flow = make_flow(store, cfg, 16);
  Tensor bad({1, 2}, Array::Constant(2, std::numeric_limits<double>::infinity()));
  Tensor cond = Tensor::zeros({1, 1});
  CHECK_THROWS_AS(flow.forward(store, bad, cond), TensorError);
  CHECK_THROWS_AS(flow.inverse(store, bad, cond), TensorError);
}
