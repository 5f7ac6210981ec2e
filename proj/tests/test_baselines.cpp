#include <cmath>

#include <doctest.h>

#include "pisa/baselines.hpp"
#include "pisa/partition.hpp"
#include "test_util.hpp"

using namespace pisa;
using pisa::testing::Range;
using pisa::testing::Vec;

TEST_CASE("heavy-ball SGD") {
  SgdMomentumState plain{0.1, 0.0, 0.0, {}};
  CHECK(SgdMomentumStep(plain, Vec({1, 2}), Vec({3, -1})).isApprox(Vec({0.7, 2.1})));

  SgdMomentumState s{0.1, 0.5, 0.0, {}};
  const Vector w = Vec({1.0});
  SgdMomentumStep(s, w, Vec({4.0}));
  for (int k = 1; k <= 4; ++k) {
    SgdMomentumStep(s, w, Vec({0.0}));
    CHECK(s.v(0) == doctest::Approx(4.0 * std::pow(0.5, k)));
  }

  // f(w) = w^2 / 2 with a small step decreases monotonically.
  SgdMomentumState q{0.05, 0.5, 0.0, {}};
  Vector x = Vec({3.0});
  double prev = 0.5 * x.squaredNorm();
  for (int k = 0; k < 50; ++k) {
    x = SgdMomentumStep(q, x, x);
    const double f = 0.5 * x.squaredNorm();
    CHECK(f < prev);
    prev = f;
  }
}

TEST_CASE("Adam") {
  AdamState zero;
  CHECK(AdamStep(zero, Vec({1, -1}), Vector::Zero(2)) == Vec({1, -1}));

  AdamState c{0.01, 0.9, 0.999, 1e-8, 0.0, {}, {}, 0};
  Vector w = Vector::Zero(1);
  Vector prev = w;
  for (int k = 0; k < 2000; ++k) {
    prev = w;
    w = AdamStep(c, w, Vec({2.5}));
  }
  CHECK(std::abs(prev(0) - w(0)) == doctest::Approx(0.01).epsilon(1e-6));

  AdamState a{0.1, 0.5, 0.75, 0.0, 0.0, {}, {}, 0};
  const double grads[3] = {1.0, -2.0, 0.5};
  double m = 0.0, v = 0.0, x = 1.0;
  Vector xv = Vec({1.0});
  for (int t = 1; t <= 3; ++t) {
    const double g = grads[t - 1];
    m = 0.5 * m + 0.5 * g;
    v = 0.75 * v + 0.25 * g * g;
    x -= 0.1 * (m / (1.0 - std::pow(0.5, t))) / std::sqrt(v / (1.0 - std::pow(0.75, t)));
    xv = AdamStep(a, xv, Vec({g}));
  }
  // Hand unroll: m = (0.5, -0.75, -0.125), v = (0.25, 1.1875, 0.953125).
  CHECK(m == doctest::Approx(-0.125));
  CHECK(v == doctest::Approx(0.953125));
  CHECK(xv(0) == doctest::Approx(x).epsilon(1e-14));
}

TEST_CASE("FedAvg reductions") {
  const auto data = std::make_shared<Dataset>(GenLeastSquares(2, 3, 12, 0.1));
  const auto problem = Problem::LeastSquares(data, 0.2, 0.1);
  const Vector w = Vec({0.3, -0.1, 0.2});
  BaselineConfig cfg;
  cfg.lr = 0.05;
  cfg.local_epochs = 1;

  const auto single = PartitionIid(*data, 1, 1);
  const Vector step = w - cfg.lr * (EvalGrad(problem, w, Range(12)) + problem.lambda() * w);
  CHECK(FedavgRound(problem, single, w, cfg, 0, 1).isApprox(step, 1e-14));

  // Every client holding the same data behaves like one centralized learner.
  Dataset doubled = *data;
  doubled.features.conservativeResize(Eigen::NoChange, 24);
  doubled.features.rightCols(12) = data->features;
  doubled.targets.conservativeResize(24);
  doubled.targets.tail(12) = data->targets;
  const auto twin_data = std::make_shared<Dataset>(doubled);
  const auto twin = Problem::LeastSquares(twin_data, 0.2, 0.1);
  IndexList first = Range(12), second(12);
  for (std::size_t k = 0; k < 12; ++k) second[k] = k + 12;
  const auto mirrored = Partition::FromShards({first, second}, 24);
  cfg.local_epochs = 3;
  Vector central = w;
  for (int e = 0; e < 3; ++e) {
    central -= cfg.lr * (EvalGrad(problem, central, Range(12)) + problem.lambda() * central);
  }
  FedavgRoundStats stats;
  CHECK(FedavgRound(twin, mirrored, w, cfg, 0, 1, 2, &stats).isApprox(central, 1e-13));
  CHECK(stats.grad_samples == 72);
}

TEST_CASE("baseline runs reduce the objective and are reproducible") {
  const auto data = std::make_shared<Dataset>(GenLeastSquares(2, 4, 64, 0.1));
  const auto problem = Problem::LeastSquares(data, 0.0, 0.0);
  const auto part = PartitionIid(*data, 4, 1);
  PisaOptions opt;
  opt.max_iters = 60;
  opt.seed = 3;
  for (auto kind : {BaselineKind::kSgdMomentum, BaselineKind::kAdam, BaselineKind::kFedavg}) {
    CAPTURE(ToString(kind));
    BaselineConfig cfg;
    cfg.kind = kind;
    cfg.lr = 0.05;
    cfg.batch_size = 8;
    cfg.local_epochs = 1;
    const auto a = RunBaseline(problem, part, cfg, opt);
    const auto b = RunBaseline(problem, part, cfg, opt);
    CHECK(a.trajectory.back().loss < 0.5 * a.trajectory.front().loss);
    CHECK(a.w == b.w);
    CHECK(a.grad_samples > 0);
    CHECK(ParseBaselineKind(ToString(kind)) == kind);
  }
}

TEST_CASE("baseline config validation") {
  BaselineConfig cfg;
  cfg.lr = 0.0;
  CHECK_THROWS_AS(cfg.Validate(), Error);
  cfg.lr = 0.1;
  cfg.local_epochs = 0;
  CHECK_THROWS_AS(cfg.Validate(), Error);
}
