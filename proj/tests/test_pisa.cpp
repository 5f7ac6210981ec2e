#include <atomic>
#include <cmath>
#include <set>
#include <stdexcept>

#include <doctest.h>

#include "pisa/diagnostics.hpp"
#include "pisa/partition.hpp"
#include "pisa/pisa.hpp"
#include "test_util.hpp"

using namespace pisa;
using pisa::testing::Range;
using pisa::testing::Regression;
using pisa::testing::Vec;

namespace {

ClientParams IdentityParams(double sigma0, double gamma, int k0 = 1) {
  ClientParams p;
  p.sigma0 = sigma0;
  p.gamma = gamma;
  p.k0 = k0;
  p.precond.kind = PreconditionerKind::kIdentity;
  p.precond.eta = 1.0;
  return p;
}

struct SmallLs {
  std::shared_ptr<const Dataset> data = std::make_shared<Dataset>(GenLeastSquares(4, 5, 60, 0.1));
  Problem problem = Problem::LeastSquares(data, 0.1, 0.05);
  Partition partition = PartitionIid(*data, 3, 2);
};

void CheckSameTrajectory(const std::vector<MetricsRecord>& a, const std::vector<MetricsRecord>& b) {
  REQUIRE(a.size() == b.size());
  for (std::size_t k = 0; k < a.size(); ++k) {
    CHECK(a[k].iter == b[k].iter);
    CHECK(a[k].loss == b[k].loss);
    CHECK(a[k].lagrangian == b[k].lagrangian);
    CHECK(a[k].consensus_gap == b[k].consensus_gap);
    CHECK(a[k].stationarity == b[k].stationarity);
    CHECK(a[k].extra == b[k].extra);
  }
}

}  // namespace

TEST_CASE("server aggregation by hand") {
  ParamLayout layout;
  layout.AddVector("w", 2);
  std::vector<ClientState> clients;
  clients.emplace_back(IndexList{0}, IdentityParams(2, 0.9), layout);
  clients.emplace_back(IndexList{1}, IdentityParams(4, 0.9), layout);
  clients[0].w = Vec({1, 0});
  clients[1].w = Vec({0, 1});
  clients[0].pi = Vec({0.2, 0});
  clients[1].pi = Vec({0, -0.4});
  const std::vector<double> alpha{0.5, 0.5};
  CHECK(ServerAggregate(clients, alpha, 1.0).isApprox(Vec({0.275, 0.45})));

  std::vector<ClientState> single;
  single.emplace_back(IndexList{0}, IdentityParams(3, 0.9), layout);
  single[0].w = Vec({1, 2});
  single[0].pi = Vec({0.3, -0.6});
  const std::vector<double> one{1.0};
  CHECK(ServerAggregate(single, one, 0.0).isApprox(Vec({1.1, 1.8})));

  for (auto& c : clients) {
    c.w = Vec({0.7, -0.2});
    c.pi.setZero();
  }
  CHECK(ServerAggregate(clients, alpha, 0.0).isApprox(Vec({0.7, -0.2})));
}

TEST_CASE("sigma schedule") {
  ParamLayout layout;
  layout.AddVector("w", 1);
  ClientState a(IndexList{0}, IdentityParams(16, 0.99, 1), layout);
  SigmaAdvance(a);
  SigmaAdvance(a);
  CHECK(a.sigma == doctest::Approx(16.0 / (0.99 * 0.99)).epsilon(1e-14));
  CHECK(a.sigma == doctest::Approx(16.32486).epsilon(1e-6));

  ClientState b(IndexList{0}, IdentityParams(16, 0.9, 11), layout);
  for (int k = 0; k < 10; ++k) SigmaAdvance(b);
  CHECK(b.sigma == 16.0);

  ClientState fast(IndexList{0}, IdentityParams(16, 0.99, 1), layout);
  ClientState matched(IndexList{0}, IdentityParams(16, 0.9, 0), layout);
  CHECK(matched.k0 == 11);
  for (int k = 0; k < 100; ++k) {
    SigmaAdvance(fast);
    SigmaAdvance(matched);
  }
  CHECK(std::abs(std::log(fast.sigma / matched.sigma)) <= -std::log(0.9));
}

TEST_CASE("k0 from gamma") {
  CHECK(ComputeK0(0.5) == 69);
  CHECK(ComputeK0(0.7) == 36);
  CHECK(ComputeK0(0.9) == 11);
  CHECK(ComputeK0(0.99) == 1);
  CHECK(ComputeK0(0.995) == 1);
  CHECK_THROWS_AS(ComputeK0(1.0), Error);
  CHECK_THROWS_AS(ComputeK0(0.0), Error);
}

TEST_CASE("client parameters are validated") {
  ParamLayout layout;
  layout.AddVector("w", 1);
  CHECK_THROWS_WITH_AS(ClientState(IndexList{0}, IdentityParams(1, 1.2), layout),
                       doctest::Contains("gamma"), Error);
  CHECK_THROWS_AS(ClientState(IndexList{0}, IdentityParams(0, 0.9), layout), Error);
  CHECK_NOTHROW(ClientState(IndexList{0}, IdentityParams(1, 1.0), layout));
}

TEST_CASE("local step and dual update by hand") {
  ParamLayout layout;
  layout.AddVector("w", 2);
  ClientState c(IndexList{0}, IdentityParams(1, 0.9), layout);
  c.sigma = 1.0;
  const Vector w = Vector::Zero(2);
  const Vector g = Vec({3, -3});
  const Preconditioner q = DiagonalQ{Vec({3, 3})};
  ClientLocalStep(c, w, c.pi + g, q);
  CHECK(c.w.isApprox(Vec({-0.75, 0.75})));
  CHECK(c.pi.isApprox(Vec({-0.75, 0.75})));
  const Vector identity = -g - c.rho * ApplyQ(q, c.w - w);
  CHECK(identity.isApprox(c.pi));

  ClientState plain(IndexList{0}, IdentityParams(2, 0.9), layout);
  ClientLocalStep(plain, Vec({1, 1}), g, DiagonalQ{Vector::Zero(2)});
  CHECK(plain.w.isApprox(Vec({1, 1}) - g / 2.0));

  ClientState fixed(IndexList{0}, IdentityParams(2, 0.9), layout);
  fixed.pi = Vec({-3, 3});
  ClientLocalStep(fixed, Vec({1, 1}), fixed.pi + g, QIdentity(2));
  CHECK(fixed.w == Vec({1, 1}));
  CHECK(fixed.pi == Vec({-3, 3}));
}

TEST_CASE("batch sampler") {
  const IndexList shard{3, 5, 8, 13, 21, 34};
  BatchSampler full(shard, 0, 1, 0);
  CHECK(full.full_batch());
  CHECK(full.Draw(1) == shard);

  BatchSampler s(shard, 3, 1, 2);
  const auto b1 = s.Draw(4);
  CHECK(b1.size() == 3);
  CHECK(std::is_sorted(b1.begin(), b1.end()));
  for (auto i : b1) CHECK(std::find(shard.begin(), shard.end(), i) != shard.end());
  CHECK(std::set<Index>(b1.begin(), b1.end()).size() == 3);
  (void)s.Draw(5);
  CHECK(s.Draw(4) == b1);
  CHECK(BatchSampler(shard, 3, 1, 2).Draw(4) == b1);
  CHECK_THROWS_AS(BatchSampler(shard, 7, 1, 0), Error);
}

TEST_CASE("iteration order matches a hand-rolled loop") {
  SmallLs ls;
  const auto params = IdentityParams(2.0, 0.9, 2);
  PisaOptions opt;
  opt.max_iters = 4;
  opt.keep_iterates = true;
  const std::vector<ClientParams> one{params};
  const auto res = RunPisa(ls.problem, ls.partition, one, opt);

  const std::size_t m = ls.partition.num_clients();
  const double lambda = ls.problem.lambda();
  std::vector<Vector> wi(m, Vector::Zero(5)), pi(m, Vector::Zero(5));
  std::vector<double> sigma(m, params.sigma0);
  Vector w = Vector::Zero(5);
  for (long ell = 1; ell <= 4; ++ell) {
    Vector num = Vector::Zero(5);
    double den = lambda;
    for (std::size_t i = 0; i < m; ++i) {
      num += ls.partition.alpha[i] * (sigma[i] * wi[i] + pi[i]);
      den += ls.partition.alpha[i] * sigma[i];
    }
    w = num / den;
    for (std::size_t i = 0; i < m; ++i) {
      const Vector g = EvalGrad(ls.problem, w, ls.partition.shards[i]);
      if (ell % 2 == 0) sigma[i] /= params.gamma;
      wi[i] = w - (pi[i] + g) / (sigma[i] + params.rho);
      pi[i] += sigma[i] * (wi[i] - w);
    }
    CHECK((res.iterates[static_cast<std::size_t>(ell)] - w).norm() <= 1e-13);
  }
  for (std::size_t i = 0; i < m; ++i) {
    CHECK((res.clients[i].w - wi[i]).norm() <= 1e-13);
    CHECK((res.clients[i].pi - pi[i]).norm() <= 1e-13);
  }
}

TEST_CASE("dual variables satisfy the local optimality identity") {
  SmallLs ls;
  ClientParams p;
  p.sigma0 = 4.0;
  p.gamma = 0.95;
  p.k0 = 1;
  p.precond.kind = PreconditionerKind::kMoment;
  p.precond.eta = 10.0;
  PisaOptions opt;
  opt.max_iters = 5;
  const std::vector<ClientParams> one{p};
  const auto res = RunPisa(ls.problem, ls.partition, one, opt);
  for (std::size_t i = 0; i < res.clients.size(); ++i) {
    const auto& c = res.clients[i];
    const Vector g = EvalGrad(ls.problem, res.server.w, c.shard);
    const Vector rhs = -g - c.rho * ApplyQ(*c.last_q, c.w - res.server.w);
    CHECK((c.pi - rhs).norm() <= 1e-10 * (1.0 + rhs.norm()));
  }
}

TEST_CASE("zero iterations record the initial state only") {
  SmallLs ls;
  PisaOptions opt;
  opt.max_iters = 0;
  const std::vector<ClientParams> one{IdentityParams(1, 0.9)};
  const auto res = RunPisa(ls.problem, ls.partition, one, opt);
  REQUIRE(res.trajectory.size() == 1);
  CHECK(res.trajectory[0].iter == 0);
  CHECK(res.trajectory[0].loss == doctest::Approx(GlobalObjective(ls.problem, Vector::Zero(5))));
  CHECK(res.status == RunStatus::kCompleted);
}

TEST_CASE("single client full batch with frozen sigma reaches the optimum") {
  const auto data = std::make_shared<Dataset>(GenLeastSquares(2, 4, 40, 0.2));
  const auto problem = Problem::LeastSquares(data, 0.0, 0.0);
  const auto partition = PartitionIid(*data, 1, 1);
  PisaOptions opt;
  opt.max_iters = 400;
  const std::vector<ClientParams> one{IdentityParams(1.0, 1.0)};
  const auto res = RunPisa(problem, partition, one, opt);
  const double best = GlobalObjective(problem, SolveLeastSquaresExact(*data, 0.0));
  for (std::size_t k = 1; k < res.trajectory.size(); ++k) {
    CHECK(res.trajectory[k].loss <= res.trajectory[k - 1].loss + 1e-12);
  }
  CHECK(res.trajectory.back().loss - best <= 1e-10);
}

TEST_CASE("worker count does not change the trajectory") {
  SmallLs ls;
  ClientParams p;
  p.sigma0 = 2.0;
  p.batch_size = 5;
  p.precond.kind = PreconditionerKind::kMoment;
  const std::vector<ClientParams> one{p};
  PisaOptions opt;
  opt.max_iters = 30;
  opt.seed = 5;
  const auto serial = RunPisa(ls.problem, ls.partition, one, opt);
  opt.workers = 3;
  const auto parallel = RunPisa(ls.problem, ls.partition, one, opt);
  CheckSameTrajectory(serial.trajectory, parallel.trajectory);
  CHECK(serial.grad_samples == parallel.grad_samples);
  CHECK(serial.grad_samples == 30u * 3u * 5u);
}

TEST_CASE("logging cadence and stopping rules") {
  SmallLs ls;
  const std::vector<ClientParams> one{IdentityParams(1, 0.99)};
  PisaOptions opt;
  opt.max_iters = 25;
  opt.log_every = 10;
  auto res = RunPisa(ls.problem, ls.partition, one, opt);
  REQUIRE(res.trajectory.size() == 4);
  CHECK(res.trajectory[1].iter == 10);
  CHECK(res.trajectory[3].iter == 25);

  opt.max_iters = 5000;
  opt.log_every = 1;
  opt.stationarity_tol = 1e-6;
  res = RunPisa(ls.problem, ls.partition, one, opt);
  CHECK(res.status == RunStatus::kConverged);
  CHECK(res.trajectory.back().stationarity <= 1e-6);
  CHECK(res.trajectory.back().iter < 5000);
}

TEST_CASE("overflow ends the run as diverged") {
  Matrix x = Matrix::Constant(1, 4, 1e200);
  const auto problem = Problem::LeastSquares(Regression(x, Vec({1, 2, 3, 4})), 0, 0);
  const auto partition = PartitionIid(problem.data(), 2, 1);
  PisaOptions opt;
  opt.max_iters = 10;
  const std::vector<ClientParams> one{IdentityParams(1, 0.9)};
  const auto res = RunPisa(problem, partition, one, opt);
  CHECK(res.status == RunStatus::kDiverged);
  CHECK(res.message.starts_with("divergence at iteration"));
}

TEST_CASE("parallel-for rethrows the lowest failing index") {
  std::atomic<int> calls = 0;
  auto body = [&](std::size_t i) {
    ++calls;
    if (i == 3 || i == 6) throw std::runtime_error("fail " + std::to_string(i));
  };
  CHECK_THROWS_WITH(ParallelFor(8, 4, body), "fail 3");
  CHECK(calls == 8);
}
