#include "pisa/baselines.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <string_view>

#include "pisa/diagnostics.hpp"
#include "pisa/rng.hpp"

namespace pisa {
namespace {

constexpr std::uint64_t kFedavgTag = 0x4641;
constexpr std::uint64_t kCentralTag = 0x4345;

void EnsureSize(Vector& buf, const Vector& w) {
  if (buf.size() != w.size()) buf = Vector::Zero(w.size());
}

}  // namespace

Vector SgdMomentumStep(SgdMomentumState& s, const Vector& w, const Vector& g) {
  EnsureSize(s.v, w);
  s.v = s.beta * s.v + (g + s.weight_decay * w);
  return w - s.lr * s.v;
}

Vector AdamStep(AdamState& s, const Vector& w, const Vector& g) {
  EnsureSize(s.m, w);
  EnsureSize(s.v, w);
  const Vector grad = g + s.weight_decay * w;
  ++s.t;
  s.m = s.beta1 * s.m + (1.0 - s.beta1) * grad;
  s.v = s.beta2 * s.v + (1.0 - s.beta2) * grad.cwiseProduct(grad);
  const double t = static_cast<double>(s.t);
  const Vector m_hat = s.m / (1.0 - std::pow(s.beta1, t));
  const Vector v_hat = s.v / (1.0 - std::pow(s.beta2, t));
  return w - s.lr * (m_hat.array() / (v_hat.array().sqrt() + s.eps)).matrix();
}

std::string ToString(BaselineKind kind) {
  switch (kind) {
    case BaselineKind::kSgdMomentum:
      return "sgd-momentum";
    case BaselineKind::kAdam:
      return "adam";
    case BaselineKind::kFedavg:
      return "fedavg";
  }
  return "?";
}

BaselineKind ParseBaselineKind(const std::string& name) {
  if (name == "sgd-momentum" || name == "sgdm") return BaselineKind::kSgdMomentum;
  if (name == "adam") return BaselineKind::kAdam;
  if (name == "fedavg") return BaselineKind::kFedavg;
  throw Error("unknown baseline '" + name + "'");
}

void BaselineConfig::Validate() const {
  if (!(lr > 0.0)) throw Error("lr must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0)) throw Error("beta1 must lie in [0, 1)");
  if (!(beta2 > 0.0 && beta2 < 1.0)) throw Error("beta2 must lie in (0, 1)");
  if (!(weight_decay >= 0.0)) throw Error("weight_decay must be nonnegative");
  if (local_epochs < 1) throw Error("local_epochs must be at least 1");
}

Vector FedavgRound(const Problem& problem, const Partition& partition, const Vector& w,
                   const BaselineConfig& config, std::uint64_t seed, long round, int workers,
                   FedavgRoundStats* stats) {
  config.Validate();
  const std::size_t m = partition.num_clients();
  std::vector<Vector> local(m);
  std::vector<std::size_t> used(m, 0);
  const double lambda = problem.lambda();
  ParallelFor(m, workers, [&](std::size_t i) {
    IndexList order = partition.shards[i];
    const std::size_t bs =
        config.batch_size == 0 ? order.size() : std::min(config.batch_size, order.size());
    Vector wi = w;
    for (int e = 0; e < config.local_epochs; ++e) {
      auto rng = MakeStream(
          seed, {kFedavgTag, i, static_cast<std::uint64_t>(round), static_cast<std::uint64_t>(e)});
      if (bs < order.size()) std::shuffle(order.begin(), order.end(), rng);
      for (std::size_t first = 0; first < order.size(); first += bs) {
        const std::size_t last = std::min(order.size(), first + bs);
        const std::span<const Index> batch(order.data() + first, last - first);
        const Vector g = EvalGrad(problem, wi, batch) + (lambda + config.weight_decay) * wi;
        wi -= config.lr * g;
        used[i] += batch.size();
      }
    }
    local[i] = std::move(wi);
  });
  Vector out = Vector::Zero(w.size());
  for (std::size_t i = 0; i < m; ++i) out += partition.alpha[i] * local[i];
  if (stats) stats->grad_samples += std::accumulate(used.begin(), used.end(), std::size_t{0});
  return out;
}

BaselineResult RunBaseline(const Problem& problem, const Partition& partition,
                           const BaselineConfig& config, const PisaOptions& options) {
  config.Validate();
  partition.Validate(problem.data().size());
  if (options.max_iters < 0) throw Error("max_iters must be nonnegative");
  if (options.log_every < 1) throw Error("log_every must be positive");

  BaselineResult res;
  ServerState server;
  server.lambda = problem.lambda();
  server.alpha = partition.alpha;
  server.w = options.warm_start ? *options.warm_start
                                : Vector::Zero(static_cast<Eigen::Index>(problem.num_params()));
  problem.layout().CheckSize(server.w);

  const IndexList all = problem.AllIndices();
  const BatchSampler sampler(all, config.batch_size, options.seed, kCentralTag);
  SgdMomentumState sgd{config.lr, config.beta1, config.weight_decay, {}};
  AdamState adam{config.lr, config.beta1, config.beta2, 1e-8, config.weight_decay, {}, {}, 0};

  const auto start = std::chrono::steady_clock::now();
  auto snapshot = [&]() {
    MetricsRecord r;
    r.iter = server.ell;
    r.loss = GlobalObjective(problem, server.w);
    r.stationarity = StationarityResidual(problem, server.w);
    r.extra["grad_samples"] = static_cast<double>(res.grad_samples);
    if (options.reference_loss) {
      const double f = *options.reference_loss;
      r.extra["rel_gap"] = std::abs(r.loss - f) / std::max(1.0, std::abs(f));
    }
    if (options.extra_metrics) options.extra_metrics(server, r.extra);
    r.wallclock_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return r;
  };
  auto converged = [&](const MetricsRecord& r) {
    bool hit = options.stationarity_tol > 0.0 && r.stationarity <= options.stationarity_tol;
    if (options.gap_tol > 0.0 && r.extra.contains("rel_gap")) {
      hit |= r.extra.at("rel_gap") <= options.gap_tol;
    }
    return hit;
  };

  res.trajectory.push_back(snapshot());
  for (long it = 0; it < options.max_iters; ++it) {
    const long next = server.ell + 1;
    try {
      if (config.kind == BaselineKind::kFedavg) {
        FedavgRoundStats stats;
        server.w = FedavgRound(problem, partition, server.w, config, options.seed, next,
                               options.workers, &stats);
        res.grad_samples += stats.grad_samples;
      } else {
        const IndexList batch = sampler.Draw(next);
        const Vector g = EvalGrad(problem, server.w, batch) + server.lambda * server.w;
        server.w = config.kind == BaselineKind::kAdam ? AdamStep(adam, server.w, g)
                                                      : SgdMomentumStep(sgd, server.w, g);
        res.grad_samples += batch.size();
      }
      if (!AllFinite(server.w)) throw Error("numerical overflow");
      server.ell = next;
      const bool last = it + 1 == options.max_iters;
      const bool stop_check = options.stationarity_tol > 0.0 || options.gap_tol > 0.0;
      if (last || stop_check || next % options.log_every == 0) {
        MetricsRecord r = snapshot();
        const bool done = converged(r);
        if (last || done || next % options.log_every == 0) res.trajectory.push_back(std::move(r));
        if (done) {
          res.status = RunStatus::kConverged;
          break;
        }
      }
    } catch (const Error& e) {
      if (std::string_view(e.what()) != "numerical overflow") throw;
      res.status = RunStatus::kDiverged;
      res.message = "divergence at iteration " + std::to_string(next);
      break;
    }
  }
  res.w = server.w;
  return res;
}

}  // namespace pisa
