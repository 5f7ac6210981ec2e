#include "pisa/pisa.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <exception>
#include <string_view>
#include <thread>

#include "pisa/diagnostics.hpp"
#include "pisa/rng.hpp"

namespace pisa {
namespace {

constexpr std::uint64_t kBatchTag = 0x4241;

void CheckGamma(double gamma) {
  if (!(gamma > 0.0 && gamma <= 1.0)) {
    throw Error("gamma out of range");
  }
}

int ResolveK0(const ClientParams& p) {
  if (p.k0 < 0) throw Error("k0 must be positive");
  if (p.k0 > 0) return p.k0;
  return p.gamma >= 1.0 ? 1 : ComputeK0(p.gamma);
}

bool IsDivergence(const Error& e) {
  const std::string_view what = e.what();
  return what == "numerical overflow" || what == "local solve failed";
}

}  // namespace

ClientState::ClientState(IndexList shard_in, const ClientParams& params, const ParamLayout& layout)
    : shard(std::move(shard_in)),
      w(Vector::Zero(static_cast<Eigen::Index>(layout.size()))),
      pi(Vector::Zero(static_cast<Eigen::Index>(layout.size()))),
      sigma(params.sigma0),
      sigma0(params.sigma0),
      gamma(params.gamma),
      rho(params.rho),
      k0(ResolveK0(params)),
      precond(params.precond, layout) {
  if (!(params.sigma0 > 0.0)) throw Error("sigma0 must be positive");
  if (!(params.rho > 0.0)) throw Error("rho must be positive");
  CheckGamma(params.gamma);
}

BatchSampler::BatchSampler(IndexList shard, std::size_t batch_size, std::uint64_t seed,
                           std::uint64_t client)
    : shard_(std::move(shard)),
      batch_size_(batch_size == 0 ? shard_.size() : batch_size),
      seed_(seed),
      client_(client) {
  if (shard_.empty()) throw Error("empty shard");
  if (batch_size_ > shard_.size()) throw Error("batch size exceeds shard size");
}

IndexList BatchSampler::Draw(long step) const {
  if (full_batch()) return shard_;
  auto rng = MakeStream(seed_, {kBatchTag, client_, static_cast<std::uint64_t>(step)});
  IndexList pool = shard_;
  // Partial Fisher-Yates: the first batch_size_ slots become a uniform subset.
  for (std::size_t k = 0; k < batch_size_; ++k) {
    std::uniform_int_distribution<std::size_t> pick(k, pool.size() - 1);
    std::swap(pool[k], pool[pick(rng)]);
  }
  pool.resize(batch_size_);
  std::sort(pool.begin(), pool.end());
  return pool;
}

Vector ServerAggregate(std::span<const ClientState> clients, std::span<const double> alpha,
                       double lambda) {
  if (clients.empty() || clients.size() != alpha.size()) {
    throw Error("aggregation needs one weight per client");
  }
  Vector num = Vector::Zero(clients.front().w.size());
  double den = lambda;
  for (std::size_t i = 0; i < clients.size(); ++i) {
    const auto& c = clients[i];
    num += alpha[i] * (c.sigma * c.w + c.pi);
    den += alpha[i] * c.sigma;
  }
  return num / den;
}

double SigmaAdvance(ClientState& client) {
  CheckGamma(client.gamma);
  if (client.k0 < 1) throw Error("k0 must be positive");
  ++client.step;
  if (client.step % client.k0 == 0) client.sigma /= client.gamma;
  return client.sigma;
}

int ComputeK0(double gamma) {
  if (!(gamma > 0.0 && gamma < 1.0)) {
    throw Error("k0 requires gamma in (0, 1)");
  }
  const double k = std::ceil(std::log(gamma) / std::log(0.99));
  return std::max(1, static_cast<int>(k));
}

void ClientLocalStep(ClientState& client, const Vector& w_new, const Vector& u,
                     const Preconditioner& q) {
  client.w = w_new - SolveShifted(q, client.sigma, client.rho, u);
  client.pi += client.sigma * (client.w - w_new);
}

std::string ToString(RunStatus status) {
  switch (status) {
    case RunStatus::kCompleted:
      return "completed";
    case RunStatus::kConverged:
      return "converged";
    case RunStatus::kDiverged:
      return "diverged";
  }
  return "?";
}

void ParallelFor(std::size_t count, int workers, const std::function<void(std::size_t)>& body) {
  const std::size_t threads =
      std::min<std::size_t>(count, static_cast<std::size_t>(std::max(1, workers)));
  std::vector<std::exception_ptr> errors(count);
  auto run = [&](std::size_t first) {
    for (std::size_t i = first; i < count; i += threads) {
      try {
        body(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  if (threads <= 1) {
    run(0);
  } else {
    std::vector<std::jthread> pool;
    pool.reserve(threads);
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(run, t);
  }
  // Lowest failing index wins so the reported error does not depend on scheduling.
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

PisaResult RunPisa(const Problem& problem, const Partition& partition,
                   std::span<const ClientParams> params, const PisaOptions& options) {
  const std::size_t m = partition.num_clients();
  partition.Validate(problem.data().size());
  if (params.size() != m && params.size() != 1) {
    throw Error("client parameters: expected 1 or " + std::to_string(m) + " entries, got " +
                std::to_string(params.size()));
  }
  if (options.max_iters < 0) throw Error("max_iters must be nonnegative");
  if (options.log_every < 1) throw Error("log_every must be positive");

  const auto& layout = problem.layout();
  PisaResult res;
  auto& server = res.server;
  auto& clients = res.clients;
  server.lambda = problem.lambda();
  server.alpha = partition.alpha;
  server.w = Vector::Zero(static_cast<Eigen::Index>(layout.size()));
  clients.reserve(m);
  std::vector<BatchSampler> samplers;
  samplers.reserve(m);
  for (std::size_t i = 0; i < m; ++i) {
    const auto& p = params.size() == 1 ? params[0] : params[i];
    clients.emplace_back(partition.shards[i], p, layout);
    samplers.emplace_back(partition.shards[i], p.batch_size, options.seed, i);
  }
  if (options.warm_start) {
    layout.CheckSize(*options.warm_start);
    server.w = *options.warm_start;
    for (auto& c : clients) c.w = server.w;
  }

  const auto start = std::chrono::steady_clock::now();
  auto snapshot = [&](std::optional<double> rhs) {
    MetricsRecord r;
    r.iter = server.ell;
    r.loss = GlobalObjective(problem, server.w);
    if (options.track_lagrangian) r.lagrangian = AugmentedLagrangian(problem, server, clients);
    if (options.track_merit) r.merit = MeritFunction(problem, server, clients);
    r.consensus_gap = ConsensusGap(server, clients);
    r.stationarity = StationarityResidual(problem, server.w);
    r.sigma_min = std::ranges::min(clients, {}, &ClientState::sigma).sigma;
    r.descent_rhs = rhs;
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
    bool hit = false;
    if (options.stationarity_tol > 0.0) hit |= r.stationarity <= options.stationarity_tol;
    if (options.consensus_tol > 0.0) hit |= r.consensus_gap <= options.consensus_tol;
    if (options.gap_tol > 0.0 && r.extra.contains("rel_gap")) {
      hit |= r.extra.at("rel_gap") <= options.gap_tol;
    }
    return hit;
  };

  res.trajectory.push_back(snapshot(std::nullopt));
  if (options.keep_iterates) res.iterates.push_back(server.w);
  if (converged(res.trajectory.back())) {
    res.status = RunStatus::kConverged;
    return res;
  }

  std::vector<Vector> prev_w(m);
  std::vector<double> prev_sigma(m);
  std::vector<std::size_t> used(m, 0);
  for (long it = 0; it < options.max_iters; ++it) {
    const long next = server.ell + 1;
    const Vector prev_server = server.w;
    for (std::size_t i = 0; i < m; ++i) {
      prev_w[i] = clients[i].w;
      prev_sigma[i] = clients[i].sigma;
    }
    try {
      server.w = ServerAggregate(clients, server.alpha, server.lambda);
      if (!AllFinite(server.w)) throw Error("numerical overflow");
      ParallelFor(m, options.workers, [&](std::size_t i) {
        auto& c = clients[i];
        const IndexList batch = samplers[i].Draw(next);
        used[i] = batch.size();
        const Vector g = EvalGrad(problem, server.w, batch);
        auto dir = c.precond.Prepare(problem, server.w, batch, c.pi, g, next);
        if (options.check_spectral &&
            c.precond.config().kind != PreconditionerKind::kNewtonSchulz &&
            !SatisfiesSpectralBound(dir.q, c.precond.config().eta, 1e-8)) {
          throw Error("preconditioner violates its spectral bound");
        }
        SigmaAdvance(c);
        ClientLocalStep(c, server.w, dir.numerator, dir.q);
        c.last_q = std::move(dir.q);
        if (!AllFinite(c.w) || !AllFinite(c.pi)) throw Error("numerical overflow");
      });
      server.ell = next;
      for (auto u : used) res.grad_samples += u;

      double rhs = 0.0;
      const double dw = (server.w - prev_server).squaredNorm();
      for (std::size_t i = 0; i < m; ++i) {
        const double dwi = (clients[i].w - prev_w[i]).squaredNorm();
        rhs += server.alpha[i] *
               ((prev_sigma[i] + 2.0 * server.lambda) / 4.0 * dw + prev_sigma[i] / 4.0 * dwi);
      }

      if (options.keep_iterates) res.iterates.push_back(server.w);
      const bool last = it + 1 == options.max_iters;
      const bool stop_check =
          options.stationarity_tol > 0.0 || options.consensus_tol > 0.0 || options.gap_tol > 0.0;
      if (last || stop_check || next % options.log_every == 0) {
        MetricsRecord r = snapshot(rhs);
        const bool done = converged(r);
        if (last || done || next % options.log_every == 0) res.trajectory.push_back(std::move(r));
        if (done) {
          res.status = RunStatus::kConverged;
          return res;
        }
      }
    } catch (const Error& e) {
      if (!IsDivergence(e)) throw;
      res.status = RunStatus::kDiverged;
      res.message = "divergence at iteration " + std::to_string(next);
      return res;
    }
  }
  return res;
}

}  // namespace pisa
