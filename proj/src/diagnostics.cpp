#include "pisa/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "pisa/rng.hpp"

namespace pisa {
namespace {

constexpr std::uint64_t kEpsPointTag = 0x4550;
constexpr std::uint64_t kEpsPairTag = 0x4551;

IndexList DrawSubset(std::span<const Index> shard, std::size_t size, Rng& rng) {
  IndexList pool(shard.begin(), shard.end());
  for (std::size_t k = 0; k < size; ++k) {
    std::uniform_int_distribution<std::size_t> pick(k, pool.size() - 1);
    std::swap(pool[k], pool[pick(rng)]);
  }
  pool.resize(size);
  std::sort(pool.begin(), pool.end());
  return pool;
}

// Uniform point in the ball of the given radius.
Vector PointInBall(std::size_t dim, double radius, Rng& rng) {
  std::normal_distribution<double> normal;
  Vector dir(static_cast<Eigen::Index>(dim));
  for (auto& v : dir) v = normal(rng);
  const double n = dir.norm();
  if (n == 0.0) return Vector::Zero(dir.size());
  std::uniform_real_distribution<double> unif;
  const double scale = radius * std::pow(unif(rng), 1.0 / static_cast<double>(dim));
  return dir * (scale / n);
}

// Strong convexity modulus of the global objective.
double StrongConvexity(const Problem& problem) {
  switch (problem.kind()) {
    case ProblemKind::kLeastSquares: {
      const auto& a = problem.data().features;
      const Matrix gram = a * a.transpose() / static_cast<double>(a.cols());
      Eigen::SelfAdjointEigenSolver<Matrix> eig(gram, Eigen::EigenvaluesOnly);
      return std::max(0.0, eig.eigenvalues().minCoeff()) + problem.mu();
    }
    case ProblemKind::kMultinomialLogistic:
      return problem.mu();
    case ProblemKind::kMlp:
      break;
  }
  throw Error("theory bounds unsupported for mlp");
}

}  // namespace

double GlobalObjective(const Problem& problem, const Vector& w) {
  const IndexList all = problem.AllIndices();
  return EvalLoss(problem, w, all) + 0.5 * problem.lambda() * w.squaredNorm();
}

double AugmentedLagrangian(const Problem& problem, const ServerState& server,
                           std::span<const ClientState> clients) {
  double total = 0.5 * server.lambda * server.w.squaredNorm();
  for (std::size_t i = 0; i < clients.size(); ++i) {
    const auto& c = clients[i];
    const Vector d = c.w - server.w;
    total += server.alpha[i] *
             (EvalLoss(problem, c.w, c.shard) + c.pi.dot(d) + 0.5 * c.sigma * d.squaredNorm());
  }
  return total;
}

double MeritFunction(const Problem& problem, const ServerState& server,
                     std::span<const ClientState> clients) {
  double extra = 0.0;
  for (std::size_t i = 0; i < clients.size(); ++i) {
    const auto& c = clients[i];
    if (c.gamma >= 1.0) throw Error("merit undefined at gamma=1");
    double term = std::pow(c.gamma, static_cast<double>(c.step)) / (16.0 * (1.0 - c.gamma));
    if (c.last_q) {
      const Vector qd = c.rho * ApplyQ(*c.last_q, c.w - server.w);
      term += 8.0 / c.sigma * qd.squaredNorm();
    }
    extra += server.alpha[i] * term;
  }
  return AugmentedLagrangian(problem, server, clients) + extra;
}

double ConsensusGap(const ServerState& server, std::span<const ClientState> clients) {
  double gap = 0.0;
  for (const auto& c : clients) gap = std::max(gap, (c.w - server.w).norm());
  return gap;
}

double StationarityResidual(const Problem& problem, const Vector& w) {
  const IndexList all = problem.AllIndices();
  return (EvalGrad(problem, w, all) + problem.lambda() * w).norm();
}

double EstimateEpsilon(const Problem& problem, std::span<const Index> shard,
                       const EpsilonOptions& options) {
  if (options.n_w < 1 || options.n_pairs < 1) {
    throw Error("epsilon estimate needs n_w >= 1 and n_pairs >= 1");
  }
  if (shard.empty()) throw Error("empty shard");
  const std::size_t bs = options.batch_size == 0 ? shard.size() : options.batch_size;
  if (bs > shard.size()) throw Error("batch size exceeds shard size");
  // Only one batch of each size exists when it covers the shard.
  if (bs == shard.size()) return 0.0;

  double best = 0.0;
  for (int j = 0; j < options.n_w; ++j) {
    auto point_rng = MakeStream(options.seed, {kEpsPointTag, static_cast<std::uint64_t>(j)});
    const Vector w = PointInBall(problem.num_params(), options.radius, point_rng);
    for (int k = 0; k < options.n_pairs; ++k) {
      auto rng = MakeStream(options.seed, {kEpsPairTag, static_cast<std::uint64_t>(j),
                                           static_cast<std::uint64_t>(k)});
      const IndexList b1 = DrawSubset(shard, bs, rng);
      const IndexList b2 = DrawSubset(shard, bs, rng);
      const double v = 64.0 * (EvalGrad(problem, w, b1) - EvalGrad(problem, w, b2)).squaredNorm();
      best = std::max(best, v);
    }
  }
  return best;
}

double LocalLipschitz(const Problem& problem, std::span<const Index> shard) {
  const auto& x = problem.data().features;
  double c = 0.0;
  for (auto s : shard) c = std::max(c, x.col(static_cast<Eigen::Index>(s)).squaredNorm());
  switch (problem.kind()) {
    case ProblemKind::kLeastSquares:
      break;
    case ProblemKind::kMultinomialLogistic:
      // ||diag(p) - p p^T|| <= 1/2, and the bias augments x with a constant 1.
      c = 0.5 * (c + 1.0);
      break;
    case ProblemKind::kMlp:
      throw Error("theory bounds unsupported for mlp");
  }
  return c + problem.local_ridge();
}

double EstimateDeltaBar(const Problem& problem, const Partition& partition, double sigma,
                        double gamma) {
  if (!(sigma > 0.0)) throw Error("sigma must be positive");
  if (!(gamma > 0.0 && gamma < 1.0)) throw Error("level set unbounded unless gamma < 1");
  const double kappa = StrongConvexity(problem);
  if (!(kappa > 0.0)) throw Error("objective not coercive");
  const Vector zero = Vector::Zero(static_cast<Eigen::Index>(problem.num_params()));
  const double f0 = GlobalObjective(problem, zero);
  const double g0 = StationarityResidual(problem, zero);
  const double budget = f0 + 1.0 / (1.0 - gamma);
  // F(w) >= F(0) - g0 ||w|| + (kappa / 2) ||w||^2 and F <= budget bound ||w||.
  const double t_w = (g0 + std::sqrt(g0 * g0 + 2.0 * kappa * (budget - f0))) / kappa;
  // The loss is nonnegative, so (sigma / 2) alpha_i ||w_i - w||^2 <= budget.
  double spread = 0.0;
  for (double a : partition.alpha) spread = std::max(spread, std::sqrt(2.0 * budget / (sigma * a)));
  return t_w + spread;
}

TheoryBounds ComputeTheoryBounds(const Problem& problem, const Partition& partition,
                                 std::span<const ClientParams> params,
                                 const TheoryOptions& options) {
  const std::size_t m = partition.num_clients();
  if (params.size() != m && params.size() != 1) {
    throw Error("client parameters: expected 1 or " + std::to_string(m) + " entries");
  }
  auto param = [&](std::size_t i) -> const ClientParams& {
    return params.size() == 1 ? params[0] : params[i];
  };
  double gamma = 0.0;
  for (std::size_t i = 0; i < m; ++i) gamma = std::max(gamma, param(i).gamma);

  TheoryBounds b;
  b.delta_bar = EstimateDeltaBar(problem, partition, options.sigma, gamma);
  for (std::size_t i = 0; i < m; ++i) {
    const auto& shard = partition.shards[i];
    b.r.push_back(LocalLipschitz(problem, shard));
    EpsilonOptions eo;
    eo.radius = 2.0 * b.delta_bar;
    eo.batch_size = param(i).batch_size;
    eo.n_w = options.n_w;
    eo.n_pairs = options.n_pairs;
    eo.seed = options.seed + i;
    b.eps_hat.push_back(EstimateEpsilon(problem, shard, eo));
  }
  return b;
}

double TheorySigma0(const TheoryBounds& bounds, double sigma, std::span<const double> rho,
                    std::span<const double> eta) {
  if (!(bounds.delta_bar > 0.0)) throw Error("delta_bar must be positive");
  double v = std::max(sigma, 1.0 / (bounds.delta_bar * bounds.delta_bar));
  for (std::size_t i = 0; i < rho.size() && i < eta.size(); ++i) v = std::max(v, rho[i] * eta[i]);
  for (double r : bounds.r) v = std::max(v, r);
  for (double e : bounds.eps_hat) v = std::max(v, e);
  return 8.0 * v;
}

int CheckDescent(std::span<const double> merit, std::span<const double> rhs, double rel_tol) {
  if (merit.size() < 2) return 0;
  if (rhs.size() + 1 < merit.size()) throw Error("descent check needs one bound per step");
  int violations = 0;
  for (std::size_t k = 0; k + 1 < merit.size(); ++k) {
    const double drop = merit[k] - merit[k + 1];
    if (drop < rhs[k] - rel_tol * (1.0 + std::abs(merit[k]))) ++violations;
  }
  return violations;
}

double FitLinearRate(std::span<const double> series, double tail_fraction) {
  if (series.size() < 10) throw Error("rate fit needs at least 10 points");
  if (!(tail_fraction > 0.0 && tail_fraction <= 1.0)) {
    throw Error("tail fraction must lie in (0, 1]");
  }
  const auto n = series.size();
  const auto len = std::clamp<std::size_t>(
      static_cast<std::size_t>(std::ceil(tail_fraction * static_cast<double>(n))), 2, n);
  const auto first = n - len;
  double sx = 0.0, sy = 0.0;
  std::vector<double> logs(len);
  for (std::size_t k = 0; k < len; ++k) {
    const double v = series[first + k];
    if (!(v > 0.0) || !std::isfinite(v)) throw Error("rate undefined");
    logs[k] = std::log(v);
    sx += static_cast<double>(k);
    sy += logs[k];
  }
  const double mx = sx / static_cast<double>(len);
  const double my = sy / static_cast<double>(len);
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t k = 0; k < len; ++k) {
    const double dx = static_cast<double>(k) - mx;
    sxy += dx * (logs[k] - my);
    sxx += dx * dx;
  }
  return std::exp(sxy / sxx);
}

}  // namespace pisa
