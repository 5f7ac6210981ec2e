// Quantities from the convergence theory, evaluated on live solver state.

#ifndef PISA_DIAGNOSTICS_HPP_
#define PISA_DIAGNOSTICS_HPP_

#include <cstdint>
#include <span>
#include <vector>

#include "pisa/pisa.hpp"

namespace pisa {

//! F_lambda(w) = sum_i alpha_i F_i(w) + (lambda / 2) ||w||^2 on the full dataset.
double GlobalObjective(const Problem& problem, const Vector& w);

//! sum_i alpha_i [F_i(w_i) + <pi_i, w_i - w> + (sigma_i / 2) ||w_i - w||^2] + (lambda / 2) ||w||^2
double AugmentedLagrangian(const Problem& problem, const ServerState& server,
                           std::span<const ClientState> clients);

//! Lagrangian plus sum_i alpha_i [(8 / sigma_i) ||rho_i Q_i (w_i - w)||^2
//! + gamma_i^l / (16 (1 - gamma_i))]. Clients that have not stepped yet contribute no Q term.
double MeritFunction(const Problem& problem, const ServerState& server,
                     std::span<const ClientState> clients);

//! max_i ||w_i - w||.
double ConsensusGap(const ServerState& server, std::span<const ClientState> clients);

//! ||grad F(w) + lambda w|| on the full dataset.
double StationarityResidual(const Problem& problem, const Vector& w);

struct EpsilonOptions {
  double radius = 1.0;
  std::size_t batch_size = 1;
  int n_w = 8;
  int n_pairs = 16;
  std::uint64_t seed = 0;
};

//! Sampled lower estimate of sup 64 ||grad F_i(w; B) - grad F_i(w; B')||^2 over ||w|| <= radius
//! and batch pairs of the given size. Points w are uniform in the ball.
double EstimateEpsilon(const Problem& problem, std::span<const Index> shard,
                       const EpsilonOptions& options);

//! Largest per-sample gradient Lipschitz constant on the shard plus mu - lambda.
double LocalLipschitz(const Problem& problem, std::span<const Index> shard);

//! Radius bound for the level set reached from w = 0 with a nonnegative loss, using strong
//! convexity of the global objective. `sigma` is the penalty weight of the level set.
double EstimateDeltaBar(const Problem& problem, const Partition& partition, double sigma,
                        double gamma);

struct TheoryBounds {
  double delta_bar = 0.0;
  std::vector<double> eps_hat;
  std::vector<double> r;
};

struct TheoryOptions {
  //! Penalty weight of the level set; also enters the floor directly.
  double sigma = 1.0;
  int n_w = 8;
  int n_pairs = 16;
  std::uint64_t seed = 0;
};

TheoryBounds ComputeTheoryBounds(const Problem& problem, const Partition& partition,
                                 std::span<const ClientParams> params,
                                 const TheoryOptions& options);

//! 8 max_i {sigma, rho_i eta_i, r_i, delta_bar^-2, eps_i}.
double TheorySigma0(const TheoryBounds& bounds, double sigma, std::span<const double> rho,
                    std::span<const double> eta);

//! Counts steps with merit[k] - merit[k+1] < rhs[k] - 1e-9 (1 + |merit[k]|). `rhs[k]` is the
//! descent bound for the step from row k to row k + 1.
int CheckDescent(std::span<const double> merit, std::span<const double> rhs, double rel_tol = 1e-9);

//! exp of the least-squares slope of log(series) over the trailing `tail_fraction`.
double FitLinearRate(std::span<const double> series, double tail_fraction = 0.5);

}  // namespace pisa

#endif  // PISA_DIAGNOSTICS_HPP_
