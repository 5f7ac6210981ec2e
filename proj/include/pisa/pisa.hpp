// Consensus ADMM with preconditioned inexact local steps.
//
// One iteration, for l = 0, 1, ...:
//
//   w^{l+1}   = sum_i alpha_i (sigma_i^l w_i^l + pi_i^l) / (sum_i alpha_i sigma_i^l + lambda)
//   g_i       = grad F_i(w^{l+1}; B_i^{l+1})
//   sigma_i   advances to sigma_i^{l+1}
//   w_i^{l+1} = w^{l+1} - (sigma_i^{l+1} I + rho_i Q_i^{l+1})^{-1} u_i      (u_i = pi_i^l + g_i)
//   pi_i^{l+1} = pi_i^l + sigma_i^{l+1} (w_i^{l+1} - w^{l+1})

#ifndef PISA_PISA_HPP_
#define PISA_PISA_HPP_

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pisa/partition.hpp"
#include "pisa/preconditioner.hpp"

namespace pisa {

//! One row of the metric stream.
struct MetricsRecord {
  long iter = 0;
  double loss = 0.0;
  std::optional<double> lagrangian;
  std::optional<double> merit;
  double consensus_gap = 0.0;
  double stationarity = 0.0;
  double sigma_min = 0.0;
  double wallclock_s = 0.0;
  //! Right-hand side of the merit descent inequality for the step that produced this row.
  std::optional<double> descent_rhs;
  std::map<std::string, double> extra;
};

//! Per-client hyperparameters.
struct ClientParams {
  double sigma0 = 16.0;
  double gamma = 0.99;
  double rho = 1.0;
  //! Steps between sigma updates; 0 selects ComputeK0(gamma).
  int k0 = 0;
  //! Mini-batch size; 0 means the whole shard.
  std::size_t batch_size = 0;
  PreconditionerConfig precond;
};

struct ClientState {
  IndexList shard;
  Vector w;
  Vector pi;
  double sigma = 0.0;
  double sigma0 = 0.0;
  double gamma = 1.0;
  double rho = 1.0;
  int k0 = 1;
  long step = 0;
  PreconditionerState precond;
  //! Q used by the most recent local step; empty before the first one.
  std::optional<Preconditioner> last_q;

  ClientState(IndexList shard, const ClientParams& params, const ParamLayout& layout);
};

struct ServerState {
  Vector w;
  double lambda = 0.0;
  std::vector<double> alpha;
  long ell = 0;
};

//! Uniform draws without replacement from one client's shard. Each step uses its own seeded
//! stream, so draws do not depend on call order.
class BatchSampler {
 public:
  BatchSampler(IndexList shard, std::size_t batch_size, std::uint64_t seed, std::uint64_t client);

  bool full_batch() const noexcept { return batch_size_ >= shard_.size(); }
  std::size_t batch_size() const noexcept { return batch_size_; }

  //! Sorted batch for step `step`.
  IndexList Draw(long step) const;

 private:
  IndexList shard_;
  std::size_t batch_size_;
  std::uint64_t seed_;
  std::uint64_t client_;
};

//! Weighted consensus update with each client's current sigma.
Vector ServerAggregate(std::span<const ClientState> clients, std::span<const double> alpha,
                       double lambda);

//! Increments the step counter and divides sigma by gamma when the new count is a multiple
//! of k0. Returns the new sigma.
double SigmaAdvance(ClientState& client);

//! ceil(ln gamma / ln 0.99), at least 1.
int ComputeK0(double gamma);

//! Local step with right-hand side u followed by the dual update.
void ClientLocalStep(ClientState& client, const Vector& w_new, const Vector& u,
                     const Preconditioner& q);

enum class RunStatus { kCompleted, kConverged, kDiverged };

std::string ToString(RunStatus status);

struct PisaOptions {
  long max_iters = 100;
  //! Stop once the stationarity residual is at or below this value (0 disables).
  double stationarity_tol = 0.0;
  //! Stop once the consensus gap is at or below this value (0 disables).
  double consensus_tol = 0.0;
  //! With a reference optimum, stop once |F - F*| / max(1, |F*|) <= gap_tol (0 disables).
  std::optional<double> reference_loss;
  double gap_tol = 0.0;
  int workers = 1;
  //! Record every `log_every` iterations; the first and last rows are always kept.
  int log_every = 1;
  bool track_lagrangian = true;
  bool track_merit = false;
  //! Keep the server iterate of every iteration in the result.
  bool keep_iterates = false;
#ifdef NDEBUG
  bool check_spectral = false;
#else
  bool check_spectral = true;
#endif
  std::uint64_t seed = 0;
  std::optional<Vector> warm_start;
  //! Adds user metrics (e.g. test accuracy) to each recorded row.
  std::function<void(const ServerState&, std::map<std::string, double>&)> extra_metrics;
};

struct PisaResult {
  std::vector<MetricsRecord> trajectory;
  std::vector<Vector> iterates;
  RunStatus status = RunStatus::kCompleted;
  std::string message;
  ServerState server;
  std::vector<ClientState> clients;
  //! Per-sample gradient evaluations spent by the clients.
  std::size_t grad_samples = 0;
};

//! Runs the consensus loop on `problem` split by `partition`. `params` holds one entry per
//! client, or a single entry shared by all.
PisaResult RunPisa(const Problem& problem, const Partition& partition,
                   std::span<const ClientParams> params, const PisaOptions& options);

//! Calls body(i) for i in [0, count) on up to `workers` threads and rethrows the first error.
void ParallelFor(std::size_t count, int workers, const std::function<void(std::size_t)>& body);

}  // namespace pisa

#endif  // PISA_PISA_HPP_
