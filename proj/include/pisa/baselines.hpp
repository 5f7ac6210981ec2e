// Reference optimizers: heavy-ball SGD, Adam and FedAvg.

#ifndef PISA_BASELINES_HPP_
#define PISA_BASELINES_HPP_

#include <cstdint>
#include <string>

#include "pisa/pisa.hpp"

namespace pisa {

struct SgdMomentumState {
  double lr = 0.01;
  double beta = 0.9;
  double weight_decay = 0.0;
  Vector v;
};

//! v <- beta v + (g + weight_decay w); w <- w - lr v.
Vector SgdMomentumStep(SgdMomentumState& state, const Vector& w, const Vector& g);

struct AdamState {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
  Vector m;
  Vector v;
  long t = 0;
};

//! Bias-corrected first and second moments; step lr * m_hat / (sqrt(v_hat) + eps).
Vector AdamStep(AdamState& state, const Vector& w, const Vector& g);

enum class BaselineKind { kSgdMomentum, kAdam, kFedavg };

std::string ToString(BaselineKind kind);
BaselineKind ParseBaselineKind(const std::string& name);

struct BaselineConfig {
  BaselineKind kind = BaselineKind::kFedavg;
  double lr = 0.01;
  double beta1 = 0.9;  // momentum for SGD, first moment for Adam and FedAvg clients
  double beta2 = 0.999;
  double weight_decay = 0.0;
  int local_epochs = 5;
  //! Mini-batch size; 0 means a full batch (the whole shard or dataset).
  std::size_t batch_size = 0;

  void Validate() const;
};

struct FedavgRoundStats {
  std::size_t grad_samples = 0;
};

//! Every client runs `local_epochs` passes of mini-batch SGD over a seeded shuffle of its shard,
//! starting from w, on F_i + (lambda / 2) ||.||^2. Returns sum_i alpha_i w_i. FedAvg clients use
//! plain SGD: `beta1` is ignored.
Vector FedavgRound(const Problem& problem, const Partition& partition, const Vector& w,
                   const BaselineConfig& config, std::uint64_t seed, long round, int workers = 1,
                   FedavgRoundStats* stats = nullptr);

struct BaselineResult {
  std::vector<MetricsRecord> trajectory;
  RunStatus status = RunStatus::kCompleted;
  std::string message;
  Vector w;
  std::size_t grad_samples = 0;
};

//! Iterations are optimizer steps for SGD-M and Adam (one batch from the full dataset each) and
//! communication rounds for FedAvg. Honors max_iters, log_every, reference_loss, gap_tol,
//! stationarity_tol, workers, seed and extra_metrics from `options`.
BaselineResult RunBaseline(const Problem& problem, const Partition& partition,
                           const BaselineConfig& config, const PisaOptions& options);

}  // namespace pisa

#endif  // PISA_BASELINES_HPP_
