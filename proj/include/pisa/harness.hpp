// Experiment orchestration: builds data, partition and solver from a RunConfig, runs it and
// writes the metric stream (JSONL) and summary rows (CSV).

#ifndef PISA_HARNESS_HPP_
#define PISA_HARNESS_HPP_

#include <filesystem>
#include <iosfwd>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pisa/config.hpp"
#include "pisa/diagnostics.hpp"

namespace pisa {

inline constexpr int kSchemaVersion = 1;

enum ExitCode : int {
  kExitOk = 0,
  kExitError = 1,
  kExitUsage = 2,
  kExitDiverged = 3,
  kExitToleranceNotMet = 4,
};

struct Experiment {
  std::shared_ptr<const Dataset> train;
  //! Held-out samples for classification runs; null when test_fraction is 0.
  std::shared_ptr<const Dataset> test;
  Problem problem;
  Partition partition;
  //! Optimal objective value when it is available in closed form (least squares).
  std::optional<double> reference_loss;
};

Experiment BuildExperiment(const RunConfig& config);

std::vector<ClientParams> BuildClientParams(const RunConfig& config, const Partition& partition);
BaselineConfig BuildBaselineConfig(const RunConfig& config);

struct TheoryReport {
  TheoryBounds bounds;
  double sigma0_floor = 0.0;
  double configured_sigma0 = 0.0;
  bool meets = false;
};

TheoryReport CheckTheory(const RunConfig& config, const Experiment& experiment);

struct SummaryRow {
  std::string name;
  std::string config_hash;
  std::string status;
  long iterations = 0;
  double final_loss = 0.0;
  std::optional<double> final_gap;
  double final_stationarity = 0.0;
  std::optional<double> gamma_hat;
  std::optional<double> wallclock_s;

  friend bool operator==(const SummaryRow&, const SummaryRow&) = default;
};

struct RunOutcome {
  std::vector<MetricsRecord> trajectory;
  RunStatus status = RunStatus::kCompleted;
  std::string message;
  std::optional<double> theory_sigma0;
  SummaryRow summary;
  int exit_code = kExitOk;
};

//! Runs one configuration and writes its JSONL stream to `jsonl`: a header record, one metrics
//! record per logged iteration, an abort record if the run stopped abnormally, and an end
//! record.
RunOutcome RunExperiment(const RunConfig& config, std::ostream& jsonl);

//! Same, writing to <dir>/<run.name>.jsonl.
RunOutcome RunExperimentToDir(const RunConfig& config, const std::filesystem::path& dir);

std::string MetricsToJson(const MetricsRecord& record, bool with_wallclock);

//! Rebuilds a summary row from a JSONL stream written by RunExperiment.
SummaryRow SummarizeJsonl(std::istream& jsonl);

std::vector<std::string> SummaryHeader();
//! RFC 4180 CSV with a fixed header row; empty cells for absent values.
void WriteSummaryCsv(std::ostream& out, std::span<const SummaryRow> rows);
std::vector<SummaryRow> ReadSummaryCsv(std::istream& in);

//! {"clients": m, "alpha": [...], "shards": [[...], ...]}
std::string PartitionToJson(const Partition& partition);

}  // namespace pisa

#endif  // PISA_HARNESS_HPP_
