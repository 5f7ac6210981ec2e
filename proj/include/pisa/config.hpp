// Run configuration: an INI file with [problem], [partition], [algorithm] and [run] sections.
// Any key can be overridden from the environment as PISA_<SECTION>__<KEY>, e.g.
// PISA_ALGORITHM__SIGMA0=32. Per-client values (sigma0, gamma, rho, eta) accept either one
// value or a comma-separated list with one entry per client.

#ifndef PISA_CONFIG_HPP_
#define PISA_CONFIG_HPP_

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "pisa/baselines.hpp"

namespace pisa {

struct ProblemSpec {
  ProblemKind kind = ProblemKind::kLeastSquares;
  //! "synthetic" or "idx".
  std::string source = "synthetic";
  int dim = 100;
  int samples = 3200;
  double noise = 0.1;
  double feature_scale = 1.0;
  double mu = 0.0;
  double lambda = 0.0;
  int classes = 10;
  int per_class = 300;
  double separation = 1.0;
  double offset = 0.0;
  double anisotropy = 0.0;
  double test_fraction = 0.0;
  int hidden = 16;
  std::string idx_images;
  std::string idx_labels;
  int idx_limit = 0;
  std::uint64_t seed = 1;
};

enum class PartitionMode { kIid, kLabelSkew, kQuantitySkew };

std::string ToString(PartitionMode mode);
PartitionMode ParsePartitionMode(const std::string& name);

struct PartitionSpec {
  PartitionMode mode = PartitionMode::kIid;
  int clients = 32;
  int labels_per_client = 1;
  double ratio = 4.0;
  std::uint64_t seed = 1;
};

//! pisa is the generic method with any preconditioner; sisa and nsisa fix the preconditioner
//! to moment and newton-schulz.
enum class AlgorithmKind { kPisa, kSisa, kNsisa, kSgdMomentum, kAdam, kFedavg };

std::string ToString(AlgorithmKind kind);
AlgorithmKind ParseAlgorithmKind(const std::string& name);
bool IsBaseline(AlgorithmKind kind);

struct AlgorithmSpec {
  AlgorithmKind kind = AlgorithmKind::kSisa;
  std::vector<double> sigma0{16.0};
  std::vector<double> gamma{0.99};
  std::vector<double> rho{1.0};
  std::vector<double> eta{1e3};
  //! 0 selects ceil(ln gamma / ln 0.99).
  int k0 = 0;
  //! With schedule_epochs > 0, sigma is updated every schedule_epochs * ceil(|D_i| / batch)
  //! iterations instead of every k0.
  int schedule_epochs = 0;
  std::size_t batch_size = 0;
  PreconditionerKind preconditioner = PreconditionerKind::kIdentity;
  MomentScheme scheme = MomentScheme::kIII;
  double beta = 0.999;
  NsMode ns_mode = NsMode::kQuintic;
  int ns_iters = 5;
  double ns_momentum = 0.9;
  double ns_eps = 0.5;
  double zero_tol = 0.0;
  double lr = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double weight_decay = 0.0;
  int local_epochs = 5;
};

struct RunSpec {
  std::string name = "run";
  long max_iters = 1000;
  double stationarity_tol = 0.0;
  double consensus_tol = 0.0;
  double gap_tol = 0.0;
  std::uint64_t seed = 0;
  bool theory_mode = false;
  //! Penalty weight of the level set used by theory mode.
  double theory_sigma = 1.0;
  int theory_samples = 16;
  bool track_merit = false;
  int workers = 1;
  int log_every = 1;
  //! Wall-clock time breaks byte-identical reruns, so it is off by default.
  bool wallclock_in_jsonl = false;
  std::string out_dir = "out";
};

struct RunConfig {
  ProblemSpec problem;
  PartitionSpec partition;
  AlgorithmSpec algorithm;
  RunSpec run;

  //! Throws with the offending "section.key" in the message.
  void Validate() const;
};

using EnvMap = std::map<std::string, std::string>;

//! PISA_* variables of the current process.
EnvMap ProcessEnv();

//! Applies the INI text on top of `base`, then environment overrides, then validates.
RunConfig ParseConfig(const std::string& text, const RunConfig& base = {}, const EnvMap& env = {});
RunConfig LoadConfig(const std::filesystem::path& path, const RunConfig& base = {},
                     const EnvMap& env = ProcessEnv());

//! Canonical INI text listing every key; parsing it back reproduces the same text.
std::string Serialize(const RunConfig& config);

//! Serialize without the keys that cannot change results (run.workers, run.out_dir).
std::string SerializeResultKeys(const RunConfig& config);

//! FNV-1a 64 of SerializeResultKeys(config), as 16 hex digits.
std::string ConfigHash(const RunConfig& config);

std::vector<std::string> PresetNames();
//! The runs of a named preset (one per sweep point).
std::vector<RunConfig> ExpandPreset(const std::string& name);

}  // namespace pisa

#endif  // PISA_CONFIG_HPP_
