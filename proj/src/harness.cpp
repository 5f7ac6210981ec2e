#include "pisa/harness.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include <json.hpp>

namespace pisa {
namespace {

using Json = nlohmann::ordered_json;

std::string FormatDouble(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::optional<double> ParseOptional(const std::string& s, const std::string& column) {
  if (s.empty()) return std::nullopt;
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw Error("summary column " + column + ": cannot parse '" + s + "'");
  }
}

std::string CsvEscape(const std::string& s) {
  if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

// Splits CSV text into records of fields, honoring quoted fields with embedded separators.
std::vector<std::vector<std::string>> ParseCsv(std::istream& in) {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> row;
  std::string field;
  bool quoted = false;
  bool any = false;
  char c;
  while (in.get(c)) {
    any = true;
    if (quoted) {
      if (c == '"') {
        if (in.peek() == '"') {
          field += '"';
          in.get();
        } else {
          quoted = false;
        }
      } else {
        field += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      row.push_back(std::move(field));
      field.clear();
    } else if (c == '\r') {
      if (in.peek() == '\n') in.get();
      row.push_back(std::move(field));
      field.clear();
      rows.push_back(std::move(row));
      row.clear();
      any = false;
    } else if (c == '\n') {
      row.push_back(std::move(field));
      field.clear();
      rows.push_back(std::move(row));
      row.clear();
      any = false;
    } else {
      field += c;
    }
  }
  if (quoted) throw Error("unterminated quoted CSV field");
  if (any) {
    row.push_back(std::move(field));
    rows.push_back(std::move(row));
  }
  return rows;
}

std::optional<double> FitStationarityRate(const std::vector<MetricsRecord>& trajectory) {
  std::vector<double> series;
  for (const auto& r : trajectory) series.push_back(r.stationarity);
  try {
    return FitLinearRate(series, 0.5);
  } catch (const Error&) {
    return std::nullopt;
  }
}

PreconditionerKind PreconditionerFor(const AlgorithmSpec& a) {
  switch (a.kind) {
    case AlgorithmKind::kSisa:
      return PreconditionerKind::kMoment;
    case AlgorithmKind::kNsisa:
      return PreconditionerKind::kNewtonSchulz;
    default:
      return a.preconditioner;
  }
}

template <class T>
const T& Pick(const std::vector<T>& v, std::size_t i) {
  return v.size() == 1 ? v.front() : v.at(i);
}

Json HeaderJson(const RunConfig& config, const std::optional<double>& theory_sigma0) {
  Json j;
  j["schema_version"] = kSchemaVersion;
  j["type"] = "header";
  j["name"] = config.run.name;
  j["config_hash"] = ConfigHash(config);
  j["algorithm"] = ToString(config.algorithm.kind);
  if (theory_sigma0) j["theory_sigma0"] = *theory_sigma0;
  j["config"] = SerializeResultKeys(config);
  return j;
}

}  // namespace

Experiment BuildExperiment(const RunConfig& config) {
  config.Validate();
  const auto& p = config.problem;
  auto data = std::make_shared<Dataset>();
  if (p.source == "idx") {
    *data = ReadIdx(p.idx_images, p.idx_labels, static_cast<std::size_t>(p.idx_limit));
  } else if (p.kind == ProblemKind::kLeastSquares) {
    *data = GenLeastSquares(p.seed, p.dim, p.samples, p.noise, p.feature_scale);
  } else {
    BlobOptions bo;
    bo.classes = p.classes;
    bo.dim = p.dim;
    bo.per_class = p.per_class;
    bo.separation = p.separation;
    bo.offset = p.offset;
    bo.anisotropy = p.anisotropy;
    *data = GenBlobs(p.seed, bo);
  }
  std::shared_ptr<const Dataset> train = data;
  std::shared_ptr<const Dataset> test;
  if (p.test_fraction > 0.0) {
    auto [tr, te] = TrainTestSplit(*data, p.test_fraction, p.seed);
    train = std::make_shared<Dataset>(std::move(tr));
    test = std::make_shared<Dataset>(std::move(te));
  }

  auto problem = [&]() {
    switch (p.kind) {
      case ProblemKind::kLeastSquares:
        return Problem::LeastSquares(train, p.mu, p.lambda);
      case ProblemKind::kMultinomialLogistic:
        return Problem::MultinomialLogistic(train, p.mu, p.lambda);
      case ProblemKind::kMlp:
        break;
    }
    return Problem::Mlp(train, p.hidden, p.mu, p.lambda);
  }();

  const auto& q = config.partition;
  const auto m = static_cast<std::size_t>(q.clients);
  Partition partition = [&]() {
    switch (q.mode) {
      case PartitionMode::kIid:
        return PartitionIid(*train, m, q.seed);
      case PartitionMode::kLabelSkew:
        return PartitionLabelSkew(*train, m, static_cast<std::size_t>(q.labels_per_client), q.seed);
      case PartitionMode::kQuantitySkew:
        break;
    }
    return PartitionQuantitySkew(*train, m, q.ratio, q.seed);
  }();

  std::optional<double> reference;
  if (p.kind == ProblemKind::kLeastSquares) {
    reference = GlobalObjective(problem, SolveLeastSquaresExact(*train, p.mu));
  }
  return Experiment{train, test, std::move(problem), std::move(partition), reference};
}

std::vector<ClientParams> BuildClientParams(const RunConfig& config, const Partition& partition) {
  const auto& a = config.algorithm;
  std::vector<ClientParams> out;
  for (std::size_t i = 0; i < partition.num_clients(); ++i) {
    ClientParams c;
    c.sigma0 = Pick(a.sigma0, i);
    c.gamma = Pick(a.gamma, i);
    c.rho = Pick(a.rho, i);
    c.batch_size = a.batch_size;
    c.k0 = a.k0;
    if (a.schedule_epochs > 0) {
      const std::size_t shard = partition.shards[i].size();
      const std::size_t batch = a.batch_size == 0 ? shard : std::min(a.batch_size, shard);
      c.k0 = a.schedule_epochs * static_cast<int>((shard + batch - 1) / batch);
    }
    c.precond.kind = PreconditionerFor(a);
    c.precond.eta = Pick(a.eta, i);
    c.precond.scheme = a.scheme;
    c.precond.beta = a.beta;
    c.precond.ns_mode = a.ns_mode;
    c.precond.ns_iters = a.ns_iters;
    c.precond.ns_momentum = a.ns_momentum;
    c.precond.ns_eps = a.ns_eps;
    c.precond.zero_tol = a.zero_tol;
    out.push_back(c);
  }
  return out;
}

BaselineConfig BuildBaselineConfig(const RunConfig& config) {
  const auto& a = config.algorithm;
  BaselineConfig b;
  switch (a.kind) {
    case AlgorithmKind::kSgdMomentum:
      b.kind = BaselineKind::kSgdMomentum;
      break;
    case AlgorithmKind::kAdam:
      b.kind = BaselineKind::kAdam;
      break;
    case AlgorithmKind::kFedavg:
      b.kind = BaselineKind::kFedavg;
      break;
    default:
      throw Error("algorithm.kind: " + ToString(a.kind) + " is not a baseline");
  }
  b.lr = a.lr;
  b.beta1 = a.beta1;
  b.beta2 = a.beta2;
  b.weight_decay = a.weight_decay;
  b.local_epochs = a.local_epochs;
  b.batch_size = a.batch_size;
  return b;
}

TheoryReport CheckTheory(const RunConfig& config, const Experiment& experiment) {
  const auto params = BuildClientParams(config, experiment.partition);
  TheoryOptions to;
  to.sigma = config.run.theory_sigma;
  to.n_w = config.run.theory_samples;
  to.n_pairs = config.run.theory_samples;
  to.seed = config.run.seed;
  TheoryReport rep;
  rep.bounds = ComputeTheoryBounds(experiment.problem, experiment.partition, params, to);
  std::vector<double> rho, eta;
  for (const auto& c : params) {
    rho.push_back(c.rho);
    eta.push_back(c.precond.eta);
  }
  rep.sigma0_floor = TheorySigma0(rep.bounds, to.sigma, rho, eta);
  rep.configured_sigma0 = std::ranges::min(params, {}, &ClientParams::sigma0).sigma0;
  rep.meets = rep.configured_sigma0 >= rep.sigma0_floor;
  return rep;
}

std::string MetricsToJson(const MetricsRecord& r, bool with_wallclock) {
  Json j;
  j["schema_version"] = kSchemaVersion;
  j["type"] = "metrics";
  j["iter"] = r.iter;
  j["loss"] = r.loss;
  if (r.lagrangian) j["lagrangian"] = *r.lagrangian;
  if (r.merit) j["merit"] = *r.merit;
  j["consensus_gap"] = r.consensus_gap;
  j["stationarity"] = r.stationarity;
  j["sigma_min"] = r.sigma_min;
  if (r.descent_rhs) j["descent_rhs"] = *r.descent_rhs;
  if (with_wallclock) j["wallclock_s"] = r.wallclock_s;
  Json extra = Json::object();
  for (const auto& [k, v] : r.extra) extra[k] = v;
  j["extra"] = extra;
  return j.dump();
}

RunOutcome RunExperiment(const RunConfig& config, std::ostream& jsonl) {
  RunOutcome out;
  out.summary.name = config.run.name;
  out.summary.config_hash = ConfigHash(config);
  auto abort = [&](const std::string& reason, long iter) {
    Json j;
    j["schema_version"] = kSchemaVersion;
    j["type"] = "abort";
    j["iter"] = iter;
    j["reason"] = reason;
    jsonl << j.dump() << '\n';
  };

  bool header_written = false;
  try {
    const Experiment ex = BuildExperiment(config);
    const bool baseline = IsBaseline(config.algorithm.kind);
    auto params = BuildClientParams(config, ex.partition);
    if (config.run.theory_mode && !baseline) {
      const double floor = CheckTheory(config, ex).sigma0_floor;
      out.theory_sigma0 = floor;
      for (auto& c : params) c.sigma0 = std::max(c.sigma0, floor);
    }
    jsonl << HeaderJson(config, out.theory_sigma0).dump() << '\n';
    header_written = true;

    PisaOptions opt;
    opt.max_iters = config.run.max_iters;
    opt.stationarity_tol = config.run.stationarity_tol;
    opt.consensus_tol = config.run.consensus_tol;
    opt.reference_loss = ex.reference_loss;
    opt.gap_tol = config.run.gap_tol;
    opt.workers = config.run.workers;
    opt.log_every = config.run.log_every;
    opt.track_merit = config.run.track_merit;
    opt.seed = config.run.seed;
    if (ex.test) {
      const auto test = ex.test;
      const Problem* problem = &ex.problem;
      opt.extra_metrics = [test, problem](const ServerState& s, std::map<std::string, double>& e) {
        e["test_accuracy"] = Accuracy(*problem, s.w, *test);
      };
    }

    std::size_t grad_samples = 0;
    if (baseline) {
      auto res = RunBaseline(ex.problem, ex.partition, BuildBaselineConfig(config), opt);
      out.trajectory = std::move(res.trajectory);
      out.status = res.status;
      out.message = res.message;
      grad_samples = res.grad_samples;
    } else {
      auto res = RunPisa(ex.problem, ex.partition, params, opt);
      out.trajectory = std::move(res.trajectory);
      out.status = res.status;
      out.message = res.message;
      grad_samples = res.grad_samples;
    }

    for (const auto& r : out.trajectory) {
      jsonl << MetricsToJson(r, config.run.wallclock_in_jsonl) << '\n';
    }
    const long last_iter = out.trajectory.empty() ? 0 : out.trajectory.back().iter;
    if (out.status == RunStatus::kDiverged) abort(out.message, last_iter + 1);

    const bool has_tol = config.run.stationarity_tol > 0.0 || config.run.consensus_tol > 0.0 ||
                         config.run.gap_tol > 0.0;
    if (out.status == RunStatus::kDiverged) {
      out.exit_code = kExitDiverged;
    } else if (has_tol && out.status != RunStatus::kConverged) {
      out.exit_code = kExitToleranceNotMet;
    }
    out.summary.status = ToString(out.status);

    Json end;
    end["schema_version"] = kSchemaVersion;
    end["type"] = "end";
    end["status"] = out.summary.status;
    end["iterations"] = last_iter;
    end["grad_samples"] = grad_samples;
    end["exit_code"] = out.exit_code;
    jsonl << end.dump() << '\n';
  } catch (const Error& e) {
    if (!header_written) jsonl << HeaderJson(config, std::nullopt).dump() << '\n';
    out.message = e.what();
    out.exit_code = kExitError;
    out.summary.status = "error";
    abort(out.message, out.trajectory.empty() ? 0 : out.trajectory.back().iter);
  }

  if (!out.trajectory.empty()) {
    const auto& last = out.trajectory.back();
    out.summary.iterations = last.iter;
    out.summary.final_loss = last.loss;
    out.summary.final_stationarity = last.stationarity;
    if (last.extra.contains("rel_gap")) out.summary.final_gap = last.extra.at("rel_gap");
    // Mirrors SummarizeJsonl so the row can be rebuilt from the stream alone.
    if (config.run.wallclock_in_jsonl) out.summary.wallclock_s = last.wallclock_s;
  }
  out.summary.gamma_hat = FitStationarityRate(out.trajectory);
  return out;
}

RunOutcome RunExperimentToDir(const RunConfig& config, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const auto path = dir / (config.run.name + ".jsonl");
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("cannot write '" + path.string() + "'");
  auto out = RunExperiment(config, f);
  f.flush();
  if (!f) throw Error("write failed for '" + path.string() + "'");
  return out;
}

SummaryRow SummarizeJsonl(std::istream& in) {
  SummaryRow row;
  std::vector<MetricsRecord> traj;
  std::string line;
  bool saw_header = false;
  bool wallclock = false;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    Json j;
    try {
      j = Json::parse(line);
    } catch (const Json::parse_error& e) {
      throw Error(std::string("malformed JSONL record: ") + e.what());
    }
    const auto type = j.value("type", std::string());
    if (type == "header") {
      saw_header = true;
      row.name = j.value("name", std::string());
      row.config_hash = j.value("config_hash", std::string());
    } else if (type == "metrics") {
      MetricsRecord r;
      r.iter = j.at("iter").get<long>();
      r.loss = j.at("loss").is_number() ? j.at("loss").get<double>() : NAN;
      r.stationarity = j.at("stationarity").is_number() ? j.at("stationarity").get<double>() : NAN;
      wallclock = j.contains("wallclock_s");
      if (wallclock) r.wallclock_s = j.at("wallclock_s").get<double>();
      for (const auto& [k, v] : j.at("extra").items()) {
        if (v.is_number()) r.extra[k] = v.get<double>();
      }
      traj.push_back(std::move(r));
    } else if (type == "end") {
      row.status = j.value("status", std::string());
    } else if (type == "abort" && row.status.empty()) {
      row.status = "aborted";
    }
  }
  if (!saw_header) throw Error("JSONL stream has no header record");
  if (!traj.empty()) {
    const auto& last = traj.back();
    row.iterations = last.iter;
    row.final_loss = last.loss;
    row.final_stationarity = last.stationarity;
    if (last.extra.contains("rel_gap")) row.final_gap = last.extra.at("rel_gap");
    if (wallclock) row.wallclock_s = last.wallclock_s;
  }
  row.gamma_hat = FitStationarityRate(traj);
  return row;
}

std::vector<std::string> SummaryHeader() {
  return {"name",      "config_hash",        "status",    "iterations", "final_loss",
          "final_gap", "final_stationarity", "gamma_hat", "wallclock_s"};
}

void WriteSummaryCsv(std::ostream& out, std::span<const SummaryRow> rows) {
  const auto header = SummaryHeader();
  for (std::size_t i = 0; i < header.size(); ++i) out << (i ? "," : "") << header[i];
  out << "\r\n";
  auto opt = [](const std::optional<double>& v) { return v ? FormatDouble(*v) : std::string(); };
  for (const auto& r : rows) {
    out << CsvEscape(r.name) << ',' << CsvEscape(r.config_hash) << ',' << CsvEscape(r.status) << ','
        << r.iterations << ',' << FormatDouble(r.final_loss) << ',' << opt(r.final_gap) << ','
        << FormatDouble(r.final_stationarity) << ',' << opt(r.gamma_hat) << ','
        << opt(r.wallclock_s) << "\r\n";
  }
}

std::vector<SummaryRow> ReadSummaryCsv(std::istream& in) {
  auto records = ParseCsv(in);
  if (records.empty() || records.front() != SummaryHeader()) {
    throw Error("summary CSV header does not match");
  }
  std::vector<SummaryRow> rows;
  for (std::size_t k = 1; k < records.size(); ++k) {
    const auto& f = records[k];
    if (f.size() != SummaryHeader().size()) {
      throw Error("summary CSV row " + std::to_string(k) + " has " + std::to_string(f.size()) +
                  " fields");
    }
    SummaryRow r;
    r.name = f[0];
    r.config_hash = f[1];
    r.status = f[2];
    r.iterations = static_cast<long>(ParseOptional(f[3], "iterations").value_or(0));
    r.final_loss = ParseOptional(f[4], "final_loss").value_or(NAN);
    r.final_gap = ParseOptional(f[5], "final_gap");
    r.final_stationarity = ParseOptional(f[6], "final_stationarity").value_or(NAN);
    r.gamma_hat = ParseOptional(f[7], "gamma_hat");
    r.wallclock_s = ParseOptional(f[8], "wallclock_s");
    rows.push_back(std::move(r));
  }
  return rows;
}

std::string PartitionToJson(const Partition& partition) {
  Json j;
  j["clients"] = partition.num_clients();
  j["alpha"] = partition.alpha;
  j["shards"] = partition.shards;
  return j.dump();
}

}  // namespace pisa
