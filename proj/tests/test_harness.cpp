#include <sstream>

#include <doctest.h>
#include <json.hpp>

#include "pisa/harness.hpp"

using namespace pisa;

namespace {

RunConfig Small() {
  RunConfig c;
  c.problem.dim = 6;
  c.problem.samples = 120;
  c.partition.clients = 4;
  c.algorithm.sigma0 = {4.0};
  c.algorithm.batch_size = 10;
  c.run.max_iters = 40;
  c.run.seed = 9;
  c.run.name = "small";
  return c;
}

std::vector<nlohmann::json> Records(const std::string& text) {
  std::vector<nlohmann::json> out;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) out.push_back(nlohmann::json::parse(line));
  return out;
}

}  // namespace

TEST_CASE("reruns produce identical streams across worker counts") {
  for (auto kind : {AlgorithmKind::kSisa, AlgorithmKind::kNsisa, AlgorithmKind::kFedavg}) {
    CAPTURE(ToString(kind));
    RunConfig c = Small();
    if (kind == AlgorithmKind::kNsisa) {
      c.problem.kind = ProblemKind::kMultinomialLogistic;
      c.problem.classes = 3;
      c.problem.per_class = 30;
      c.problem.test_fraction = 0.2;
    }
    c.algorithm.kind = kind;
    std::ostringstream a, b, d;
    RunExperiment(c, a);
    RunExperiment(c, b);
    c.run.workers = 3;
    RunExperiment(c, d);
    CHECK(a.str() == b.str());
    CHECK(a.str() == d.str());
  }
}

TEST_CASE("stream layout") {
  std::ostringstream out;
  const auto outcome = RunExperiment(Small(), out);
  const auto recs = Records(out.str());
  REQUIRE(recs.size() == 1 + 41 + 1);
  CHECK(recs.front()["type"] == "header");
  CHECK(recs.front()["schema_version"] == kSchemaVersion);
  CHECK(recs.front()["config_hash"] == ConfigHash(Small()));
  CHECK(recs[1]["type"] == "metrics");
  CHECK(recs[1]["iter"] == 0);
  CHECK_FALSE(recs[1].contains("wallclock_s"));
  CHECK(recs[1]["extra"].contains("rel_gap"));
  CHECK(recs.back()["type"] == "end");
  CHECK(recs.back()["iterations"] == 40);
  CHECK(recs.back()["grad_samples"] == 40 * 4 * 10);
  CHECK(outcome.exit_code == kExitOk);

  std::istringstream in(out.str());
  CHECK(SummarizeJsonl(in) == outcome.summary);
}

TEST_CASE("divergence writes an abort record") {
  RunConfig c = Small();
  c.problem.feature_scale = 1e150;
  c.algorithm.kind = AlgorithmKind::kPisa;
  c.algorithm.preconditioner = PreconditionerKind::kIdentity;
  c.algorithm.batch_size = 0;
  std::ostringstream out;
  const auto outcome = RunExperiment(c, out);
  CHECK(outcome.status == RunStatus::kDiverged);
  CHECK(outcome.exit_code == kExitDiverged);
  const auto recs = Records(out.str());
  REQUIRE(recs.size() >= 3);
  CHECK(recs[recs.size() - 2]["type"] == "abort");
  CHECK(recs.back()["status"] == "diverged");
}

TEST_CASE("unmet tolerance is reported through the exit code") {
  RunConfig c = Small();
  c.run.max_iters = 2;
  c.run.stationarity_tol = 1e-12;
  std::ostringstream out;
  CHECK(RunExperiment(c, out).exit_code == kExitToleranceNotMet);
}

TEST_CASE("summary CSV") {
  std::ostringstream empty;
  WriteSummaryCsv(empty, {});
  CHECK(empty.str() ==
        "name,config_hash,status,iterations,final_loss,final_gap,final_stationarity,gamma_hat,"
        "wallclock_s\r\n");
  std::istringstream empty_in(empty.str());
  CHECK(ReadSummaryCsv(empty_in).empty());

  std::vector<SummaryRow> rows(2);
  rows[0] = {"plain", "0123456789abcdef", "completed", 10, 0.1, 1e-7, 3e-9, 0.95, 1.5};
  rows[1] = {"with,comma \"q\"", "ffff", "diverged",   3,           1.0 / 3.0,
             std::nullopt,       2.0,    std::nullopt, std::nullopt};
  std::ostringstream out;
  WriteSummaryCsv(out, rows);
  std::istringstream in(out.str());
  CHECK(ReadSummaryCsv(in) == rows);
}

TEST_CASE("sweep preset yields one row per gamma") {
  std::vector<SummaryRow> rows;
  for (auto c : ExpandPreset("k0-sweep")) {
    c.problem.dim = 5;
    c.problem.samples = 64;
    c.partition.clients = 4;
    c.run.max_iters = 3;
    std::ostringstream sink;
    rows.push_back(RunExperiment(c, sink).summary);
  }
  std::ostringstream out;
  WriteSummaryCsv(out, rows);
  std::istringstream in(out.str());
  const auto back = ReadSummaryCsv(in);
  REQUIRE(back.size() == 4);
  CHECK(back[0].name == "k0-sweep-gamma0.5");
  CHECK(back[3].name == "k0-sweep-gamma0.99");
}

TEST_CASE("client parameters from the config") {
  RunConfig c = Small();
  c.algorithm.kind = AlgorithmKind::kNsisa;
  c.algorithm.schedule_epochs = 2;
  const auto ex = BuildExperiment(c);
  const auto params = BuildClientParams(c, ex.partition);
  REQUIRE(params.size() == 4);
  CHECK(params[0].precond.kind == PreconditionerKind::kNewtonSchulz);
  CHECK(params[0].k0 == 2 * 3);
  CHECK(ex.reference_loss.has_value());
  CHECK_THROWS_AS(BuildBaselineConfig(c), Error);
}

TEST_CASE("partition JSON") {
  const auto ex = BuildExperiment(Small());
  const auto j = nlohmann::json::parse(PartitionToJson(ex.partition));
  CHECK(j["clients"] == 4);
  CHECK(j["shards"].size() == 4);
  CHECK(j["alpha"][0].get<double>() == doctest::Approx(0.25));
}

TEST_CASE("theory report") {
  auto c = ExpandPreset("merit-descent").front();
  const auto ex = BuildExperiment(c);
  const auto rep = CheckTheory(c, ex);
  CHECK(rep.bounds.delta_bar > 0.0);
  CHECK(rep.sigma0_floor >= 8.0);
  CHECK_FALSE(rep.meets);
}
