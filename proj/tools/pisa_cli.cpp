// Command-line front end: run, partition, check-theory, summarize.

#include <glob.h>

#include <algorithm>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "pisa/harness.hpp"

namespace {

using namespace pisa;

// Divergence outranks an unmet tolerance, which outranks success; any error wins.
int Worse(int a, int b) {
  auto rank = [](int c) {
    switch (c) {
      case kExitOk:
        return 0;
      case kExitToleranceNotMet:
        return 1;
      case kExitDiverged:
        return 2;
      default:
        return 3;
    }
  };
  return rank(a) >= rank(b) ? a : b;
}

std::vector<RunConfig> ResolveRuns(const std::string& config_path, const std::string& preset) {
  if (config_path.empty() && preset.empty()) {
    throw CLI::ValidationError("run", "--config or --preset is required");
  }
  std::vector<RunConfig> bases =
      preset.empty() ? std::vector<RunConfig>{RunConfig{}} : ExpandPreset(preset);
  std::vector<RunConfig> runs;
  for (const auto& base : bases) {
    if (config_path.empty()) {
      runs.push_back(ParseConfig("", base, ProcessEnv()));
    } else {
      runs.push_back(LoadConfig(config_path, base));
    }
  }
  return runs;
}

int CmdRun(const std::string& config_path, const std::string& preset, const std::string& out_dir) {
  const auto runs = ResolveRuns(config_path, preset);
  std::vector<SummaryRow> rows;
  int code = kExitOk;
  std::filesystem::path dir = out_dir;
  for (const auto& cfg : runs) {
    if (out_dir.empty()) dir = cfg.run.out_dir;
    const auto outcome = RunExperimentToDir(cfg, dir);
    rows.push_back(outcome.summary);
    code = Worse(code, outcome.exit_code);
    std::cerr << cfg.run.name << ": " << outcome.summary.status << " after "
              << outcome.summary.iterations << " iterations";
    if (!outcome.message.empty()) std::cerr << " (" << outcome.message << ")";
    std::cerr << '\n';
  }
  std::ofstream csv(dir / "summary.csv", std::ios::binary);
  if (!csv) throw Error("cannot write '" + (dir / "summary.csv").string() + "'");
  WriteSummaryCsv(csv, rows);
  return code;
}

int CmdPartition(const std::string& config_path, const std::string& out) {
  const auto cfg = LoadConfig(config_path);
  const auto ex = BuildExperiment(cfg);
  const auto text = PartitionToJson(ex.partition);
  if (out.empty()) {
    std::cout << text << '\n';
  } else {
    std::ofstream f(out, std::ios::binary);
    if (!f) throw Error("cannot write '" + out + "'");
    f << text << '\n';
  }
  return kExitOk;
}

int CmdCheckTheory(const std::string& config_path) {
  const auto cfg = LoadConfig(config_path);
  const auto ex = BuildExperiment(cfg);
  const auto rep = CheckTheory(cfg, ex);
  std::cout << "delta_bar " << rep.bounds.delta_bar << '\n';
  for (std::size_t i = 0; i < rep.bounds.r.size(); ++i) {
    std::cout << "client " << i << " r " << rep.bounds.r[i] << " eps " << rep.bounds.eps_hat[i]
              << '\n';
  }
  std::cout << "sigma0_floor " << rep.sigma0_floor << '\n';
  std::cout << "configured_sigma0 " << rep.configured_sigma0 << '\n';
  std::cout << "meets_floor " << (rep.meets ? "yes" : "no") << '\n';
  return kExitOk;
}

int CmdSummarize(const std::vector<std::string>& patterns) {
  std::vector<std::string> files;
  for (const auto& p : patterns) {
    glob_t g{};
    const int rc = glob(p.c_str(), 0, nullptr, &g);
    if (rc == 0) {
      for (std::size_t i = 0; i < g.gl_pathc; ++i) files.emplace_back(g.gl_pathv[i]);
    }
    globfree(&g);
    if (rc != 0 && rc != GLOB_NOMATCH) throw Error("glob failed for '" + p + "'");
  }
  std::sort(files.begin(), files.end());
  files.erase(std::unique(files.begin(), files.end()), files.end());
  std::vector<SummaryRow> rows;
  for (const auto& f : files) {
    std::ifstream in(f);
    if (!in) throw Error("cannot open '" + f + "'");
    rows.push_back(SummarizeJsonl(in));
  }
  WriteSummaryCsv(std::cout, rows);
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Preconditioned inexact stochastic ADMM experiments"};
  app.require_subcommand(1);

  std::string config_path, preset, out_dir, out_file;
  std::vector<std::string> patterns;

  auto* run = app.add_subcommand("run", "Run a configuration or preset");
  run->add_option("--config", config_path, "INI configuration file");
  run->add_option("--preset", preset, "Preset name")->check(CLI::IsMember(pisa::PresetNames()));
  run->add_option("--out", out_dir, "Output directory (defaults to run.out_dir)");

  auto* part = app.add_subcommand("partition", "Print the client shards as JSON");
  part->add_option("--config", config_path, "INI configuration file")->required();
  part->add_option("--out", out_file, "Write to this file instead of stdout");

  auto* theory = app.add_subcommand("check-theory", "Report the theoretical sigma0 floor");
  theory->add_option("--config", config_path, "INI configuration file")->required();

  auto* summarize = app.add_subcommand("summarize", "Summarize JSONL streams as CSV");
  summarize->add_option("patterns", patterns, "Glob patterns of JSONL files")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : pisa::kExitUsage;
  }

  try {
    if (*run) return CmdRun(config_path, preset, out_dir);
    if (*part) return CmdPartition(config_path, out_file);
    if (*theory) return CmdCheckTheory(config_path);
    if (*summarize) return CmdSummarize(patterns);
  } catch (const CLI::ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return pisa::kExitUsage;
  } catch (const pisa::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return pisa::kExitError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return pisa::kExitError;
  }
  return pisa::kExitUsage;
}
