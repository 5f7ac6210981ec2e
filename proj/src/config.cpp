#include "pisa/config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>

extern char** environ;

namespace pisa {
namespace {

struct Field {
  std::string section;
  std::string key;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;

  std::string path() const { return section + "." + key; }
};

std::string Trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::string Lower(std::string s) {
  std::ranges::transform(s, s.begin(), [](unsigned char c) { return std::tolower(c); });
  return s;
}

std::string FormatDouble(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double ParseDouble(const std::string& raw) {
  const std::string s = Trim(raw);
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || s.empty()) {
    throw Error("cannot parse '" + s + "' as a number");
  }
  return v;
}

long long ParseInt(const std::string& raw) {
  const std::string s = Trim(raw);
  long long v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || s.empty()) {
    throw Error("cannot parse '" + s + "' as an integer");
  }
  return v;
}

std::uint64_t ParseUint(const std::string& raw) {
  const std::string s = Trim(raw);
  std::uint64_t v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || s.empty()) {
    throw Error("cannot parse '" + s + "' as a nonnegative integer");
  }
  return v;
}

bool ParseBool(const std::string& raw) {
  const std::string s = Lower(Trim(raw));
  if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
  if (s == "false" || s == "0" || s == "no" || s == "off") return false;
  throw Error("cannot parse '" + s + "' as a boolean");
}

std::vector<double> ParseList(const std::string& raw) {
  std::vector<double> out;
  std::stringstream ss(raw);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(ParseDouble(item));
  if (out.empty()) throw Error("empty list");
  return out;
}

std::string FormatList(const std::vector<double>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ",";
    out += FormatDouble(v[i]);
  }
  return out;
}

// Field builders. `member` projects a RunConfig onto the stored value.
template <class Get>
Field DoubleField(std::string section, std::string key, Get member) {
  return {section, key,
          [member](RunConfig& c, const std::string& v) { member(c) = ParseDouble(v); },
          [member](const RunConfig& c) { return FormatDouble(member(c)); }};
}

template <class Get>
Field IntField(std::string section, std::string key, Get member) {
  return {section, key,
          [member](RunConfig& c, const std::string& v) {
            using T = std::remove_reference_t<decltype(member(c))>;
            const auto x = ParseInt(v);
            if constexpr (std::is_unsigned_v<T>) {
              if (x < 0) throw Error("must be nonnegative");
            }
            member(c) = static_cast<T>(x);
          },
          [member](const RunConfig& c) { return std::to_string(member(c)); }};
}

template <class Get>
Field SeedField(std::string section, std::string key, Get member) {
  return {section, key, [member](RunConfig& c, const std::string& v) { member(c) = ParseUint(v); },
          [member](const RunConfig& c) { return std::to_string(member(c)); }};
}

template <class Get>
Field BoolField(std::string section, std::string key, Get member) {
  return {section, key, [member](RunConfig& c, const std::string& v) { member(c) = ParseBool(v); },
          [member](const RunConfig& c) { return std::string(member(c) ? "true" : "false"); }};
}

template <class Get>
Field StringField(std::string section, std::string key, Get member) {
  return {section, key, [member](RunConfig& c, const std::string& v) { member(c) = Trim(v); },
          [member](const RunConfig& c) { return member(c); }};
}

template <class Get>
Field ListField(std::string section, std::string key, Get member) {
  return {section, key, [member](RunConfig& c, const std::string& v) { member(c) = ParseList(v); },
          [member](const RunConfig& c) { return FormatList(member(c)); }};
}

template <class Get, class Parse>
Field EnumField(std::string section, std::string key, Get member, Parse parse) {
  return {section, key,
          [member, parse](RunConfig& c, const std::string& v) { member(c) = parse(Trim(v)); },
          [member](const RunConfig& c) { return ToString(member(c)); }};
}

#define PISA_MEMBER(expr) [](auto& c) -> auto& { return c.expr; }

const std::vector<Field>& Fields() {
  static const std::vector<Field> fields = {
      EnumField("problem", "kind", PISA_MEMBER(problem.kind), ParseProblemKind),
      StringField("problem", "source", PISA_MEMBER(problem.source)),
      IntField("problem", "dim", PISA_MEMBER(problem.dim)),
      IntField("problem", "samples", PISA_MEMBER(problem.samples)),
      DoubleField("problem", "noise", PISA_MEMBER(problem.noise)),
      DoubleField("problem", "feature_scale", PISA_MEMBER(problem.feature_scale)),
      DoubleField("problem", "mu", PISA_MEMBER(problem.mu)),
      DoubleField("problem", "lambda", PISA_MEMBER(problem.lambda)),
      IntField("problem", "classes", PISA_MEMBER(problem.classes)),
      IntField("problem", "per_class", PISA_MEMBER(problem.per_class)),
      DoubleField("problem", "separation", PISA_MEMBER(problem.separation)),
      DoubleField("problem", "offset", PISA_MEMBER(problem.offset)),
      DoubleField("problem", "anisotropy", PISA_MEMBER(problem.anisotropy)),
      DoubleField("problem", "test_fraction", PISA_MEMBER(problem.test_fraction)),
      IntField("problem", "hidden", PISA_MEMBER(problem.hidden)),
      StringField("problem", "idx_images", PISA_MEMBER(problem.idx_images)),
      StringField("problem", "idx_labels", PISA_MEMBER(problem.idx_labels)),
      IntField("problem", "idx_limit", PISA_MEMBER(problem.idx_limit)),
      SeedField("problem", "seed", PISA_MEMBER(problem.seed)),

      EnumField("partition", "mode", PISA_MEMBER(partition.mode), ParsePartitionMode),
      IntField("partition", "clients", PISA_MEMBER(partition.clients)),
      IntField("partition", "labels_per_client", PISA_MEMBER(partition.labels_per_client)),
      DoubleField("partition", "ratio", PISA_MEMBER(partition.ratio)),
      SeedField("partition", "seed", PISA_MEMBER(partition.seed)),

      EnumField("algorithm", "kind", PISA_MEMBER(algorithm.kind), ParseAlgorithmKind),
      ListField("algorithm", "sigma0", PISA_MEMBER(algorithm.sigma0)),
      ListField("algorithm", "gamma", PISA_MEMBER(algorithm.gamma)),
      ListField("algorithm", "rho", PISA_MEMBER(algorithm.rho)),
      ListField("algorithm", "eta", PISA_MEMBER(algorithm.eta)),
      IntField("algorithm", "k0", PISA_MEMBER(algorithm.k0)),
      IntField("algorithm", "schedule_epochs", PISA_MEMBER(algorithm.schedule_epochs)),
      IntField("algorithm", "batch_size", PISA_MEMBER(algorithm.batch_size)),
      EnumField("algorithm", "preconditioner", PISA_MEMBER(algorithm.preconditioner),
                ParsePreconditionerKind),
      EnumField("algorithm", "scheme", PISA_MEMBER(algorithm.scheme), ParseMomentScheme),
      DoubleField("algorithm", "beta", PISA_MEMBER(algorithm.beta)),
      EnumField("algorithm", "ns_mode", PISA_MEMBER(algorithm.ns_mode), ParseNsMode),
      IntField("algorithm", "ns_iters", PISA_MEMBER(algorithm.ns_iters)),
      DoubleField("algorithm", "ns_momentum", PISA_MEMBER(algorithm.ns_momentum)),
      DoubleField("algorithm", "ns_eps", PISA_MEMBER(algorithm.ns_eps)),
      DoubleField("algorithm", "zero_tol", PISA_MEMBER(algorithm.zero_tol)),
      DoubleField("algorithm", "lr", PISA_MEMBER(algorithm.lr)),
      DoubleField("algorithm", "beta1", PISA_MEMBER(algorithm.beta1)),
      DoubleField("algorithm", "beta2", PISA_MEMBER(algorithm.beta2)),
      DoubleField("algorithm", "weight_decay", PISA_MEMBER(algorithm.weight_decay)),
      IntField("algorithm", "local_epochs", PISA_MEMBER(algorithm.local_epochs)),

      StringField("run", "name", PISA_MEMBER(run.name)),
      IntField("run", "max_iters", PISA_MEMBER(run.max_iters)),
      DoubleField("run", "stationarity_tol", PISA_MEMBER(run.stationarity_tol)),
      DoubleField("run", "consensus_tol", PISA_MEMBER(run.consensus_tol)),
      DoubleField("run", "gap_tol", PISA_MEMBER(run.gap_tol)),
      SeedField("run", "seed", PISA_MEMBER(run.seed)),
      BoolField("run", "theory_mode", PISA_MEMBER(run.theory_mode)),
      DoubleField("run", "theory_sigma", PISA_MEMBER(run.theory_sigma)),
      IntField("run", "theory_samples", PISA_MEMBER(run.theory_samples)),
      BoolField("run", "track_merit", PISA_MEMBER(run.track_merit)),
      IntField("run", "workers", PISA_MEMBER(run.workers)),
      IntField("run", "log_every", PISA_MEMBER(run.log_every)),
      BoolField("run", "wallclock_in_jsonl", PISA_MEMBER(run.wallclock_in_jsonl)),
      StringField("run", "out_dir", PISA_MEMBER(run.out_dir)),
  };
  return fields;
}

#undef PISA_MEMBER

const Field* FindField(const std::string& section, const std::string& key) {
  for (const auto& f : Fields()) {
    if (f.section == section && f.key == key) return &f;
  }
  return nullptr;
}

void Apply(RunConfig& c, const std::string& section, const std::string& key,
           const std::string& value) {
  const Field* f = FindField(section, key);
  if (!f) throw Error("unknown key '" + section + "." + key + "'");
  try {
    f->set(c, value);
  } catch (const Error& e) {
    throw Error(f->path() + ": " + e.what());
  }
}

[[noreturn]] void Fail(const std::string& field, const std::string& what) {
  throw Error(field + ": " + what);
}

void CheckList(const std::string& field, const std::vector<double>& v, int clients) {
  if (v.size() != 1 && v.size() != static_cast<std::size_t>(clients)) {
    Fail(field,
         "expected 1 or " + std::to_string(clients) + " values, got " + std::to_string(v.size()));
  }
}

RunConfig SigmaSweepBase() {
  RunConfig c;
  c.problem.kind = ProblemKind::kLeastSquares;
  c.problem.dim = 100;
  c.problem.samples = 3200;
  c.problem.noise = 0.1;
  c.problem.feature_scale = 3.0;
  c.problem.mu = 0.0;
  c.problem.lambda = 0.0;
  c.problem.seed = 1;
  c.partition.mode = PartitionMode::kIid;
  c.partition.clients = 32;
  c.algorithm.kind = AlgorithmKind::kSisa;
  c.algorithm.sigma0 = {16.0};
  c.algorithm.gamma = {0.99};
  c.algorithm.rho = {1.0};
  c.algorithm.eta = {1e3};
  c.algorithm.k0 = 1;
  c.algorithm.scheme = MomentScheme::kIII;
  c.algorithm.beta = 0.999;
  c.run.max_iters = 3000;
  return c;
}

}  // namespace

std::string ToString(PartitionMode mode) {
  switch (mode) {
    case PartitionMode::kIid:
      return "iid";
    case PartitionMode::kLabelSkew:
      return "label-skew";
    case PartitionMode::kQuantitySkew:
      return "quantity-skew";
  }
  return "?";
}

PartitionMode ParsePartitionMode(const std::string& name) {
  if (name == "iid") return PartitionMode::kIid;
  if (name == "label-skew") return PartitionMode::kLabelSkew;
  if (name == "quantity-skew") return PartitionMode::kQuantitySkew;
  throw Error("unknown partition mode '" + name + "'");
}

std::string ToString(AlgorithmKind kind) {
  switch (kind) {
    case AlgorithmKind::kPisa:
      return "pisa";
    case AlgorithmKind::kSisa:
      return "sisa";
    case AlgorithmKind::kNsisa:
      return "nsisa";
    case AlgorithmKind::kSgdMomentum:
      return "sgd-momentum";
    case AlgorithmKind::kAdam:
      return "adam";
    case AlgorithmKind::kFedavg:
      return "fedavg";
  }
  return "?";
}

AlgorithmKind ParseAlgorithmKind(const std::string& name) {
  if (name == "pisa") return AlgorithmKind::kPisa;
  if (name == "sisa") return AlgorithmKind::kSisa;
  if (name == "nsisa") return AlgorithmKind::kNsisa;
  if (name == "sgd-momentum") return AlgorithmKind::kSgdMomentum;
  if (name == "adam") return AlgorithmKind::kAdam;
  if (name == "fedavg") return AlgorithmKind::kFedavg;
  throw Error("unknown algorithm '" + name + "'");
}

bool IsBaseline(AlgorithmKind kind) {
  return kind == AlgorithmKind::kSgdMomentum || kind == AlgorithmKind::kAdam ||
         kind == AlgorithmKind::kFedavg;
}

void RunConfig::Validate() const {
  const auto& p = problem;
  if (p.source != "synthetic" && p.source != "idx") {
    Fail("problem.source", "expected 'synthetic' or 'idx'");
  }
  if (p.source == "idx" && (p.idx_images.empty() || p.idx_labels.empty())) {
    Fail("problem.idx_images", "idx source needs idx_images and idx_labels");
  }
  if (p.source == "idx" && p.kind == ProblemKind::kLeastSquares) {
    Fail("problem.source", "idx data has labels, not regression targets");
  }
  if (p.dim < 1) Fail("problem.dim", "must be at least 1");
  if (p.kind == ProblemKind::kLeastSquares && p.samples < p.dim) {
    Fail("problem.samples", "must be at least dim");
  }
  if (!(p.noise >= 0.0)) Fail("problem.noise", "must be nonnegative");
  if (!(p.feature_scale > 0.0)) Fail("problem.feature_scale", "must be positive");
  if (!(p.mu >= 0.0)) Fail("problem.mu", "must be nonnegative");
  if (!(p.lambda >= 0.0 && p.lambda <= p.mu)) Fail("problem.lambda", "must lie in [0, mu]");
  if (p.classes < 2) Fail("problem.classes", "must be at least 2");
  if (p.per_class < 1) Fail("problem.per_class", "must be at least 1");
  if (!(p.separation >= 0.0)) Fail("problem.separation", "must be nonnegative");
  if (!(p.anisotropy >= 0.0)) Fail("problem.anisotropy", "must be nonnegative");
  if (!(p.test_fraction >= 0.0 && p.test_fraction < 1.0)) {
    Fail("problem.test_fraction", "must lie in [0, 1)");
  }
  if (p.hidden < 1) Fail("problem.hidden", "must be at least 1");
  if (p.idx_limit < 0) Fail("problem.idx_limit", "must be nonnegative");

  const auto& q = partition;
  if (q.clients < 1) Fail("partition.clients", "must be at least 1");
  if (q.labels_per_client < 1) Fail("partition.labels_per_client", "must be at least 1");
  if (!(q.ratio >= 1.0)) Fail("partition.ratio", "must be at least 1");

  const auto& a = algorithm;
  CheckList("algorithm.sigma0", a.sigma0, q.clients);
  CheckList("algorithm.gamma", a.gamma, q.clients);
  CheckList("algorithm.rho", a.rho, q.clients);
  CheckList("algorithm.eta", a.eta, q.clients);
  for (double v : a.sigma0) {
    if (!(v > 0.0)) Fail("algorithm.sigma0", "value " + FormatDouble(v) + " must be positive");
  }
  for (double v : a.gamma) {
    if (!(v > 0.0 && v <= 1.0)) {
      Fail("algorithm.gamma", "value " + FormatDouble(v) + " outside (0, 1]");
    }
  }
  for (double v : a.rho) {
    if (!(v > 0.0)) Fail("algorithm.rho", "value " + FormatDouble(v) + " must be positive");
  }
  for (double v : a.eta) {
    if (!(v > 0.0)) Fail("algorithm.eta", "value " + FormatDouble(v) + " must be positive");
    if (a.kind == AlgorithmKind::kPisa && a.preconditioner == PreconditionerKind::kIdentity &&
        v < 1.0) {
      Fail("algorithm.eta", "must be at least 1 for the identity preconditioner");
    }
  }
  if (a.k0 < 0) Fail("algorithm.k0", "must be nonnegative");
  if (a.schedule_epochs < 0) Fail("algorithm.schedule_epochs", "must be nonnegative");
  if (!(a.beta > 0.0 && a.beta < 1.0)) Fail("algorithm.beta", "must lie in (0, 1)");
  if (a.ns_iters < 0) Fail("algorithm.ns_iters", "must be nonnegative");
  if (!(a.ns_momentum > 0.0)) Fail("algorithm.ns_momentum", "must be positive");
  if (!(a.ns_eps > 0.0 && a.ns_eps < 1.0)) Fail("algorithm.ns_eps", "must lie in (0, 1)");
  if (!(a.zero_tol >= 0.0)) Fail("algorithm.zero_tol", "must be nonnegative");
  if (!(a.lr > 0.0)) Fail("algorithm.lr", "must be positive");
  if (!(a.beta1 >= 0.0 && a.beta1 < 1.0)) Fail("algorithm.beta1", "must lie in [0, 1)");
  if (!(a.beta2 > 0.0 && a.beta2 < 1.0)) Fail("algorithm.beta2", "must lie in (0, 1)");
  if (!(a.weight_decay >= 0.0)) Fail("algorithm.weight_decay", "must be nonnegative");
  if (a.local_epochs < 1) Fail("algorithm.local_epochs", "must be at least 1");
  if (a.kind == AlgorithmKind::kPisa && a.preconditioner == PreconditionerKind::kHessian &&
      p.kind == ProblemKind::kMlp) {
    Fail("algorithm.preconditioner", "hessian is unavailable for mlp");
  }

  const auto& r = run;
  if (r.name.empty() || r.name.find_first_of("/\\") != std::string::npos) {
    Fail("run.name", "must be a nonempty file name");
  }
  if (r.max_iters < 0) Fail("run.max_iters", "must be nonnegative");
  if (!(r.stationarity_tol >= 0.0)) Fail("run.stationarity_tol", "must be nonnegative");
  if (!(r.consensus_tol >= 0.0)) Fail("run.consensus_tol", "must be nonnegative");
  if (!(r.gap_tol >= 0.0)) Fail("run.gap_tol", "must be nonnegative");
  if (r.gap_tol > 0.0 && p.kind != ProblemKind::kLeastSquares) {
    Fail("run.gap_tol", "needs a least-squares problem with a known optimum");
  }
  if (!(r.theory_sigma > 0.0)) Fail("run.theory_sigma", "must be positive");
  if (r.theory_samples < 1) Fail("run.theory_samples", "must be at least 1");
  if (r.track_merit && IsBaseline(a.kind)) Fail("run.track_merit", "baselines have no merit");
  if (r.theory_mode && IsBaseline(a.kind)) Fail("run.theory_mode", "applies to pisa kinds only");
  if (r.workers < 1) Fail("run.workers", "must be at least 1");
  if (r.log_every < 1) Fail("run.log_every", "must be at least 1");
}

EnvMap ProcessEnv() {
  EnvMap env;
  for (char** e = environ; e && *e; ++e) {
    const std::string kv = *e;
    const auto eq = kv.find('=');
    if (eq == std::string::npos) continue;
    if (kv.rfind("PISA_", 0) == 0) env[kv.substr(0, eq)] = kv.substr(eq + 1);
  }
  return env;
}

RunConfig ParseConfig(const std::string& text, const RunConfig& base, const EnvMap& env) {
  RunConfig c = base;
  boost::property_tree::ptree tree;
  std::istringstream in(text);
  try {
    boost::property_tree::ini_parser::read_ini(in, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw Error("config parse error at line " + std::to_string(e.line()) + ": " + e.message());
  }
  for (const auto& [section, body] : tree) {
    if (body.empty()) throw Error("key '" + section + "' must belong to a section");
    for (const auto& [key, value] : body) Apply(c, section, key, value.data());
  }
  for (const auto& [name, value] : env) {
    if (name.rfind("PISA_", 0) != 0) continue;
    const std::string rest = name.substr(5);
    const auto sep = rest.find("__");
    if (sep == std::string::npos) {
      throw Error("environment override " + name + " must look like PISA_SECTION__KEY");
    }
    Apply(c, Lower(rest.substr(0, sep)), Lower(rest.substr(sep + 2)), value);
  }
  c.Validate();
  return c;
}

RunConfig LoadConfig(const std::filesystem::path& path, const RunConfig& base, const EnvMap& env) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open config '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return ParseConfig(ss.str(), base, env);
}

namespace {

std::string SerializeImpl(const RunConfig& config, bool execution_keys) {
  std::string out;
  std::string section;
  for (const auto& f : Fields()) {
    if (!execution_keys && f.section == "run" && (f.key == "workers" || f.key == "out_dir")) {
      continue;
    }
    if (f.section != section) {
      if (!section.empty()) out += "\n";
      section = f.section;
      out += "[" + section + "]\n";
    }
    out += f.key + " = " + f.get(config) + "\n";
  }
  return out;
}

}  // namespace

std::string Serialize(const RunConfig& config) { return SerializeImpl(config, true); }

std::string SerializeResultKeys(const RunConfig& config) { return SerializeImpl(config, false); }

std::string ConfigHash(const RunConfig& config) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char ch : SerializeResultKeys(config)) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::vector<std::string> PresetNames() {
  return {"appendix-a2", "k0-sweep", "heterogeneity-slabel", "merit-descent"};
}

std::vector<RunConfig> ExpandPreset(const std::string& name) {
  std::vector<RunConfig> runs;
  if (name == "appendix-a2") {
    for (double s : {4.0, 8.0, 16.0, 32.0, 64.0, 128.0}) {
      RunConfig c = SigmaSweepBase();
      c.algorithm.sigma0 = {s};
      c.run.name = "appendix-a2-sigma" + std::to_string(static_cast<int>(s));
      runs.push_back(c);
    }
  } else if (name == "k0-sweep") {
    for (double g : {0.5, 0.7, 0.9, 0.99}) {
      RunConfig c = SigmaSweepBase();
      c.algorithm.gamma = {g};
      c.algorithm.k0 = 0;
      char buf[32];
      std::snprintf(buf, sizeof buf, "k0-sweep-gamma%g", g);
      c.run.name = buf;
      runs.push_back(c);
    }
  } else if (name == "heterogeneity-slabel") {
    RunConfig c;
    c.problem.kind = ProblemKind::kMultinomialLogistic;
    c.problem.classes = 10;
    c.problem.dim = 50;
    c.problem.per_class = 400;
    c.problem.test_fraction = 0.25;
    c.problem.separation = 0.5;
    c.problem.offset = 3.0;
    c.problem.anisotropy = 1.5;
    c.problem.mu = 1e-4;
    c.problem.lambda = 0.0;
    c.problem.seed = 0;
    c.partition.mode = PartitionMode::kLabelSkew;
    c.partition.clients = 10;
    c.partition.labels_per_client = 1;
    c.partition.seed = 0;
    RunConfig sisa = c;
    sisa.algorithm.kind = AlgorithmKind::kSisa;
    sisa.algorithm.sigma0 = {1.0};
    sisa.algorithm.gamma = {0.999};
    sisa.algorithm.k0 = 1;
    sisa.run.max_iters = 200;
    sisa.run.name = "heterogeneity-slabel-sisa";
    runs.push_back(sisa);
    // Equal per-sample gradient budget: 40 rounds x 5 local epochs = 200 full passes.
    RunConfig fedavg = c;
    fedavg.algorithm.kind = AlgorithmKind::kFedavg;
    fedavg.algorithm.lr = 0.1;
    fedavg.algorithm.local_epochs = 5;
    fedavg.algorithm.batch_size = 50;
    fedavg.run.max_iters = 40;
    fedavg.run.name = "heterogeneity-slabel-fedavg";
    runs.push_back(fedavg);
  } else if (name == "merit-descent") {
    RunConfig c;
    c.problem.kind = ProblemKind::kLeastSquares;
    c.problem.dim = 20;
    c.problem.samples = 400;
    c.problem.noise = 0.1;
    c.problem.feature_scale = 1.0 / std::sqrt(20.0);
    c.problem.mu = 10.0;
    c.problem.lambda = 0.0;
    c.problem.seed = 7;
    c.partition.mode = PartitionMode::kIid;
    c.partition.clients = 4;
    c.partition.seed = 7;
    c.algorithm.kind = AlgorithmKind::kPisa;
    c.algorithm.preconditioner = PreconditionerKind::kIdentity;
    c.algorithm.sigma0 = {1.0};
    c.algorithm.gamma = {0.995};
    c.algorithm.rho = {1.0};
    c.algorithm.eta = {1.0};
    c.algorithm.k0 = 1;
    c.run.theory_mode = true;
    c.run.track_merit = true;
    c.run.max_iters = 500;
    c.run.name = "merit-descent";
    runs.push_back(c);
  } else {
    throw Error("unknown preset '" + name + "'");
  }
  return runs;
}

}  // namespace pisa
