#include "pisa/problem.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

#include "pisa/rng.hpp"

namespace pisa {
namespace {

void CheckBatch(const Dataset& data, std::span<const Index> batch) {
  if (batch.empty()) {
    throw Error("empty batch");
  }
  const auto n = data.size();
  for (auto i : batch) {
    if (i >= n) {
      throw Error("batch index " + std::to_string(i) + " out of range");
    }
  }
}

Matrix Gather(const Matrix& features, std::span<const Index> batch) {
  Matrix out(features.rows(), static_cast<Eigen::Index>(batch.size()));
  for (std::size_t j = 0; j < batch.size(); ++j) {
    out.col(static_cast<Eigen::Index>(j)) = features.col(static_cast<Eigen::Index>(batch[j]));
  }
  return out;
}

//! Regression targets as a (outputs x batch) matrix: one-hot rows for classification data.
Matrix TargetMatrix(const Dataset& data, std::span<const Index> batch) {
  const auto b = static_cast<Eigen::Index>(batch.size());
  if (data.is_classification()) {
    Matrix y = Matrix::Zero(data.num_classes, b);
    for (Eigen::Index j = 0; j < b; ++j) {
      y(data.labels[batch[static_cast<std::size_t>(j)]], j) = 1.0;
    }
    return y;
  }
  Matrix y(1, b);
  for (Eigen::Index j = 0; j < b; ++j) {
    y(0, j) = data.targets(static_cast<Eigen::Index>(batch[static_cast<std::size_t>(j)]));
  }
  return y;
}

double Finite(double v) {
  if (!std::isfinite(v)) {
    throw Error("numerical overflow");
  }
  return v;
}

Vector Finite(Vector v) {
  if (!v.allFinite()) {
    throw Error("numerical overflow");
  }
  return v;
}

int MlpOutputs(const Dataset& data) { return data.is_classification() ? data.num_classes : 1; }

// Column-wise softmax of logits, stabilized by the column max.
Matrix Softmax(const Matrix& logits) {
  Matrix p = logits;
  for (Eigen::Index j = 0; j < p.cols(); ++j) {
    auto col = p.col(j);
    col.array() -= col.maxCoeff();
    col = col.array().exp().matrix();
    col /= col.sum();
  }
  return p;
}

struct MlpView {
  Eigen::Map<const Matrix> w1;
  Eigen::Map<const Vector> b1;
  Eigen::Map<const Matrix> w2;
  Eigen::Map<const Vector> b2;
};

MlpView ViewMlp(const Problem& problem, const Vector& w) {
  const auto& blocks = problem.layout().blocks();
  auto mat = [&w](const BlockSpec& b) {
    return Eigen::Map<const Matrix>(w.data() + b.offset, b.shape->rows, b.shape->cols);
  };
  auto vec = [&w](const BlockSpec& b) {
    return Eigen::Map<const Vector>(w.data() + b.offset, static_cast<Eigen::Index>(b.size));
  };
  return MlpView{mat(blocks[0]), vec(blocks[1]), mat(blocks[2]), vec(blocks[3])};
}

double LeastSquaresLoss(const Problem& p, const Vector& w, std::span<const Index> batch) {
  const Matrix x = Gather(p.data().features, batch);
  Vector r = x.transpose() * w;
  for (std::size_t j = 0; j < batch.size(); ++j) {
    r(static_cast<Eigen::Index>(j)) -= p.data().targets(static_cast<Eigen::Index>(batch[j]));
  }
  return 0.5 * r.squaredNorm() / static_cast<double>(batch.size());
}

Vector LeastSquaresGrad(const Problem& p, const Vector& w, std::span<const Index> batch) {
  const Matrix x = Gather(p.data().features, batch);
  Vector r = x.transpose() * w;
  for (std::size_t j = 0; j < batch.size(); ++j) {
    r(static_cast<Eigen::Index>(j)) -= p.data().targets(static_cast<Eigen::Index>(batch[j]));
  }
  return x * r / static_cast<double>(batch.size());
}

Matrix LogisticLogits(const Problem& p, const Vector& w, const Matrix& x) {
  const int k = p.data().num_classes;
  const auto d = x.rows();
  Eigen::Map<const Matrix> weights(w.data(), k, d);
  Eigen::Map<const Vector> bias(w.data() + k * d, k);
  Matrix z = weights * x;
  z.colwise() += bias;
  return z;
}

double LogisticLoss(const Problem& p, const Vector& w, std::span<const Index> batch) {
  const Matrix x = Gather(p.data().features, batch);
  const Matrix z = LogisticLogits(p, w, x);
  double total = 0.0;
  for (Eigen::Index j = 0; j < z.cols(); ++j) {
    const double zmax = z.col(j).maxCoeff();
    const double lse = zmax + std::log((z.col(j).array() - zmax).exp().sum());
    total += lse - z(p.data().labels[batch[static_cast<std::size_t>(j)]], j);
  }
  return total / static_cast<double>(batch.size());
}

Vector LogisticGrad(const Problem& p, const Vector& w, std::span<const Index> batch) {
  const Matrix x = Gather(p.data().features, batch);
  Matrix g = Softmax(LogisticLogits(p, w, x));
  for (Eigen::Index j = 0; j < g.cols(); ++j) {
    g(p.data().labels[batch[static_cast<std::size_t>(j)]], j) -= 1.0;
  }
  g /= static_cast<double>(batch.size());
  const int k = p.data().num_classes;
  const auto d = x.rows();
  Vector out(static_cast<Eigen::Index>(p.num_params()));
  Eigen::Map<Matrix>(out.data(), k, d) = g * x.transpose();
  out.segment(k * d, k) = g.rowwise().sum();
  return out;
}

Matrix LogisticHessian(const Problem& p, const Vector& w, std::span<const Index> batch) {
  const Matrix x = Gather(p.data().features, batch);
  const Matrix probs = Softmax(LogisticLogits(p, w, x));
  const int k = p.data().num_classes;
  const auto d = x.rows();
  const auto n = static_cast<Eigen::Index>(p.num_params());
  Matrix h = Matrix::Zero(n, n);
  // Parameter index k + K*j covers weights (j < d) and the bias (j == d) alike, so the
  // per-sample Hessian is kron(xt * xt^T, diag(p) - p p^T) with xt = [x; 1].
  Vector xt(d + 1);
  for (Eigen::Index s = 0; s < x.cols(); ++s) {
    xt.head(d) = x.col(s);
    xt(d) = 1.0;
    const Vector pr = probs.col(s);
    Matrix curv = -pr * pr.transpose();
    curv.diagonal() += pr;
    for (Eigen::Index j = 0; j <= d; ++j) {
      for (Eigen::Index jj = 0; jj <= d; ++jj) {
        h.block(k * j, k * jj, k, k) += (xt(j) * xt(jj)) * curv;
      }
    }
  }
  return h / static_cast<double>(batch.size());
}

double MlpLoss(const Problem& p, const Vector& w, std::span<const Index> batch) {
  const Matrix x = Gather(p.data().features, batch);
  const auto v = ViewMlp(p, w);
  Matrix a = v.w1 * x;
  a.colwise() += v.b1;
  a = a.array().tanh().matrix();
  Matrix out = v.w2 * a;
  out.colwise() += v.b2;
  const Matrix r = out - TargetMatrix(p.data(), batch);
  return 0.5 * r.squaredNorm() / static_cast<double>(batch.size());
}

Vector MlpGrad(const Problem& p, const Vector& w, std::span<const Index> batch) {
  const Matrix x = Gather(p.data().features, batch);
  const auto v = ViewMlp(p, w);
  const double scale = 1.0 / static_cast<double>(batch.size());
  Matrix a = v.w1 * x;
  a.colwise() += v.b1;
  a = a.array().tanh().matrix();
  Matrix out = v.w2 * a;
  out.colwise() += v.b2;
  const Matrix r = (out - TargetMatrix(p.data(), batch)) * scale;
  const Matrix da = ((v.w2.transpose() * r).array() * (1.0 - a.array().square())).matrix();

  Vector g(static_cast<Eigen::Index>(p.num_params()));
  const auto& blocks = p.layout().blocks();
  auto mat = [&g](const BlockSpec& b) {
    return Eigen::Map<Matrix>(g.data() + b.offset, b.shape->rows, b.shape->cols);
  };
  auto vec = [&g](const BlockSpec& b) {
    return g.segment(static_cast<Eigen::Index>(b.offset), static_cast<Eigen::Index>(b.size));
  };
  mat(blocks[0]) = da * x.transpose();
  vec(blocks[1]) = da.rowwise().sum();
  mat(blocks[2]) = r * a.transpose();
  vec(blocks[3]) = r.rowwise().sum();
  return g;
}

}  // namespace

void Dataset::Validate() const {
  const auto n = size();
  if (n == 0 || dim() == 0) {
    throw Error("dataset is empty");
  }
  if (is_classification()) {
    if (labels.size() != n) {
      throw Error("dataset label count does not match sample count");
    }
    for (int y : labels) {
      if (y < 0 || y >= num_classes) {
        throw Error("label " + std::to_string(y) + " outside [0, " + std::to_string(num_classes) +
                    ")");
      }
    }
  } else if (static_cast<std::size_t>(targets.size()) != n) {
    throw Error("dataset target count does not match sample count");
  }
  if (!features.allFinite()) {
    throw Error("dataset features are not finite");
  }
}

Dataset Dataset::Subset(std::span<const Index> indices) const {
  Dataset out;
  out.features = Gather(features, indices);
  out.num_classes = num_classes;
  out.ground_truth = ground_truth;
  if (is_classification()) {
    out.labels.reserve(indices.size());
    for (auto i : indices) out.labels.push_back(labels[i]);
  } else {
    out.targets.resize(static_cast<Eigen::Index>(indices.size()));
    for (std::size_t j = 0; j < indices.size(); ++j) {
      out.targets(static_cast<Eigen::Index>(j)) = targets(static_cast<Eigen::Index>(indices[j]));
    }
  }
  return out;
}

std::string ToString(ProblemKind kind) {
  switch (kind) {
    case ProblemKind::kLeastSquares:
      return "least-squares";
    case ProblemKind::kMultinomialLogistic:
      return "multinomial-logistic";
    case ProblemKind::kMlp:
      return "mlp";
  }
  return "unknown";
}

ProblemKind ParseProblemKind(const std::string& name) {
  if (name == "least-squares") return ProblemKind::kLeastSquares;
  if (name == "multinomial-logistic" || name == "logistic") {
    return ProblemKind::kMultinomialLogistic;
  }
  if (name == "mlp") return ProblemKind::kMlp;
  throw Error("unknown problem kind '" + name + "'");
}

Problem::Problem(ProblemKind kind, std::shared_ptr<const Dataset> data, double mu, double lambda)
    : kind_(kind), data_(std::move(data)), mu_(mu), lambda_(lambda) {
  if (!data_) {
    throw Error("problem requires a dataset");
  }
  data_->Validate();
  if (!(mu_ >= 0.0) || !(lambda_ >= 0.0) || lambda_ > mu_) {
    throw Error("ridge weights must satisfy 0 <= lambda <= mu");
  }
}

Problem Problem::LeastSquares(std::shared_ptr<const Dataset> data, double mu, double lambda) {
  Problem p(ProblemKind::kLeastSquares, std::move(data), mu, lambda);
  if (p.data().is_classification()) {
    throw Error("least squares requires real-valued targets");
  }
  p.layout_.AddVector("w", p.data().dim());
  return p;
}

Problem Problem::MultinomialLogistic(std::shared_ptr<const Dataset> data, double mu,
                                     double lambda) {
  Problem p(ProblemKind::kMultinomialLogistic, std::move(data), mu, lambda);
  if (!p.data().is_classification()) {
    throw Error("labels required");
  }
  p.layout_.AddMatrix("weights", p.data().num_classes, static_cast<int>(p.data().dim()));
  p.layout_.AddVector("bias", static_cast<std::size_t>(p.data().num_classes));
  return p;
}

Problem Problem::Mlp(std::shared_ptr<const Dataset> data, int hidden, double mu, double lambda) {
  Problem p(ProblemKind::kMlp, std::move(data), mu, lambda);
  if (hidden < 1) {
    throw Error("mlp hidden width must be positive");
  }
  p.hidden_ = hidden;
  const int outputs = MlpOutputs(p.data());
  p.layout_.AddMatrix("hidden.weights", hidden, static_cast<int>(p.data().dim()));
  p.layout_.AddVector("hidden.bias", static_cast<std::size_t>(hidden));
  p.layout_.AddMatrix("output.weights", outputs, hidden);
  p.layout_.AddVector("output.bias", static_cast<std::size_t>(outputs));
  return p;
}

IndexList Problem::AllIndices() const {
  IndexList all(data_->size());
  std::iota(all.begin(), all.end(), Index{0});
  return all;
}

double EvalLoss(const Problem& problem, const Vector& w, std::span<const Index> batch) {
  CheckBatch(problem.data(), batch);
  problem.layout().CheckSize(w);
  double data_term = 0.0;
  switch (problem.kind()) {
    case ProblemKind::kLeastSquares:
      data_term = LeastSquaresLoss(problem, w, batch);
      break;
    case ProblemKind::kMultinomialLogistic:
      data_term = LogisticLoss(problem, w, batch);
      break;
    case ProblemKind::kMlp:
      data_term = MlpLoss(problem, w, batch);
      break;
  }
  return Finite(data_term + 0.5 * problem.local_ridge() * w.squaredNorm());
}

Vector EvalGrad(const Problem& problem, const Vector& w, std::span<const Index> batch) {
  CheckBatch(problem.data(), batch);
  problem.layout().CheckSize(w);
  Vector g;
  switch (problem.kind()) {
    case ProblemKind::kLeastSquares:
      g = LeastSquaresGrad(problem, w, batch);
      break;
    case ProblemKind::kMultinomialLogistic:
      g = LogisticGrad(problem, w, batch);
      break;
    case ProblemKind::kMlp:
      g = MlpGrad(problem, w, batch);
      break;
  }
  g += problem.local_ridge() * w;
  return Finite(std::move(g));
}

Matrix EvalHessian(const Problem& problem, const Vector& w, std::span<const Index> batch) {
  if (problem.kind() == ProblemKind::kMlp) {
    throw Error("hessian unsupported");
  }
  CheckBatch(problem.data(), batch);
  problem.layout().CheckSize(w);
  Matrix h;
  if (problem.kind() == ProblemKind::kLeastSquares) {
    const Matrix x = Gather(problem.data().features, batch);
    h = x * x.transpose() / static_cast<double>(batch.size());
  } else {
    h = LogisticHessian(problem, w, batch);
  }
  h.diagonal().array() += problem.local_ridge();
  if (!h.allFinite()) {
    throw Error("numerical overflow");
  }
  return h;
}

Vector FiniteDiffGrad(const Problem& problem, const Vector& w, std::span<const Index> batch,
                      double h) {
  if (!(h > 0.0)) {
    throw Error("finite-difference step must be positive");
  }
  Vector g(w.size());
  Vector probe = w;
  for (Eigen::Index j = 0; j < w.size(); ++j) {
    probe(j) = w(j) + h;
    const double up = EvalLoss(problem, probe, batch);
    probe(j) = w(j) - h;
    const double down = EvalLoss(problem, probe, batch);
    probe(j) = w(j);
    g(j) = (up - down) / (2.0 * h);
  }
  return g;
}

double Accuracy(const Problem& problem, const Vector& w, const Dataset& test) {
  if (!test.is_classification()) {
    throw Error("labels required");
  }
  if (test.size() == 0) {
    return 0.0;
  }
  problem.layout().CheckSize(w);
  Matrix scores;
  if (problem.kind() == ProblemKind::kMultinomialLogistic) {
    scores = LogisticLogits(problem, w, test.features);
  } else if (problem.kind() == ProblemKind::kMlp) {
    const auto v = ViewMlp(problem, w);
    Matrix a = v.w1 * test.features;
    a.colwise() += v.b1;
    a = a.array().tanh().matrix();
    scores = v.w2 * a;
    scores.colwise() += v.b2;
  } else {
    throw Error("accuracy requires a classification problem");
  }
  std::size_t hits = 0;
  for (Eigen::Index j = 0; j < scores.cols(); ++j) {
    Eigen::Index best = 0;
    scores.col(j).maxCoeff(&best);
    if (best == test.labels[static_cast<std::size_t>(j)]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(test.size());
}

Vector SolveLeastSquaresExact(const Dataset& data, double mu) {
  data.Validate();
  if (data.is_classification()) {
    throw Error("least squares requires real-valued targets");
  }
  const double n = static_cast<double>(data.size());
  Matrix normal = data.features * data.features.transpose() / n;
  normal.diagonal().array() += mu;
  const Vector rhs = data.features * data.targets / n;
  Eigen::LDLT<Matrix> ldlt(normal);
  if (ldlt.info() != Eigen::Success || !ldlt.isPositive() || ldlt.rcond() < 1e-13) {
    throw Error("singular normal equations");
  }
  Vector w = ldlt.solve(rhs);
  // One step of iterative refinement tightens the stationarity residual.
  w += ldlt.solve(rhs - normal * w);
  return w;
}

Dataset GenLeastSquares(std::uint64_t seed, int dim, int size, double noise, double feature_scale) {
  if (dim < 1 || size < dim) {
    throw Error("least-squares generator requires d >= 1 and n >= d");
  }
  auto rng = MakeStream(seed, {0x4c53});
  std::normal_distribution<double> normal(0.0, 1.0);
  Dataset out;
  out.ground_truth.resize(dim);
  for (int j = 0; j < dim; ++j) out.ground_truth(j) = normal(rng);
  out.features.resize(dim, size);
  for (int s = 0; s < size; ++s) {
    for (int j = 0; j < dim; ++j) out.features(j, s) = feature_scale * normal(rng);
  }
  out.targets = out.features.transpose() * out.ground_truth;
  for (int s = 0; s < size; ++s) out.targets(s) += noise * normal(rng);
  return out;
}

Dataset GenBlobs(std::uint64_t seed, const BlobOptions& o) {
  if (o.classes < 2 || o.dim < 1 || o.per_class < 1) {
    throw Error("blob generator requires classes >= 2, dim >= 1, per_class >= 1");
  }
  auto rng = MakeStream(seed, {0x424c});
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix centers(o.dim, o.classes);
  for (int k = 0; k < o.classes; ++k) {
    for (int j = 0; j < o.dim; ++j) centers(j, k) = o.offset + o.separation * normal(rng);
  }
  Vector scales = Vector::Ones(o.dim);
  if (o.dim > 1) {
    for (int j = 0; j < o.dim; ++j) {
      const double t = static_cast<double>(j) / static_cast<double>(o.dim - 1);
      scales(j) = std::pow(10.0, o.anisotropy * (2.0 * t - 1.0));
    }
  }
  Dataset out;
  out.num_classes = o.classes;
  out.features.resize(o.dim, static_cast<Eigen::Index>(o.classes) * o.per_class);
  out.labels.reserve(static_cast<std::size_t>(o.classes) * static_cast<std::size_t>(o.per_class));
  Eigen::Index col = 0;
  for (int k = 0; k < o.classes; ++k) {
    for (int s = 0; s < o.per_class; ++s, ++col) {
      for (int j = 0; j < o.dim; ++j) {
        out.features(j, col) = centers(j, k) + scales(j) * normal(rng);
      }
      out.labels.push_back(k);
    }
  }
  return out;
}

std::pair<Dataset, Dataset> TrainTestSplit(const Dataset& data, double test_fraction,
                                           std::uint64_t seed) {
  if (!(test_fraction >= 0.0) || test_fraction >= 1.0) {
    throw Error("test fraction must lie in [0, 1)");
  }
  IndexList order(data.size());
  std::iota(order.begin(), order.end(), Index{0});
  auto rng = MakeStream(seed, {0x5350});
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_test =
      static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(data.size())));
  const std::span<const Index> all(order);
  return {data.Subset(all.subspan(n_test)), data.Subset(all.first(n_test))};
}

namespace {

std::uint32_t ReadBigEndian(std::istream& in) {
  std::array<unsigned char, 4> b{};
  in.read(reinterpret_cast<char*>(b.data()), 4);
  if (!in) {
    throw Error("truncated IDX header");
  }
  return (std::uint32_t{b[0]} << 24) | (std::uint32_t{b[1]} << 16) | (std::uint32_t{b[2]} << 8) |
         std::uint32_t{b[3]};
}

}  // namespace

Dataset ReadIdx(const std::filesystem::path& images, const std::filesystem::path& labels,
                std::size_t limit) {
  std::ifstream img(images, std::ios::binary);
  std::ifstream lab(labels, std::ios::binary);
  if (!img) throw Error("cannot open IDX images '" + images.string() + "'");
  if (!lab) throw Error("cannot open IDX labels '" + labels.string() + "'");
  if (ReadBigEndian(img) != 0x00000803u) throw Error("bad IDX image magic");
  if (ReadBigEndian(lab) != 0x00000801u) throw Error("bad IDX label magic");
  std::size_t n = ReadBigEndian(img);
  const std::size_t rows = ReadBigEndian(img);
  const std::size_t cols = ReadBigEndian(img);
  if (ReadBigEndian(lab) != n) throw Error("IDX image and label counts differ");
  if (limit > 0) n = std::min(n, limit);

  const std::size_t pixels = rows * cols;
  Dataset out;
  out.features.resize(static_cast<Eigen::Index>(pixels), static_cast<Eigen::Index>(n));
  out.labels.resize(n);
  std::vector<unsigned char> buf(pixels);
  for (std::size_t s = 0; s < n; ++s) {
    img.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(pixels));
    char y = 0;
    lab.read(&y, 1);
    if (!img || !lab) throw Error("truncated IDX payload");
    for (std::size_t j = 0; j < pixels; ++j) {
      out.features(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(s)) = buf[j] / 255.0;
    }
    out.labels[s] = static_cast<unsigned char>(y);
  }
  out.num_classes = 1 + *std::max_element(out.labels.begin(), out.labels.end());
  out.num_classes = std::max(out.num_classes, 2);
  return out;
}

}  // namespace pisa
