// Datasets, differentiable objectives and exact-solution oracles.
//
// Every objective has the form
//
//   F(w; B) = (1/|B|) * sum_{x in B} f(w; x) + ((mu - lambda) / 2) * ||w||^2
//
// where mu is the full ridge weight and lambda (0 <= lambda <= mu) is the share of the
// ridge that the consensus solver keeps on the server side.

#ifndef PISA_PROBLEM_HPP_
#define PISA_PROBLEM_HPP_

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "pisa/param.hpp"

namespace pisa {

//! Column-per-sample storage. Regression datasets fill `targets`; classification datasets
//! fill `labels` and set `num_classes`.
struct Dataset {
  Matrix features;  // dim x size
  Vector targets;
  std::vector<int> labels;
  int num_classes = 0;
  //! Generating parameter for synthetic regression data; empty when unknown.
  Vector ground_truth;

  std::size_t size() const noexcept { return static_cast<std::size_t>(features.cols()); }
  std::size_t dim() const noexcept { return static_cast<std::size_t>(features.rows()); }
  bool is_classification() const noexcept { return num_classes > 0; }

  //! Throws on an empty dataset, mismatched target/label counts or out-of-range labels.
  void Validate() const;

  Dataset Subset(std::span<const Index> indices) const;
};

enum class ProblemKind { kLeastSquares, kMultinomialLogistic, kMlp };

std::string ToString(ProblemKind kind);
ProblemKind ParseProblemKind(const std::string& name);

class Problem {
 public:
  //! Least squares with per-sample loss 0.5 * (<w, a> - b)^2.
  static Problem LeastSquares(std::shared_ptr<const Dataset> data, double mu, double lambda);
  //! Softmax cross-entropy with a (classes x dim) weight matrix and a per-class bias.
  static Problem MultinomialLogistic(std::shared_ptr<const Dataset> data, double mu, double lambda);
  //! One tanh hidden layer and squared loss. Classification data is regressed onto one-hot
  //! targets; regression data onto the scalar target.
  static Problem Mlp(std::shared_ptr<const Dataset> data, int hidden, double mu, double lambda);

  ProblemKind kind() const noexcept { return kind_; }
  const Dataset& data() const noexcept { return *data_; }
  std::shared_ptr<const Dataset> data_ptr() const noexcept { return data_; }
  double mu() const noexcept { return mu_; }
  double lambda() const noexcept { return lambda_; }
  //! Ridge weight carried by every local objective, mu - lambda.
  double local_ridge() const noexcept { return mu_ - lambda_; }
  int hidden() const noexcept { return hidden_; }
  const ParamLayout& layout() const noexcept { return layout_; }
  std::size_t num_params() const noexcept { return layout_.size(); }

  IndexList AllIndices() const;

 private:
  Problem(ProblemKind kind, std::shared_ptr<const Dataset> data, double mu, double lambda);

  ProblemKind kind_;
  std::shared_ptr<const Dataset> data_;
  double mu_;
  double lambda_;
  int hidden_ = 0;
  ParamLayout layout_;
};

double EvalLoss(const Problem& problem, const Vector& w, std::span<const Index> batch);
Vector EvalGrad(const Problem& problem, const Vector& w, std::span<const Index> batch);
//! Exact Hessian; least squares and multinomial logistic only.
Matrix EvalHessian(const Problem& problem, const Vector& w, std::span<const Index> batch);
//! Central differences of EvalLoss with step h; test oracle for EvalGrad.
Vector FiniteDiffGrad(const Problem& problem, const Vector& w, std::span<const Index> batch,
                      double h);

//! Fraction of samples whose predicted class matches the label.
double Accuracy(const Problem& problem, const Vector& w, const Dataset& test);

//! Minimizer of mean 0.5 * (<w, a> - b)^2 + (mu / 2) * ||w||^2 via the normal equations.
Vector SolveLeastSquaresExact(const Dataset& data, double mu);

//! Standard-normal features (scaled by `feature_scale`), targets <w_true, a> + noise * xi.
Dataset GenLeastSquares(std::uint64_t seed, int dim, int size, double noise,
                        double feature_scale = 1.0);

struct BlobOptions {
  int classes = 10;
  int dim = 20;
  int per_class = 300;
  //! Class centers are offset + separation * N(0, I).
  double separation = 1.0;
  double offset = 0.0;
  //! Per-feature noise scales span 10^-anisotropy .. 10^anisotropy; 0 is isotropic.
  double anisotropy = 0.0;
};

Dataset GenBlobs(std::uint64_t seed, const BlobOptions& options);

//! Seeded shuffle, then the first `test_fraction` of samples become the test set.
std::pair<Dataset, Dataset> TrainTestSplit(const Dataset& data, double test_fraction,
                                           std::uint64_t seed);

//! Reads an IDX image file (magic 0x00000803) and label file (magic 0x00000801). Pixels are
//! scaled into [0, 1] and flattened row-major.
Dataset ReadIdx(const std::filesystem::path& images, const std::filesystem::path& labels,
                std::size_t limit = 0);

}  // namespace pisa

#endif  // PISA_PROBLEM_HPP_
