#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <random>

#include <doctest.h>

#include "pisa/rng.hpp"
#include "test_util.hpp"

using namespace pisa;
using pisa::testing::Classification;
using pisa::testing::Range;
using pisa::testing::Regression;
using pisa::testing::Vec;

namespace {

double RelErr(const Vector& a, const Vector& b) {
  return (a - b).norm() / std::max({a.norm(), b.norm(), 1e-12});
}

Problem OneSample(double a, double b, double mu, double lambda) {
  return Problem::LeastSquares(Regression(Matrix::Constant(1, 1, a), Vec({b})), mu, lambda);
}

}  // namespace

TEST_CASE("least-squares loss by hand") {
  const IndexList one{0};
  SUBCASE("zero parameters give the mean of half squared targets") {
    const auto p = Problem::LeastSquares(Regression(Matrix::Random(2, 3), Vec({1, -2, 3})), 0, 0);
    const IndexList batch{0, 2};
    CHECK(EvalLoss(p, Vector::Zero(2), batch) == doctest::Approx((0.5 + 4.5) / 2));
  }
  SUBCASE("exact fit") { CHECK(EvalLoss(OneSample(2, 1, 0, 0), Vec({0.5}), one) == 0.0); }
  SUBCASE("ridge term") {
    CHECK(EvalLoss(OneSample(2, 1, 0.2, 0), Vec({1}), one) == doctest::Approx(0.6));
  }
}

TEST_CASE("least-squares gradient and hessian by hand") {
  const IndexList one{0};
  CHECK(EvalGrad(OneSample(2, 1, 0, 0), Vec({1}), one)(0) == doctest::Approx(2.0));
  CHECK(EvalGrad(OneSample(2, 1, 0.3, 0.3), Vec({0.5}), one).norm() == 0.0);
  CHECK(EvalHessian(OneSample(2, 1, 0, 0), Vec({0}), one)(0, 0) == doctest::Approx(4.0));

  const auto ridge =
      Problem::LeastSquares(Regression(Matrix::Zero(3, 4), Vector::Zero(4)), 0.7, 0.2);
  CHECK(EvalHessian(ridge, Vector::Zero(3), Range(4)).isApprox(0.5 * Matrix::Identity(3, 3)));
}

TEST_CASE("analytic gradients match central differences") {
  std::mt19937_64 rng(11);
  std::normal_distribution<double> normal;
  auto randn = [&](Eigen::Index r, Eigen::Index c) {
    Matrix m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = normal(rng);
    return m;
  };
  std::vector<int> labels{0, 1, 2, 0, 1, 2, 1, 0};
  const auto cls = Classification(randn(4, 8), labels, 3);
  const auto reg = Regression(randn(3, 8), randn(8, 1).col(0));
  const std::vector<Problem> problems{
      Problem::LeastSquares(reg, 0.1, 0.05), Problem::MultinomialLogistic(cls, 0.01, 0.0),
      Problem::Mlp(cls, 5, 0.01, 0.0), Problem::Mlp(reg, 4, 0.0, 0.0)};
  const IndexList batch{1, 3, 4, 6};
  for (const auto& p : problems) {
    CAPTURE(ToString(p.kind()));
    const Vector w = 0.5 * randn(static_cast<Eigen::Index>(p.num_params()), 1).col(0);
    CHECK(RelErr(EvalGrad(p, w, batch), FiniteDiffGrad(p, w, batch, 1e-5)) <= 1e-6);
  }

  const auto ls3 = Problem::LeastSquares(Regression(randn(3, 6), randn(6, 1).col(0)), 0, 0);
  const Vector w3 = randn(3, 1).col(0);
  CHECK(RelErr(EvalGrad(ls3, w3, Range(6)), FiniteDiffGrad(ls3, w3, Range(6), 1e-5)) <= 1e-8);
}

TEST_CASE("logistic hessian matches differences of the gradient") {
  Matrix x(2, 4);
  x << 1, -1, 0.5, -0.5, 2, -2, -1, 1;
  const auto p = Problem::MultinomialLogistic(Classification(x, {0, 1, 0, 1}, 2), 0.0, 0.0);
  const auto batch = Range(4);
  const Vector w = Vector::Zero(static_cast<Eigen::Index>(p.num_params()));
  const Matrix h = EvalHessian(p, w, batch);
  Matrix fd(h.rows(), h.cols());
  const double step = 1e-5;
  for (Eigen::Index j = 0; j < w.size(); ++j) {
    Vector up = w, down = w;
    up(j) += step;
    down(j) -= step;
    fd.col(j) = (EvalGrad(p, up, batch) - EvalGrad(p, down, batch)) / (2 * step);
  }
  CHECK((h - fd).norm() / h.norm() <= 1e-5);
}

TEST_CASE("non-finite parameters propagate as an error") {
  Vector w = Vec({std::numeric_limits<double>::infinity()});
  CHECK_THROWS_AS(EvalLoss(OneSample(1, 1, 0, 0), w, IndexList{0}), Error);
  CHECK_THROWS_AS(FiniteDiffGrad(OneSample(1, 1, 0, 0), w, IndexList{0}, 1e-5), Error);
}

TEST_CASE("exact least-squares solve") {
  CHECK(SolveLeastSquaresExact(*Regression(Matrix::Constant(1, 1, 1), Vec({3})), 0)(0) ==
        doctest::Approx(3.0));
  CHECK(SolveLeastSquaresExact(*Regression(Matrix::Constant(1, 1, 2), Vec({2})), 2)(0) ==
        doctest::Approx(2.0 / 3.0));

  const auto data = std::make_shared<Dataset>(GenLeastSquares(5, 10, 200, 0.3));
  const auto p = Problem::LeastSquares(data, 0.0, 0.0);
  const Vector w = SolveLeastSquaresExact(*data, 0.0);
  CHECK(EvalGrad(p, w, p.AllIndices()).norm() <= 1e-8);

  const auto clean = GenLeastSquares(6, 8, 50, 0.0);
  CHECK((SolveLeastSquaresExact(clean, 0.0) - clean.ground_truth).norm() <= 1e-8);
}

TEST_CASE("generators are deterministic and fast") {
  const auto t0 = std::chrono::steady_clock::now();
  const auto a = GenLeastSquares(3, 100, 3200, 0.1);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  CHECK(secs < 1.0);
  const auto b = GenLeastSquares(3, 100, 3200, 0.1);
  CHECK(a.features == b.features);
  CHECK(a.targets == b.targets);
  CHECK(GenLeastSquares(3, 100, 3200, 0.1, 2.0).features == 2.0 * a.features);

  BlobOptions o;
  o.classes = 4;
  o.dim = 3;
  o.per_class = 5;
  const auto blobs = GenBlobs(9, o);
  CHECK(blobs.size() == 20);
  CHECK(blobs.num_classes == 4);
  CHECK(GenBlobs(9, o).features == blobs.features);
  CHECK_NOTHROW(blobs.Validate());

  const auto [train, test] = TrainTestSplit(blobs, 0.25, 1);
  CHECK(train.size() == 15);
  CHECK(test.size() == 5);
}

TEST_CASE("accuracy counts argmax hits") {
  Matrix x(1, 3);
  x << 1, -1, 2;
  const auto data = Classification(x, {1, 0, 0}, 2);
  const auto p = Problem::MultinomialLogistic(data, 0, 0);
  // Scores: class 0 gets -x, class 1 gets +x, so positive features predict class 1.
  const Vector w = Vec({-1, 1, 0, 0});
  CHECK(Accuracy(p, w, *data) == doctest::Approx(2.0 / 3.0));
}

TEST_CASE("IDX reader") {
  const auto dir = std::filesystem::temp_directory_path() / "pisa_idx_test";
  std::filesystem::create_directories(dir);
  auto be = [](std::ofstream& f, std::uint32_t v) {
    const char b[4] = {char(v >> 24), char(v >> 16), char(v >> 8), char(v)};
    f.write(b, 4);
  };
  {
    std::ofstream img(dir / "img", std::ios::binary), lab(dir / "lab", std::ios::binary);
    be(img, 0x803);
    be(img, 3);
    be(img, 2);
    be(img, 2);
    be(lab, 0x801);
    be(lab, 3);
    for (int s = 0; s < 3; ++s) {
      for (int j = 0; j < 4; ++j) img.put(static_cast<char>(s * 60 + j));
      lab.put(static_cast<char>(s == 1 ? 4 : 0));
    }
  }
  const auto d = ReadIdx(dir / "img", dir / "lab");
  CHECK(d.size() == 3);
  CHECK(d.dim() == 4);
  CHECK(d.num_classes == 5);
  CHECK(d.labels[1] == 4);
  CHECK(d.features(3, 2) == doctest::Approx(123.0 / 255.0));
  CHECK(ReadIdx(dir / "img", dir / "lab", 2).size() == 2);
  CHECK_THROWS_AS(ReadIdx(dir / "lab", dir / "img"), Error);
  std::filesystem::remove_all(dir);
}
