#include "pisa/preconditioner.hpp"

#include <cmath>

namespace pisa {
namespace {

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

constexpr double kQuinticA = 3.4445;
constexpr double kQuinticB = -4.7750;
constexpr double kQuinticC = 2.0315;

}  // namespace

Preconditioner QIdentity(std::size_t size) {
  return DiagonalQ{Vector::Ones(static_cast<Eigen::Index>(size))};
}

Preconditioner QHessian(const Matrix& hessian, double eta) {
  if (hessian.rows() != hessian.cols()) {
    throw Error("hessian must be square");
  }
  const Matrix sym = 0.5 * (hessian + hessian.transpose());
  Eigen::SelfAdjointEigenSolver<Matrix> eig(sym);
  if (eig.info() != Eigen::Success) {
    throw Error("eigendecomposition failed");
  }
  const Vector clamped = eig.eigenvalues().cwiseMax(0.0).cwiseMin(eta);
  const Matrix& v = eig.eigenvectors();
  Matrix q = v * clamped.asDiagonal() * v.transpose();
  return DenseQ{0.5 * (q + q.transpose())};
}

std::size_t Dimension(const Preconditioner& q) {
  return std::visit(Overloaded{[](const DiagonalQ& d) { return std::size_t(d.diag.size()); },
                               [](const DenseQ& d) { return std::size_t(d.mat.rows()); }},
                    q);
}

Matrix ToDense(const Preconditioner& q) {
  return std::visit(Overloaded{[](const DiagonalQ& d) -> Matrix { return d.diag.asDiagonal(); },
                               [](const DenseQ& d) -> Matrix { return d.mat; }},
                    q);
}

Vector ApplyQ(const Preconditioner& q, const Vector& x) {
  return std::visit(
      Overloaded{[&x](const DiagonalQ& d) -> Vector { return d.diag.cwiseProduct(x); },
                 [&x](const DenseQ& d) -> Vector { return d.mat * x; }},
      q);
}

bool SatisfiesSpectralBound(const Preconditioner& q, double eta, double tol) {
  return std::visit(Overloaded{[&](const DiagonalQ& d) {
                                 return d.diag.allFinite() && d.diag.minCoeff() >= -tol &&
                                        d.diag.maxCoeff() <= eta + tol;
                               },
                               [&](const DenseQ& d) {
                                 Eigen::SelfAdjointEigenSolver<Matrix> eig(d.mat,
                                                                           Eigen::EigenvaluesOnly);
                                 if (eig.info() != Eigen::Success) return false;
                                 return eig.eigenvalues().minCoeff() >= -tol &&
                                        eig.eigenvalues().maxCoeff() <= eta + tol;
                               }},
                    q);
}

Vector SolveShifted(const Preconditioner& q, double sigma, double rho, const Vector& rhs) {
  return std::visit(Overloaded{[&](const DiagonalQ& d) -> Vector {
                                 const Vector denom = (sigma + rho * d.diag.array()).matrix();
                                 if (!(denom.minCoeff() > 0.0)) {
                                   throw Error("local solve failed");
                                 }
                                 return rhs.cwiseQuotient(denom);
                               },
                               [&](const DenseQ& d) -> Vector {
                                 return SolveShiftedDense(d.mat, sigma, rho, rhs);
                               }},
                    q);
}

Vector SolveShiftedDense(const Matrix& q, double sigma, double rho, const Vector& rhs) {
  Matrix system = rho * q;
  system.diagonal().array() += sigma;
  Eigen::LLT<Matrix> llt(system);
  if (llt.info() != Eigen::Success) {
    throw Error("local solve failed");
  }
  return llt.solve(rhs);
}

std::string ToString(MomentScheme scheme) {
  switch (scheme) {
    case MomentScheme::kI:
      return "I";
    case MomentScheme::kII:
      return "II";
    case MomentScheme::kIII:
      return "III";
  }
  return "?";
}

MomentScheme ParseMomentScheme(const std::string& name) {
  if (name == "I" || name == "1") return MomentScheme::kI;
  if (name == "II" || name == "2") return MomentScheme::kII;
  if (name == "III" || name == "3") return MomentScheme::kIII;
  throw Error("unknown moment scheme '" + name + "'");
}

MomentState MomentState::Zero(MomentScheme scheme, double beta, std::size_t size) {
  const auto n = static_cast<Eigen::Index>(size);
  return MomentState{scheme, beta, Vector::Zero(n), Vector::Zero(n), 0};
}

const Vector& MomentUpdate(MomentState& s, const Vector& u) {
  const Vector sq = u.cwiseProduct(u);
  ++s.updates;
  switch (s.scheme) {
    case MomentScheme::kI:
      s.m_tilde += sq;
      break;
    case MomentScheme::kII:
      s.m_tilde = s.beta * s.m_tilde + (1.0 - s.beta) * sq;
      break;
    case MomentScheme::kIII:
      s.n_acc = s.beta * s.n_acc + (1.0 - s.beta) * sq;
      s.m_tilde = s.n_acc / (1.0 - std::pow(s.beta, static_cast<double>(s.updates)));
      break;
  }
  return s.m_tilde;
}

Vector ClipMoment(const Vector& m_tilde, double eta) { return m_tilde.cwiseMin(eta * eta); }

Vector SisaLocalStep(const Vector& pi, const Vector& g, const Vector& m, double sigma, double rho) {
  return (pi + g).array() / (sigma + rho * m.array().sqrt());
}

std::string ToString(NsMode mode) { return mode == NsMode::kCubic ? "cubic" : "quintic"; }

NsMode ParseNsMode(const std::string& name) {
  if (name == "cubic") return NsMode::kCubic;
  if (name == "quintic") return NsMode::kQuintic;
  throw Error("unknown Newton-Schulz mode '" + name + "'");
}

Matrix NewtonSchulz(const Matrix& b, NsMode mode, int iters) {
  const double norm = b.norm();
  if (norm == 0.0) {
    throw Error("zero momentum");
  }
  if (iters < 0) {
    throw Error("Newton-Schulz iteration count must be nonnegative");
  }
  // Work on the wide orientation so X X^T is the smaller Gram matrix.
  const bool tall = b.rows() > b.cols();
  Matrix x = tall ? Matrix(b.transpose()) : b;
  x /= norm + 1e-12;
  for (int k = 0; k < iters; ++k) {
    const Matrix gram = x * x.transpose();
    if (mode == NsMode::kCubic) {
      x = 1.5 * x - 0.5 * gram * x;
    } else {
      const Matrix poly = kQuinticB * gram + kQuinticC * gram * gram;
      x = kQuinticA * x + poly * x;
    }
  }
  return tall ? Matrix(x.transpose()) : x;
}

NsisaStep NsisaLocalStep(const Vector& pi, const Vector& o, double eps_pow, const Vector& m,
                         double sigma, double rho, double zero_tol) {
  const Vector s = pi + o;
  Vector v(s.size());
  for (Eigen::Index k = 0; k < s.size(); ++k) {
    v(k) = (zero_tol == 0.0 ? s(k) == 0.0 : std::abs(s(k)) <= zero_tol) ? 1.0 : 0.0;
  }
  Vector step = (s + eps_pow * v).array() / (sigma + rho * m.array().sqrt());
  return NsisaStep{std::move(step), std::move(v)};
}

Vector NsisaEquivalentDiagonal(const Vector& pi, const Vector& g, const Vector& o, double eps_pow,
                               const Vector& m, double sigma, double rho, double zero_tol) {
  const auto ns = NsisaLocalStep(pi, o, eps_pow, m, sigma, rho, zero_tol);
  const Vector numer = pi + o + eps_pow * ns.indicator;
  const Vector denom = (sigma + rho * m.array().sqrt()).matrix();
  return (denom.array() * (pi + g).array() / (rho * numer.array()) - sigma / rho).matrix();
}

std::string ToString(PreconditionerKind kind) {
  switch (kind) {
    case PreconditionerKind::kIdentity:
      return "identity";
    case PreconditionerKind::kHessian:
      return "hessian";
    case PreconditionerKind::kMoment:
      return "moment";
    case PreconditionerKind::kNewtonSchulz:
      return "newton-schulz";
  }
  return "?";
}

PreconditionerKind ParsePreconditionerKind(const std::string& name) {
  if (name == "identity") return PreconditionerKind::kIdentity;
  if (name == "hessian") return PreconditionerKind::kHessian;
  if (name == "moment") return PreconditionerKind::kMoment;
  if (name == "newton-schulz") return PreconditionerKind::kNewtonSchulz;
  throw Error("unknown preconditioner '" + name + "'");
}

void PreconditionerConfig::Validate() const {
  if (!(eta > 0.0)) throw Error("eta must be positive");
  if (kind == PreconditionerKind::kIdentity && eta < 1.0) {
    throw Error("eta must be at least 1 for the identity preconditioner");
  }
  if (!(beta > 0.0 && beta < 1.0)) throw Error("beta must lie in (0, 1)");
  if (!(ns_momentum > 0.0)) throw Error("ns_momentum must be positive");
  if (!(ns_eps > 0.0 && ns_eps < 1.0)) throw Error("ns_eps must lie in (0, 1)");
  if (ns_iters < 0) throw Error("ns_iters must be nonnegative");
  if (!(zero_tol >= 0.0)) throw Error("zero_tol must be nonnegative");
}

PreconditionerState::PreconditionerState(PreconditionerConfig config, const ParamLayout& layout)
    : config_(config),
      layout_(&layout),
      moment_(MomentState::Zero(config.scheme, config.beta, layout.size())),
      momentum_(Vector::Zero(static_cast<Eigen::Index>(layout.size()))) {
  config_.Validate();
}

LocalDirection PreconditionerState::Prepare(const Problem& problem, const Vector& w_new,
                                            std::span<const Index> batch, const Vector& pi,
                                            const Vector& g, long step) {
  switch (config_.kind) {
    case PreconditionerKind::kIdentity:
      return {pi + g, QIdentity(layout_->size())};
    case PreconditionerKind::kHessian:
      return {pi + g, QHessian(EvalHessian(problem, w_new, batch), config_.eta)};
    case PreconditionerKind::kMoment: {
      const Vector u = pi + g;
      const Vector& mt = MomentUpdate(moment_, u);
      return {u, DiagonalQ{ClipMoment(mt, config_.eta).cwiseSqrt()}};
    }
    case PreconditionerKind::kNewtonSchulz:
      break;
  }

  // Newton-Schulz: matrix blocks use the orthogonalized momentum, vector blocks fall back to
  // the clipped second moment.
  const Vector u = pi + g;
  const Vector fallback = ClipMoment(MomentUpdate(moment_, u), config_.eta).cwiseSqrt();
  momentum_ = config_.ns_momentum * momentum_ + g;
  const double eps_pow = std::pow(config_.ns_eps, static_cast<double>(step));

  Vector numerator = u;
  Vector diag = fallback;
  for (const auto& block : layout_->blocks()) {
    if (!block.shape) continue;
    const auto off = static_cast<Eigen::Index>(block.offset);
    const auto len = static_cast<Eigen::Index>(block.size);
    const Eigen::Map<const Matrix> b(momentum_.data() + off, block.shape->rows, block.shape->cols);
    Vector o = Vector::Zero(len);
    // A block whose momentum is still exactly zero has no polar factor; it contributes o = 0.
    if (b.norm() > 0.0) {
      const Matrix ortho = NewtonSchulz(b, config_.ns_mode, config_.ns_iters);
      o = Eigen::Map<const Vector>(ortho.data(), len);
    }
    const Vector pi_block = pi.segment(off, len);
    const Vector s = pi_block + o;
    const Vector m = s.cwiseProduct(s);
    const auto ns = NsisaLocalStep(pi_block, o, eps_pow, m, 1.0, 1.0, config_.zero_tol);
    numerator.segment(off, len) = s + eps_pow * ns.indicator;
    diag.segment(off, len) = m.cwiseSqrt();
  }
  return {std::move(numerator), DiagonalQ{std::move(diag)}};
}

}  // namespace pisa
