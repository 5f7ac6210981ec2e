// Preconditioning matrices Q for the local step
//
//   w_i = w - (sigma * I + rho * Q)^{-1} * u
//
// Q is either diagonal (identity, second moment, Newton-Schulz) or dense (Hessian). Every Q
// handed to the local step satisfies eta * I >= Q >= 0, except the Newton-Schulz kind, whose
// effective diagonal is |pi + o| and is left unclipped.

#ifndef PISA_PRECONDITIONER_HPP_
#define PISA_PRECONDITIONER_HPP_

#include <span>
#include <string>
#include <variant>

#include "pisa/problem.hpp"

namespace pisa {

struct DiagonalQ {
  Vector diag;
};

struct DenseQ {
  Matrix mat;
};

using Preconditioner = std::variant<DiagonalQ, DenseQ>;

Preconditioner QIdentity(std::size_t size);

//! Symmetrizes H and clamps its spectrum into [0, eta].
Preconditioner QHessian(const Matrix& hessian, double eta);

std::size_t Dimension(const Preconditioner& q);
Matrix ToDense(const Preconditioner& q);
Vector ApplyQ(const Preconditioner& q, const Vector& x);

//! True when every eigenvalue of Q lies in [-tol, eta + tol].
bool SatisfiesSpectralBound(const Preconditioner& q, double eta, double tol = 1e-10);

//! (sigma * I + rho * Q)^{-1} * rhs. Diagonal Q takes the elementwise path; dense Q is solved by
//! Cholesky factorization.
Vector SolveShifted(const Preconditioner& q, double sigma, double rho, const Vector& rhs);

//! Always factorizes the dense matrix sigma * I + rho * Q, whatever the storage of Q.
Vector SolveShiftedDense(const Matrix& q, double sigma, double rho, const Vector& rhs);

enum class MomentScheme { kI, kII, kIII };

std::string ToString(MomentScheme scheme);
MomentScheme ParseMomentScheme(const std::string& name);

//! Running second moment of u = pi + g.
//!   I:   m~ += u*u
//!   II:  m~ = beta*m~ + (1-beta)*u*u
//!   III: n = beta*n + (1-beta)*u*u, m~ = n / (1 - beta^t) at update t = 1, 2, ...
struct MomentState {
  MomentScheme scheme = MomentScheme::kIII;
  double beta = 0.999;
  Vector m_tilde;
  Vector n_acc;
  long updates = 0;

  static MomentState Zero(MomentScheme scheme, double beta, std::size_t size);
};

const Vector& MomentUpdate(MomentState& state, const Vector& u);

//! Elementwise min(m~, eta^2).
Vector ClipMoment(const Vector& m_tilde, double eta);

//! (pi + g) / (sigma + rho * sqrt(m)), elementwise.
Vector SisaLocalStep(const Vector& pi, const Vector& g, const Vector& m, double sigma, double rho);

enum class NsMode { kQuintic, kCubic };

std::string ToString(NsMode mode);
NsMode ParseNsMode(const std::string& name);

//! Approximate orthogonal polar factor U V^T of b.
//!   cubic:   X <- 1.5 X - 0.5 X X^T X
//!   quintic: X <- a X + (b A + c A^2) X, A = X X^T, (a, b, c) = (3.4445, -4.7750, 2.0315)
//! Both start from b / (||b||_F + 1e-12).
Matrix NewtonSchulz(const Matrix& b, NsMode mode, int iters);

struct NsisaStep {
  Vector step;
  //! 1 where (pi + o) is zero (|x| <= zero_tol), else 0.
  Vector indicator;
};

//! (pi + o + eps_pow * v) / (sigma + rho * sqrt(m)), elementwise.
NsisaStep NsisaLocalStep(const Vector& pi, const Vector& o, double eps_pow, const Vector& m,
                         double sigma, double rho, double zero_tol = 0.0);

//! Diagonal p for which the generic solve with Q = Diag(p) and u = pi + g reproduces the NSISA
//! step. Entries may be negative or infinite.
Vector NsisaEquivalentDiagonal(const Vector& pi, const Vector& g, const Vector& o, double eps_pow,
                               const Vector& m, double sigma, double rho, double zero_tol = 0.0);

enum class PreconditionerKind { kIdentity, kHessian, kMoment, kNewtonSchulz };

std::string ToString(PreconditionerKind kind);
PreconditionerKind ParsePreconditionerKind(const std::string& name);

struct PreconditionerConfig {
  PreconditionerKind kind = PreconditionerKind::kMoment;
  double eta = 1e3;
  MomentScheme scheme = MomentScheme::kIII;
  double beta = 0.999;
  double ns_momentum = 0.9;  // mu_i in b <- mu_i * b + g
  double ns_eps = 0.5;       // eps_i, raised to the step index
  NsMode ns_mode = NsMode::kQuintic;
  int ns_iters = 5;
  double zero_tol = 0.0;

  //! Throws naming the offending field.
  void Validate() const;
};

//! The right-hand side u and the matrix Q of one local step.
struct LocalDirection {
  Vector numerator;
  Preconditioner q;
};

//! Per-client preconditioner buffers.
class PreconditionerState {
 public:
  PreconditionerState(PreconditionerConfig config, const ParamLayout& layout);

  const PreconditionerConfig& config() const noexcept { return config_; }
  const MomentState& moment() const noexcept { return moment_; }
  const Vector& momentum() const noexcept { return momentum_; }

  //! Builds the local direction at step index `step` (the l + 1 of the update being formed).
  //! `w_new` and `batch` are only read by the Hessian kind.
  LocalDirection Prepare(const Problem& problem, const Vector& w_new, std::span<const Index> batch,
                         const Vector& pi, const Vector& g, long step);

 private:
  PreconditionerConfig config_;
  const ParamLayout* layout_;
  MomentState moment_;
  Vector momentum_;
};

}  // namespace pisa

#endif  // PISA_PRECONDITIONER_HPP_
