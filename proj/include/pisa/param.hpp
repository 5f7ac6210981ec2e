// Parameter blocks and the flat layout that maps them onto one vector.

#ifndef PISA_PARAM_HPP_
#define PISA_PARAM_HPP_

#include <cstddef>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace pisa {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using Index = std::size_t;
using IndexList = std::vector<Index>;

//! Every recoverable failure in the library surfaces as this exception type.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct MatrixShape {
  int rows = 0;
  int cols = 0;

  friend bool operator==(const MatrixShape&, const MatrixShape&) = default;
};

//! A trainable parameter group. Matrix-shaped blocks are stored column-major, so
//! `values` is the column-wise vectorization of the matrix.
struct ParamBlock {
  Vector values;
  std::optional<MatrixShape> shape;

  //! Throws if an entry is not finite or the shape does not cover `values`.
  void Validate() const;

  Eigen::Map<const Matrix> AsMatrix() const;
};

struct BlockSpec {
  std::string name;
  std::size_t offset = 0;
  std::size_t size = 0;
  std::optional<MatrixShape> shape;
};

//! Ordered list of blocks packed back to back into one flat vector.
class ParamLayout {
 public:
  ParamLayout() = default;

  void AddVector(std::string name, std::size_t size);
  void AddMatrix(std::string name, int rows, int cols);

  std::size_t size() const noexcept { return total_; }
  const std::vector<BlockSpec>& blocks() const noexcept { return blocks_; }

  std::vector<ParamBlock> Split(const Vector& flat) const;
  Vector Join(std::span<const ParamBlock> blocks) const;

  //! Throws unless `flat` has exactly `size()` entries.
  void CheckSize(const Vector& flat) const;

 private:
  std::vector<BlockSpec> blocks_;
  std::size_t total_ = 0;
};

bool AllFinite(const Vector& v) noexcept;

}  // namespace pisa

#endif  // PISA_PARAM_HPP_
