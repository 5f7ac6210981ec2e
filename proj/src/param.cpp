#include "pisa/param.hpp"

#include <utility>

namespace pisa {

void ParamBlock::Validate() const {
  if (!AllFinite(values)) {
    throw Error("parameter block has non-finite entries");
  }
  if (shape && static_cast<Eigen::Index>(shape->rows) * shape->cols != values.size()) {
    throw Error("parameter block shape does not match its size");
  }
}

Eigen::Map<const Matrix> ParamBlock::AsMatrix() const {
  if (!shape) {
    throw Error("parameter block is not matrix-shaped");
  }
  return Eigen::Map<const Matrix>(values.data(), shape->rows, shape->cols);
}

void ParamLayout::AddVector(std::string name, std::size_t size) {
  blocks_.push_back(BlockSpec{std::move(name), total_, size, std::nullopt});
  total_ += size;
}

void ParamLayout::AddMatrix(std::string name, int rows, int cols) {
  const auto size = static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols);
  blocks_.push_back(BlockSpec{std::move(name), total_, size, MatrixShape{rows, cols}});
  total_ += size;
}

std::vector<ParamBlock> ParamLayout::Split(const Vector& flat) const {
  CheckSize(flat);
  std::vector<ParamBlock> out;
  out.reserve(blocks_.size());
  for (const auto& b : blocks_) {
    out.push_back(ParamBlock{
        flat.segment(static_cast<Eigen::Index>(b.offset), static_cast<Eigen::Index>(b.size)),
        b.shape});
  }
  return out;
}

Vector ParamLayout::Join(std::span<const ParamBlock> blocks) const {
  if (blocks.size() != blocks_.size()) {
    throw Error("parameter block count does not match the layout");
  }
  Vector flat(static_cast<Eigen::Index>(total_));
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    const auto& spec = blocks_[i];
    if (static_cast<std::size_t>(blocks[i].values.size()) != spec.size ||
        blocks[i].shape != spec.shape) {
      throw Error("parameter block '" + spec.name + "' does not match the layout");
    }
    flat.segment(static_cast<Eigen::Index>(spec.offset), static_cast<Eigen::Index>(spec.size)) =
        blocks[i].values;
  }
  return flat;
}

void ParamLayout::CheckSize(const Vector& flat) const {
  if (static_cast<std::size_t>(flat.size()) != total_) {
    throw Error("parameter vector has " + std::to_string(flat.size()) + " entries, expected " +
                std::to_string(total_));
  }
}

bool AllFinite(const Vector& v) noexcept { return v.allFinite(); }

}  // namespace pisa
