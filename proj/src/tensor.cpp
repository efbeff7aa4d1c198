#include "flint/tensor.hpp"

#include <sstream>

namespace flint {

Grid Grid::from_shape(std::span<const int> shape) {
  for (int s : shape) {
    if (s <= 0) throw ContractError("grid sizes must be positive");
  }
  if (shape.size() == 2) return make2d(shape[0], shape[1]);
  if (shape.size() == 3) return make3d(shape[0], shape[1], shape[2]);
  throw ContractError("grid shape must have 2 or 3 entries, got " + std::to_string(shape.size()));
}

std::vector<int> Grid::shape() const {
  if (dims == 2) return {height, width};
  return {depth, height, width};
}

std::string Grid::to_string() const {
  std::ostringstream os;
  os << '(';
  if (dims == 3) os << depth << ',';
  os << height << ',' << width << ')';
  return os.str();
}

void require_same_grid(const Grid& a, const Grid& b, const char* what) {
  if (!(a == b)) {
    throw ContractError(std::string(what) + ": grid mismatch " + a.to_string() + " vs " + b.to_string());
  }
}

}  // namespace flint
