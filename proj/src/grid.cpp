#include "focalseg/grid.hpp"

#include <algorithm>

namespace focalseg {

BinaryMask::BinaryMask(Grid2D<std::uint8_t> grid) : grid_(std::move(grid)) {
  for (auto v : grid_.values())
    if (v > 1) throw Error(ErrorCode::InvalidArgument, "binary mask values must be 0 or 1");
}

std::size_t BinaryMask::count() const noexcept {
  return static_cast<std::size_t>(std::count(grid_.values().begin(), grid_.values().end(), 1));
}

BinaryMask BinaryMask::inverted() const {
  Grid2D<std::uint8_t> g(rows(), cols());
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = grid_[i] ? 0 : 1;
  return BinaryMask(std::move(g));
}

}  // namespace focalseg
