#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "focalseg/grid.hpp"

namespace focalseg {

/// Unsigned Euclidean distance (in pixels) to the nearest class boundary.
struct DistanceMap {
  Grid2D<double> grid;
};

enum class WeightKind { DPT, FDPT };

/// Boundary-proximity weights for one class.
struct WeightMap {
  Grid2D<double> grid;
  WeightKind kind = WeightKind::DPT;
  double epsilon = 1.0;  // meaningful for FDPT only
};

/// Foreground pixels that have a 4-neighbour in the background.
BinaryMask boundary_pixels(const BinaryMask& mask);

/// Squared distances to the nearest boundary pixel. Values are exact integers.
/// Throws NoBoundary when the mask is all-0 or all-1.
Grid2D<double> squared_distance_transform(const BinaryMask& mask);

DistanceMap distance_transform(const BinaryMask& mask);

/// W = 1 + (1 - d / d_max), in [1, 2]. A map with d_max = 0 yields uniform 2
/// and a warning.
WeightMap distance_penalty(const DistanceMap& dtm);

/// Elementwise W^epsilon of a DPT map.
WeightMap focal_distance_penalty(const WeightMap& dpt, double epsilon);

/// One FDPT map per class mask. A class without a boundary in this image
/// (absent, or covering every pixel) gets uniform weight 1.
std::vector<WeightMap> class_weight_maps(std::span<const BinaryMask> class_masks, double epsilon);

/// Per-image min-max normalisation to 0..255. A constant map becomes all zeros.
Grid2D<std::uint8_t> normalized_intensity(const Grid2D<double>& values);

/// Writes a colour-mapped 8-bit PNG of `map`. Throws IoError.
void render_heatmap(const WeightMap& map, const std::filesystem::path& path);

}  // namespace focalseg
