#include "focalseg/distance_maps.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace focalseg {
namespace {

constexpr double kUnreached = std::numeric_limits<double>::infinity();

// Lower envelope of parabolas (q - p)^2 + f[p] over the finite entries of f.
// `f` and `out` are strided views into the same-length line.
void envelope_1d(const double* f, std::size_t stride, std::size_t n, double* out,
                 std::vector<std::size_t>& v, std::vector<double>& z) {
  v.resize(n);
  z.resize(n + 1);
  std::ptrdiff_t k = -1;
  for (std::size_t q = 0; q < n; ++q) {
    const double fq = f[q * stride];
    if (fq == kUnreached) continue;
    const auto qd = static_cast<double>(q);
    while (true) {
      if (k < 0) {
        k = 0;
        v[0] = q;
        z[0] = -kUnreached;
        z[1] = kUnreached;
        break;
      }
      const std::size_t p = v[static_cast<std::size_t>(k)];
      const auto pd = static_cast<double>(p);
      const double s = ((fq + qd * qd) - (f[p * stride] + pd * pd)) / (2.0 * qd - 2.0 * pd);
      if (s <= z[static_cast<std::size_t>(k)]) {
        --k;
        continue;
      }
      ++k;
      v[static_cast<std::size_t>(k)] = q;
      z[static_cast<std::size_t>(k)] = s;
      z[static_cast<std::size_t>(k) + 1] = kUnreached;
      break;
    }
  }
  if (k < 0) {
    for (std::size_t q = 0; q < n; ++q) out[q * stride] = kUnreached;
    return;
  }
  std::size_t j = 0;
  std::vector<double> line(n);
  for (std::size_t q = 0; q < n; ++q) {
    while (z[j + 1] < static_cast<double>(q)) ++j;
    const double dq = static_cast<double>(q) - static_cast<double>(v[j]);
    line[q] = dq * dq + f[v[j] * stride];
  }
  for (std::size_t q = 0; q < n; ++q) out[q * stride] = line[q];
}

}  // namespace

BinaryMask boundary_pixels(const BinaryMask& mask) {
  const std::size_t rows = mask.rows(), cols = mask.cols();
  BinaryMask out(rows, cols);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) {
      if (!mask(r, c)) continue;
      const bool edge = (r > 0 && !mask(r - 1, c)) || (r + 1 < rows && !mask(r + 1, c)) ||
                        (c > 0 && !mask(r, c - 1)) || (c + 1 < cols && !mask(r, c + 1));
      out.set(r, c, edge);
    }
  return out;
}

Grid2D<double> squared_distance_transform(const BinaryMask& mask) {
  const std::size_t rows = mask.rows(), cols = mask.cols();
  const std::size_t fg = mask.count();
  if (fg == 0 || fg == mask.size())
    throw Error(ErrorCode::NoBoundary, "mask has no foreground/background boundary");

  const BinaryMask boundary = boundary_pixels(mask);
  Grid2D<double> d(rows, cols, kUnreached);
  for (std::size_t i = 0; i < d.size(); ++i)
    if (boundary[i]) d[i] = 0.0;

  double* data = d.values().data();
  const auto ncols = static_cast<std::ptrdiff_t>(cols);
  const auto nrows = static_cast<std::ptrdiff_t>(rows);
#pragma omp parallel
  {
    std::vector<std::size_t> v;
    std::vector<double> z;
#pragma omp for schedule(static)
    for (std::ptrdiff_t c = 0; c < ncols; ++c)
      envelope_1d(data + c, cols, rows, data + c, v, z);
#pragma omp for schedule(static)
    for (std::ptrdiff_t r = 0; r < nrows; ++r)
      envelope_1d(data + r * ncols, 1, cols, data + r * ncols, v, z);
  }
  return d;
}

DistanceMap distance_transform(const BinaryMask& mask) {
  Grid2D<double> d = squared_distance_transform(mask);
  for (auto& v : d.values()) v = std::sqrt(v);
  return DistanceMap{std::move(d)};
}

WeightMap distance_penalty(const DistanceMap& dtm) {
  double d_max = 0.0;
  for (double v : dtm.grid.values()) {
    if (!std::isfinite(v) || v < 0.0)
      throw Error(ErrorCode::NonFiniteInput, "distance map must be finite and non-negative");
    d_max = std::max(d_max, v);
  }
  WeightMap out{Grid2D<double>(dtm.grid.rows(), dtm.grid.cols(), 2.0), WeightKind::DPT, 1.0};
  if (d_max == 0.0) {
    warn("DegenerateMap: every pixel lies on the boundary; using uniform penalty 2");
    return out;
  }
  for (std::size_t i = 0; i < out.grid.size(); ++i)
    out.grid[i] = 1.0 + (1.0 - dtm.grid[i] / d_max);
  return out;
}

WeightMap focal_distance_penalty(const WeightMap& dpt, double epsilon) {
  if (!std::isfinite(epsilon) || epsilon < 0.0)
    throw Error(ErrorCode::InvalidEpsilon, "epsilon must be finite and >= 0");
  if (dpt.kind != WeightKind::DPT)
    throw Error(ErrorCode::InvalidArgument, "focal_distance_penalty expects a DPT map");
  WeightMap out{dpt.grid, WeightKind::FDPT, epsilon};
  if (epsilon == 1.0) return out;
  if (epsilon == 0.0) {
    for (auto& v : out.grid.values()) v = 1.0;
    return out;
  }
  for (auto& v : out.grid.values()) v = std::pow(v, epsilon);
  return out;
}

std::vector<WeightMap> class_weight_maps(std::span<const BinaryMask> class_masks, double epsilon) {
  std::vector<WeightMap> maps;
  maps.reserve(class_masks.size());
  for (const auto& mask : class_masks) {
    const std::size_t n = mask.count();
    if (n == 0 || n == mask.size()) {
      if (!std::isfinite(epsilon) || epsilon < 0.0)
        throw Error(ErrorCode::InvalidEpsilon, "epsilon must be finite and >= 0");
      maps.push_back({Grid2D<double>(mask.rows(), mask.cols(), 1.0), WeightKind::FDPT, epsilon});
      continue;
    }
    maps.push_back(focal_distance_penalty(distance_penalty(distance_transform(mask)), epsilon));
  }
  return maps;
}

Grid2D<std::uint8_t> normalized_intensity(const Grid2D<double>& values) {
  Grid2D<std::uint8_t> out(values.rows(), values.cols(), 0);
  if (values.empty()) return out;
  const auto [lo_it, hi_it] = std::minmax_element(values.values().begin(), values.values().end());
  const double lo = *lo_it, hi = *hi_it;
  if (!std::isfinite(lo) || !std::isfinite(hi))
    throw Error(ErrorCode::NonFiniteInput, "heatmap values must be finite");
  if (hi == lo) return out;
  for (std::size_t i = 0; i < values.size(); ++i)
    out[i] = static_cast<std::uint8_t>(std::lround(255.0 * (values[i] - lo) / (hi - lo)));
  return out;
}

}  // namespace focalseg
