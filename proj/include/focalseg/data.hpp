#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "focalseg/grid.hpp"
#include "focalseg/tensor.hpp"

namespace focalseg {

enum class SplitName { Train, Val, Test, Dev };

std::string_view to_string(SplitName s);
SplitName split_name_from_string(std::string_view s);

struct Sample {
  std::string id;
  Tensor<float> image;  // 3 x H x W
  BinaryMask mask;      // H x W
  /// Fixed partition from a manifest (e.g. the official DRIVE train/test split).
  std::optional<SplitName> assigned;
};

struct Dataset {
  std::string name;
  std::size_t height = 0, width = 0;
  std::vector<Sample> samples;
};

/// Reads root/images/* and root/masks/* paired by file stem. Images are
/// resized bilinearly to height x width; masks nearest-neighbour, nonzero -> 1.
/// Throws MissingPair, UnreadableImage.
Dataset load_dataset(const std::filesystem::path& root, std::size_t height, std::size_t width);

/// JSON manifest: {"name": ..., "pairs": [{"image": p, "mask": p, "split": "train|val|test|dev"}]}
/// Relative paths resolve against the manifest's directory.
Dataset load_manifest(const std::filesystem::path& manifest, std::size_t height, std::size_t width);

struct SplitSpec {
  double dev_fraction = 0.8;
  double train_fraction = 0.8;  // of the development set
  std::uint64_t seed = 0;

  void validate() const;
};

struct SplitSizes {
  std::size_t train = 0, val = 0, test = 0;
  friend bool operator==(const SplitSizes&, const SplitSizes&) = default;
};

/// test = floor(n (1 - dev)), train = floor(dev_n * train_fraction), val = rest.
SplitSizes split_sizes(std::size_t n, const SplitSpec& spec);

struct SplitIndices {
  std::vector<std::size_t> train, val, test;
};

/// Seeded shuffle then partition. Samples with a fixed assignment keep it;
/// samples marked Dev (or unassigned, when a fixed test set exists) are split
/// into train/val only. Throws TooSmall if any part would be empty.
SplitIndices split(const Dataset& dataset, const SplitSpec& spec);

struct DataSplits {
  std::vector<Sample> train, val, test;
};

DataSplits materialize(const Dataset& dataset, const SplitIndices& indices);

enum class NormalizeMode { ZScore, MinMax };

/// Per-image, per-channel standardisation. A constant channel becomes zeros.
Tensor<float> normalize(const Tensor<float>& image, NormalizeMode mode = NormalizeMode::ZScore);
void normalize_dataset(Dataset& dataset, NormalizeMode mode = NormalizeMode::ZScore);

struct AugmentConfig {
  double probability = 0.5;          // per transform
  double max_rotation_deg = 15.0;
  double scale_min = 0.9, scale_max = 1.1;
  double brightness = 0.1;           // multiplicative, +-
  double elastic_max_displacement = 5.0;  // pixels
  double elastic_sigma = 4.0;
};

/// Seeded random subset of mirroring, rotation, scaling, elastic deformation
/// and brightness. Geometric transforms hit image and mask identically; the
/// mask is re-binarised at 0.5 after interpolation.
std::pair<Tensor<float>, BinaryMask> augment(const Tensor<float>& image, const BinaryMask& mask,
                                             std::uint64_t seed, const AugmentConfig& cfg = {});

std::pair<Tensor<float>, BinaryMask> mirror(const Tensor<float>& image, const BinaryMask& mask,
                                            bool horizontal);

/// Soft-edged elliptical blobs on a textured background. The realised
/// foreground fraction is within 0.03 of `fg_fraction`.
Dataset synth_blobs(std::size_t n, std::size_t size, double fg_fraction, std::uint64_t seed);

double foreground_fraction(const BinaryMask& mask);

/// Deterministic 64-bit mix used to derive per-sample seeds.
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);

}  // namespace focalseg
