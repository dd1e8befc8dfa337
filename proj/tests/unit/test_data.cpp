#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include "doctest.h"
#include "focalseg/data.hpp"

using namespace focalseg;
namespace fs = std::filesystem;

namespace {

Dataset numbered(std::size_t n) {
  Dataset ds;
  ds.height = ds.width = 1;
  for (std::size_t i = 0; i < n; ++i)
    ds.samples.push_back({std::to_string(i), Tensor<float>(3, 1, 1), BinaryMask(1, 1), std::nullopt});
  return ds;
}

void check_cover(const SplitIndices& s, std::size_t n) {
  std::set<std::size_t> all;
  for (const auto* part : {&s.train, &s.val, &s.test})
    for (auto i : *part) CHECK(all.insert(i).second);
  CHECK(all.size() == n);
  CHECK(*all.rbegin() == n - 1);
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

void write_pair(const fs::path& root, const std::string& stem, int size) {
  fs::create_directories(root / "images");
  fs::create_directories(root / "masks");
  cv::Mat img(size, size, CV_8UC3, cv::Scalar(10, 20, 30));
  cv::Mat mask(size, size, CV_8U, cv::Scalar(0));
  mask(cv::Rect(0, 0, size / 2, size)).setTo(255);
  cv::imwrite((root / "images" / (stem + ".png")).string(), img);
  cv::imwrite((root / "masks" / (stem + ".png")).string(), mask);
}

}  // namespace

TEST_CASE("split arithmetic reproduces the published partitions") {
  CHECK(split_sizes(670, {}) == SplitSizes{428, 108, 134});
  CHECK(split_sizes(612, {}) == SplitSizes{392, 98, 122});
  for (std::size_t n : {5u, 10u, 37u, 100u, 670u}) {
    const auto s = split(numbered(n), {});
    const auto z = split_sizes(n, {});
    CHECK(s.train.size() == z.train);
    CHECK(s.val.size() == z.val);
    CHECK(s.test.size() == z.test);
    check_cover(s, n);
  }
}

TEST_CASE("split is seeded") {
  const auto ds = numbered(50);
  SplitSpec a, b;
  a.seed = b.seed = 4;
  CHECK(split(ds, a).train == split(ds, b).train);
  b.seed = 5;
  CHECK(split(ds, a).train != split(ds, b).train);
}

TEST_CASE("fixed partition mode") {
  auto ds = numbered(40);
  for (std::size_t i = 0; i < 40; ++i) ds.samples[i].assigned = i < 20 ? SplitName::Dev : SplitName::Test;
  const auto s = split(ds, {});
  CHECK(s.train.size() == 16);
  CHECK(s.val.size() == 4);
  CHECK(s.test.size() == 20);
  for (auto i : s.test) CHECK(i >= 20);
  check_cover(s, 40);
}

TEST_CASE("split preconditions") {
  CHECK_THROWS_AS(split(numbered(2), {}), Error);
  SplitSpec bad;
  bad.dev_fraction = 0.0;
  try {
    split(numbered(10), bad);
    FAIL("expected InvalidFraction");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::InvalidFraction);
  }
  bad = SplitSpec{};
  bad.train_fraction = 1.5;
  CHECK_THROWS_AS(split_sizes(10, bad), Error);
}

TEST_CASE("z-score normalisation") {
  Tensor<float> flat(3, 4, 4, 7.0f);
  const auto zeros = normalize(flat);
  for (float v : zeros.values()) CHECK(v == 0.0f);

  Tensor<float> img(3, 5, 7);
  for (std::size_t i = 0; i < img.size(); ++i) img[i] = static_cast<float>(std::sin(0.37 * i) * 40 + 100);
  const auto n = normalize(img);
  for (std::size_t c = 0; c < 3; ++c) {
    double m = 0, v = 0;
    for (float x : n.channel(c)) m += x;
    m /= n.plane();
    for (float x : n.channel(c)) v += (x - m) * (x - m);
    CHECK(std::abs(m) < 1e-6);
    CHECK(std::sqrt(v / n.plane()) == doctest::Approx(1.0).epsilon(1e-5));
  }
  Tensor<float> affine = img;
  for (auto& x : affine.values()) x = 3.0f * x - 11.0f;
  const auto na = normalize(affine);
  for (std::size_t i = 0; i < n.size(); ++i) CHECK(na[i] == doctest::Approx(n[i]).epsilon(1e-4));

  const auto mm = normalize(img, NormalizeMode::MinMax);
  const auto [lo, hi] = std::minmax_element(mm.values().begin(), mm.values().end());
  CHECK(*lo == 0.0f);
  CHECK(*hi == 1.0f);
}

TEST_CASE("mirroring twice is the identity") {
  Dataset ds = synth_blobs(1, 32, 0.15, 3);
  const auto& s = ds.samples[0];
  for (bool h : {true, false}) {
    auto once = mirror(s.image, s.mask, h);
    CHECK_FALSE(once.second == s.mask);
    auto twice = mirror(once.first, once.second, h);
    CHECK(twice.first == s.image);
    CHECK(twice.second == s.mask);
  }
}

TEST_CASE("augmentation is seeded and keeps masks binary and aligned") {
  Dataset ds = synth_blobs(4, 32, 0.15, 4);
  AugmentConfig cfg;
  cfg.brightness = 0.0;
  cfg.probability = 1.0;
  for (const auto& s : ds.samples) {
    const auto a = augment(s.image, s.mask, 77, cfg);
    const auto b = augment(s.image, s.mask, 77, cfg);
    CHECK(a.first == b.first);
    CHECK(a.second == b.second);
    for (std::size_t i = 0; i < a.second.size(); ++i) CHECK(a.second[i] <= 1);

    // an image channel equal to the mask must end up equal to the mask
    Tensor<float> probe = s.image;
    for (std::size_t i = 0; i < s.mask.size(); ++i) probe[i] = s.mask[i];
    const auto p = augment(probe, s.mask, 123, cfg);
    for (std::size_t i = 0; i < p.second.size(); ++i) CHECK((p.first[i] >= 0.5f) == (p.second[i] == 1));
  }
  const auto c = augment(ds.samples[0].image, ds.samples[0].mask, 78, cfg);
  CHECK_FALSE(c.first == augment(ds.samples[0].image, ds.samples[0].mask, 77, cfg).first);
}

TEST_CASE("synthetic blobs") {
  const Dataset a = synth_blobs(200, 64, 0.12, 1);
  const Dataset b = synth_blobs(200, 64, 0.12, 1);
  REQUIRE(a.samples.size() == 200);
  double total = 0;
  for (std::size_t i = 0; i < a.samples.size(); ++i) {
    const double f = foreground_fraction(a.samples[i].mask);
    CHECK(std::abs(f - 0.12) <= 0.03);
    total += f;
    CHECK(a.samples[i].image == b.samples[i].image);
    CHECK(a.samples[i].mask == b.samples[i].mask);
  }
  CHECK(std::abs(total / 200 - 0.12) <= 0.03);
  CHECK_THROWS_AS(synth_blobs(2, 32, 0.0, 1), Error);
  CHECK_THROWS_AS(synth_blobs(2, 32, 0.5, 1), Error);
}

TEST_CASE("loading paired directories") {
  TempDir tmp("focalseg_data_test");
  write_pair(tmp.path, "a", 20);
  write_pair(tmp.path, "b", 24);
  const auto ds = load_dataset(tmp.path, 16, 16);
  REQUIRE(ds.samples.size() == 2);
  for (const auto& s : ds.samples) {
    CHECK(s.image.channels() == 3);
    CHECK(s.image.height() == 16);
    CHECK(s.mask.rows() == 16);
    CHECK(s.mask.count() == 16 * 8);
    CHECK(s.image(0, 0, 0) == doctest::Approx(30.0 / 255));  // RGB order
  }

  fs::remove(tmp.path / "masks" / "b.png");
  try {
    load_dataset(tmp.path, 16, 16);
    FAIL("expected MissingPair");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::MissingPair);
  }
  {
    std::ofstream(tmp.path / "masks" / "b.png") << "garbage";
  }
  try {
    load_dataset(tmp.path, 16, 16);
    FAIL("expected UnreadableImage");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::UnreadableImage);
  }
}

TEST_CASE("empty dataset directory") {
  TempDir tmp("focalseg_empty_test");
  fs::create_directories(tmp.path / "images");
  fs::create_directories(tmp.path / "masks");
  try {
    load_dataset(tmp.path, 16, 16);
    FAIL("expected MissingPair");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::MissingPair);
  }
}

TEST_CASE("manifest with split assignment") {
  TempDir tmp("focalseg_manifest_test");
  for (int i = 0; i < 6; ++i) write_pair(tmp.path, "s" + std::to_string(i), 16);
  std::ofstream(tmp.path / "m.json") << R"({"name": "tiny", "pairs": [
    {"image": "images/s0.png", "mask": "masks/s0.png", "split": "dev"},
    {"image": "images/s1.png", "mask": "masks/s1.png", "split": "dev"},
    {"image": "images/s2.png", "mask": "masks/s2.png", "split": "dev"},
    {"image": "images/s3.png", "mask": "masks/s3.png", "split": "dev"},
    {"image": "images/s4.png", "mask": "masks/s4.png", "split": "test"},
    {"image": "images/s5.png", "mask": "masks/s5.png", "split": "test"}]})";
  const auto ds = load_manifest(tmp.path / "m.json", 16, 16);
  CHECK(ds.name == "tiny");
  const auto s = split(ds, {});
  CHECK(s.train.size() == 3);
  CHECK(s.val.size() == 1);
  CHECK(s.test == std::vector<std::size_t>{4, 5});
}
