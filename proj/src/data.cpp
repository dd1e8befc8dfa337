#include "focalseg/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <random>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "json.hpp"

namespace focalseg {

namespace fs = std::filesystem;

std::string_view to_string(SplitName s) {
  switch (s) {
    case SplitName::Train: return "train";
    case SplitName::Val: return "val";
    case SplitName::Test: return "test";
    case SplitName::Dev: return "dev";
  }
  return "?";
}

SplitName split_name_from_string(std::string_view s) {
  if (s == "train") return SplitName::Train;
  if (s == "val") return SplitName::Val;
  if (s == "test") return SplitName::Test;
  if (s == "dev") return SplitName::Dev;
  throw Error(ErrorCode::ConfigError, "unknown split '" + std::string(s) + "'");
}

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  // splitmix64 finaliser over a combined word
  std::uint64_t z = a * 0x9E3779B97F4A7C15ULL + b + 0x632BE59BD9B4E019ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

namespace {

Tensor<float> tensor_from_bgr(const cv::Mat& bgr, std::size_t h, std::size_t w) {
  cv::Mat resized;
  cv::resize(bgr, resized, cv::Size(static_cast<int>(w), static_cast<int>(h)), 0, 0,
             cv::INTER_LINEAR);
  cv::Mat f;
  resized.convertTo(f, CV_32F, 1.0 / 255.0);
  Tensor<float> t(3, h, w);
  for (std::size_t y = 0; y < h; ++y) {
    const auto* row = f.ptr<cv::Vec3f>(static_cast<int>(y));
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < 3; ++c) t(c, y, x) = row[x][2 - c];  // BGR -> RGB
  }
  return t;
}

Sample read_pair(const fs::path& image_path, const fs::path& mask_path, std::size_t h,
                 std::size_t w) {
  cv::Mat img = cv::imread(image_path.string(), cv::IMREAD_COLOR);
  if (img.empty()) throw Error(ErrorCode::UnreadableImage, image_path.string());
  cv::Mat m = cv::imread(mask_path.string(), cv::IMREAD_GRAYSCALE);
  if (m.empty()) throw Error(ErrorCode::UnreadableImage, mask_path.string());

  Sample s;
  s.id = image_path.stem().string();
  s.image = tensor_from_bgr(img, h, w);
  cv::Mat mr;
  cv::resize(m, mr, cv::Size(static_cast<int>(w), static_cast<int>(h)), 0, 0, cv::INTER_NEAREST);
  Grid2D<std::uint8_t> g(h, w);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      g(y, x) = mr.at<std::uint8_t>(static_cast<int>(y), static_cast<int>(x)) ? 1 : 0;
  s.mask = BinaryMask(std::move(g));
  return s;
}

void check_dims(std::size_t h, std::size_t w) {
  if (h == 0 || w == 0) throw Error(ErrorCode::InvalidArgument, "image size must be positive");
}

std::map<std::string, fs::path> files_by_stem(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw Error(ErrorCode::MissingPair, "missing directory " + dir.string());
  std::map<std::string, fs::path> out;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file()) out.emplace(e.path().stem().string(), e.path());
  return out;
}

}  // namespace

Dataset load_dataset(const fs::path& root, std::size_t height, std::size_t width) {
  check_dims(height, width);
  auto images = files_by_stem(root / "images");
  auto masks = files_by_stem(root / "masks");
  if (images.empty() && masks.empty())
    throw Error(ErrorCode::MissingPair, "no image/mask pairs under " + root.string());
  for (const auto& [stem, p] : masks)
    if (!images.count(stem)) throw Error(ErrorCode::MissingPair, "mask without image: " + p.string());

  Dataset ds;
  ds.name = root.filename().string();
  ds.height = height;
  ds.width = width;
  for (const auto& [stem, p] : images) {
    auto it = masks.find(stem);
    if (it == masks.end()) throw Error(ErrorCode::MissingPair, "image without mask: " + p.string());
    ds.samples.push_back(read_pair(p, it->second, height, width));
  }
  return ds;
}

Dataset load_manifest(const fs::path& manifest, std::size_t height, std::size_t width) {
  check_dims(height, width);
  std::ifstream in(manifest);
  if (!in) throw Error(ErrorCode::IoError, "cannot open manifest " + manifest.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ConfigError, manifest.string() + ": " + e.what());
  }
  const fs::path base = manifest.parent_path();
  Dataset ds;
  ds.name = j.value("name", manifest.stem().string());
  ds.height = height;
  ds.width = width;
  if (!j.contains("pairs") || !j["pairs"].is_array())
    throw Error(ErrorCode::ConfigError, "manifest needs a 'pairs' array");
  for (const auto& p : j["pairs"]) {
    if (!p.contains("image") || !p.contains("mask"))
      throw Error(ErrorCode::MissingPair, "manifest entry lacks image or mask");
    fs::path ip = p["image"].get<std::string>(), mp = p["mask"].get<std::string>();
    if (ip.is_relative()) ip = base / ip;
    if (mp.is_relative()) mp = base / mp;
    Sample s = read_pair(ip, mp, height, width);
    if (p.contains("id")) s.id = p["id"].get<std::string>();
    if (p.contains("split")) s.assigned = split_name_from_string(p["split"].get<std::string>());
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

void SplitSpec::validate() const {
  auto ok = [](double f) { return std::isfinite(f) && f > 0.0 && f <= 1.0; };
  if (!ok(dev_fraction) || !ok(train_fraction))
    throw Error(ErrorCode::InvalidFraction, "split fractions must lie in (0, 1]");
}

SplitSizes split_sizes(std::size_t n, const SplitSpec& spec) {
  spec.validate();
  const double nd = static_cast<double>(n);
  SplitSizes s;
  s.test = static_cast<std::size_t>(std::floor(nd * (1.0 - spec.dev_fraction) + 1e-9));
  const std::size_t dev = n - s.test;
  s.train = static_cast<std::size_t>(std::floor(static_cast<double>(dev) * spec.train_fraction + 1e-9));
  s.val = dev - s.train;
  return s;
}

SplitIndices split(const Dataset& dataset, const SplitSpec& spec) {
  spec.validate();
  const std::size_t n = dataset.samples.size();
  std::mt19937_64 rng(spec.seed);
  SplitIndices out;
  const bool fixed = std::any_of(dataset.samples.begin(), dataset.samples.end(),
                                 [](const Sample& s) { return s.assigned.has_value(); });
  if (!fixed) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    std::shuffle(idx.begin(), idx.end(), rng);
    const SplitSizes sz = split_sizes(n, spec);
    out.train.assign(idx.begin(), idx.begin() + sz.train);
    out.val.assign(idx.begin() + sz.train, idx.begin() + sz.train + sz.val);
    out.test.assign(idx.begin() + sz.train + sz.val, idx.end());
  } else {
    std::vector<std::size_t> pool;
    for (std::size_t i = 0; i < n; ++i) {
      const auto& a = dataset.samples[i].assigned;
      if (!a || *a == SplitName::Dev) pool.push_back(i);
      else if (*a == SplitName::Train) out.train.push_back(i);
      else if (*a == SplitName::Val) out.val.push_back(i);
      else out.test.push_back(i);
    }
    std::shuffle(pool.begin(), pool.end(), rng);
    const auto n_train = static_cast<std::size_t>(
        std::floor(static_cast<double>(pool.size()) * spec.train_fraction + 1e-9));
    out.train.insert(out.train.end(), pool.begin(), pool.begin() + n_train);
    out.val.insert(out.val.end(), pool.begin() + n_train, pool.end());
  }
  if (out.train.empty() || out.val.empty() || out.test.empty())
    throw Error(ErrorCode::TooSmall, std::to_string(n) + " samples give an empty partition (" +
                                         std::to_string(out.train.size()) + "/" +
                                         std::to_string(out.val.size()) + "/" +
                                         std::to_string(out.test.size()) + ")");
  return out;
}

DataSplits materialize(const Dataset& dataset, const SplitIndices& indices) {
  DataSplits d;
  auto take = [&](const std::vector<std::size_t>& ix, std::vector<Sample>& to) {
    to.reserve(ix.size());
    for (auto i : ix) to.push_back(dataset.samples.at(i));
  };
  take(indices.train, d.train);
  take(indices.val, d.val);
  take(indices.test, d.test);
  return d;
}

Tensor<float> normalize(const Tensor<float>& image, NormalizeMode mode) {
  Tensor<float> out(image.channels(), image.height(), image.width());
  for (std::size_t c = 0; c < image.channels(); ++c) {
    auto src = image.channel(c);
    auto dst = out.channel(c);
    if (src.empty()) continue;
    if (mode == NormalizeMode::ZScore) {
      double mean = 0.0;
      for (float v : src) mean += v;
      mean /= static_cast<double>(src.size());
      double var = 0.0;
      for (float v : src) var += (v - mean) * (v - mean);
      const double sd = std::sqrt(var / static_cast<double>(src.size()));
      for (std::size_t i = 0; i < src.size(); ++i)
        dst[i] = sd > 1e-12 ? static_cast<float>((src[i] - mean) / sd) : 0.0f;
    } else {
      const auto [lo, hi] = std::minmax_element(src.begin(), src.end());
      const double range = static_cast<double>(*hi) - *lo;
      for (std::size_t i = 0; i < src.size(); ++i)
        dst[i] = range > 1e-12 ? static_cast<float>((src[i] - *lo) / range) : 0.0f;
    }
  }
  return out;
}

void normalize_dataset(Dataset& dataset, NormalizeMode mode) {
  for (auto& s : dataset.samples) s.image = normalize(s.image, mode);
}

namespace {

cv::Mat plane_to_mat(const Tensor<float>& t, std::size_t c) {
  cv::Mat m(static_cast<int>(t.height()), static_cast<int>(t.width()), CV_32F);
  std::copy_n(t.channel(c).data(), t.plane(), m.ptr<float>());
  return m;
}

void mat_to_plane(const cv::Mat& m, Tensor<float>& t, std::size_t c) {
  std::copy_n(m.ptr<float>(), t.plane(), t.channel(c).data());
}

cv::Mat mask_to_mat(const BinaryMask& mask) {
  cv::Mat m(static_cast<int>(mask.rows()), static_cast<int>(mask.cols()), CV_32F);
  for (std::size_t i = 0; i < mask.size(); ++i) m.ptr<float>()[i] = mask[i];
  return m;
}

BinaryMask mat_to_mask(const cv::Mat& m) {
  Grid2D<std::uint8_t> g(static_cast<std::size_t>(m.rows), static_cast<std::size_t>(m.cols));
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = m.ptr<float>()[i] >= 0.5f ? 1 : 0;
  return BinaryMask(std::move(g));
}

template <typename F>
void for_all_planes(std::vector<cv::Mat>& planes, cv::Mat& mask, F&& f) {
  for (auto& p : planes) p = f(p, cv::INTER_LINEAR);
  mask = f(mask, cv::INTER_LINEAR);
}

}  // namespace

std::pair<Tensor<float>, BinaryMask> mirror(const Tensor<float>& image, const BinaryMask& mask,
                                            bool horizontal) {
  if (image.height() != mask.rows() || image.width() != mask.cols())
    throw Error(ErrorCode::ShapeMismatch, "image and mask differ in size");
  const std::size_t h = image.height(), w = image.width();
  Tensor<float> img(image.channels(), h, w);
  BinaryMask m(h, w);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const std::size_t sy = horizontal ? y : h - 1 - y;
      const std::size_t sx = horizontal ? w - 1 - x : x;
      for (std::size_t c = 0; c < image.channels(); ++c) img(c, y, x) = image(c, sy, sx);
      m.set(y, x, mask(sy, sx) != 0);
    }
  return {std::move(img), std::move(m)};
}

std::pair<Tensor<float>, BinaryMask> augment(const Tensor<float>& image, const BinaryMask& mask,
                                             std::uint64_t seed, const AugmentConfig& cfg) {
  if (image.height() != mask.rows() || image.width() != mask.cols())
    throw Error(ErrorCode::ShapeMismatch, "image and mask differ in size");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  auto coin = [&] { return u01(rng) < cfg.probability; };
  auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * u01(rng); };

  auto [img, m] = coin() ? mirror(image, mask, true) : std::pair{image, mask};
  if (coin()) std::tie(img, m) = mirror(img, m, false);

  const int h = static_cast<int>(img.height()), w = static_cast<int>(img.width());
  std::vector<cv::Mat> planes;
  for (std::size_t c = 0; c < img.channels(); ++c) planes.push_back(plane_to_mat(img, c));
  cv::Mat mm = mask_to_mat(m);

  const bool rotate = coin(), scale = coin();
  if (rotate || scale) {
    const double angle = rotate ? uniform(-cfg.max_rotation_deg, cfg.max_rotation_deg) : 0.0;
    const double s = scale ? uniform(cfg.scale_min, cfg.scale_max) : 1.0;
    const cv::Mat A = cv::getRotationMatrix2D(cv::Point2f((w - 1) / 2.0f, (h - 1) / 2.0f), angle, s);
    for_all_planes(planes, mm, [&](const cv::Mat& src, int interp) {
      cv::Mat dst;
      cv::warpAffine(src, dst, A, src.size(), interp, cv::BORDER_REFLECT_101);
      return dst;
    });
  }

  if (coin() && cfg.elastic_max_displacement > 0.0) {
    cv::Mat dx(h, w, CV_32F), dy(h, w, CV_32F);
    for (int i = 0; i < h * w; ++i) {
      dx.ptr<float>()[i] = static_cast<float>(uniform(-1.0, 1.0));
      dy.ptr<float>()[i] = static_cast<float>(uniform(-1.0, 1.0));
    }
    cv::GaussianBlur(dx, dx, cv::Size(0, 0), cfg.elastic_sigma);
    cv::GaussianBlur(dy, dy, cv::Size(0, 0), cfg.elastic_sigma);
    double lo, hi, peak = 0.0;
    for (const cv::Mat* d : {&dx, &dy}) {
      cv::minMaxLoc(*d, &lo, &hi);
      peak = std::max({peak, std::abs(lo), std::abs(hi)});
    }
    const double k = peak > 0.0 ? cfg.elastic_max_displacement / peak : 0.0;
    cv::Mat mapx(h, w, CV_32F), mapy(h, w, CV_32F);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        mapx.at<float>(y, x) = static_cast<float>(x + k * dx.at<float>(y, x));
        mapy.at<float>(y, x) = static_cast<float>(y + k * dy.at<float>(y, x));
      }
    for_all_planes(planes, mm, [&](const cv::Mat& src, int interp) {
      cv::Mat dst;
      cv::remap(src, dst, mapx, mapy, interp, cv::BORDER_REFLECT_101);
      return dst;
    });
  }

  if (coin()) {
    const double b = 1.0 + uniform(-cfg.brightness, cfg.brightness);
    for (auto& p : planes) p *= b;
  }

  for (std::size_t c = 0; c < planes.size(); ++c) mat_to_plane(planes[c], img, c);
  return {std::move(img), mat_to_mask(mm)};
}

double foreground_fraction(const BinaryMask& mask) {
  return mask.size() ? static_cast<double>(mask.count()) / static_cast<double>(mask.size()) : 0.0;
}

namespace {

struct Ellipse {
  double cx, cy, a, b, theta;
};

// Smallest normalised radius over all ellipses at (x, y); < 1 means inside.
double blob_radius(const std::vector<Ellipse>& es, double scale, double x, double y) {
  double r = 1e9;
  for (const auto& e : es) {
    const double dx = x - e.cx, dy = y - e.cy;
    const double c = std::cos(e.theta), s = std::sin(e.theta);
    const double u = (c * dx + s * dy) / (e.a * scale), v = (-s * dx + c * dy) / (e.b * scale);
    r = std::min(r, std::sqrt(u * u + v * v));
  }
  return r;
}

}  // namespace

Dataset synth_blobs(std::size_t n, std::size_t size, double fg_fraction, std::uint64_t seed) {
  if (size < 4) throw Error(ErrorCode::InvalidArgument, "synthetic images need size >= 4");
  if (!(fg_fraction > 0.0 && fg_fraction < 0.5))
    throw Error(ErrorCode::InvalidFraction, "foreground fraction must lie in (0, 0.5)");

  Dataset ds;
  ds.name = "synth_blobs";
  ds.height = ds.width = size;
  const double sz = static_cast<double>(size);
  const std::size_t target = static_cast<std::size_t>(std::lround(fg_fraction * sz * sz));

  for (std::size_t k = 0; k < n; ++k) {
    std::mt19937_64 rng(mix_seed(seed, k));
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::normal_distribution<double> gauss(0.0, 1.0);

    std::vector<Ellipse> es(1 + rng() % 3);
    for (auto& e : es)
      e = {sz * (0.2 + 0.6 * u(rng)), sz * (0.2 + 0.6 * u(rng)), 0.5 + u(rng), 0.5 + u(rng),
           3.14159265358979 * u(rng)};

    auto count_at = [&](double scale) {
      std::size_t c = 0;
      for (std::size_t y = 0; y < size; ++y)
        for (std::size_t x = 0; x < size; ++x)
          c += blob_radius(es, scale, static_cast<double>(x), static_cast<double>(y)) < 1.0;
      return c;
    };
    double lo = 0.0, hi = sz;
    for (int it = 0; it < 40; ++it) {
      const double mid = 0.5 * (lo + hi);
      (count_at(mid) < target ? lo : hi) = mid;
    }
    const double scale = hi;

    cv::Mat texture(static_cast<int>(size), static_cast<int>(size), CV_32F);
    for (int i = 0; i < texture.rows * texture.cols; ++i)
      texture.ptr<float>()[i] = static_cast<float>(gauss(rng));
    cv::GaussianBlur(texture, texture, cv::Size(0, 0), sz / 16.0);
    double tmin, tmax;
    cv::minMaxLoc(texture, &tmin, &tmax);
    const double tspan = std::max(tmax - tmin, 1e-9);

    const double fg_tint[3] = {0.45 + 0.1 * u(rng), 0.3 + 0.1 * u(rng), 0.35 + 0.1 * u(rng)};
    Sample s;
    s.id = "blob_" + std::to_string(k);
    s.image = Tensor<float>(3, size, size);
    s.mask = BinaryMask(size, size);
    for (std::size_t y = 0; y < size; ++y)
      for (std::size_t x = 0; x < size; ++x) {
        const double r = blob_radius(es, scale, static_cast<double>(x), static_cast<double>(y));
        s.mask.set(y, x, r < 1.0);
        const double soft = std::clamp((1.15 - r) / 0.3, 0.0, 1.0);
        const double bg =
            0.25 + 0.3 * (texture.at<float>(static_cast<int>(y), static_cast<int>(x)) - tmin) / tspan;
        for (std::size_t c = 0; c < 3; ++c)
          s.image(c, y, x) =
              static_cast<float>(std::clamp(bg + fg_tint[c] * soft + 0.05 * gauss(rng), 0.0, 1.0));
      }
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

}  // namespace focalseg
