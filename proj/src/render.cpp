#include <algorithm>
#include <cstdio>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "focalseg/distance_maps.hpp"
#include "focalseg/selection.hpp"

namespace focalseg {

namespace {

void write_png(const cv::Mat& img, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  if (!cv::imwrite(path.string(), img)) throw Error(ErrorCode::IoError, "cannot write " + path.string());
}

}  // namespace

void render_heatmap(const WeightMap& map, const std::filesystem::path& path) {
  const auto g = normalized_intensity(map.grid);
  cv::Mat gray(static_cast<int>(g.rows()), static_cast<int>(g.cols()), CV_8U);
  std::copy(g.values().begin(), g.values().end(), gray.ptr<std::uint8_t>());
  cv::Mat color;
  cv::applyColorMap(gray, color, cv::COLORMAP_JET);
  write_png(color, path);
}

void plot_trace(const FocalTrace& trace, double threshold, const std::filesystem::path& png) {
  constexpr int W = 640, H = 400, L = 60, R = 20, T = 30, B = 50;
  cv::Mat img(H, W, CV_8UC3, cv::Scalar(255, 255, 255));

  double lo = std::min(0.0, threshold), hi = std::max(1.0, threshold);
  for (const auto& [e, v] : trace.values) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  const double pad = 0.05 * (hi - lo);
  lo -= pad;
  hi += pad;
  const int last = trace.values.empty() ? 1 : std::max(1, trace.values.back().first);
  auto px = [&](double epoch) { return L + static_cast<int>((W - L - R) * epoch / last); };
  auto py = [&](double v) { return H - B - static_cast<int>((H - T - B) * (v - lo) / (hi - lo)); };

  const cv::Scalar black(0, 0, 0), grey(200, 200, 200);
  cv::line(img, {L, H - B}, {W - R, H - B}, black);
  cv::line(img, {L, T}, {L, H - B}, black);
  char buf[32];
  for (int k = 0; k <= 4; ++k) {
    const double v = lo + (hi - lo) * k / 4.0;
    cv::line(img, {L, py(v)}, {W - R, py(v)}, grey);
    std::snprintf(buf, sizeof buf, "%.2f", v);
    cv::putText(img, buf, {5, py(v) + 4}, cv::FONT_HERSHEY_SIMPLEX, 0.4, black);
  }
  std::snprintf(buf, sizeof buf, "%d", last);
  cv::putText(img, buf, {W - R - 20, H - B + 18}, cv::FONT_HERSHEY_SIMPLEX, 0.4, black);
  cv::putText(img, "epoch", {W / 2 - 20, H - 12}, cv::FONT_HERSHEY_SIMPLEX, 0.5, black);

  const int ty = py(threshold);
  for (int x = L; x < W - R; x += 12) cv::line(img, {x, ty}, {std::min(x + 6, W - R), ty}, {0, 0, 220}, 1);

  std::vector<cv::Point> pts;
  for (const auto& [e, v] : trace.values) pts.emplace_back(px(e), py(v));
  if (pts.size() == 1) cv::circle(img, pts[0], 2, {180, 80, 0}, cv::FILLED);
  if (pts.size() > 1) cv::polylines(img, pts, false, {180, 80, 0}, 2, cv::LINE_AA);

  std::snprintf(buf, sizeof buf, "final %.3f", trace.final_weight);
  cv::putText(img, trace.placement.label() + "  " + buf, {L + 10, T - 8},
              cv::FONT_HERSHEY_SIMPLEX, 0.55, black, 1, cv::LINE_AA);
  write_png(img, png);
}

}  // namespace focalseg
