#include "dta/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>

namespace dta {

ConfusionCounts confusion(std::span<const int32_t> pred, std::span<const int32_t> gt,
                          int32_t positive) {
  if (pred.size() != gt.size())
    throw std::invalid_argument("confusion: mask sizes differ");
  ConfusionCounts c;
  for (size_t i = 0; i < pred.size(); ++i) {
    bool p = pred[i] == positive;
    bool g = gt[i] == positive;
    if (p && g) c.tp++;
    else if (p && !g) c.fp++;
    else if (!p && g) c.fn++;
    else c.tn++;
  }
  return c;
}

double f1_percent(const ConfusionCounts& c) {
  int64_t den = 2 * c.tp + c.fp + c.fn;
  return den == 0 ? 0.0 : 100.0 * 2.0 * static_cast<double>(c.tp) / static_cast<double>(den);
}

double iou_percent(const ConfusionCounts& c) {
  int64_t den = c.tp + c.fp + c.fn;
  return den == 0 ? 0.0 : 100.0 * static_cast<double>(c.tp) / static_cast<double>(den);
}

double dice_macro_percent(const std::vector<ConfusionCounts>& per_image) {
  if (per_image.empty()) return 0.0;
  double s = 0;
  for (const auto& c : per_image) {
    int64_t den = 2 * c.tp + c.fp + c.fn;
    // empty-vs-empty counts as a perfect match
    s += den == 0 ? 100.0 : 100.0 * 2.0 * static_cast<double>(c.tp) / static_cast<double>(den);
  }
  return s / static_cast<double>(per_image.size());
}

namespace {

std::vector<std::pair<int32_t, int32_t>> foreground(std::span<const int32_t> mask, int64_t h,
                                                    int64_t w, int32_t positive) {
  std::vector<std::pair<int32_t, int32_t>> pts;
  for (int64_t r = 0; r < h; ++r)
    for (int64_t c = 0; c < w; ++c)
      if (mask[static_cast<size_t>(r * w + c)] == positive)
        pts.emplace_back(static_cast<int32_t>(r), static_cast<int32_t>(c));
  return pts;
}

void directed_nn_distances(const std::vector<std::pair<int32_t, int32_t>>& from,
                           const std::vector<std::pair<int32_t, int32_t>>& to,
                           std::vector<double>& out) {
  for (const auto& a : from) {
    int64_t best = INT64_MAX;
    for (const auto& b : to) {
      int64_t dr = a.first - b.first;
      int64_t dc = a.second - b.second;
      int64_t d2 = dr * dr + dc * dc;
      if (d2 < best) best = d2;
    }
    out.push_back(std::sqrt(static_cast<double>(best)));
  }
}

}  // namespace

Hd95 hd95(std::span<const int32_t> gt, std::span<const int32_t> pred, int64_t h, int64_t w,
          int32_t positive) {
  auto g = foreground(gt, h, w, positive);
  auto m = foreground(pred, h, w, positive);
  if (g.empty() && m.empty()) return {true, 0.0};
  if (g.empty() || m.empty()) return {false, 0.0};
  std::vector<double> d;
  d.reserve(g.size() + m.size());
  directed_nn_distances(g, m, d);
  directed_nn_distances(m, g, d);
  std::sort(d.begin(), d.end());
  double pos = 0.95 * static_cast<double>(d.size() - 1);
  size_t lo = static_cast<size_t>(pos);
  double frac = pos - static_cast<double>(lo);
  double v = lo + 1 < d.size() ? d[lo] * (1.0 - frac) + d[lo + 1] * frac : d[lo];
  return {true, v};
}

std::string MetricsReport::to_text() const {
  std::vector<std::pair<std::string, std::string>> lines;
  char buf[64];
  for (const auto& [k, v] : values) {
    std::snprintf(buf, sizeof buf, "%.9g", v);
    lines.emplace_back(k, buf);
  }
  for (const auto& [k, v] : counts) {
    std::snprintf(buf, sizeof buf, "%lld", static_cast<long long>(v));
    lines.emplace_back(k, buf);
  }
  std::sort(lines.begin(), lines.end());
  std::string out;
  for (const auto& [k, v] : lines) {
    out += k;
    out += '=';
    out += v;
    out += '\n';
  }
  return out;
}

}  // namespace dta
