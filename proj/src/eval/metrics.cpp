#include <cmath>
#include <numeric>

#include "ps2/error.hpp"
#include "ps2/eval.hpp"

namespace ps2::eval {

Metrics::Metrics(std::size_t num_classes) : classes_(num_classes), confusion_(num_classes * num_classes, 0) {}

std::uint64_t Metrics::total() const {
  return std::accumulate(confusion_.begin(), confusion_.end(), std::uint64_t{0});
}

double Metrics::overall_accuracy() const {
  const auto n = total();
  if (n == 0) return 0.0;
  std::uint64_t hits = 0;
  for (std::size_t c = 0; c < classes_; ++c) hits += count(c, c);
  return static_cast<double>(hits) / static_cast<double>(n);
}

std::optional<double> Metrics::class_iou(std::size_t c) const {
  if (c >= classes_) throw IndexError("class " + std::to_string(c) + " out of range");
  std::uint64_t row = 0, col = 0;
  for (std::size_t j = 0; j < classes_; ++j) {
    row += count(c, j);
    col += count(j, c);
  }
  const std::uint64_t tp = count(c, c);
  const std::uint64_t uni = row + col - tp;
  if (uni == 0) return std::nullopt;
  return static_cast<double>(tp) / static_cast<double>(uni);
}

double Metrics::mean_iou() const {
  double sum = 0;
  std::size_t present = 0;
  for (std::size_t c = 0; c < classes_; ++c) {
    if (auto iou = class_iou(c)) {
      sum += *iou;
      ++present;
    }
  }
  return present ? sum / static_cast<double>(present) : 0.0;
}

void Metrics::add(std::span<const std::uint32_t> pred, std::span<const std::uint32_t> gt) {
  if (pred.size() != gt.size()) {
    throw DimensionError("accumulate: " + std::to_string(pred.size()) + " predictions for " +
                         std::to_string(gt.size()) + " labels");
  }
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (pred[i] >= classes_ || gt[i] >= classes_) {
      throw DataError("accumulate: label out of range at position " + std::to_string(i) + " (L=" +
                      std::to_string(classes_) + ")");
    }
  }
  for (std::size_t i = 0; i < pred.size(); ++i) ++confusion_[gt[i] * classes_ + pred[i]];
}

void Metrics::add_count(std::size_t gt, std::size_t pred, std::uint64_t n) {
  if (gt >= classes_ || pred >= classes_) throw DataError("confusion cell out of range");
  confusion_[gt * classes_ + pred] += n;
}

Metrics& accumulate(Metrics& metrics, std::span<const std::uint32_t> pred, std::span<const std::uint32_t> gt) {
  metrics.add(pred, gt);
  return metrics;
}

std::vector<Rgb> default_palette(std::size_t n) {
  static const Rgb base[] = {{0.90, 0.10, 0.10}, {0.10, 0.35, 0.90}, {0.15, 0.70, 0.20}, {0.95, 0.75, 0.10},
                             {0.60, 0.20, 0.80}, {0.10, 0.80, 0.80}, {0.95, 0.45, 0.05}, {0.55, 0.35, 0.15},
                             {0.95, 0.50, 0.75}, {0.45, 0.45, 0.45}, {0.60, 0.80, 0.10}, {0.05, 0.15, 0.40}};
  std::vector<Rgb> out;
  for (std::size_t i = 0; i < n; ++i) {
    if (i < std::size(base)) {
      out.push_back(base[i]);
      continue;
    }
    // golden-angle hue walk at fixed saturation and value
    const double h = std::fmod(0.13 + 0.618033988749895 * static_cast<double>(i), 1.0) * 6.0;
    const double f = h - std::floor(h);
    const double v = 0.85, p = 0.25, q = v - (v - p) * f, t = p + (v - p) * f;
    switch (static_cast<int>(h)) {
      case 0: out.push_back({v, t, p}); break;
      case 1: out.push_back({q, v, p}); break;
      case 2: out.push_back({p, v, t}); break;
      case 3: out.push_back({p, q, v}); break;
      case 4: out.push_back({t, p, v}); break;
      default: out.push_back({v, p, q}); break;
    }
  }
  return out;
}

data::PointCloud colorize_predictions(const data::PointCloud& cloud, std::span<const std::uint32_t> pred,
                                      std::span<const Rgb> palette) {
  if (pred.size() != cloud.size()) {
    throw DimensionError("colorize_predictions: " + std::to_string(pred.size()) + " predictions for " +
                         std::to_string(cloud.size()) + " points");
  }
  std::size_t needed = cloud.num_classes;
  for (auto p : pred) needed = std::max<std::size_t>(needed, p + 1);
  if (palette.size() < needed) {
    throw ContractError("colorize_predictions: palette has " + std::to_string(palette.size()) + " colors, need " +
                        std::to_string(needed));
  }
  data::PointCloud out = cloud;
  const std::size_t extra = cloud.f0 < 3 ? 3 : 0;
  out.f0 = cloud.f0 + extra;
  out.features.assign(cloud.size() * out.f0, 0.0);
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    double* row = out.features.data() + i * out.f0;
    for (std::size_t c = 0; c < cloud.f0; ++c) row[extra + c] = cloud.features[i * cloud.f0 + c];
    const auto& rgb = palette[pred[i]];
    row[0] = rgb[0];
    row[1] = rgb[1];
    row[2] = rgb[2];
  }
  return out;
}

}  // namespace ps2::eval
