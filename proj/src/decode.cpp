#include "snnball/decode.hpp"

#include <cmath>
#include <ostream>

#include "snnball/error.hpp"
#include "snnball/network.hpp"

namespace snnball {
namespace {

std::pair<int, double> argmax(std::span<const double> v) {
  int best = 0;
  for (int i = 1; i < static_cast<int>(v.size()); ++i)
    if (v[i] > v[best]) best = i;
  return {best, v[best]};
}

}  // namespace

Detection decode(std::span<const double> output, const Roi& roi) {
  if (output.size() != static_cast<std::size_t>(kOutputNeurons))
    throw ShapeError("decode expects 128 outputs, got " + std::to_string(output.size()));
  const auto [lx, cx] = argmax(output.first(kFrameSide));
  const auto [ly, cy] = argmax(output.subspan(kFrameSide));
  Detection d;
  d.confidence_x = std::max(cx, 0.0);
  d.confidence_y = std::max(cy, 0.0);
  d.local = {lx, ly};
  d.global = {d.local.x + roi.origin().x, d.local.y + roi.origin().y};
  return d;
}

double pixel_distance(Pixel a, Pixel b) { return std::hypot(double(a.x - b.x), double(a.y - b.y)); }

ErrorStats summarize(std::span<const double> values) {
  ErrorStats s;
  s.count = values.size();
  if (values.empty()) return s;
  double sum = 0.0;
  for (double v : values) sum += v;
  s.mean = sum / static_cast<double>(values.size());
  double sq = 0.0;
  for (double v : values) sq += (v - s.mean) * (v - s.mean);
  s.stddev = std::sqrt(sq / static_cast<double>(values.size()));
  return s;
}

ErrorStats score(std::span<const Pixel> predictions, std::span<const Pixel> truths) {
  if (predictions.size() != truths.size())
    throw ValidationError("score needs aligned sequences (" + std::to_string(predictions.size()) + " vs " +
                          std::to_string(truths.size()) + ")");
  std::vector<double> d(predictions.size());
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = pixel_distance(predictions[i], truths[i]);
  return summarize(d);
}

void write_detections(std::ostream& out, std::span<const TimedDetection> detections) {
  for (const auto& [t, d] : detections)
    out << t << ',' << d.global.x << ',' << d.global.y << ',' << d.confidence_x << ',' << d.confidence_y << '\n';
}

}  // namespace snnball
