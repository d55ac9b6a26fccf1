#pragma once

// Population-code readout: the first 64 outputs vote for x, the last 64
// for y.

#include <cstddef>
#include <iosfwd>
#include <span>
#include <vector>

#include "snnball/detection.hpp"
#include "snnball/event_pipeline.hpp"

namespace snnball {

struct ErrorStats {
  double mean = 0.0;
  double stddev = 0.0;  // population convention (divide by N)
  std::size_t count = 0;
};

/// Argmax per population; ties go to the lowest index.
Detection decode(std::span<const double> output, const Roi& roi);

double pixel_distance(Pixel a, Pixel b);

/// Euclidean pixel error statistics over aligned sequences.
ErrorStats score(std::span<const Pixel> predictions, std::span<const Pixel> truths);
ErrorStats summarize(std::span<const double> values);

struct TimedDetection {
  Micros t = 0;
  Detection detection;
};

/// CSV rows `t_us,gx,gy,conf_x,conf_y`.
void write_detections(std::ostream& out, std::span<const TimedDetection> detections);

}  // namespace snnball
