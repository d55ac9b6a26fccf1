#pragma once

// Synthetic event streams of a ballistic ball. Only pixels on the ball's
// boundary fire, and every random draw is a pure function of
// (seed, window, pixel) so windows can be generated in any order.

#include <array>
#include <cstdint>
#include <vector>

#include "snnball/event_pipeline.hpp"

namespace snnball {

struct BallSim {
  double x0 = 640.0, y0 = 360.0;  // pixels at t = 0
  double vx = 400.0, vy = 0.0;    // pixels / s
  double ax = 0.0, ay = 0.0;      // pixels / s^2
  double radius = 5.0;
  SensorGeometry sensor;

  void validate() const;
  /// Center at `seconds` after the trajectory start.
  std::array<double, 2> position(double seconds) const;
};

struct NoiseModel {
  double edge_event_prob = 1.0;
  double background_rate = 0.0;  // expected noise events per window per megapixel

  void validate() const;
};

struct Trajectory {
  std::vector<Event> events;
  std::vector<Label> labels;  // one per window whose center lies on the sensor
};

/// Boundary pixels of a disc: integer pixel centers whose distance to the
/// center is within half a pixel of the radius.
std::vector<Pixel> circle_boundary(double cx, double cy, double radius, const SensorGeometry& sensor);

/// Ground truth uses the center at the middle of each window, rounded.
/// Events of window w lie in [t0 + w·window_us, t0 + (w+1)·window_us).
Trajectory generate(const BallSim& sim, const NoiseModel& noise, int windows, std::uint64_t seed,
                    Micros t0 = 0, Micros window_us = kDefaultWindowUs);

struct SplitRatios {
  double train = 8630.0 / 9692.0;
  double val = 531.0 / 9692.0;
  double test = 531.0 / 9692.0;
};

/// Largest-remainder allocation of n items; remainder ties go to the later split.
std::array<int, 3> split_counts(int n, const SplitRatios& ratios);

struct DatasetOptions {
  int windows = 20;  // per trajectory
  SplitRatios ratios;
  std::uint64_t seed = 0;
  int roi_jitter = 24;  // max ROI center offset from the truth, pixels (≤ 31)
  Micros window_us = kDefaultWindowUs;
};

struct DatasetSplits {
  Bundle train, val, test;
  std::array<std::vector<int>, 3> trajectory_ids;  // which trajectories went where
};

/// Trajectory-level split into three bundles with per-window ROI origins.
DatasetSplits make_dataset(const std::vector<BallSim>& sims, const NoiseModel& noise, const DatasetOptions& options);

struct TrajectorySampler {
  SensorGeometry sensor{256, 256};
  double speed_min = 300.0, speed_max = 500.0;
  double gravity = 300.0;
  double radius_min = 3.0, radius_max = 7.0;
  double margin = 40.0;  // keep start positions away from the border
};

/// Random ballistic trajectories inside the sensor.
std::vector<BallSim> sample_trajectories(int count, const TrajectorySampler& sampler, std::uint64_t seed);

/// Counter-based uniform draw in [0, 1).
double keyed_uniform(std::uint64_t seed, std::uint64_t a, std::uint64_t b, std::uint64_t c);

}  // namespace snnball
