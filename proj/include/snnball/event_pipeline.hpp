#pragma once

// Event ingestion: binary 64x64 frames from asynchronous event streams,
// ROI placement around the last detection, and the on-disk dataset bundle.

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "snnball/detection.hpp"

namespace snnball {

inline constexpr int kFrameSide = 64;
inline constexpr int kFramePixels = kFrameSide * kFrameSide;
inline constexpr std::int64_t kDefaultWindowUs = 1000;

using Micros = std::int64_t;

struct Event {
  Micros t = 0;
  int x = 0;
  int y = 0;
  bool polarity = false;
  friend bool operator==(const Event&, const Event&) = default;
};

struct SensorGeometry {
  int width = 1280;
  int height = 720;

  void validate() const;
  bool contains(int x, int y) const { return x >= 0 && y >= 0 && x < width && y < height; }
  friend bool operator==(const SensorGeometry&, const SensorGeometry&) = default;
};

/// Half-open time interval [start, end) in microseconds.
struct TimeWindow {
  Micros start = 0;
  Micros end = kDefaultWindowUs;
  Micros length() const { return end - start; }
  bool contains(Micros t) const { return t >= start && t < end; }
  friend bool operator==(const TimeWindow&, const TimeWindow&) = default;
};

/// 64x64 crop of the sensor. Always constructed fully inside the sensor.
class Roi {
 public:
  /// Rectangle [c-32, c+31] on each axis, shifted (not shrunk) to fit.
  static Roi centered_on(Pixel center, const SensorGeometry& geometry);
  static Roi at_origin(Pixel origin, const SensorGeometry& geometry);
  /// The ROI a frame was cropped with.
  static Roi of_frame(const class EventFrame& frame);

  Pixel origin() const { return origin_; }
  Pixel center() const { return {origin_.x + kFrameSide / 2, origin_.y + kFrameSide / 2}; }
  bool contains(int x, int y) const {
    return x >= origin_.x && y >= origin_.y && x < origin_.x + kFrameSide && y < origin_.y + kFrameSide;
  }
  friend bool operator==(const Roi&, const Roi&) = default;

 private:
  explicit Roi(Pixel origin) : origin_(origin) {}
  Pixel origin_;
};

class EventFrame {
 public:
  EventFrame() { bits_.fill(0); }
  EventFrame(Pixel origin, TimeWindow window) : origin_(origin), window_(window) { bits_.fill(0); }

  Pixel origin() const { return origin_; }
  TimeWindow window() const { return window_; }
  bool bit(int x, int y) const { return bits_[static_cast<std::size_t>(y * kFrameSide + x)] != 0; }
  void set(int x, int y) { bits_[static_cast<std::size_t>(y * kFrameSide + x)] = 1; }
  std::size_t count() const;
  bool empty() const { return count() == 0; }
  /// Row-major (y, x) occupancy, one byte per pixel.
  std::span<const std::uint8_t> bits() const { return bits_; }
  /// The frame as a 1x64x64 network input.
  std::vector<double> as_input() const;

  friend bool operator==(const EventFrame&, const EventFrame&) = default;

 private:
  Pixel origin_{};
  TimeWindow window_{};
  std::array<std::uint8_t, kFramePixels> bits_{};
};

struct LabeledSample {
  EventFrame frame;
  Pixel truth;
  Pixel truth_local;

  /// Throws ValidationError when the label falls outside the ROI.
  void validate() const;
  friend bool operator==(const LabeledSample&, const LabeledSample&) = default;
};

/// Marks every ROI pixel that saw at least one event in the window.
/// Polarity is ignored and the result does not depend on event order.
EventFrame accumulate(std::span<const Event> events, const Roi& roi, TimeWindow window);

/// Events with t in [window.start, window.end) from a time-sorted stream.
std::span<const Event> slice_window(std::span<const Event> sorted, TimeWindow window);

Roi update_roi(const std::optional<Detection>& previous, const Roi& start_region, const SensorGeometry& geometry);

/// Closed-loop ROI policy: follows confident detections, holds position on
/// misses and falls back to the start region after `reset_after` misses.
class RoiTracker {
 public:
  RoiTracker(Roi start_region, SensorGeometry geometry, int reset_after = 5);

  const Roi& current() const { return current_; }
  int misses() const { return misses_; }
  void observe(const Detection& detection);
  void reset();

 private:
  Roi start_;
  Roi current_;
  SensorGeometry geometry_;
  int reset_after_;
  int misses_ = 0;
};

// Dataset bundle: a directory with events.csv (t_us,x,y,p), labels.csv
// (t_us,cx,cy), meta (key=value) and, for roi_policy=file, rois.csv
// (t_us,x0,y0).

enum class RoiPolicy { centered, fixed, file };

struct BundleMeta {
  SensorGeometry sensor;
  Micros window_us = kDefaultWindowUs;
  RoiPolicy roi_policy = RoiPolicy::centered;
  Pixel fixed_origin{};
};

struct Label {
  Micros t = 0;
  Pixel center;
  friend bool operator==(const Label&, const Label&) = default;
};

struct Bundle {
  BundleMeta meta;
  std::vector<Event> events;
  std::vector<Label> labels;
  std::vector<Pixel> roi_origins;  // one per label when roi_policy == file

  Roi roi_for(std::size_t label_index) const;
  TimeWindow window_for(std::size_t label_index) const;
  std::vector<LabeledSample> samples() const;
};

Bundle read_bundle(const std::filesystem::path& dir);
void write_bundle(const Bundle& bundle, const std::filesystem::path& dir);

std::vector<Event> read_events(const std::filesystem::path& file, const SensorGeometry& geometry);
std::vector<Label> read_labels(const std::filesystem::path& file);

std::vector<LabeledSample> load_dataset(const std::filesystem::path& dir);
void save_dataset(std::span<const LabeledSample> samples, const std::filesystem::path& dir,
                  const SensorGeometry& geometry = {});

const char* to_string(RoiPolicy policy);

}  // namespace snnball
