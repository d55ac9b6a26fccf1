#pragma once

// Latency/accuracy harness. "Forward pass" covers the whole per-frame
// pipeline (slice, ROI, accumulate, network, decode); "inference" is the
// network alone, timed inside the same loop.

#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "snnball/decode.hpp"
#include "snnball/event_pipeline.hpp"
#include "snnball/network.hpp"

namespace snnball {

struct BenchRun {
  int run = 0;  // 1-based
  ErrorStats error;
  double fwd_ms = 0.0;  // per frame
  double inf_ms = 0.0;  // per frame
  double synops = 0.0;  // per frame
};

struct BenchReport {
  std::string profile;
  int steps = 0;
  ErrorStats error;  // over all samples of one run (identical across runs)
  double fwd_ms_mean = 0.0, fwd_ms_std = 0.0;
  double inf_ms_mean = 0.0, inf_ms_std = 0.0;
  double synops = 0.0;
  int runs = 0;
  std::vector<BenchRun> per_run;

  void validate() const;
};

struct BenchOptions {
  int runs = 10;
  int steps = 0;  // 0: the network's own
  int threads = 1;  // >1 only for throughput, not latency
};

BenchReport bench(const NetworkSpec& spec, const Weights& weights, const Bundle& data, const BenchOptions& options = {});

/// Summary CSV: header plus one row.
void write_bench_csv(std::ostream& out, const BenchReport& report);
/// Per-run CSV `run,err_mean,err_std,fwd_ms,inf_ms,synops`.
void write_bench_runs(std::ostream& out, const BenchReport& report);
void print_bench_table(std::ostream& out, const BenchReport& report);

inline constexpr const char* kBenchCsvHeader =
    "profile,T,err_mean,err_std,fwd_ms_mean,fwd_ms_std,inf_ms_mean,inf_ms_std,synops,runs";

// ---- closed-loop tracking ---------------------------------------------------

using Detector = std::function<Detection(const EventFrame&)>;

struct TrackOptions {
  Micros start = 0;   // first window start
  int windows = 0;    // 0: until the last event
  Micros window_us = kDefaultWindowUs;
  int lost_after = 5; // more consecutive zero-confidence windows than this loses the track
  int steps = 0;
};

struct TrackResult {
  std::vector<TimedDetection> detections;
  std::vector<Roi> rois;  // ROI used for each window
  ErrorStats error;       // over windows with a label
  bool lost = false;
  int lost_at = -1;       // window index where the track was declared lost
};

/// Runs the detector window by window; every ROI after the first comes from
/// the previous detection. Empty frames count as zero confidence without
/// calling the detector.
TrackResult trajectory_eval(const Detector& detector, std::span<const Event> events, std::span<const Label> labels,
                            const Roi& start_region, const SensorGeometry& geometry, const TrackOptions& options);

TrackResult trajectory_eval(const CompiledNetwork& net, std::span<const Event> events, std::span<const Label> labels,
                            const Roi& start_region, const SensorGeometry& geometry, const TrackOptions& options);

}  // namespace snnball
