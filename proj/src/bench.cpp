#include "snnball/bench.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <map>
#include <ostream>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "snnball/error.hpp"
#include "snnball/kv.hpp"

namespace snnball {
namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0, Clock::time_point t1) {
  return std::chrono::duration<double, std::milli>(t1 - t0).count();
}

class ThreadScope {
 public:
  explicit ThreadScope(int n) {
#ifdef _OPENMP
    saved_ = omp_get_max_threads();
    omp_set_num_threads(std::max(1, n));
#else
    (void)n;
#endif
  }
  ~ThreadScope() {
#ifdef _OPENMP
    omp_set_num_threads(saved_);
#endif
  }
  ThreadScope(const ThreadScope&) = delete;
  ThreadScope& operator=(const ThreadScope&) = delete;

 private:
  int saved_ = 1;
};

struct Pass {
  std::vector<double> errors;
  double fwd_ms = 0.0, inf_ms = 0.0, synops = 0.0;
};

Pass run_once(const CompiledNetwork& net, const Bundle& data, int steps) {
  Pass p;
  const std::span<const Event> events(data.events);
  for (std::size_t i = 0; i < data.labels.size(); ++i) {
    const auto t0 = Clock::now();
    const TimeWindow window = data.window_for(i);
    const Roi roi = data.roi_for(i);
    const EventFrame frame = accumulate(slice_window(events, window), roi, window);
    const std::vector<double> input = frame.as_input();
    const auto n0 = Clock::now();
    const ForwardResult r = net.run(input, steps);
    const auto n1 = Clock::now();
    const Detection d = decode(r.output, roi);
    const auto t1 = Clock::now();
    p.fwd_ms += ms_since(t0, t1);
    p.inf_ms += ms_since(n0, n1);
    p.synops += static_cast<double>(r.trace.synaptic_ops);
    p.errors.push_back(pixel_distance(d.global, data.labels[i].center));
  }
  const double n = static_cast<double>(data.labels.size());
  p.fwd_ms /= n;
  p.inf_ms /= n;
  p.synops /= n;
  return p;
}

}  // namespace

void BenchReport::validate() const {
  if (runs < 1) throw ValidationError("bench report needs runs >= 1");
  for (const BenchRun& r : per_run)
    if (r.inf_ms > r.fwd_ms)
      throw ValidationError("run " + std::to_string(r.run) + ": inference time exceeds forward-pass time");
}

BenchReport bench(const NetworkSpec& spec, const Weights& weights, const Bundle& data, const BenchOptions& options) {
  if (options.runs < 1) throw ValidationError("runs must be >= 1");
  if (data.labels.empty()) throw ValidationError("bench needs a non-empty dataset");
  const ThreadScope threads(options.threads);
  const CompiledNetwork net(spec, weights);
  const int steps = options.steps > 0 ? options.steps : spec.steps;

  run_once(net, data, steps);  // warm-up, not reported

  BenchReport report;
  report.profile = to_string(spec.profile);
  report.steps = steps;
  report.runs = options.runs;
  std::vector<double> fwd, inf;
  for (int r = 1; r <= options.runs; ++r) {
    const Pass p = run_once(net, data, steps);
    BenchRun run;
    run.run = r;
    run.error = summarize(p.errors);
    run.fwd_ms = p.fwd_ms;
    run.inf_ms = p.inf_ms;
    run.synops = p.synops;
    report.per_run.push_back(run);
    fwd.push_back(p.fwd_ms);
    inf.push_back(p.inf_ms);
    if (r == 1) {
      report.error = run.error;
      report.synops = p.synops;
    }
  }
  const ErrorStats f = summarize(fwd), n = summarize(inf);
  report.fwd_ms_mean = f.mean;
  report.fwd_ms_std = f.stddev;
  report.inf_ms_mean = n.mean;
  report.inf_ms_std = n.stddev;
  report.validate();
  return report;
}

void write_bench_csv(std::ostream& out, const BenchReport& r) {
  out << kBenchCsvHeader << '\n'
      << r.profile << ',' << r.steps << ',' << format_double(r.error.mean) << ',' << format_double(r.error.stddev) << ','
      << format_double(r.fwd_ms_mean) << ',' << format_double(r.fwd_ms_std) << ',' << format_double(r.inf_ms_mean)
      << ',' << format_double(r.inf_ms_std) << ',' << format_double(r.synops) << ',' << r.runs << '\n';
}

void write_bench_runs(std::ostream& out, const BenchReport& r) {
  out << "run,err_mean,err_std,fwd_ms,inf_ms,synops\n";
  for (const BenchRun& run : r.per_run)
    out << run.run << ',' << format_double(run.error.mean) << ',' << format_double(run.error.stddev) << ','
        << format_double(run.fwd_ms) << ',' << format_double(run.inf_ms) << ',' << format_double(run.synops) << '\n';
}

void print_bench_table(std::ostream& out, const BenchReport& r) {
  char line[160];
  std::snprintf(line, sizeof line, "%-14s %4s  %-16s %-18s %-18s %12s %5s\n", "profile", "T", "error [px]",
                "forward [ms]", "inference [ms]", "synops", "runs");
  out << line;
  std::snprintf(line, sizeof line, "%-14s %4d  %6.2f +- %-6.2f %7.3f +- %-7.3f %7.3f +- %-7.3f %12.0f %5d\n",
                r.profile.c_str(), r.steps, r.error.mean, r.error.stddev, r.fwd_ms_mean, r.fwd_ms_std, r.inf_ms_mean,
                r.inf_ms_std, r.synops, r.runs);
  out << line;
}

TrackResult trajectory_eval(const Detector& detector, std::span<const Event> events, std::span<const Label> labels,
                            const Roi& start_region, const SensorGeometry& geometry, const TrackOptions& options) {
  if (options.window_us <= 0) throw InvalidWindowError("window length must be positive");
  if (options.lost_after < 0) throw ValidationError("lost_after must be >= 0");
  int windows = options.windows;
  if (windows == 0) {
    if (events.empty()) throw ValidationError("trajectory has no events");
    const Micros last = events.back().t;
    windows = static_cast<int>((last - options.start) / options.window_us) + 1;
  }
  if (windows < 2) throw ValidationError("trajectory must span at least 2 windows");

  std::map<Micros, Pixel> truth;
  for (const Label& l : labels) truth[l.t] = l.center;

  // The tracker never falls back to the start region on its own: losing the
  // ball is reported instead.
  RoiTracker tracker(start_region, geometry, 0);
  TrackResult result;
  std::vector<Pixel> predicted, expected;
  int zero_run = 0;
  for (int w = 0; w < windows; ++w) {
    const TimeWindow window{options.start + w * options.window_us, options.start + (w + 1) * options.window_us};
    const Roi roi = tracker.current();
    const EventFrame frame = accumulate(slice_window(events, window), roi, window);
    Detection d;
    if (!frame.empty()) {
      d = detector(frame);
    } else {
      d.global = roi.origin();
    }
    result.detections.push_back({window.start, d});
    result.rois.push_back(roi);
    tracker.observe(d);

    if (auto it = truth.find(window.start); it != truth.end()) {
      predicted.push_back(d.global);
      expected.push_back(it->second);
    }
    zero_run = d.confident() ? 0 : zero_run + 1;
    if (zero_run > options.lost_after) {
      result.lost = true;
      result.lost_at = w;
      break;
    }
  }
  result.error = score(predicted, expected);
  return result;
}

TrackResult trajectory_eval(const CompiledNetwork& net, std::span<const Event> events, std::span<const Label> labels,
                            const Roi& start_region, const SensorGeometry& geometry, const TrackOptions& options) {
  const Detector detector = [&](const EventFrame& frame) {
    return decode(net.run(frame.as_input(), options.steps).output, Roi::of_frame(frame));
  };
  return trajectory_eval(detector, events, labels, start_region, geometry, options);
}

}  // namespace snnball
