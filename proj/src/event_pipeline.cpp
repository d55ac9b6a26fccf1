#include "snnball/event_pipeline.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <string>

#include "snnball/error.hpp"
#include "snnball/kv.hpp"

namespace snnball {

void SensorGeometry::validate() const {
  if (width < kFrameSide || height < kFrameSide)
    throw ValidationError("sensor geometry " + std::to_string(width) + "x" + std::to_string(height) +
                          " is smaller than the 64x64 frame");
}

Roi Roi::at_origin(Pixel origin, const SensorGeometry& geometry) {
  geometry.validate();
  origin.x = std::clamp(origin.x, 0, geometry.width - kFrameSide);
  origin.y = std::clamp(origin.y, 0, geometry.height - kFrameSide);
  return Roi(origin);
}

Roi Roi::centered_on(Pixel center, const SensorGeometry& geometry) {
  return at_origin({center.x - kFrameSide / 2, center.y - kFrameSide / 2}, geometry);
}

Roi Roi::of_frame(const EventFrame& frame) { return Roi(frame.origin()); }

std::size_t EventFrame::count() const {
  return static_cast<std::size_t>(std::count(bits_.begin(), bits_.end(), std::uint8_t{1}));
}

std::vector<double> EventFrame::as_input() const { return {bits_.begin(), bits_.end()}; }

void LabeledSample::validate() const {
  const Pixel o = frame.origin();
  if (truth_local.x != truth.x - o.x || truth_local.y != truth.y - o.y)
    throw ValidationError("label local coordinates disagree with ROI origin");
  if (truth_local.x < 0 || truth_local.x >= kFrameSide || truth_local.y < 0 || truth_local.y >= kFrameSide)
    throw ValidationError("label (" + std::to_string(truth.x) + ", " + std::to_string(truth.y) +
                          ") lies outside the ROI at origin (" + std::to_string(o.x) + ", " +
                          std::to_string(o.y) + ")");
}

EventFrame accumulate(std::span<const Event> events, const Roi& roi, TimeWindow window) {
  if (window.length() <= 0) throw InvalidWindowError("accumulation window must have positive length");
  EventFrame frame(roi.origin(), window);
  const Pixel o = roi.origin();
  for (const Event& e : events) {
    if (window.contains(e.t) && roi.contains(e.x, e.y)) frame.set(e.x - o.x, e.y - o.y);
  }
  return frame;
}

std::span<const Event> slice_window(std::span<const Event> sorted, TimeWindow window) {
  auto by_time = [](const Event& e, Micros t) { return e.t < t; };
  auto first = std::lower_bound(sorted.begin(), sorted.end(), window.start, by_time);
  auto last = std::lower_bound(first, sorted.end(), window.end, by_time);
  return {first, last};
}

Roi update_roi(const std::optional<Detection>& previous, const Roi& start_region,
               const SensorGeometry& geometry) {
  if (!previous) return start_region;
  return Roi::centered_on(previous->global, geometry);
}

RoiTracker::RoiTracker(Roi start_region, SensorGeometry geometry, int reset_after)
    : start_(start_region), current_(start_region), geometry_(geometry), reset_after_(reset_after) {}

void RoiTracker::observe(const Detection& detection) {
  if (detection.confident()) {
    misses_ = 0;
    current_ = update_roi(detection, start_, geometry_);
    return;
  }
  ++misses_;
  if (reset_after_ > 0 && misses_ >= reset_after_) current_ = start_;
}

void RoiTracker::reset() {
  current_ = start_;
  misses_ = 0;
}

// ---- bundle I/O -----------------------------------------------------------

const char* to_string(RoiPolicy policy) {
  switch (policy) {
    case RoiPolicy::centered: return "centered";
    case RoiPolicy::fixed: return "fixed";
    case RoiPolicy::file: return "file";
  }
  return "?";
}

namespace {

RoiPolicy parse_policy(const std::string& s) {
  if (s == "centered") return RoiPolicy::centered;
  if (s == "fixed") return RoiPolicy::fixed;
  if (s == "file") return RoiPolicy::file;
  throw ValidationError("unknown roi_policy '" + s + "'");
}

template <std::size_t N>
std::array<long long, N> parse_fields(const std::string& line, const std::string& file, std::size_t number) {
  std::array<long long, N> out{};
  const char* p = line.data();
  const char* end = line.data() + line.size();
  while (end > p && (end[-1] == '\r' || end[-1] == ' ')) --end;
  for (std::size_t i = 0; i < N; ++i) {
    auto [next, ec] = std::from_chars(p, end, out[i]);
    if (ec != std::errc{}) throw ParseError(file, number, "expected " + std::to_string(N) + " integer fields");
    p = next;
    if (i + 1 < N) {
      if (p == end || *p != ',') throw ParseError(file, number, "expected " + std::to_string(N) + " fields");
      ++p;
    }
  }
  if (p != end) throw ParseError(file, number, "trailing characters");
  return out;
}

template <std::size_t N, typename F>
void for_each_record(const std::filesystem::path& path, F&& f) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (line.empty() || line == "\r") continue;
    f(parse_fields<N>(line, path.string(), number), number);
  }
}

}  // namespace

std::vector<Event> read_events(const std::filesystem::path& file, const SensorGeometry& geometry) {
  std::vector<Event> events;
  for_each_record<4>(file, [&](const auto& r, std::size_t line) {
    if (r[0] < 0) throw ParseError(file.string(), line, "negative timestamp");
    if (!geometry.contains(static_cast<int>(r[1]), static_cast<int>(r[2])))
      throw ParseError(file.string(), line, "pixel outside sensor");
    if (r[3] != 0 && r[3] != 1) throw ParseError(file.string(), line, "polarity must be 0 or 1");
    if (!events.empty() && r[0] < events.back().t)
      throw ParseError(file.string(), line, "timestamps must be non-decreasing");
    events.push_back({r[0], static_cast<int>(r[1]), static_cast<int>(r[2]), r[3] == 1});
  });
  return events;
}

std::vector<Label> read_labels(const std::filesystem::path& file) {
  std::vector<Label> labels;
  for_each_record<3>(file, [&](const auto& r, std::size_t) {
    labels.push_back({r[0], {static_cast<int>(r[1]), static_cast<int>(r[2])}});
  });
  return labels;
}

Roi Bundle::roi_for(std::size_t i) const {
  switch (meta.roi_policy) {
    case RoiPolicy::centered: return Roi::centered_on(labels.at(i).center, meta.sensor);
    case RoiPolicy::fixed: return Roi::at_origin(meta.fixed_origin, meta.sensor);
    case RoiPolicy::file: return Roi::at_origin(roi_origins.at(i), meta.sensor);
  }
  throw ValidationError("bad roi policy");
}

TimeWindow Bundle::window_for(std::size_t i) const {
  const Micros t = labels.at(i).t;
  return {t, t + meta.window_us};
}

std::vector<LabeledSample> Bundle::samples() const {
  std::vector<LabeledSample> out;
  out.reserve(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const TimeWindow w = window_for(i);
    const Roi roi = roi_for(i);
    LabeledSample s{accumulate(slice_window(events, w), roi, w), labels[i].center,
                    {labels[i].center.x - roi.origin().x, labels[i].center.y - roi.origin().y}};
    s.validate();
    out.push_back(s);
  }
  return out;
}

Bundle read_bundle(const std::filesystem::path& dir) {
  Bundle b;
  const auto meta = KeyValues::load(dir / "meta");
  b.meta.sensor.width = static_cast<int>(meta.get_int("sensor_width", 1280));
  b.meta.sensor.height = static_cast<int>(meta.get_int("sensor_height", 720));
  b.meta.sensor.validate();
  b.meta.window_us = meta.get_int("window_us", kDefaultWindowUs);
  if (b.meta.window_us <= 0) throw InvalidWindowError("window_us must be positive");
  b.meta.roi_policy = parse_policy(meta.get_string("roi_policy", "centered"));
  b.meta.fixed_origin = {static_cast<int>(meta.get_int("roi_x0", 0)), static_cast<int>(meta.get_int("roi_y0", 0))};

  b.events = read_events(dir / "events.csv", b.meta.sensor);
  b.labels = read_labels(dir / "labels.csv");
  if (b.meta.roi_policy == RoiPolicy::file) {
    const auto path = dir / "rois.csv";
    std::size_t i = 0;
    for_each_record<3>(path, [&](const auto& r, std::size_t line) {
      if (i >= b.labels.size() || r[0] != b.labels[i].t)
        throw ParseError(path.string(), line, "roi row does not match labels.csv");
      b.roi_origins.push_back({static_cast<int>(r[1]), static_cast<int>(r[2])});
      ++i;
    });
    if (b.roi_origins.size() != b.labels.size())
      throw ValidationError(path.string() + ": expected one ROI per label");
  }
  return b;
}

void write_bundle(const Bundle& b, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  KeyValues meta;
  meta.set("sensor_width", std::to_string(b.meta.sensor.width));
  meta.set("sensor_height", std::to_string(b.meta.sensor.height));
  meta.set("window_us", std::to_string(b.meta.window_us));
  meta.set("roi_policy", to_string(b.meta.roi_policy));
  if (b.meta.roi_policy == RoiPolicy::fixed) {
    meta.set("roi_x0", std::to_string(b.meta.fixed_origin.x));
    meta.set("roi_y0", std::to_string(b.meta.fixed_origin.y));
  }
  meta.save(dir / "meta");

  auto open = [&](const char* name) {
    std::ofstream out(dir / name);
    if (!out) throw Error("cannot write " + (dir / name).string());
    return out;
  };
  {
    auto out = open("events.csv");
    for (const Event& e : b.events) out << e.t << ',' << e.x << ',' << e.y << ',' << (e.polarity ? 1 : 0) << '\n';
  }
  {
    auto out = open("labels.csv");
    for (const Label& l : b.labels) out << l.t << ',' << l.center.x << ',' << l.center.y << '\n';
  }
  if (b.meta.roi_policy == RoiPolicy::file) {
    if (b.roi_origins.size() != b.labels.size()) throw ValidationError("expected one ROI per label");
    auto out = open("rois.csv");
    for (std::size_t i = 0; i < b.labels.size(); ++i)
      out << b.labels[i].t << ',' << b.roi_origins[i].x << ',' << b.roi_origins[i].y << '\n';
  }
}

std::vector<LabeledSample> load_dataset(const std::filesystem::path& dir) { return read_bundle(dir).samples(); }

void save_dataset(std::span<const LabeledSample> samples, const std::filesystem::path& dir,
                  const SensorGeometry& geometry) {
  Bundle b;
  b.meta.sensor = geometry;
  b.meta.roi_policy = RoiPolicy::file;
  std::vector<const LabeledSample*> order;
  for (const auto& s : samples) {
    s.validate();
    order.push_back(&s);
  }
  std::stable_sort(order.begin(), order.end(), [](const auto* a, const auto* b) {
    return a->frame.window().start < b->frame.window().start;
  });
  if (!order.empty()) b.meta.window_us = order.front()->frame.window().length();
  for (std::size_t i = 0; i < order.size(); ++i) {
    const LabeledSample& s = *order[i];
    const TimeWindow w = s.frame.window();
    if (w.length() != b.meta.window_us) throw ValidationError("samples use different window lengths");
    if (i > 0 && w.start < order[i - 1]->frame.window().end)
      throw ValidationError("sample windows overlap; cannot be stored in one event stream");
    const Pixel o = s.frame.origin();
    for (int y = 0; y < kFrameSide; ++y)
      for (int x = 0; x < kFrameSide; ++x)
        if (s.frame.bit(x, y)) b.events.push_back({w.start, o.x + x, o.y + y, true});
    b.labels.push_back({w.start, s.truth});
    b.roi_origins.push_back(o);
  }
  write_bundle(b, dir);
}

}  // namespace snnball
