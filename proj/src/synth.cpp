#include "snnball/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <tuple>

#include "snnball/error.hpp"

namespace snnball {
namespace {

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t key(std::uint64_t seed, std::uint64_t a, std::uint64_t b, std::uint64_t c) {
  return splitmix(splitmix(splitmix(splitmix(seed) ^ a) ^ b) ^ c);
}

enum Stream : std::uint64_t { kFire = 1, kTime = 2, kNoise = 3, kJitter = 4 };

}  // namespace

double keyed_uniform(std::uint64_t seed, std::uint64_t a, std::uint64_t b, std::uint64_t c) {
  return static_cast<double>(key(seed, a, b, c) >> 11) * 0x1.0p-53;
}

void BallSim::validate() const {
  sensor.validate();
  if (!(radius >= 1.0)) throw ValidationError("ball radius must be >= 1 pixel");
  for (double v : {x0, y0, vx, vy, ax, ay})
    if (!std::isfinite(v)) throw ValidationError("ball parameters must be finite");
}

std::array<double, 2> BallSim::position(double s) const {
  return {x0 + vx * s + 0.5 * ax * s * s, y0 + vy * s + 0.5 * ay * s * s};
}

void NoiseModel::validate() const {
  if (!(edge_event_prob >= 0.0 && edge_event_prob <= 1.0)) throw ValidationError("edge_event_prob must be in [0,1]");
  if (!(background_rate >= 0.0)) throw ValidationError("background_rate must be >= 0");
}

std::vector<Pixel> circle_boundary(double cx, double cy, double r, const SensorGeometry& sensor) {
  std::vector<Pixel> out;
  const int x_lo = std::max(0, static_cast<int>(std::floor(cx - r - 1)));
  const int x_hi = std::min(sensor.width - 1, static_cast<int>(std::ceil(cx + r + 1)));
  const int y_lo = std::max(0, static_cast<int>(std::floor(cy - r - 1)));
  const int y_hi = std::min(sensor.height - 1, static_cast<int>(std::ceil(cy + r + 1)));
  for (int y = y_lo; y <= y_hi; ++y)
    for (int x = x_lo; x <= x_hi; ++x)
      if (std::abs(std::hypot(x - cx, y - cy) - r) < 0.5) out.push_back({x, y});
  return out;
}

Trajectory generate(const BallSim& sim, const NoiseModel& noise, int windows, std::uint64_t seed, Micros t0,
                    Micros window_us) {
  sim.validate();
  noise.validate();
  if (windows < 1) throw ValidationError("need at least one window");
  if (window_us <= 0) throw InvalidWindowError("window length must be positive");

  Trajectory traj;
  bool visible = false;
  const double megapixels = sim.sensor.width * static_cast<double>(sim.sensor.height) * 1e-6;
  for (int w = 0; w < windows; ++w) {
    const Micros start = t0 + w * window_us;
    const double mid = (w + 0.5) * static_cast<double>(window_us) * 1e-6;
    const auto [cx, cy] = sim.position(mid);
    const double vx = sim.vx + sim.ax * mid, vy = sim.vy + sim.ay * mid;
    std::vector<Event> window_events;

    for (const Pixel& p : circle_boundary(cx, cy, sim.radius, sim.sensor)) {
      visible = true;
      const std::uint64_t pixel = static_cast<std::uint64_t>(p.y) * sim.sensor.width + p.x;
      if (keyed_uniform(seed, kFire, static_cast<std::uint64_t>(w), pixel) >= noise.edge_event_prob) continue;
      const auto dt = static_cast<Micros>(keyed_uniform(seed, kTime, static_cast<std::uint64_t>(w), pixel) *
                                          static_cast<double>(window_us));
      // Leading edge brightens, trailing edge darkens.
      const bool on = (p.x - cx) * vx + (p.y - cy) * vy >= 0.0;
      window_events.push_back({start + dt, p.x, p.y, on});
    }

    if (noise.background_rate > 0.0) {
      std::mt19937_64 rng(key(seed, kNoise, static_cast<std::uint64_t>(w), 0));
      std::poisson_distribution<int> count(noise.background_rate * megapixels);
      std::uniform_int_distribution<int> xs(0, sim.sensor.width - 1), ys(0, sim.sensor.height - 1);
      std::uniform_int_distribution<Micros> ts(0, window_us - 1);
      std::bernoulli_distribution pol(0.5);
      const int n = count(rng);
      for (int i = 0; i < n; ++i) {
        const int x = xs(rng), y = ys(rng);
        window_events.push_back({start + ts(rng), x, y, pol(rng)});
      }
    }

    std::sort(window_events.begin(), window_events.end(), [](const Event& a, const Event& b) {
      return std::tie(a.t, a.y, a.x, a.polarity) < std::tie(b.t, b.y, b.x, b.polarity);
    });
    traj.events.insert(traj.events.end(), window_events.begin(), window_events.end());

    const Pixel truth{static_cast<int>(std::lround(cx)), static_cast<int>(std::lround(cy))};
    if (sim.sensor.contains(truth.x, truth.y)) traj.labels.push_back({start, truth});
  }
  if (!visible) throw ValidationError("ball never enters the sensor: empty trajectory");
  return traj;
}

std::array<int, 3> split_counts(int n, const SplitRatios& r) {
  const std::array<double, 3> ratios{r.train, r.val, r.test};
  double sum = 0.0;
  for (double v : ratios) {
    if (!(v >= 0.0)) throw ValidationError("split ratios must be non-negative");
    sum += v;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw ValidationError("split ratios must sum to 1");
  if (n < 0) throw ValidationError("negative item count");

  std::array<int, 3> counts{};
  std::array<double, 3> remainder{};
  int assigned = 0;
  for (int i = 0; i < 3; ++i) {
    // Round the quota to 1e-9 first so 100 × 0.055 counts as 5.5 exactly.
    const double quota = std::round(n * ratios[i] * 1e9) / 1e9;
    counts[i] = static_cast<int>(std::floor(quota));
    remainder[i] = quota - counts[i];
    assigned += counts[i];
  }
  std::array<int, 3> order{2, 1, 0};
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return remainder[a] > remainder[b]; });
  for (int k = 0; assigned < n; ++k, ++assigned) ++counts[order[k % 3]];
  return counts;
}

DatasetSplits make_dataset(const std::vector<BallSim>& sims, const NoiseModel& noise, const DatasetOptions& opt) {
  if (opt.roi_jitter < 0 || opt.roi_jitter > kFrameSide / 2 - 1) throw ValidationError("roi_jitter must be in 0..31");
  const int n = static_cast<int>(sims.size());
  const auto counts = split_counts(n, opt.ratios);
  const std::array<double, 3> ratios{opt.ratios.train, opt.ratios.val, opt.ratios.test};
  for (int i = 0; i < 3; ++i)
    if (ratios[i] > 0.0 && counts[i] == 0)
      throw ValidationError("too few trajectories (" + std::to_string(n) + ") for the requested split");

  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(key(opt.seed, 0x5b117, 0, 0));
  std::shuffle(order.begin(), order.end(), rng);

  DatasetSplits out;
  std::array<Bundle*, 3> bundles{&out.train, &out.val, &out.test};
  int next = 0;
  for (int split = 0; split < 3; ++split) {
    auto ids = std::vector<int>(order.begin() + next, order.begin() + next + counts[split]);
    next += counts[split];
    std::sort(ids.begin(), ids.end());
    out.trajectory_ids[split] = ids;

    Bundle& b = *bundles[split];
    b.meta.sensor = sims.empty() ? SensorGeometry{} : sims.front().sensor;
    b.meta.window_us = opt.window_us;
    b.meta.roi_policy = RoiPolicy::file;
    for (int id : ids) {
      const BallSim& sim = sims[id];
      if (!(sim.sensor == b.meta.sensor)) throw ValidationError("all trajectories must share one sensor geometry");
      // Trajectories occupy disjoint time ranges separated by an empty window.
      const Micros t0 = static_cast<Micros>(id) * (opt.windows + 1) * opt.window_us;
      const Trajectory traj = generate(sim, noise, opt.windows, key(opt.seed, static_cast<std::uint64_t>(id), 1, 2),
                                       t0, opt.window_us);
      b.events.insert(b.events.end(), traj.events.begin(), traj.events.end());
      for (const Label& l : traj.labels) {
        const auto w = static_cast<std::uint64_t>(l.t / opt.window_us);
        const int span = 2 * opt.roi_jitter + 1;
        const int jx = static_cast<int>(keyed_uniform(opt.seed, kJitter, w, 0) * span) - opt.roi_jitter;
        const int jy = static_cast<int>(keyed_uniform(opt.seed, kJitter, w, 1) * span) - opt.roi_jitter;
        const Roi roi = Roi::centered_on({l.center.x + jx, l.center.y + jy}, b.meta.sensor);
        b.labels.push_back(l);
        b.roi_origins.push_back(roi.origin());
      }
    }
  }
  return out;
}

std::vector<BallSim> sample_trajectories(int count, const TrajectorySampler& s, std::uint64_t seed) {
  s.sensor.validate();
  std::mt19937_64 rng(key(seed, 0x7a1, 0, 0));
  std::uniform_real_distribution<double> ux(s.margin, s.sensor.width - s.margin);
  std::uniform_real_distribution<double> uy(s.margin, s.sensor.height - s.margin);
  std::uniform_real_distribution<double> speed(s.speed_min, s.speed_max);
  std::uniform_real_distribution<double> angle(0.0, 2.0 * std::acos(-1.0));
  std::uniform_real_distribution<double> radius(s.radius_min, s.radius_max);
  std::vector<BallSim> sims;
  for (int i = 0; i < count; ++i) {
    BallSim b;
    b.sensor = s.sensor;
    b.x0 = ux(rng);
    b.y0 = uy(rng);
    const double v = speed(rng), a = angle(rng);
    b.vx = v * std::cos(a);
    b.vy = v * std::sin(a);
    b.ay = s.gravity;
    b.radius = radius(rng);
    sims.push_back(b);
  }
  return sims;
}

}  // namespace snnball
