// End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
// exits non-zero if any fails. The desk-scale training dominates the
// runtime (several minutes on one core).

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "snnball/bench.hpp"
#include "snnball/decode.hpp"
#include "snnball/deploy.hpp"
#include "snnball/kv.hpp"
#include "snnball/neurons.hpp"
#include "snnball/synth.hpp"
#include "snnball/training.hpp"

using namespace snnball;

namespace {

using Clock = std::chrono::steady_clock;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double a, double b = 0, double c = 0, double d = 0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c, d);
  return buf;
}

const NeuronParams kIf{NeuronMode::if_multispike, 1.0, 0.0};

// ---- shared desk-scale data and models ------------------------------------

struct Desk {
  DatasetSplits data;
  std::vector<LabeledSample> train, test;
  std::map<Profile, Model> models;
};

Desk& desk() {
  static Desk d = [] {
    Desk d;
    // 100 / 10 / 10 trajectories of 20 windows: 2000 / 200 / 200 frames.
    const auto sims = sample_trajectories(120, {}, 1);
    DatasetOptions opt;
    opt.windows = 20;
    opt.ratios = {100.0 / 120, 10.0 / 120, 10.0 / 120};
    opt.seed = 3;
    d.data = make_dataset(sims, {}, opt);
    d.train = d.data.train.samples();
    d.test = d.data.test.samples();
    return d;
  }();
  return d;
}

// Desk-scale optimizer settings: the small dataset needs a larger step and
// smaller batches than the full-size defaults.
TrainConfig desk_config(Profile p) {
  TrainConfig c = TrainConfig::defaults_for(p);
  c.learning_rate = 1e-3;
  c.batch_size = 32;
  c.epochs = p == Profile::sinabs_like ? 15 : p == Profile::lava_like ? 3 : 40;
  return c;
}

double test_error(const NetworkSpec& spec, const Weights& w, int steps = 0, double* synops = nullptr) {
  const CompiledNetwork net(spec, w);
  std::vector<Pixel> pred, truth;
  double ops = 0;
  for (const auto& s : desk().test) {
    const auto r = net.run(s.frame.as_input(), steps);
    ops += static_cast<double>(r.trace.synaptic_ops);
    pred.push_back(decode(r.output, Roi::of_frame(s.frame)).global);
    truth.push_back(s.truth);
  }
  if (synops) *synops = ops / static_cast<double>(desk().test.size());
  return score(pred, truth).mean;
}

const Model& trained(Profile p) {
  auto& models = desk().models;
  if (auto it = models.find(p); it != models.end()) return it->second;
  const NetworkSpec spec = build_profile(to_string(p));
  const TrainConfig c = desk_config(p);
  const auto result = spec.quantized() ? train_qat(spec, desk().train, c) : train_bptt(spec, desk().train, c);
  return models[p] = Model{spec, result.weights};
}

// ---- criteria ---------------------------------------------------------------

Outcome rate_code_equivalence() {
  const int T = 16;
  std::mt19937_64 rng(2024);
  NetworkSpec spec;
  spec.input = {1, 12, 12};
  spec.steps = T;
  auto c = LayerSpec::conv(3, 3, 1, kIf);
  c.has_bias = true;
  auto l1 = LayerSpec::linear(24, kIf);
  l1.has_bias = true;
  auto l2 = LayerSpec::linear(8, kIf);
  l2.has_bias = true;
  spec.layers = {c, l1, l2};
  spec.validate();

  // Binary input and weights in 1/T steps make every first-layer current a
  // multiple of 1/T; non-negative integer weights and 1/T biases keep the
  // deeper layers on the same grid.
  std::uniform_int_distribution<int> sixteenth(-T, T), small(0, 2), bias(0, T);
  std::bernoulli_distribution on(0.4), used(0.15);
  double worst = 0;
  for (int k = 0; k < 50; ++k) {
    Weights w = zero_weights(spec);
    for (double& v : w.layers[0].weights) v = sixteenth(rng) / double(T);
    for (double& v : w.layers[0].bias) v = sixteenth(rng) / double(T);
    for (std::size_t l = 1; l < 3; ++l) {
      for (double& v : w.layers[l].weights) v = used(rng) ? small(rng) : 0.0;
      for (double& v : w.layers[l].bias) v = bias(rng) / double(T);
    }
    std::vector<double> x(spec.input.size());
    for (double& v : x) v = on(rng) ? 1.0 : 0.0;
    const auto rates = forward(spec, w, x, T).output;
    const auto ann = forward_ann(spec, w, x);
    for (std::size_t i = 0; i < rates.size(); ++i) worst = std::max(worst, std::abs(rates[i] - ann[i]));
  }
  return {worst <= 1e-9, fmt("50 fixtures, max |rate - relu| = %.3g", worst)};
}

Outcome charge_conservation() {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> theta(0.1, 4.0), in(-1.0, 5.0);
  double worst = 0;
  for (int trial = 0; trial < 10000; ++trial) {
    NeuronParams p = kIf;
    p.threshold = theta(rng);
    const std::size_t n = 1 + rng() % 8;
    NeuronState s(n, p);
    std::vector<double> total(n, 0.0), spikes(n, 0.0), x(n);
    const int steps = 1 + static_cast<int>(rng() % 64);
    for (int t = 0; t < steps; ++t) {
      for (std::size_t i = 0; i < n; ++i) total[i] += x[i] = in(rng);
      const auto out = step_if_multispike(s, x);
      for (std::size_t i = 0; i < n; ++i) spikes[i] += out[i];
    }
    for (std::size_t i = 0; i < n; ++i)
      worst = std::max(worst, std::abs(spikes[i] * p.threshold + s.membrane()[i] - total[i]));
  }
  return {worst <= 1e-9, fmt("10000 trials, max residual %.3g", worst)};
}

Outcome gradient_check() {
  NeuronParams q{NeuronMode::quantized_relu, 1.0, 0.0};
  q.bits = 0;  // float path: clamp only
  NetworkSpec spec;
  spec.input = {1, 8, 8};
  auto c = LayerSpec::conv(2, 3, 1, q);
  c.has_bias = c.batchnorm = true;
  auto l1 = LayerSpec::linear(16, q);
  l1.has_bias = l1.batchnorm = true;
  auto l2 = LayerSpec::linear(8);
  l2.has_bias = true;
  spec.layers = {c, LayerSpec::maxpool(2), l1, l2};
  spec.validate();

  Weights w = init_weights(spec, 3);
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-1, 1);
  for (auto& p : w.layers) {
    for (auto& v : p.bias) v = 0.2 * u(rng);
    for (auto& v : p.bn_scale) v = 1 + 0.3 * u(rng);
    for (auto& v : p.bn_shift) v = 0.2 * u(rng);
    p.act_range = 3.0;
  }
  std::vector<Example> batch(4);
  for (auto& e : batch) {
    e.input.resize(64);
    for (auto& v : e.input) v = u(rng) > 0.3 ? 1.0 : 0.0;
    e.target.resize(8);
    for (auto& v : e.target) v = u(rng);
  }
  TrainConfig cfg;
  cfg.lambda_synops = 0;
  const auto g = batch_gradient(spec, w, batch, cfg);
  const double h = 1e-5;
  double worst = 0;
  std::size_t checked = 0;
  for (std::size_t l = 0; l < w.layers.size(); ++l)
    for (auto field : {&LayerParams::weights, &LayerParams::bias, &LayerParams::bn_scale, &LayerParams::bn_shift})
      for (std::size_t i = 0; i < (w.layers[l].*field).size(); ++i, ++checked) {
        Weights a = w, b = w;
        (a.layers[l].*field)[i] += h;
        (b.layers[l].*field)[i] -= h;
        const double fd = (batch_objective(spec, a, batch, cfg) - batch_objective(spec, b, batch, cfg)) / (2 * h);
        const double an = (g.gradient.layers[l].*field)[i];
        worst = std::max(worst, std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-7}));
      }
  const bool small = parameter_count(w) <= 500;
  return {small && worst <= 1e-4,
          fmt("%.0f parameters, worst relative error %.3g", static_cast<double>(checked), worst)};
}

Outcome encode_decode() {
  const Roi roi = Roi::at_origin({0, 0}, SensorGeometry{});
  int wrong = 0;
  for (int y = 0; y < kFrameSide; ++y)
    for (int x = 0; x < kFrameSide; ++x) wrong += !(decode(encode_target({x, y}), roi).local == Pixel{x, y});

  // Strictly increasing maps, each with random parameters.
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const std::vector<std::function<double(double, double, double)>> families{
      [](double v, double a, double b) { return a * v + b; },
      [](double v, double a, double b) { return std::exp(a * v) + b; },
      [](double v, double a, double b) { return std::log1p(a * v) + b; },
      [](double v, double a, double b) { return a * v * v * v + b; },
      [](double v, double a, double b) { return std::sqrt(a * v) + b; },
  };
  int changed = 0;
  for (int k = 0; k < 20; ++k) {
    const auto& f = families[k % families.size()];
    const double a = 0.1 + 4 * u(rng), b = u(rng);
    for (int trial = 0; trial < 50; ++trial) {
      std::vector<double> out(kOutputNeurons);
      for (auto& v : out) v = u(rng);
      if (trial % 5 == 0) out = encode_target({static_cast<int>(rng() % 64), static_cast<int>(rng() % 64)});
      std::vector<double> t(out.size());
      for (std::size_t i = 0; i < out.size(); ++i) t[i] = f(out[i], a, b);
      changed += !(decode(t, roi).local == decode(out, roi).local);
    }
  }
  return {wrong == 0 && changed == 0,
          fmt("%.0f/4096 round-trip mismatches, %.0f argmax changes over 20 transforms", wrong, changed)};
}

Outcome desk_training() {
  bool pass = true;
  std::string detail;
  for (Profile p : {Profile::sinabs_like, Profile::metatf_like, Profile::lava_like}) {
    const auto t0 = Clock::now();
    const Model& m = trained(p);
    const double minutes = std::chrono::duration<double>(Clock::now() - t0).count() / 60;
    const double err = test_error(m.spec, m.weights);
    const int epochs = desk_config(p).epochs;
    pass = pass && err <= 3.0 && epochs <= 50 && minutes <= 15.0;
    detail += std::string(detail.empty() ? "" : "; ") + to_string(p) +
              fmt(" %.2f px after %.0f epochs in %.1f min", err, epochs, minutes);
  }
  return {pass, fmt("%.0f train / %.0f test frames: ", static_cast<double>(desk().train.size()),
                    static_cast<double>(desk().test.size())) +
                    detail};
}

Outcome steps_tradeoff() {
  const Model& m = trained(Profile::sinabs_like);
  bool pass = true;
  std::string detail;
  double previous = 0;
  for (int T : {4, 8, 16, 32}) {
    const double err = test_error(m.spec, m.weights, T);
    if (T > 4 && err > previous + 0.3) pass = false;
    previous = err;
    detail += (detail.empty() ? "" : ", ") + fmt("T=%.0f: %.2f px", T, err);
  }
  return {pass, detail};
}

Outcome regularizers() {
  const NetworkSpec spec = build_profile("sinabs_like");
  TrainConfig c = desk_config(Profile::sinabs_like);
  c.epochs = 10;

  std::vector<double> synops;
  for (double lambda : {0.0, 1e-6, 1e-5}) {
    c.lambda_synops = lambda;
    double ops = 0;
    test_error(spec, train_bptt(spec, desk().train, c).weights, 0, &ops);
    synops.push_back(ops);
  }
  const bool monotone = synops[1] <= synops[0] && synops[2] <= synops[1];

  // Paired fixture: same init, data and schedule; only λ_weightmax differs.
  // The gap is measured at the 8-bit device weight precision.
  c.lambda_synops = 1e-6;
  std::vector<double> gap;
  for (double lambda : {0.0, 1e-3}) {
    c.lambda_weightmax = lambda;
    const Weights w = train_bptt(spec, desk().train, c).weights;
    gap.push_back(report_gap(spec, w, desk().test, 8).gap());
  }
  return {monotone && gap[1] < gap[0],
          fmt("synops/frame %.0f, %.0f, %.0f", synops[0], synops[1], synops[2]) +
              fmt("; 8-bit gap %.3f px without vs %.3f px with weight-max penalty", gap[0], gap[1])};
}

Outcome constraint_checks() {
  const auto t0 = Clock::now();
  const auto ok = validate(build_profile("sinabs_like"), DeviceProfile::builtin("dynapcnn_like"));
  const auto pools = validate(build_profile("sinabs_like"), DeviceProfile::builtin("loihi2_like"));
  NetworkSpec extra = build_profile("metatf_like");
  extra.layers.insert(extra.layers.begin() + 3, LayerSpec::maxpool(2));
  extra.profile = Profile::custom;
  const auto akida = validate(extra, DeviceProfile::builtin("akida_like"));
  const auto again = validate(extra, DeviceProfile::builtin("akida_like"));
  const double ms = std::chrono::duration<double, std::milli>(Clock::now() - t0).count();

  const bool akida_ok = akida.violations.size() == 1 && akida.violations[0].constraint == "pooling" &&
                        akida.violations[0].block == 2;
  const bool same = again.violations.size() == akida.violations.size() &&
                    again.violations[0].detail == akida.violations[0].detail;
  return {ok.passed() && pools.count("pooling") == 2 && akida_ok && same && ms < 1000,
          fmt("dynapcnn_like %.0f violations; loihi2_like %.0f pooling; akida_like fails at block %.0f; %.2f ms",
              static_cast<double>(ok.violations.size()), static_cast<double>(pools.count("pooling")),
              akida.violations.empty() ? 0.0 : akida.violations[0].block, ms)};
}

std::vector<std::vector<double>> parse_csv(const std::string& text) {
  std::vector<std::vector<double>> rows;
  std::istringstream in(text);
  std::string line;
  std::getline(in, line);  // header
  while (std::getline(in, line)) {
    std::vector<double> row;
    for (const auto& cell : split(line, ',')) {
      try {
        row.push_back(std::stod(cell));
      } catch (const std::exception&) {
        row.push_back(NAN);
      }
    }
    rows.push_back(row);
  }
  return rows;
}

Outcome bench_integrity() {
  const Model& m = trained(Profile::sinabs_like);
  BenchOptions opt;
  opt.runs = 10;
  opt.threads = 1;
  const BenchReport r = bench(m.spec, m.weights, desk().data.test, opt);
  std::ostringstream summary, runs;
  write_bench_csv(summary, r);
  write_bench_runs(runs, r);
  const auto s = parse_csv(summary.str()).at(0);
  const auto p = parse_csv(runs.str());

  std::vector<double> fwd, inf;
  bool inf_le_fwd = p.size() == 10;
  for (const auto& row : p) {
    fwd.push_back(row[3]);
    inf.push_back(row[4]);
    inf_le_fwd = inf_le_fwd && row[4] <= row[3];
  }
  const auto f = summarize(fwd), n = summarize(inf);
  const double dev = std::max({std::abs(f.mean - s[4]), std::abs(f.stddev - s[5]), std::abs(n.mean - s[6]),
                               std::abs(n.stddev - s[7]), std::abs(p[0][1] - s[2]), std::abs(p[0][2] - s[3])});
  return {dev <= 1e-9 && inf_le_fwd && r.fwd_ms_mean <= 5.0,
          fmt("10 runs, CSV recompute deviation %.2g; forward %.3f ms/frame, inference %.3f ms/frame", dev,
              r.fwd_ms_mean, r.inf_ms_mean)};
}

Outcome closed_loop() {
  const Model& m = trained(Profile::sinabs_like);
  BallSim ball;
  ball.sensor = {256, 256};
  ball.x0 = 80;
  ball.y0 = 100;
  ball.vx = 400;
  ball.vy = -150;
  ball.ay = 300;
  ball.radius = 5;
  const Trajectory traj = generate(ball, {}, 100, 77);
  TrackOptions opt;
  opt.windows = 100;
  const Roi start = Roi::centered_on(traj.labels.front().center, ball.sensor);
  const TrackResult r =
      trajectory_eval(CompiledNetwork(m.spec, m.weights), traj.events, traj.labels, start, ball.sensor, opt);
  return {!r.lost && r.error.count == 100 && r.error.mean <= 3.0,
          fmt("%.0f scored windows, ", static_cast<double>(r.error.count)) +
              (r.lost ? fmt("track lost at window %.0f", r.lost_at) : std::string("no track loss")) +
              fmt(", mean error %.2f px", r.error.mean)};
}

}  // namespace

int main() {
  const std::vector<std::pair<const char*, Outcome (*)()>> criteria{
      {"rate_code_equivalence", rate_code_equivalence},
      {"charge_conservation", charge_conservation},
      {"gradient_check", gradient_check},
      {"encode_decode_round_trip", encode_decode},
      {"desk_scale_training", desk_training},
      {"steps_tradeoff", steps_tradeoff},
      {"regularizer_effects", regularizers},
      {"constraint_checking", constraint_checks},
      {"benchmark_integrity", bench_integrity},
      {"closed_loop_tracking", closed_loop},
  };
  int failed = 0;
  for (const auto& [name, run] : criteria) {
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double s = std::chrono::duration<double>(Clock::now() - t0).count();
    std::printf("%s %s: %s (%.1f s)\n", o.pass ? "PASS" : "FAIL", name, o.detail.c_str(), s);
    std::fflush(stdout);
    failed += !o.pass;
  }
  std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
