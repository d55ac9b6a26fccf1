#include "snnball/cli.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include "snnball/bench.hpp"
#include "snnball/decode.hpp"
#include "snnball/deploy.hpp"
#include "snnball/error.hpp"
#include "snnball/synth.hpp"
#include "snnball/training.hpp"

namespace fs = std::filesystem;

namespace snnball {
namespace {

struct Common {
  std::uint64_t seed = 0;
  std::string config;
  std::string out;
  CLI::Option* seed_opt = nullptr;
};

void add_common(CLI::App* cmd, Common& c) {
  c.seed_opt = cmd->add_option("--seed", c.seed, "random seed");
  cmd->add_option("--config", c.config, "key=value config file")->check(CLI::ExistingFile);
  cmd->add_option("--out", c.out, "output directory");
}

KeyValues config_of(const Common& c) { return c.config.empty() ? KeyValues{} : KeyValues::load(c.config); }

// A split root (train/ val/ test/) or a single bundle directory.
fs::path pick_split(const fs::path& data, const char* split) {
  if (fs::exists(data / "meta")) return data;
  if (fs::exists(data / split / "meta")) return data / split;
  throw ValidationError(data.string() + ": no dataset bundle (expected meta or " + split + "/meta)");
}

std::ofstream open_out(const fs::path& file) {
  if (file.has_parent_path()) fs::create_directories(file.parent_path());
  std::ofstream f(file);
  if (!f) throw ValidationError("cannot write " + file.string());
  return f;
}

// ---- gen --------------------------------------------------------------------

struct GenArgs {
  Common common;
  int trajectories = 100;
  int windows = 20;
  double edge_prob = 1.0;
  double noise_rate = 0.0;
  int jitter = 24;
  std::vector<double> ratios;
};

int cmd_gen(GenArgs& a, CLI::App& cmd, std::ostream& out) {
  const KeyValues kv = config_of(a.common);
  auto pick = [&](const char* flag, const char* key, auto value) {
    using T = decltype(value);
    if (cmd.get_option(flag)->count() || !kv.contains(key)) return value;
    if constexpr (std::is_integral_v<T>) return static_cast<T>(kv.get_int(key, value));
    else return static_cast<T>(kv.get_double(key, value));
  };
  TrajectorySampler sampler;
  sampler.sensor.width = static_cast<int>(kv.get_int("width", sampler.sensor.width));
  sampler.sensor.height = static_cast<int>(kv.get_int("height", sampler.sensor.height));
  sampler.speed_min = kv.get_double("speed_min", sampler.speed_min);
  sampler.speed_max = kv.get_double("speed_max", sampler.speed_max);
  sampler.gravity = kv.get_double("gravity", sampler.gravity);
  sampler.radius_min = kv.get_double("radius_min", sampler.radius_min);
  sampler.radius_max = kv.get_double("radius_max", sampler.radius_max);
  sampler.margin = kv.get_double("margin", sampler.margin);

  NoiseModel noise;
  noise.edge_event_prob = pick("--edge-prob", "edge_event_prob", a.edge_prob);
  noise.background_rate = pick("--noise-rate", "background_rate", a.noise_rate);

  DatasetOptions opt;
  opt.windows = pick("--windows", "windows", a.windows);
  opt.roi_jitter = pick("--jitter", "roi_jitter", a.jitter);
  opt.seed = cmd.get_option("--seed")->count() ? a.common.seed
                                               : static_cast<std::uint64_t>(kv.get_int("seed", 0));
  if (!a.ratios.empty()) {
    if (a.ratios.size() != 3) throw ValidationError("--ratios needs three values");
    opt.ratios = {a.ratios[0], a.ratios[1], a.ratios[2]};
  }
  const int n = pick("--trajectories", "trajectories", a.trajectories);
  if (n < 1) throw ValidationError("--trajectories must be >= 1");

  const auto sims = sample_trajectories(n, sampler, opt.seed);
  const DatasetSplits splits = make_dataset(sims, noise, opt);
  const fs::path root = a.common.out;
  write_bundle(splits.train, root / "train");
  write_bundle(splits.val, root / "val");
  write_bundle(splits.test, root / "test");
  out << "wrote " << root.string() << ": train " << splits.train.labels.size() << " / val "
      << splits.val.labels.size() << " / test " << splits.test.labels.size() << " frames from "
      << splits.trajectory_ids[0].size() << '/' << splits.trajectory_ids[1].size() << '/'
      << splits.trajectory_ids[2].size() << " trajectories\n";
  return kExitOk;
}

// ---- train ------------------------------------------------------------------

struct TrainArgs {
  Common common;
  std::string profile;
  std::string data;
  std::optional<int> epochs, batch, steps;
  std::optional<double> lr;
  bool quiet = false;
};

int cmd_train(TrainArgs& a, std::ostream& out) {
  const NetworkSpec base = build_profile(a.profile);
  TrainConfig config = TrainConfig::defaults_for(base.profile);
  if (!a.common.config.empty()) {
    KeyValues kv = config_of(a.common);
    kv.set("profile", a.profile);
    config = TrainConfig::from_kv(kv);
  }
  if (a.common.seed_opt->count()) config.seed = a.common.seed;
  if (a.epochs) config.epochs = *a.epochs;
  if (a.batch) config.batch_size = *a.batch;
  if (a.steps) config.steps = *a.steps;
  if (a.lr) config.learning_rate = *a.lr;
  config.validate();

  NetworkSpec spec = base;
  if (config.steps > 0) spec.steps = config.steps;

  const fs::path data = a.data;
  const auto train = load_dataset(pick_split(data, "train"));
  if (train.empty()) throw ValidationError("training split is empty");

  const auto started = std::chrono::steady_clock::now();
  const EpochCallback progress = [&](int epoch, const LossBreakdown& l, const Weights&) {
    if (a.quiet) return;
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    out << "epoch " << epoch << "  mse " << l.mse << "  synops " << l.synops_penalty << "  wmax "
        << l.weightmax_penalty << "  total " << l.total << "  (" << s << " s)\n";
  };
  const TrainResult result = spec.quantized() ? train_qat(spec, train, config, nullptr, progress)
                                              : train_bptt(spec, train, config, nullptr, progress);

  const fs::path dir = a.common.out.empty() ? fs::path(".") : fs::path(a.common.out);
  fs::create_directories(dir);
  save_model(dir / "model.snn", spec, result.weights);
  {
    auto f = open_out(dir / "history.csv");
    write_history(f, result.history);
  }
  config.to_kv().save(dir / "train.kv");

  for (const char* split : {"val", "test"}) {
    if (!fs::exists(data / split / "meta")) continue;
    const auto samples = load_dataset(data / split);
    if (samples.empty()) continue;
    const CompiledNetwork net(spec, result.weights);
    std::vector<Pixel> pred, truth;
    for (const auto& s : samples) {
      pred.push_back(decode(net.run(s.frame.as_input()).output, Roi::of_frame(s.frame)).global);
      truth.push_back(s.truth);
    }
    const ErrorStats e = score(pred, truth);
    out << split << " error " << e.mean << " +- " << e.stddev << " px over " << e.count << " frames\n";
    break;
  }
  out << "model written to " << (dir / "model.snn").string() << '\n';
  return kExitOk;
}

// ---- infer ------------------------------------------------------------------

struct InferArgs {
  Common common;
  std::string model;
  std::string data;
  int steps = 0;
  bool track = false;
  int lost_after = 5;
};

int cmd_infer(InferArgs& a, std::ostream& out) {
  const Model m = load_model(a.model);
  const Bundle bundle = read_bundle(pick_split(a.data, "test"));
  if (bundle.labels.empty()) throw ValidationError("dataset has no labelled windows");
  const CompiledNetwork net(m.spec, m.weights);

  std::vector<TimedDetection> detections;
  ErrorStats error;
  bool lost = false;
  if (a.track) {
    TrackOptions opt;
    opt.start = bundle.labels.front().t;
    opt.window_us = bundle.meta.window_us;
    opt.lost_after = a.lost_after;
    opt.steps = a.steps;
    const TrackResult r = trajectory_eval(net, bundle.events, bundle.labels, bundle.roi_for(0), bundle.meta.sensor, opt);
    detections = r.detections;
    error = r.error;
    lost = r.lost;
    if (lost) out << "track lost at window " << r.lost_at << '\n';
  } else {
    std::vector<Pixel> pred, truth;
    for (std::size_t i = 0; i < bundle.labels.size(); ++i) {
      const TimeWindow w = bundle.window_for(i);
      const Roi roi = bundle.roi_for(i);
      const EventFrame frame = accumulate(slice_window(bundle.events, w), roi, w);
      const Detection d = decode(net.run(frame.as_input(), a.steps).output, roi);
      detections.push_back({w.start, d});
      pred.push_back(d.global);
      truth.push_back(bundle.labels[i].center);
    }
    error = score(pred, truth);
  }

  if (a.common.out.empty()) {
    out << "t_us,gx,gy,conf_x,conf_y\n";
    write_detections(out, detections);
  } else {
    const fs::path file = fs::path(a.common.out) / "detections.csv";
    auto f = open_out(file);
    f << "t_us,gx,gy,conf_x,conf_y\n";
    write_detections(f, detections);
    out << "detections written to " << file.string() << '\n';
  }
  out << "error " << error.mean << " +- " << error.stddev << " px over " << error.count << " frames\n";
  return lost ? kExitValidation : kExitOk;
}

// ---- bench ------------------------------------------------------------------

struct BenchArgs {
  Common common;
  std::string profile;
  std::string model;
  std::string data;
  int runs = 10;
  int steps = 0;
  int threads = 1;
};

int cmd_bench(BenchArgs& a, std::ostream& out) {
  NetworkSpec spec;
  Weights weights;
  if (!a.model.empty()) {
    Model m = load_model(a.model);
    if (!a.profile.empty() && m.spec.profile != parse_profile(a.profile))
      throw ValidationError("model " + a.model + " is " + to_string(m.spec.profile) + ", not " + a.profile);
    spec = std::move(m.spec);
    weights = std::move(m.weights);
  } else if (!a.profile.empty()) {
    spec = build_profile(a.profile);
    weights = init_weights(spec, a.common.seed);
  } else {
    throw CLI::ValidationError("bench", "--model or --profile is required");
  }
  const Bundle bundle = read_bundle(pick_split(a.data, "test"));
  BenchOptions opt;
  opt.runs = a.runs;
  opt.steps = a.steps;
  opt.threads = a.threads;
  const BenchReport report = bench(spec, weights, bundle, opt);

  print_bench_table(out, report);
  out << '\n';
  write_bench_csv(out, report);
  if (!a.common.out.empty()) {
    const fs::path dir = a.common.out;
    auto summary = open_out(dir / "bench.csv");
    write_bench_csv(summary, report);
    auto runs = open_out(dir / "bench_runs.csv");
    write_bench_runs(runs, report);
  }
  return kExitOk;
}

// ---- check ------------------------------------------------------------------

struct CheckArgs {
  Common common;
  std::string device;
  std::string model;
  std::string profile;
};

int cmd_check(CheckArgs& a, std::ostream& out) {
  NetworkSpec spec;
  if (!a.model.empty()) spec = load_model(a.model).spec;
  else if (!a.profile.empty()) spec = build_profile(a.profile);
  else throw CLI::ValidationError("check", "--model or --profile is required");

  const DeviceProfile device = DeviceProfile::resolve(a.device);
  const ValidationReport report = validate(spec, device);
  out << to_string(spec.profile) << " on " << device.name << ": " << (report.passed() ? "ok" : "FAILED") << '\n';
  for (const Violation& v : report.violations)
    out << "  layer " << v.layer << " (block " << v.block << ") " << v.constraint << ": " << v.detail << '\n';
  return report.passed() ? kExitOk : kExitValidation;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"snnball: event-based spiking ball detection"};
  app.require_subcommand(1);

  GenArgs gen;
  auto* g = app.add_subcommand("gen", "generate a synthetic dataset (train/ val/ test/ bundles)");
  add_common(g, gen.common);
  g->get_option("--out")->required();
  g->add_option("--trajectories", gen.trajectories, "number of ball trajectories");
  g->add_option("--windows", gen.windows, "1 ms windows per trajectory");
  g->add_option("--edge-prob", gen.edge_prob, "probability an edge pixel fires per window");
  g->add_option("--noise-rate", gen.noise_rate, "background events per window per megapixel");
  g->add_option("--jitter", gen.jitter, "max ROI offset from the ball, pixels");
  g->add_option("--ratios", gen.ratios, "train val test fractions")->expected(3);

  TrainArgs train;
  auto* t = app.add_subcommand("train", "train a profile on a dataset");
  add_common(t, train.common);
  t->add_option("--profile", train.profile, "sinabs_like | metatf_like | lava_like")->required();
  t->add_option("--data", train.data, "dataset root or bundle")->required()->check(CLI::ExistingDirectory);
  t->add_option("--epochs", train.epochs);
  t->add_option("--batch", train.batch);
  t->add_option("--lr", train.lr);
  t->add_option("--steps", train.steps, "simulation time steps");
  t->add_flag("--quiet", train.quiet, "no per-epoch log");

  InferArgs infer;
  auto* i = app.add_subcommand("infer", "run a model over a dataset and write detections");
  add_common(i, infer.common);
  i->add_option("--model", infer.model)->required()->check(CLI::ExistingFile);
  i->add_option("--data", infer.data)->required()->check(CLI::ExistingDirectory);
  i->add_option("--steps", infer.steps, "override time steps");
  i->add_flag("--track", infer.track, "closed loop: ROIs from previous detections");
  i->add_option("--lost-after", infer.lost_after, "zero-confidence windows tolerated before the track is lost");

  BenchArgs bargs;
  auto* b = app.add_subcommand("bench", "time forward pass and inference over repeated runs");
  add_common(b, bargs.common);
  b->add_option("--profile", bargs.profile);
  b->add_option("--model", bargs.model)->check(CLI::ExistingFile);
  b->add_option("--data", bargs.data)->required()->check(CLI::ExistingDirectory);
  b->add_option("--runs", bargs.runs)->check(CLI::PositiveNumber);
  b->add_option("--steps", bargs.steps, "override time steps");
  b->add_option("--threads", bargs.threads, "kernel threads (1 for latency)")->check(CLI::PositiveNumber);

  CheckArgs check;
  auto* c = app.add_subcommand("check", "validate a network against a device profile");
  add_common(c, check.common);
  c->add_option("--profile-file", check.device, "built-in device name or key=value file")->required();
  c->add_option("--model", check.model)->check(CLI::ExistingFile);
  c->add_option("--profile", check.profile, "built-in network profile instead of a model");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return kExitUsage;
  }

  try {
    if (*g) return cmd_gen(gen, *g, out);
    if (*t) return cmd_train(train, out);
    if (*i) return cmd_infer(infer, out);
    if (*b) return cmd_bench(bargs, out);
    if (*c) return cmd_check(check, out);
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitValidation;
  }
  return kExitUsage;
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  std::vector<const char*> argv{"snnball"};
  for (const auto& a : args) argv.push_back(a.c_str());
  return run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
}

}  // namespace snnball
