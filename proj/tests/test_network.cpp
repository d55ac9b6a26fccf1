#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "snnball/error.hpp"
#include "snnball/network.hpp"
#include "support.hpp"

using namespace snnball;

namespace {

const NeuronParams kIf{NeuronMode::if_multispike, 1.0, 0.0};

std::vector<double> random_frame(std::mt19937_64& rng, std::size_t n, double density) {
  std::bernoulli_distribution on(density);
  std::vector<double> v(n);
  for (auto& x : v) x = on(rng) ? 1.0 : 0.0;
  return v;
}

NetworkSpec toy_spec(NeuronParams act = kIf, bool pool = true) {
  NetworkSpec s;
  s.input = {1, 10, 10};
  s.steps = 16;
  auto c = LayerSpec::conv(3, 3, 1, act);
  c.has_bias = true;
  s.layers = {c};
  if (pool) s.layers.push_back(LayerSpec::avgpool(2));
  auto l1 = LayerSpec::linear(12, act);
  l1.has_bias = true;
  s.layers.push_back(l1);
  s.layers.push_back(LayerSpec::linear(6, act));
  s.validate();
  return s;
}

// Direct loops over the documented layouts, with one NeuronState per layer.
std::vector<double> reference_forward(const NetworkSpec& spec, const Weights& w, const std::vector<double>& input,
                                      int T) {
  const auto shapes = spec.shapes();
  std::vector<NeuronState> states;
  for (std::size_t l = 0; l < spec.layers.size(); ++l)
    states.emplace_back(shapes[l].size(), spec.layers[l].activation.value_or(kIf));
  std::vector<double> sum(shapes.back().size(), 0.0);
  for (int t = 0; t < T; ++t) {
    std::vector<double> x = input;
    Shape in = spec.input;
    for (std::size_t l = 0; l < spec.layers.size(); ++l) {
      const LayerSpec& ls = spec.layers[l];
      const Shape out = shapes[l];
      std::vector<double> y(out.size(), 0.0);
      const auto& p = w.layers[l];
      if (ls.kind == LayerKind::conv2d) {
        for (int co = 0; co < out.channels; ++co)
          for (int oy = 0; oy < out.height; ++oy)
            for (int ox = 0; ox < out.width; ++ox) {
              double acc = p.bias.empty() ? 0.0 : p.bias[co];
              for (int ci = 0; ci < in.channels; ++ci)
                for (int ky = 0; ky < ls.kernel_h; ++ky)
                  for (int kx = 0; kx < ls.kernel_w; ++kx)
                    acc += p.weights[((co * in.channels + ci) * ls.kernel_h + ky) * ls.kernel_w + kx] *
                           x[(ci * in.height + oy * ls.stride + ky) * in.width + ox * ls.stride + kx];
              y[(co * out.height + oy) * out.width + ox] = acc;
            }
      } else if (ls.kind == LayerKind::linear) {
        for (std::size_t o = 0; o < out.size(); ++o) {
          double acc = p.bias.empty() ? 0.0 : p.bias[o];
          for (std::size_t i = 0; i < x.size(); ++i) acc += p.weights[i * out.size() + o] * x[i];
          y[o] = acc;
        }
      } else {
        const int k = ls.kernel_h;
        for (int c = 0; c < out.channels; ++c)
          for (int oy = 0; oy < out.height; ++oy)
            for (int ox = 0; ox < out.width; ++ox) {
              double acc = 0.0;
              for (int dy = 0; dy < k; ++dy)
                for (int dx = 0; dx < k; ++dx) acc += x[(c * in.height + oy * k + dy) * in.width + ox * k + dx];
              y[(c * out.height + oy) * out.width + ox] = acc / (k * k);
            }
      }
      if (ls.activation) {
        const auto n = ls.activation->mode == NeuronMode::lif_single ? step_lif(states[l], y)
                                                                     : step_if_multispike(states[l], y);
        for (std::size_t i = 0; i < y.size(); ++i) y[i] = n[i];
      }
      x = std::move(y);
      in = out;
    }
    for (std::size_t i = 0; i < sum.size(); ++i) sum[i] += x[i];
  }
  for (double& v : sum) v /= T;
  return sum;
}

// Outgoing connections counted one synapse at a time.
std::vector<double> brute_fanout(const NetworkSpec& spec, std::size_t l) {
  const auto shapes = spec.shapes();
  std::size_t next = l + 1;
  while (next < spec.layers.size() && !spec.layers[next].has_weights()) ++next;
  std::vector<double> fan(shapes[l].size(), 0.0);
  if (next == spec.layers.size()) return fan;
  // Map every neuron to its index in the input of `next`, or -1 if pooling drops it.
  std::vector<long> where(shapes[l].size());
  for (std::size_t i = 0; i < where.size(); ++i) where[i] = static_cast<long>(i);
  Shape cur = shapes[l];
  for (std::size_t p = l + 1; p < next; ++p) {
    const int k = spec.layers[p].kernel_h;
    const Shape out = shapes[p];
    for (auto& w : where) {
      if (w < 0) continue;
      const long c = w / (cur.height * cur.width), y = (w / cur.width) % cur.height, x = w % cur.width;
      if (y / k >= out.height || x / k >= out.width) {
        w = -1;
        continue;
      }
      w = (c * out.height + y / k) * out.width + x / k;
    }
    cur = out;
  }
  const LayerSpec& t = spec.layers[next];
  const Shape out = shapes[next];
  std::vector<double> in_fan(cur.size(), 0.0);
  if (t.kind == LayerKind::linear) {
    std::fill(in_fan.begin(), in_fan.end(), static_cast<double>(t.out_channels));
  } else {
    for (int co = 0; co < out.channels; ++co)
      for (int oy = 0; oy < out.height; ++oy)
        for (int ox = 0; ox < out.width; ++ox)
          for (int ci = 0; ci < cur.channels; ++ci)
            for (int ky = 0; ky < t.kernel_h; ++ky)
              for (int kx = 0; kx < t.kernel_w; ++kx)
                in_fan[(ci * cur.height + oy * t.stride + ky) * cur.width + ox * t.stride + kx] += 1.0;
  }
  for (std::size_t i = 0; i < fan.size(); ++i) fan[i] = where[i] < 0 ? 0.0 : in_fan[where[i]];
  return fan;
}

}  // namespace

TEST_CASE("profile shapes") {
  const auto sinabs = build_profile("sinabs_like").shapes();
  REQUIRE(sinabs.size() == 6);
  CHECK(sinabs[0] == Shape{4, 30, 30});
  CHECK(sinabs[1] == Shape{4, 15, 15});
  CHECK(sinabs[2] == Shape{4, 13, 13});
  CHECK(sinabs[3] == Shape{4, 6, 6});
  CHECK(sinabs[3].size() == 144);
  CHECK(sinabs[4].size() == 64);
  CHECK(sinabs[5].size() == 128);

  const auto meta = build_profile("metatf_like").shapes();
  CHECK(meta[0] == Shape{4, 30, 30});
  CHECK(meta[1] == Shape{4, 15, 15});
  CHECK(meta[2] == Shape{4, 7, 7});
  CHECK(meta[2].size() == 196);
  CHECK(meta.back().size() == 128);

  const auto lava = build_profile("lava_like");
  for (const auto& l : lava.layers) CHECK_FALSE(l.is_pool());
  CHECK(lava.shapes()[1] == Shape{16, 28, 28});
  CHECK(lava.steps == 20);
  CHECK(build_profile("sinabs_like").steps == 8);
  CHECK(build_profile("metatf_like").steps == 1);
  CHECK_THROWS_AS(build_profile("yolo"), ValidationError);
}

TEST_CASE("broken chaining is rejected") {
  NetworkSpec s = build_profile("sinabs_like");
  s.layers[2].kernel_h = s.layers[2].kernel_w = 17;
  CHECK_THROWS_AS(s.validate(), ShapeError);
  NetworkSpec t = build_profile("lava_like");
  t.layers.back().out_channels = 100;
  CHECK_THROWS_AS(t.validate(), ShapeError);
  NetworkSpec u = build_profile("sinabs_like");
  u.layers[0].stride = 0;
  CHECK_THROWS(u.validate());
}

TEST_CASE("zero frame and zero biases give silence") {
  for (const char* name : {"sinabs_like", "lava_like"}) {
    const NetworkSpec spec = build_profile(name);
    const Weights w = init_weights(spec, 1, 3.0);
    const auto r = forward(spec, w, EventFrame{}, spec.steps);
    for (double v : r.output) CHECK(v == 0.0);
    CHECK(r.trace.synaptic_ops == 0);
  }
}

TEST_CASE("sub-threshold first layer silences the output") {
  std::mt19937_64 rng(2);
  const NetworkSpec spec = build_profile("sinabs_like");
  Weights w = init_weights(spec, 2, 1.0);
  for (double& v : w.layers[0].weights) v = std::abs(v) * 1e-4;  // 25 inputs · 1e-4 · 8 steps < 1
  const auto r = forward(spec, w, random_frame(rng, 4096, 0.5), spec.steps);
  for (double v : r.output) CHECK(v == 0.0);
  CHECK(r.trace.synaptic_ops == 0);
}

TEST_CASE("engine matches an independent reference simulator") {
  std::mt19937_64 rng(3);
  for (const NeuronParams act : {kIf, NeuronParams{NeuronMode::lif_single, 0.25, 0.05}}) {
    for (int k = 0; k < 10; ++k) {
      const NetworkSpec spec = toy_spec(act, k % 2 == 0);
      Weights w = init_weights(spec, 100 + k, 2.5);
      for (auto& p : w.layers)
        for (auto& b : p.bias) b = 0.05 * static_cast<double>(rng() % 7);
      const auto x = random_frame(rng, spec.input.size(), 0.3);
      const auto got = forward(spec, w, x, 16).output;
      const auto want = reference_forward(spec, w, x, 16);
      for (std::size_t i = 0; i < got.size(); ++i) REQUIRE(got[i] == doctest::Approx(want[i]).epsilon(1e-12));
    }
  }
}

TEST_CASE("synaptic ops equal an independent recount") {
  std::mt19937_64 rng(4);
  for (const char* name : {"sinabs_like", "lava_like"}) {
    const NetworkSpec spec = build_profile(name);
    const Weights w = init_weights(spec, 9, 3.0);
    const auto fans = fanout(spec);
    const auto r = forward(spec, w, random_frame(rng, 4096, 0.05), spec.steps, {true});
    double ops = 0.0;
    for (std::size_t l = 0; l < spec.layers.size(); ++l) {
      if (!spec.layers[l].activation) continue;
      const auto expected = brute_fanout(spec, l);
      REQUIRE(fans[l] == expected);
      for (int t = 0; t < spec.steps; ++t) {
        const auto s = r.trace.layers[l].step(t);
        for (std::size_t i = 0; i < s.size(); ++i) ops += s[i] * expected[i];
      }
    }
    CHECK(ops > 0.0);
    CHECK(static_cast<double>(r.trace.synaptic_ops) == ops);
  }
}

TEST_CASE("border neurons have smaller fan-out and pooled-away neurons none") {
  const NetworkSpec spec = build_profile("sinabs_like");
  const auto fan = fanout(spec);
  // conv1 output 30x30 -> pool 15x15 -> conv 3x3 (4 channels)
  CHECK(fan[0][0] == 4.0);            // pool cell (0,0) feeds one position per output channel
  CHECK(fan[0][7 * 30 + 7] == 36.0);  // interior: 3x3 positions x 4 channels
  // conv2 output 13x13 -> pool 6x6 drops row/col 12
  CHECK(fan[2][12] == 0.0);
  CHECK(fan[2][0] == 64.0);
  for (double v : fan[5]) CHECK(v == 0.0);
}

TEST_CASE("forward is deterministic and compiled network agrees") {
  std::mt19937_64 rng(5);
  const NetworkSpec spec = build_profile("sinabs_like");
  const Weights w = init_weights(spec, 5, 3.0);
  const auto x = random_frame(rng, 4096, 0.02);
  const auto a = forward(spec, w, x, 8);
  const auto b = forward(spec, w, x, 8);
  CHECK(a.output == b.output);
  CHECK(a.trace.synaptic_ops == b.trace.synaptic_ops);
  const CompiledNetwork net(spec, w);
  const auto c = net.run(x);
  CHECK(c.output == a.output);
  CHECK(net.run(x, 4).output == forward(spec, w, x, 4).output);
}

TEST_CASE("rates equal the relu network on rational fixtures") {
  std::mt19937_64 rng(6);
  const int T = 16;
  NetworkSpec spec;
  spec.input = {1, 8, 8};
  spec.steps = T;
  auto c = LayerSpec::conv(2, 3, 1, kIf);
  c.has_bias = true;
  auto l1 = LayerSpec::linear(10, kIf);
  l1.has_bias = true;
  auto l2 = LayerSpec::linear(5, kIf);
  l2.has_bias = true;
  spec.layers = {c, l1, l2};
  for (int k = 0; k < 10; ++k) {
    Weights w = zero_weights(spec);
    std::uniform_int_distribution<int> sixteenth(-8, 8), small(0, 2), bias(0, 8);
    for (double& v : w.layers[0].weights) v = sixteenth(rng) / 16.0;
    for (double& v : w.layers[0].bias) v = sixteenth(rng) / 16.0;
    for (std::size_t l = 1; l < 3; ++l) {
      for (double& v : w.layers[l].weights) v = (rng() % 6 == 0) ? small(rng) : 0.0;
      for (double& v : w.layers[l].bias) v = bias(rng) / 16.0;
    }
    const auto x = random_frame(rng, 64, 0.4);
    const auto rates = forward(spec, w, x, T).output;
    const auto ann = forward_ann(spec, w, x);
    for (std::size_t i = 0; i < rates.size(); ++i) REQUIRE(std::abs(rates[i] - ann[i]) <= 1e-9);
  }
}

TEST_CASE("rate gap to the relu network shrinks with more steps") {
  std::mt19937_64 rng(7);
  const NetworkSpec spec = toy_spec(kIf, false);
  Weights w = init_weights(spec, 7, 1.0);
  for (auto& p : w.layers)
    for (double& v : p.weights) v = std::abs(v);
  double previous = 1e9;
  for (int T : {8, 16, 32, 64}) {
    double gap = 0.0;
    for (int k = 0; k < 5; ++k) {
      std::mt19937_64 frames(100 + k);
      const auto x = random_frame(frames, spec.input.size(), 0.4);
      const auto r = forward(spec, w, x, T).output;
      const auto a = forward_ann(spec, w, x);
      for (std::size_t i = 0; i < r.size(); ++i) gap = std::max(gap, std::abs(r[i] - a[i]));
    }
    CHECK(gap <= previous + 1e-12);
    previous = gap;
  }
  CHECK(previous < 0.2);
}

TEST_CASE("shape and value errors") {
  const NetworkSpec spec = build_profile("sinabs_like");
  Weights w = init_weights(spec, 1);
  CHECK_THROWS_AS(forward(spec, w, std::vector<double>(100, 0.0), 8), ShapeError);
  Weights bad = w;
  bad.layers[0].weights.pop_back();
  CHECK_THROWS_AS(forward(spec, bad, EventFrame{}, 8), ShapeError);
  bad = w;
  bad.layers[4].weights[3] = std::nan("");
  CHECK_THROWS_AS(forward(spec, bad, EventFrame{}, 8), NumericError);
  CHECK_THROWS_AS(forward(spec, w, EventFrame{}, 0), ValidationError);
}

TEST_CASE("batchnorm folding preserves the output") {
  std::mt19937_64 rng(8);
  const NetworkSpec spec = build_profile("metatf_like");
  Weights w = init_weights(spec, 8);
  std::uniform_real_distribution<double> u(0.5, 2.0), h(-0.2, 0.2);
  for (auto& p : w.layers) {
    for (double& v : p.bn_scale) v = u(rng);
    for (double& v : p.bn_shift) v = h(rng);
    for (double& v : p.bias) v = h(rng);
    p.act_range = 2.0;
  }
  Weights folded = w;
  fold_batchnorm(spec, folded);
  for (const auto& p : folded.layers) CHECK(p.bn_scale.empty());
  for (int k = 0; k < 5; ++k) {
    const auto x = random_frame(rng, 4096, 0.03);
    const auto a = forward(spec, w, x, 1).output;
    const auto b = forward(spec, folded, x, 1).output;
    for (std::size_t i = 0; i < a.size(); ++i) REQUIRE(a[i] == doctest::Approx(b[i]).epsilon(1e-9));
  }
}

TEST_CASE("model file round trips bit-exactly") {
  TempDir dir;
  for (const char* name : {"sinabs_like", "metatf_like", "lava_like"}) {
    const NetworkSpec spec = build_profile(name);
    Weights w = init_weights(spec, 11, 1.7);
    for (auto& p : w.layers) {
      for (double& v : p.bias) v = 0.1 / 3.0;
      p.act_range = 1.0 / 7.0;
    }
    save_model(dir / name, spec, w);
    const Model m = load_model(dir / name);
    CHECK(m.spec == spec);
    CHECK(m.weights == w);
  }
}

TEST_CASE("malformed model files raise parse errors with a line") {
  const NetworkSpec spec = build_profile("lava_like");
  std::ostringstream out;
  write_model(out, spec, init_weights(spec, 1));
  std::string text = out.str();
  std::istringstream ok(text);
  CHECK_NOTHROW(read_model(ok));

  std::string broken = text;
  broken.replace(broken.find("steps"), 5, "stepz");
  std::istringstream a(broken);
  CHECK_THROWS_AS(read_model(a), ParseError);

  std::string truncated = text.substr(0, text.size() / 2);
  std::istringstream b(truncated);
  CHECK_THROWS(read_model(b));

  std::istringstream c("not a model\n");
  CHECK_THROWS_AS(read_model(c), ParseError);
}

TEST_CASE("parameter count of the profiles") {
  // conv 4*1*25 + conv 4*4*9 + 144*64 + 64*128
  CHECK(parameter_count(zero_weights(build_profile("sinabs_like"))) == 100 + 144 + 9216 + 8192);
}
