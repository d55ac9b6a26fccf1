#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "snnball/deploy.hpp"
#include "snnball/error.hpp"

using namespace snnball;

namespace {

Weights one_layer(std::vector<double> w) {
  Weights out;
  out.layers.resize(1);
  out.layers[0].weights = std::move(w);
  return out;
}

}  // namespace

TEST_CASE("each built-in network fits its own device") {
  CHECK(validate(build_profile("sinabs_like"), DeviceProfile::builtin("dynapcnn_like")).passed());
  CHECK(validate(build_profile("metatf_like"), DeviceProfile::builtin("akida_like")).passed());
  CHECK(validate(build_profile("lava_like"), DeviceProfile::builtin("loihi2_like")).passed());
}

TEST_CASE("pooling network on a pooling-free device reports every pool") {
  const auto r = validate(build_profile("sinabs_like"), DeviceProfile::builtin("loihi2_like"));
  CHECK(!r.passed());
  CHECK(r.count("pooling") == 2);
  std::vector<std::size_t> pools;
  for (const auto& v : r.violations)
    if (v.constraint == "pooling") pools.push_back(v.layer);
  CHECK(pools == std::vector<std::size_t>{1, 3});
  // IF neurons are not LIF neurons either.
  CHECK(r.count("neuron_mode") == 4);
}

TEST_CASE("pooling past the first block fails a first-layer-only device") {
  NetworkSpec spec = build_profile("metatf_like");
  spec.layers.insert(spec.layers.begin() + 3, LayerSpec::maxpool(2));
  spec.profile = Profile::custom;
  spec.validate();
  const auto r = validate(spec, DeviceProfile::builtin("akida_like"));
  REQUIRE(r.violations.size() == 1);
  CHECK(r.violations[0].constraint == "pooling");
  CHECK(r.violations[0].layer == 3);
  CHECK(r.violations[0].block == 2);
}

TEST_CASE("every constraint has a failing case") {
  const NetworkSpec sinabs = build_profile("sinabs_like");
  DeviceProfile d = DeviceProfile::builtin("dynapcnn_like");

  SUBCASE("max_neurons") {
    d.max_neurons_per_layer = 100;
    const auto r = validate(sinabs, d);
    CHECK(r.count("max_neurons") == 3);  // 4x30x30, 4x13x13 and the 128 outputs
    CHECK(r.violations[0].layer == 0);
  }
  SUBCASE("layer_kind") {
    d.allowed_layer_kinds.erase(LayerKind::avgpool);
    CHECK(validate(sinabs, d).count("layer_kind") == 2);
  }
  SUBCASE("pooling") {
    d.pooling_allowed = PoolingAllowed::first_layer_only;
    const auto r = validate(sinabs, d);
    CHECK(r.count("pooling") == 1);
    CHECK(r.violations[0].layer == 3);
  }
  SUBCASE("bias") {
    const auto r = validate(build_profile("metatf_like"), d);
    CHECK(r.count("bias") == 4);
  }
  SUBCASE("neuron_mode") {
    d.neuron_modes_supported = {NeuronMode::lif_single};
    CHECK(validate(sinabs, d).count("neuron_mode") == 4);
  }
  SUBCASE("weight_bits") {
    DeviceProfile a = DeviceProfile::builtin("akida_like");
    a.weight_bits = 4;
    const auto r = validate(build_profile("metatf_like"), a);
    REQUIRE(r.violations.size() == 1);
    CHECK(r.violations[0].constraint == "weight_bits");
  }
}

TEST_CASE("device profile files") {
  for (const auto& name : DeviceProfile::builtin_names()) {
    const auto p = DeviceProfile::builtin(name);
    std::ostringstream text;
    p.to_kv().write(text);
    std::istringstream in(text.str());
    const auto back = DeviceProfile::from_kv(KeyValues::parse(in));
    CHECK(back.name == p.name);
    CHECK(back.max_neurons_per_layer == p.max_neurons_per_layer);
    CHECK(back.allowed_layer_kinds == p.allowed_layer_kinds);
    CHECK(back.pooling_allowed == p.pooling_allowed);
    CHECK(back.bias_supported == p.bias_supported);
    CHECK(back.weight_bits == p.weight_bits);
    CHECK(back.neuron_modes_supported == p.neuron_modes_supported);
  }
  CHECK_THROWS_AS(DeviceProfile::builtin("tpu"), ValidationError);
  CHECK_THROWS_AS(DeviceProfile::resolve("/nonexistent/profile.kv"), ValidationError);
  std::istringstream bad("name=x\nallowed_layer_kinds=conv2d\nneuron_modes_supported=if_multispike\n");
  CHECK_THROWS_AS(DeviceProfile::from_kv(KeyValues::parse(bad)), ValidationError);  // no neuron limit
  std::istringstream kind("name=x\nmax_neurons_per_layer=5\nallowed_layer_kinds=lstm\nneuron_modes_supported=if_multispike\n");
  CHECK_THROWS(DeviceProfile::from_kv(KeyValues::parse(kind)));
}

TEST_CASE("weight quantization arithmetic") {
  const auto q = quantize_weights(one_layer({-1.0, 0.5}), 3);
  CHECK(q.scale[0] == doctest::Approx(1.0 / 3));
  CHECK(q.weights.layers[0].weights[0] == doctest::Approx(-1.0));
  CHECK(q.weights.layers[0].weights[1] == doctest::Approx(2.0 / 3));
  CHECK(q.max_error[0] == doctest::Approx(1.0 / 6));

  const auto z = quantize_weights(one_layer({0.0, 0.0}), 8);
  CHECK(z.scale[0] == 1.0);
  CHECK(z.max_error[0] == 0.0);
  CHECK_THROWS_AS(quantize_weights(one_layer({1.0}), 1), ValidationError);
}

TEST_CASE("quantization error bound and idempotence") {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n(0, 0.3);
  for (int bits : {2, 4, 8, 12}) {
    std::vector<double> w(500);
    for (auto& v : w) v = n(rng);
    const auto q = quantize_weights(one_layer(w), bits);
    for (std::size_t i = 0; i < w.size(); ++i)
      REQUIRE(std::abs(w[i] - q.weights.layers[0].weights[i]) <= q.scale[0] / 2 + 1e-15);
    const auto again = quantize_weights(q.weights, bits);
    for (std::size_t i = 0; i < w.size(); ++i)
      REQUIRE(again.weights.layers[0].weights[i] == doctest::Approx(q.weights.layers[0].weights[i]).epsilon(1e-12));
  }
}

TEST_CASE("quantization gap vanishes at high precision") {
  const NetworkSpec spec = build_profile("lava_like");
  const Weights w = init_weights(spec, 1, 3.0);
  std::vector<LabeledSample> data;
  std::mt19937_64 rng(1);
  for (int k = 0; k < 4; ++k) {
    LabeledSample s;
    s.frame = EventFrame({0, 0}, {});
    for (int i = 0; i < 200; ++i) s.frame.set(static_cast<int>(rng() % 64), static_cast<int>(rng() % 64));
    s.truth = s.truth_local = {32, 32};
    data.push_back(s);
  }
  const auto g = report_gap(spec, w, data, 24, 4);
  CHECK(std::abs(g.gap()) <= 1e-6);
  CHECK(g.float_error.count == 4);
  CHECK_THROWS_AS(report_gap(spec, w, std::vector<LabeledSample>{}, 8), ValidationError);
}
