#include "snnball/deploy.hpp"

#include <cmath>
#include <filesystem>
#include <sstream>

#include "snnball/error.hpp"

namespace snnball {
namespace {

const char* pooling_name(PoolingAllowed p) {
  switch (p) {
    case PoolingAllowed::none: return "none";
    case PoolingAllowed::first_layer_only: return "first_layer_only";
    case PoolingAllowed::all: return "all";
  }
  return "?";
}

PoolingAllowed parse_pooling(const std::string& s) {
  if (s == "none") return PoolingAllowed::none;
  if (s == "first_layer_only") return PoolingAllowed::first_layer_only;
  if (s == "all") return PoolingAllowed::all;
  throw ValidationError("unknown pooling_allowed '" + s + "'");
}

template <typename T, typename F>
std::string join(const std::set<T>& items, F name) {
  std::string out;
  for (const auto& i : items) out += (out.empty() ? "" : ",") + std::string(name(i));
  return out;
}

}  // namespace

void DeviceProfile::validate() const {
  if (name.empty()) throw ValidationError("device profile needs a name");
  if (max_neurons_per_layer < 1) throw ValidationError("max_neurons_per_layer must be >= 1");
  if (weight_bits < 1) throw ValidationError("weight_bits must be >= 1");
  if (allowed_layer_kinds.empty()) throw ValidationError("allowed_layer_kinds must not be empty");
  if (neuron_modes_supported.empty()) throw ValidationError("neuron_modes_supported must not be empty");
}

std::vector<std::string> DeviceProfile::builtin_names() { return {"dynapcnn_like", "akida_like", "loihi2_like"}; }

// Numeric limits are fixtures sized so each built-in network fits its own
// device; they are not vendor figures.
DeviceProfile DeviceProfile::builtin(const std::string& name) {
  DeviceProfile p;
  p.name = name;
  if (name == "dynapcnn_like") {
    p.max_neurons_per_layer = 4096;
    p.allowed_layer_kinds = {LayerKind::conv2d, LayerKind::avgpool, LayerKind::linear};
    p.pooling_allowed = PoolingAllowed::all;
    p.bias_supported = false;
    p.weight_bits = 8;
    p.neuron_modes_supported = {NeuronMode::if_multispike};
  } else if (name == "akida_like") {
    p.max_neurons_per_layer = 32768;
    p.allowed_layer_kinds = {LayerKind::conv2d, LayerKind::maxpool, LayerKind::linear};
    p.pooling_allowed = PoolingAllowed::first_layer_only;
    p.bias_supported = true;
    p.weight_bits = 8;
    p.neuron_modes_supported = {NeuronMode::quantized_relu};
  } else if (name == "loihi2_like") {
    p.max_neurons_per_layer = 16384;
    p.allowed_layer_kinds = {LayerKind::conv2d, LayerKind::linear};
    p.pooling_allowed = PoolingAllowed::none;
    p.bias_supported = true;
    p.weight_bits = 8;
    p.neuron_modes_supported = {NeuronMode::lif_single};
  } else {
    throw ValidationError("unknown device profile '" + name + "'");
  }
  return p;
}

DeviceProfile DeviceProfile::from_kv(const KeyValues& kv) {
  DeviceProfile p;
  p.name = kv.require("name");
  p.max_neurons_per_layer = static_cast<int>(kv.get_int("max_neurons_per_layer", 0));
  for (const auto& k : split(kv.require("allowed_layer_kinds"), ','))
    if (!k.empty()) p.allowed_layer_kinds.insert(parse_layer_kind(k));
  p.pooling_allowed = parse_pooling(kv.get_string("pooling_allowed", "all"));
  p.bias_supported = kv.get_int("bias_supported", 1) != 0;
  p.weight_bits = static_cast<int>(kv.get_int("weight_bits", 8));
  for (const auto& m : split(kv.require("neuron_modes_supported"), ','))
    if (!m.empty()) p.neuron_modes_supported.insert(parse_neuron_mode(m));
  p.validate();
  return p;
}

DeviceProfile DeviceProfile::resolve(const std::string& name_or_path) {
  for (const auto& n : builtin_names())
    if (n == name_or_path) return builtin(n);
  if (std::filesystem::exists(name_or_path)) return from_kv(KeyValues::load(name_or_path));
  throw ValidationError("'" + name_or_path + "' is neither a built-in device profile nor a readable file");
}

KeyValues DeviceProfile::to_kv() const {
  KeyValues kv;
  kv.set("name", name);
  kv.set("max_neurons_per_layer", std::to_string(max_neurons_per_layer));
  kv.set("allowed_layer_kinds", join(allowed_layer_kinds, [](LayerKind k) { return to_string(k); }));
  kv.set("pooling_allowed", pooling_name(pooling_allowed));
  kv.set("bias_supported", bias_supported ? "1" : "0");
  kv.set("weight_bits", std::to_string(weight_bits));
  kv.set("neuron_modes_supported", join(neuron_modes_supported, [](NeuronMode m) { return to_string(m); }));
  return kv;
}

std::size_t ValidationReport::count(const std::string& constraint) const {
  std::size_t n = 0;
  for (const auto& v : violations) n += v.constraint == constraint;
  return n;
}

ValidationReport validate(const NetworkSpec& spec, const DeviceProfile& profile) {
  profile.validate();
  const auto shapes = spec.shapes();
  const auto blocks = spec.blocks();
  ValidationReport report;
  auto add = [&](std::size_t l, const char* constraint, std::string detail) {
    report.violations.push_back({l, blocks[l], constraint, std::move(detail)});
  };

  if (spec.weight_bits > profile.weight_bits)
    add(0, "weight_bits",
        std::to_string(spec.weight_bits) + "-bit weights exceed the device's " + std::to_string(profile.weight_bits));

  for (std::size_t l = 0; l < spec.layers.size(); ++l) {
    const LayerSpec& ls = spec.layers[l];
    if (ls.is_pool()) {
      if (profile.pooling_allowed == PoolingAllowed::none) {
        add(l, "pooling", std::string(to_string(ls.kind)) + " cannot be mapped onto " + profile.name);
        continue;
      }
      if (profile.pooling_allowed == PoolingAllowed::first_layer_only && blocks[l] != 1) {
        add(l, "pooling", "pooling is only supported after the first layer on " + profile.name);
        continue;
      }
    }
    if (!profile.allowed_layer_kinds.count(ls.kind))
      add(l, "layer_kind", std::string(to_string(ls.kind)) + " is not supported by " + profile.name);
    if ((ls.has_bias || ls.batchnorm) && !profile.bias_supported)
      add(l, "bias", "biases (or folded batchnorm) are not supported by " + profile.name);
    if (ls.activation) {
      if (!profile.neuron_modes_supported.count(ls.activation->mode))
        add(l, "neuron_mode", std::string(to_string(ls.activation->mode)) + " neurons are not supported");
      const std::size_t neurons = shapes[l].size();
      if (neurons > static_cast<std::size_t>(profile.max_neurons_per_layer))
        add(l, "max_neurons", std::to_string(neurons) + " neurons exceed the limit of " +
                                  std::to_string(profile.max_neurons_per_layer));
    }
  }
  return report;
}

QuantizedWeights quantize_weights(const Weights& weights, int bits) {
  if (bits < 2) throw ValidationError("weight quantization needs bits >= 2");
  QuantizedWeights q;
  q.weights = weights;
  const double levels = std::ldexp(1.0, bits - 1) - 1.0;
  for (auto& p : q.weights.layers) {
    double peak = 0.0;
    for (double w : p.weights) peak = std::max(peak, std::abs(w));
    if (peak == 0.0) {
      q.scale.push_back(1.0);
      q.max_error.push_back(0.0);
      continue;
    }
    const double scale = peak / levels;
    double err = 0.0;
    for (double& w : p.weights) {
      const double v = std::round(w / scale) * scale;
      err = std::max(err, std::abs(w - v));
      w = v;
    }
    q.scale.push_back(scale);
    q.max_error.push_back(err);
  }
  return q;
}

QuantizationGap report_gap(const NetworkSpec& spec, const Weights& weights, std::span<const LabeledSample> data,
                           int bits, int steps) {
  if (data.empty()) throw ValidationError("report_gap needs samples");
  const CompiledNetwork float_net(spec, weights);
  const CompiledNetwork quant_net(spec, quantize_weights(weights, bits).weights);
  std::vector<Pixel> truths, float_pred, quant_pred;
  for (const auto& s : data) {
    const auto input = s.frame.as_input();
    const Roi roi = Roi::of_frame(s.frame);
    float_pred.push_back(decode(float_net.run(input, steps).output, roi).global);
    quant_pred.push_back(decode(quant_net.run(input, steps).output, roi).global);
    truths.push_back(s.truth);
  }
  return {score(float_pred, truths), score(quant_pred, truths)};
}

}  // namespace snnball
