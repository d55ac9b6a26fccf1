#pragma once

// Neuromorphic device constraint profiles, network validation against them
// and symmetric per-layer weight quantization.

#include <filesystem>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "snnball/decode.hpp"
#include "snnball/kv.hpp"
#include "snnball/network.hpp"

namespace snnball {

enum class PoolingAllowed { none, first_layer_only, all };

struct DeviceProfile {
  std::string name;
  int max_neurons_per_layer = 0;
  std::set<LayerKind> allowed_layer_kinds;
  PoolingAllowed pooling_allowed = PoolingAllowed::all;
  bool bias_supported = true;
  int weight_bits = 8;
  std::set<NeuronMode> neuron_modes_supported;

  void validate() const;
  /// dynapcnn_like, akida_like or loihi2_like.
  static DeviceProfile builtin(const std::string& name);
  static std::vector<std::string> builtin_names();
  static DeviceProfile from_kv(const KeyValues& kv);
  /// A built-in name or a path to a key=value profile file.
  static DeviceProfile resolve(const std::string& name_or_path);
  KeyValues to_kv() const;
};

struct Violation {
  std::size_t layer = 0;  // index into NetworkSpec::layers
  int block = 0;          // 1-based weighted-layer block
  std::string constraint;
  std::string detail;
};

struct ValidationReport {
  std::vector<Violation> violations;
  bool passed() const { return violations.empty(); }
  std::size_t count(const std::string& constraint) const;
};

/// Checks every layer and reports all violations.
ValidationReport validate(const NetworkSpec& spec, const DeviceProfile& profile);

struct QuantizedWeights {
  Weights weights;
  std::vector<double> scale;      // per layer; 1 for layers without weights or all zeros
  std::vector<double> max_error;  // per layer max |w - q(w)|
};

/// Symmetric uniform per-layer quantization of the kernel weights with
/// scale = max|w| / (2^(bits-1) - 1). Biases are left in float.
QuantizedWeights quantize_weights(const Weights& weights, int bits);

struct QuantizationGap {
  ErrorStats float_error;
  ErrorStats quantized_error;
  double gap() const { return quantized_error.mean - float_error.mean; }
};

/// Pixel error of the float and the quantized network on the same samples.
QuantizationGap report_gap(const NetworkSpec& spec, const Weights& weights, std::span<const LabeledSample> data,
                           int bits, int steps = 0);

}  // namespace snnball
