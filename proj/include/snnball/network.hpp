#pragma once

// Declarative layer stacks executed over discrete time steps, plus the
// three built-in detector profiles and the text model format.

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "snnball/event_pipeline.hpp"
#include "snnball/neurons.hpp"

namespace snnball {

inline constexpr int kOutputNeurons = 2 * kFrameSide;
inline constexpr int kModelFormatVersion = 1;

enum class LayerKind { conv2d, avgpool, maxpool, linear };

const char* to_string(LayerKind kind);
LayerKind parse_layer_kind(std::string_view name);

struct Shape {
  int channels = 1;
  int height = 1;
  int width = 1;
  std::size_t size() const { return static_cast<std::size_t>(channels) * height * width; }
  friend bool operator==(const Shape&, const Shape&) = default;
};

struct LayerSpec {
  LayerKind kind = LayerKind::conv2d;
  int out_channels = 0;  // conv channels or linear features; unused for pooling
  int kernel_h = 1;
  int kernel_w = 1;
  int stride = 1;
  bool has_bias = false;
  bool batchnorm = false;
  std::optional<NeuronParams> activation;

  bool has_weights() const { return kind == LayerKind::conv2d || kind == LayerKind::linear; }
  bool is_pool() const { return kind == LayerKind::avgpool || kind == LayerKind::maxpool; }

  static LayerSpec conv(int out_channels, int kernel, int stride = 1, std::optional<NeuronParams> act = {});
  static LayerSpec linear(int features, std::optional<NeuronParams> act = {});
  static LayerSpec avgpool(int kernel = 2);
  static LayerSpec maxpool(int kernel = 2);

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

enum class Profile { sinabs_like, metatf_like, lava_like, custom };

const char* to_string(Profile profile);
Profile parse_profile(std::string_view name);

struct NetworkSpec {
  Profile profile = Profile::custom;
  Shape input{1, kFrameSide, kFrameSide};
  int steps = 1;
  std::vector<LayerSpec> layers;
  int weight_bits = 0;  // deployment weight precision; 0 = not pinned

  /// Output shape of every layer. Throws ShapeError when layers do not chain.
  std::vector<Shape> shapes() const;
  Shape input_of(std::size_t layer) const;
  Shape output_shape() const { return shapes().back(); }
  /// Shape chaining, per-layer invariants and, for built-in profiles, the
  /// 64x64 input / 128 output contract.
  void validate() const;
  /// 1-based block index per layer: a weighted layer opens a block and
  /// following pooling layers belong to it.
  std::vector<int> blocks() const;
  bool spiking() const;
  bool quantized() const;

  friend bool operator==(const NetworkSpec&, const NetworkSpec&) = default;
};

NetworkSpec build_profile(std::string_view name);

struct LayerParams {
  std::vector<double> weights;
  std::vector<double> bias;
  std::vector<double> bn_scale;  // empty once folded
  std::vector<double> bn_shift;
  double act_range = 1.0;  // quantized_relu range_max

  friend bool operator==(const LayerParams&, const LayerParams&) = default;
};

struct Weights {
  std::vector<LayerParams> layers;
  friend bool operator==(const Weights&, const Weights&) = default;
};

/// Zero-filled parameter set with the right shapes (BN scale 1, shift 0).
Weights zero_weights(const NetworkSpec& spec);
/// Uniform in ±gain/sqrt(fan_in) per layer; biases zero.
Weights init_weights(const NetworkSpec& spec, std::uint64_t seed, double gain = 1.0);
/// Throws ShapeError / NumericError when weights do not fit the layer stack.
void check_weights(const NetworkSpec& spec, const Weights& weights);
std::size_t parameter_count(const Weights& weights);
/// w' = s·w, b' = s·b + h per output channel; clears the BN vectors.
void fold_batchnorm(const NetworkSpec& spec, Weights& weights);

struct LayerActivity {
  Shape shape;
  int steps = 0;
  std::vector<double> values;  // step-major, steps × shape.size()
  std::span<const double> step(int t) const {
    return std::span(values).subspan(static_cast<std::size_t>(t) * shape.size(), shape.size());
  }
};

struct ForwardTrace {
  std::vector<LayerActivity> layers;   // filled only when recording
  std::vector<double> spikes_per_layer;  // total emitted per layer (0 for non-neuron layers)
  std::uint64_t synaptic_ops = 0;  // summed over all steps
  int steps = 0;
};

struct ForwardResult {
  std::vector<double> output;  // per-neuron mean over steps of the final layer
  ForwardTrace trace;
};

struct ForwardOptions {
  bool record_activity = false;
};

/// Presents `input` at every step; neuron states start at zero.
ForwardResult forward(const NetworkSpec& spec, const Weights& weights, std::span<const double> input, int steps,
                      ForwardOptions options = {});
ForwardResult forward(const NetworkSpec& spec, const Weights& weights, const EventFrame& frame, int steps,
                      ForwardOptions options = {});

/// Spec and weights validated once, with the execution plan prepared, for
/// repeated inference. Copies share the immutable state.
class CompiledNetwork {
 public:
  CompiledNetwork(NetworkSpec spec, Weights weights);

  const NetworkSpec& spec() const;
  const Weights& weights() const;
  /// `steps` = 0 uses the network's step count.
  ForwardResult run(std::span<const double> input, int steps = 0) const;

 private:
  struct State;
  std::shared_ptr<const State> state_;
};

/// Same stack in one step with exact ReLU in place of spiking neurons.
std::vector<double> forward_ann(const NetworkSpec& spec, const Weights& weights, std::span<const double> input);

/// Outgoing synapses of every neuron, per layer (empty for layers without
/// neurons). Border-aware and routed through pooling.
std::vector<std::vector<double>> fanout(const NetworkSpec& spec);

struct Model {
  NetworkSpec spec;
  Weights weights;
};

void save_model(const std::filesystem::path& path, const NetworkSpec& spec, const Weights& weights);
void write_model(std::ostream& out, const NetworkSpec& spec, const Weights& weights);
Model load_model(const std::filesystem::path& path);
Model read_model(std::istream& in, const std::string& source = "<stream>");

}  // namespace snnball
