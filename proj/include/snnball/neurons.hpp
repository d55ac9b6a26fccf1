#pragma once

// Discrete-time neuron dynamics. All spiking modes reset by subtraction
// unless ResetMode::zero is selected.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

namespace snnball {

enum class NeuronMode { if_multispike, lif_single, quantized_relu };
enum class ResetMode { subtract, zero };

const char* to_string(NeuronMode mode);
NeuronMode parse_neuron_mode(std::string_view name);

struct NeuronParams {
  NeuronMode mode = NeuronMode::if_multispike;
  double threshold = 1.0;
  double decay = 0.0;  // fraction of membrane lost per step, LIF only
  ResetMode reset = ResetMode::subtract;
  int bits = 4;  // quantized_relu levels = 2^bits; 0 = unquantized clamp

  void validate() const;
  friend bool operator==(const NeuronParams&, const NeuronParams&) = default;
};

class NeuronState {
 public:
  NeuronState(std::size_t neurons, NeuronParams params);

  const NeuronParams& params() const { return params_; }
  std::span<const double> membrane() const { return membrane_; }
  std::span<double> membrane() { return membrane_; }
  std::size_t size() const { return membrane_.size(); }
  void reset();

 private:
  NeuronParams params_;
  std::vector<double> membrane_;
};

/// v += input; emits floor(v/θ) spikes where v ≥ θ and subtracts them.
std::vector<std::uint32_t> step_if_multispike(NeuronState& state, std::span<const double> input);

/// v = (1-β)v + input; one spike where v ≥ θ.
std::vector<std::uint32_t> step_lif(NeuronState& state, std::span<const double> input);

/// clamp(x, 0, range_max) rounded to the nearest of 2^bits uniform levels.
std::vector<double> quantized_relu(std::span<const double> x, int bits, double range_max);
double quantize_activation(double x, int bits, double range_max);

struct SpikeTensor {
  std::size_t neurons = 0;
  std::size_t steps = 0;
  std::vector<std::uint32_t> counts;  // step-major: counts[t * neurons + i]

  SpikeTensor() = default;
  SpikeTensor(std::size_t neurons, std::size_t steps) : neurons(neurons), steps(steps), counts(neurons * steps) {}
  std::span<std::uint32_t> step(std::size_t t) { return std::span(counts).subspan(t * neurons, neurons); }
  void push_step(std::span<const std::uint32_t> spikes);
};

/// Per-neuron spike count divided by the number of steps.
std::vector<double> rate(const SpikeTensor& spikes);

namespace kernels {

/// Relative slack on the firing comparison so that rounding in repeated
/// sums (0.1 + 0.2 + ...) does not swallow a spike.
inline constexpr double kFireTolerance = 1e-9;

// In-place span updates used by the network simulator. `spikes` receives
// the per-neuron output; `v_pre`, when non-empty, receives the membrane
// after integration and before reset.
void integrate_fire(std::span<double> v, std::span<const double> input, const NeuronParams& params,
                    std::span<double> spikes, std::span<double> v_pre = {});

}  // namespace kernels

}  // namespace snnball
