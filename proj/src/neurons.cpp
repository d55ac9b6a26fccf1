#include "snnball/neurons.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "snnball/error.hpp"

namespace snnball {

const char* to_string(NeuronMode mode) {
  switch (mode) {
    case NeuronMode::if_multispike: return "if_multispike";
    case NeuronMode::lif_single: return "lif";
    case NeuronMode::quantized_relu: return "quantized_relu";
  }
  return "?";
}

NeuronMode parse_neuron_mode(std::string_view name) {
  if (name == "if_multispike") return NeuronMode::if_multispike;
  if (name == "lif") return NeuronMode::lif_single;
  if (name == "quantized_relu") return NeuronMode::quantized_relu;
  throw ValidationError("unknown neuron mode '" + std::string(name) + "'");
}

void NeuronParams::validate() const {
  if (!(threshold > 0.0) || !std::isfinite(threshold)) throw ValidationError("neuron threshold must be positive");
  if (!(decay >= 0.0 && decay < 1.0)) throw ValidationError("neuron decay must be in [0, 1)");
  if (bits < 0 || bits > 30) throw ValidationError("quantization bits out of range");
}

NeuronState::NeuronState(std::size_t neurons, NeuronParams params) : params_(params), membrane_(neurons, 0.0) {
  params_.validate();
}

void NeuronState::reset() { std::fill(membrane_.begin(), membrane_.end(), 0.0); }

namespace {

void check_input(const NeuronState& state, std::span<const double> input, NeuronMode expected) {
  if (state.params().mode != expected) throw ValidationError("neuron state has the wrong mode for this update");
  if (input.size() != state.size()) throw ShapeError("input size does not match neuron count");
  for (double x : input)
    if (!std::isfinite(x)) throw NumericError("non-finite neuron input");
}

std::vector<std::uint32_t> step_checked(NeuronState& state, std::span<const double> input, NeuronMode mode) {
  check_input(state, input, mode);
  std::vector<double> spikes(state.size());
  kernels::integrate_fire(state.membrane(), input, state.params(), spikes);
  return {spikes.begin(), spikes.end()};
}

}  // namespace

std::vector<std::uint32_t> step_if_multispike(NeuronState& state, std::span<const double> input) {
  return step_checked(state, input, NeuronMode::if_multispike);
}

std::vector<std::uint32_t> step_lif(NeuronState& state, std::span<const double> input) {
  return step_checked(state, input, NeuronMode::lif_single);
}

double quantize_activation(double x, int bits, double range_max) {
  const double clamped = std::clamp(x, 0.0, range_max);
  if (bits <= 0) return clamped;
  const double step = range_max / static_cast<double>((1u << bits) - 1u);
  return std::round(clamped / step) * step;
}

std::vector<double> quantized_relu(std::span<const double> x, int bits, double range_max) {
  if (bits < 1) throw ValidationError("quantized_relu needs bits >= 1");
  if (!(range_max > 0.0)) throw ValidationError("quantized_relu needs range_max > 0");
  std::vector<double> out(x.size());
  std::transform(x.begin(), x.end(), out.begin(), [&](double v) { return quantize_activation(v, bits, range_max); });
  return out;
}

void SpikeTensor::push_step(std::span<const std::uint32_t> spikes) {
  if (steps == 0 && counts.empty()) neurons = spikes.size();
  if (spikes.size() != neurons) throw ShapeError("spike step has the wrong neuron count");
  counts.insert(counts.end(), spikes.begin(), spikes.end());
  ++steps;
}

std::vector<double> rate(const SpikeTensor& spikes) {
  if (spikes.steps == 0) throw ValidationError("rate needs at least one time step");
  std::vector<double> out(spikes.neurons, 0.0);
  for (std::size_t t = 0; t < spikes.steps; ++t)
    for (std::size_t i = 0; i < spikes.neurons; ++i) out[i] += spikes.counts[t * spikes.neurons + i];
  for (double& r : out) r /= static_cast<double>(spikes.steps);
  return out;
}

namespace kernels {

void integrate_fire(std::span<double> v, std::span<const double> input, const NeuronParams& p,
                    std::span<double> spikes, std::span<double> v_pre) {
  const std::size_t n = v.size();
  const double theta = p.threshold;
  const double keep = 1.0 - p.decay;
  const bool record = !v_pre.empty();
  const bool multispike = p.mode == NeuronMode::if_multispike;
  for (std::size_t i = 0; i < n; ++i) {
    double u = keep * v[i] + input[i];
    if (record) v_pre[i] = u;
    double s = 0.0;
    if (u >= theta * (1.0 - kFireTolerance)) s = multispike ? std::floor(u / theta + kFireTolerance) : 1.0;
    if (s > 0.0) u = p.reset == ResetMode::subtract ? u - s * theta : 0.0;
    v[i] = u;
    spikes[i] = s;
  }
}

}  // namespace kernels

}  // namespace snnball
