#pragma once

// Surrogate-gradient BPTT for the spiking profiles, quantization-aware
// training for the quantized-ReLU profile, target encoding, losses and Adam.

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <vector>

#include "snnball/event_pipeline.hpp"
#include "snnball/kv.hpp"
#include "snnball/network.hpp"

namespace snnball {

/// 128 targets: 1.0 at the true coordinate, 0.5 at its in-range
/// neighbours, 0 elsewhere, for the x then the y population.
std::vector<double> encode_target(Pixel truth_local);

struct AdamParams {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct TrainConfig {
  Profile profile = Profile::custom;
  double learning_rate = 1e-4;
  int batch_size = 200;
  int epochs = 10;
  AdamParams adam;
  double lambda_synops = 1e-6;
  double lambda_weightmax = 1e-3;
  double surrogate_width = 0.5;
  std::uint64_t seed = 0;
  double init_gain = 1.0;
  int steps = 0;        // 0 = the network's step count
  int weight_bits = 8;  // QAT deployment precision

  /// Learning rate and batch size per profile; everything else shared.
  static TrainConfig defaults_for(Profile profile);
  /// Keys: lr, batch, epochs, lambda_synops, lambda_weightmax, gamma, seed,
  /// profile, init_gain, steps, weight_bits, beta1, beta2, epsilon.
  static TrainConfig from_kv(const KeyValues& kv);
  KeyValues to_kv() const;
  void validate() const;
};

struct LossBreakdown {
  double mse = 0.0;
  double synops_penalty = 0.0;
  double weightmax_penalty = 0.0;
  double total = 0.0;
};

/// synops_penalty = synaptic ops per sample and time step (trace total over
/// batch·steps); weightmax = Σ_layers max|w|.
LossBreakdown loss(std::span<const double> output, std::span<const double> target, const ForwardTrace& trace,
                   const Weights& weights, const TrainConfig& config, int batch = 1);
double weightmax_penalty(const Weights& weights);

/// Periodic exponential surrogate for dS/dv: peaks at 1/γ on every
/// threshold multiple (multi-spike) or only at θ (single-spike).
double surrogate_grad(double v, double theta, double gamma, bool periodic = true);

/// One training pair in network terms.
struct Example {
  std::vector<double> input;
  std::vector<double> target;
};

std::vector<Example> to_examples(std::span<const LabeledSample> samples);

/// Loss and gradient summed over a batch, with the same scaling the
/// optimizer sees (mean over the batch). Exposed for gradient checks.
struct BatchGradient {
  LossBreakdown loss;
  Weights gradient;
};
BatchGradient batch_gradient(const NetworkSpec& spec, const Weights& weights, std::span<const Example> batch,
                             const TrainConfig& config);
/// Differentiable part of the batch loss (mse + λ_wmax·weightmax), for
/// finite differences.
double batch_objective(const NetworkSpec& spec, const Weights& weights, std::span<const Example> batch,
                       const TrainConfig& config);

class Adam {
 public:
  Adam(const Weights& like, AdamParams params);
  void step(Weights& weights, const Weights& gradient, double learning_rate);
  long steps() const { return t_; }

 private:
  AdamParams params_;
  Weights m_;
  Weights v_;
  long t_ = 0;
};

struct TrainResult {
  Weights weights;
  std::vector<LossBreakdown> history;  // one entry per epoch
};

using EpochCallback = std::function<void(int epoch, const LossBreakdown&, const Weights&)>;

/// Surrogate-gradient backpropagation through time (spiking profiles).
TrainResult train_bptt(const NetworkSpec& spec, std::span<const Example> data, const TrainConfig& config,
                       const Weights* initial = nullptr, const EpochCallback& on_epoch = {});
TrainResult train_bptt(const NetworkSpec& spec, std::span<const LabeledSample> data, const TrainConfig& config,
                       const Weights* initial = nullptr, const EpochCallback& on_epoch = {});

/// Quantization-aware training with a straight-through estimator. Returns
/// batchnorm-folded weights quantized to config.weight_bits.
TrainResult train_qat(const NetworkSpec& spec, std::span<const Example> data, const TrainConfig& config,
                      const Weights* initial = nullptr, const EpochCallback& on_epoch = {});
TrainResult train_qat(const NetworkSpec& spec, std::span<const LabeledSample> data, const TrainConfig& config,
                      const Weights* initial = nullptr, const EpochCallback& on_epoch = {});

/// Sets batchnorm scale/shift to standardize each channel and calibrates
/// quantized activation ranges from the data maxima.
void calibrate_quantized(const NetworkSpec& spec, Weights& weights, std::span<const Example> data);

/// Data-driven threshold balancing for spiking stacks: rescales each neuron
/// layer in turn so the given percentile of its positive input current sits
/// at the firing threshold. Applied to fresh weights before BPTT.
void balance_thresholds(const NetworkSpec& spec, Weights& weights, std::span<const Example> data, int steps = 0,
                        double percentile = 0.99);

/// CSV rows `epoch,mse,synops,weightmax,total`.
void write_history(std::ostream& out, std::span<const LossBreakdown> history);

}  // namespace snnball
