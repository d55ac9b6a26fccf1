#pragma once

// Layer-by-layer simulator shared by inference and training. Training
// passes a Recording to keep every per-step quantity backprop needs.

#include <cstdint>
#include <span>
#include <vector>

#include "snnball/kernels.hpp"
#include "snnball/network.hpp"

namespace snnball::detail {

struct Plan {
  explicit Plan(const NetworkSpec& spec);

  const NetworkSpec* spec;
  std::vector<Shape> in;
  std::vector<Shape> out;
  std::vector<kernels::ConvGeometry> conv;
  std::vector<kernels::PoolGeometry> pool;
  std::vector<std::vector<double>> fanout;

  std::size_t layers() const { return out.size(); }
  std::size_t out_size(std::size_t l) const { return out[l].size(); }
  std::size_t in_size(std::size_t l) const { return in[l].size(); }
};

struct Recording {
  int steps = 0;
  std::vector<std::vector<double>> out;     // per layer, steps × out_size
  std::vector<std::vector<double>> pre;     // membrane before reset, or quantizer input
  std::vector<std::vector<double>> unnorm;  // current before batchnorm
  std::vector<std::vector<std::uint32_t>> argmax;
  std::vector<std::vector<double>> current;  // post-batchnorm input current, only with keep_current
  bool keep_current = false;

  void prepare(const Plan& plan, int steps);
  template <typename V>
  static auto slice(V& v, int t, std::size_t n) {
    return std::span(v).subspan(static_cast<std::size_t>(t) * n, n);
  }

  std::span<double> out_step(std::size_t l, int t, std::size_t n) { return slice(out[l], t, n); }
  std::span<const double> out_step(std::size_t l, int t, std::size_t n) const { return slice(out[l], t, n); }
};

enum class Mode { spiking, ann };

/// Runs the stack. `weights` must already be checked against the layer stack.
ForwardResult simulate(const Plan& plan, const Weights& weights, std::span<const double> input, int steps,
                       Mode mode, Recording* rec);

std::vector<std::vector<double>> compute_fanout(const NetworkSpec& spec, const std::vector<Shape>& in,
                                                const std::vector<Shape>& out);

}  // namespace snnball::detail
