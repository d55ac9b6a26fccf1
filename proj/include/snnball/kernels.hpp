#pragma once

// Dense layer kernels. Each production kernel has a serial `_reference`
// twin written in the plain gather form; tests compare the two and the
// kernel benchmark times them.
//
// Layouts: tensors are channel-major (c, y, x). Convolution weights are
// [out_c][in_c][kh][kw]; linear weights are stored input-major [in][out].
// The production forward and weight-gradient kernels skip zero inputs,
// which is where spiking activity pays off.

#include <cstddef>
#include <cstdint>
#include <span>

namespace snnball::kernels {

struct ConvGeometry {
  int in_c = 1, in_h = 1, in_w = 1;
  int out_c = 1;
  int kernel_h = 1, kernel_w = 1;
  int stride = 1;

  int out_h() const { return (in_h - kernel_h) / stride + 1; }
  int out_w() const { return (in_w - kernel_w) / stride + 1; }
  std::size_t in_size() const { return static_cast<std::size_t>(in_c) * in_h * in_w; }
  std::size_t out_size() const { return static_cast<std::size_t>(out_c) * out_h() * out_w(); }
  std::size_t weight_size() const { return static_cast<std::size_t>(out_c) * in_c * kernel_h * kernel_w; }
};

struct PoolGeometry {
  int channels = 1, in_h = 2, in_w = 2;
  int kernel = 2;  // window and stride

  int out_h() const { return in_h / kernel; }
  int out_w() const { return in_w / kernel; }
  std::size_t in_size() const { return static_cast<std::size_t>(channels) * in_h * in_w; }
  std::size_t out_size() const { return static_cast<std::size_t>(channels) * out_h() * out_w(); }
};

// out = conv(in) + bias (bias may be empty). Overwrites `out`.
void conv2d_forward(const ConvGeometry& g, std::span<const double> in, std::span<const double> weights,
                    std::span<const double> bias, std::span<double> out);
void conv2d_forward_reference(const ConvGeometry& g, std::span<const double> in, std::span<const double> weights,
                              std::span<const double> bias, std::span<double> out);

// dweights += correlation of `in` with `delta`. Accumulates.
void conv2d_backward_weights(const ConvGeometry& g, std::span<const double> in, std::span<const double> delta,
                             std::span<double> dweights);
void conv2d_backward_weights_reference(const ConvGeometry& g, std::span<const double> in,
                                       std::span<const double> delta, std::span<double> dweights);

// din = transposed convolution of delta. Overwrites `din`.
void conv2d_backward_input(const ConvGeometry& g, std::span<const double> delta, std::span<const double> weights,
                           std::span<double> din);
void conv2d_backward_input_reference(const ConvGeometry& g, std::span<const double> delta,
                                     std::span<const double> weights, std::span<double> din);

void linear_forward(std::span<const double> in, std::span<const double> weights, std::span<const double> bias,
                    std::span<double> out);
void linear_forward_reference(std::span<const double> in, std::span<const double> weights,
                              std::span<const double> bias, std::span<double> out);
void linear_backward_weights(std::span<const double> in, std::span<const double> delta, std::span<double> dweights);
void linear_backward_input(std::span<const double> delta, std::span<const double> weights, std::span<double> din);
void linear_backward_input_reference(std::span<const double> delta, std::span<const double> weights,
                                     std::span<double> din);

void avgpool_forward(const PoolGeometry& g, std::span<const double> in, std::span<double> out);
void avgpool_backward(const PoolGeometry& g, std::span<const double> dout, std::span<double> din);
// `argmax` receives the flat input index chosen for every output.
void maxpool_forward(const PoolGeometry& g, std::span<const double> in, std::span<double> out,
                     std::span<std::uint32_t> argmax);
void maxpool_backward(const PoolGeometry& g, std::span<const double> dout, std::span<const std::uint32_t> argmax,
                      std::span<double> din);

/// Threads available to the parallel kernels (1 without OpenMP).
int max_threads();

}  // namespace snnball::kernels
