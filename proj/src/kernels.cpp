#include "snnball/kernels.hpp"

#include <algorithm>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace snnball::kernels {

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

namespace {

constexpr std::size_t kParallelWork = 1 << 15;

// Above this fraction of nonzero inputs the scatter loops lose to a plain
// gather; the dense path is chosen per call.
constexpr double kSparseDensity = 0.125;

struct NonZero {
  std::vector<std::uint32_t> index;
  explicit NonZero(std::span<const double> v) {
    for (std::size_t i = 0; i < v.size(); ++i)
      if (v[i] != 0.0) index.push_back(static_cast<std::uint32_t>(i));
  }
  bool sparse(std::size_t n) const { return static_cast<double>(index.size()) <= kSparseDensity * n; }
};

// Nonzero input position decoded once per call instead of once per output channel.
struct Tap {
  int ci, iy, ix;
  double v;
};

std::vector<Tap> taps_of(const ConvGeometry& g, std::span<const double> in, const NonZero& nz) {
  const int plane_in = g.in_h * g.in_w;
  std::vector<Tap> taps;
  taps.reserve(nz.index.size());
  for (std::uint32_t idx : nz.index) {
    const int i = static_cast<int>(idx);
    taps.push_back({i / plane_in, (i % plane_in) / g.in_w, i % g.in_w, in[idx]});
  }
  return taps;
}

}  // namespace

// ---- convolution -----------------------------------------------------------

void conv2d_forward(const ConvGeometry& g, std::span<const double> in, std::span<const double> weights,
                    std::span<const double> bias, std::span<double> out) {
  const int oh = g.out_h(), ow = g.out_w();
  const int plane_out = oh * ow;
  const int kk = g.kernel_h * g.kernel_w;
  const NonZero nz(in);

  if (!nz.sparse(in.size())) {
    const std::size_t work = out.size() * g.in_c * kk;
#pragma omp parallel for schedule(static) if (work > kParallelWork)
    for (int co = 0; co < g.out_c; ++co) {
      double* o = out.data() + static_cast<std::size_t>(co) * plane_out;
      std::fill(o, o + plane_out, bias.empty() ? 0.0 : bias[co]);
      for (int ci = 0; ci < g.in_c; ++ci) {
        const double* x = in.data() + static_cast<std::size_t>(ci) * g.in_h * g.in_w;
        const double* w = weights.data() + (static_cast<std::size_t>(co) * g.in_c + ci) * kk;
        for (int ky = 0; ky < g.kernel_h; ++ky)
          for (int kx = 0; kx < g.kernel_w; ++kx) {
            const double wk = w[ky * g.kernel_w + kx];
            for (int oy = 0; oy < oh; ++oy) {
              const double* row = x + (oy * g.stride + ky) * g.in_w + kx;
              double* orow = o + oy * ow;
              for (int ox = 0; ox < ow; ++ox) orow[ox] += wk * row[ox * g.stride];
            }
          }
      }
    }
    return;
  }

  const std::vector<Tap> taps = taps_of(g, in, nz);
  const std::size_t work = taps.size() * static_cast<std::size_t>(g.out_c) * kk;
#pragma omp parallel for schedule(static) if (work > kParallelWork)
  for (int co = 0; co < g.out_c; ++co) {
    double* o = out.data() + static_cast<std::size_t>(co) * plane_out;
    std::fill(o, o + plane_out, bias.empty() ? 0.0 : bias[co]);
    for (const Tap& t : taps) {
      const double* w = weights.data() + (static_cast<std::size_t>(co) * g.in_c + t.ci) * kk;
      for (int ky = 0; ky < g.kernel_h; ++ky) {
        const int dy = t.iy - ky;
        if (dy < 0 || dy % g.stride) continue;
        const int oy = dy / g.stride;
        if (oy >= oh) continue;
        for (int kx = 0; kx < g.kernel_w; ++kx) {
          const int dx = t.ix - kx;
          if (dx < 0 || dx % g.stride) continue;
          const int ox = dx / g.stride;
          if (ox >= ow) continue;
          o[oy * ow + ox] += t.v * w[ky * g.kernel_w + kx];
        }
      }
    }
  }
}

void conv2d_forward_reference(const ConvGeometry& g, std::span<const double> in, std::span<const double> weights,
                              std::span<const double> bias, std::span<double> out) {
  const int oh = g.out_h(), ow = g.out_w();
  for (int co = 0; co < g.out_c; ++co)
    for (int oy = 0; oy < oh; ++oy)
      for (int ox = 0; ox < ow; ++ox) {
        double acc = bias.empty() ? 0.0 : bias[co];
        for (int ci = 0; ci < g.in_c; ++ci)
          for (int ky = 0; ky < g.kernel_h; ++ky)
            for (int kx = 0; kx < g.kernel_w; ++kx) {
              const int iy = oy * g.stride + ky, ix = ox * g.stride + kx;
              acc += in[(static_cast<std::size_t>(ci) * g.in_h + iy) * g.in_w + ix] *
                     weights[((static_cast<std::size_t>(co) * g.in_c + ci) * g.kernel_h + ky) * g.kernel_w + kx];
            }
        out[(static_cast<std::size_t>(co) * oh + oy) * ow + ox] = acc;
      }
}

void conv2d_backward_weights(const ConvGeometry& g, std::span<const double> in, std::span<const double> delta,
                             std::span<double> dweights) {
  const int oh = g.out_h(), ow = g.out_w();
  const int plane_out = oh * ow;
  const int kk = g.kernel_h * g.kernel_w;
  const NonZero nz(in);

  if (!nz.sparse(in.size())) {
    const std::size_t work = delta.size() * g.in_c * kk;
#pragma omp parallel for schedule(static) if (work > kParallelWork)
    for (int co = 0; co < g.out_c; ++co) {
      const double* d = delta.data() + static_cast<std::size_t>(co) * plane_out;
      for (int ci = 0; ci < g.in_c; ++ci) {
        const double* x = in.data() + static_cast<std::size_t>(ci) * g.in_h * g.in_w;
        double* dw = dweights.data() + (static_cast<std::size_t>(co) * g.in_c + ci) * kk;
        for (int ky = 0; ky < g.kernel_h; ++ky)
          for (int kx = 0; kx < g.kernel_w; ++kx) {
            double acc = 0.0;
            for (int oy = 0; oy < oh; ++oy) {
              const double* row = x + (oy * g.stride + ky) * g.in_w + kx;
              const double* drow = d + oy * ow;
              for (int ox = 0; ox < ow; ++ox) acc += drow[ox] * row[ox * g.stride];
            }
            dw[ky * g.kernel_w + kx] += acc;
          }
      }
    }
    return;
  }

  const std::vector<Tap> taps = taps_of(g, in, nz);
  const std::size_t work = taps.size() * static_cast<std::size_t>(g.out_c) * kk;
#pragma omp parallel for schedule(static) if (work > kParallelWork)
  for (int co = 0; co < g.out_c; ++co) {
    const double* d = delta.data() + static_cast<std::size_t>(co) * plane_out;
    for (const Tap& t : taps) {
      double* dw = dweights.data() + (static_cast<std::size_t>(co) * g.in_c + t.ci) * kk;
      for (int ky = 0; ky < g.kernel_h; ++ky) {
        const int dy = t.iy - ky;
        if (dy < 0 || dy % g.stride) continue;
        const int oy = dy / g.stride;
        if (oy >= oh) continue;
        for (int kx = 0; kx < g.kernel_w; ++kx) {
          const int dx = t.ix - kx;
          if (dx < 0 || dx % g.stride) continue;
          const int ox = dx / g.stride;
          if (ox >= ow) continue;
          dw[ky * g.kernel_w + kx] += t.v * d[oy * ow + ox];
        }
      }
    }
  }
}

void conv2d_backward_weights_reference(const ConvGeometry& g, std::span<const double> in,
                                       std::span<const double> delta, std::span<double> dweights) {
  const int oh = g.out_h(), ow = g.out_w();
  for (int co = 0; co < g.out_c; ++co)
    for (int ci = 0; ci < g.in_c; ++ci)
      for (int ky = 0; ky < g.kernel_h; ++ky)
        for (int kx = 0; kx < g.kernel_w; ++kx) {
          double acc = 0.0;
          for (int oy = 0; oy < oh; ++oy)
            for (int ox = 0; ox < ow; ++ox)
              acc += delta[(static_cast<std::size_t>(co) * oh + oy) * ow + ox] *
                     in[(static_cast<std::size_t>(ci) * g.in_h + oy * g.stride + ky) * g.in_w + ox * g.stride + kx];
          dweights[((static_cast<std::size_t>(co) * g.in_c + ci) * g.kernel_h + ky) * g.kernel_w + kx] += acc;
        }
}

void conv2d_backward_input(const ConvGeometry& g, std::span<const double> delta, std::span<const double> weights,
                           std::span<double> din) {
  const int oh = g.out_h(), ow = g.out_w();
  const std::size_t work = g.weight_size() * static_cast<std::size_t>(oh) * ow;

#pragma omp parallel for schedule(static) if (work > kParallelWork)
  for (int ci = 0; ci < g.in_c; ++ci) {
    double* dx = din.data() + static_cast<std::size_t>(ci) * g.in_h * g.in_w;
    std::fill(dx, dx + g.in_h * g.in_w, 0.0);
    for (int co = 0; co < g.out_c; ++co) {
      const double* d = delta.data() + static_cast<std::size_t>(co) * oh * ow;
      const double* w = weights.data() + (static_cast<std::size_t>(co) * g.in_c + ci) * g.kernel_h * g.kernel_w;
      for (int ky = 0; ky < g.kernel_h; ++ky)
        for (int kx = 0; kx < g.kernel_w; ++kx) {
          const double wv = w[ky * g.kernel_w + kx];
          if (wv == 0.0) continue;
          for (int oy = 0; oy < oh; ++oy) {
            double* row = dx + (oy * g.stride + ky) * g.in_w + kx;
            const double* drow = d + oy * ow;
            if (g.stride == 1) {
              for (int ox = 0; ox < ow; ++ox) row[ox] += wv * drow[ox];
            } else {
              for (int ox = 0; ox < ow; ++ox) row[ox * g.stride] += wv * drow[ox];
            }
          }
        }
    }
  }
}

void conv2d_backward_input_reference(const ConvGeometry& g, std::span<const double> delta,
                                     std::span<const double> weights, std::span<double> din) {
  const int oh = g.out_h(), ow = g.out_w();
  for (int ci = 0; ci < g.in_c; ++ci)
    for (int iy = 0; iy < g.in_h; ++iy)
      for (int ix = 0; ix < g.in_w; ++ix) {
        double acc = 0.0;
        for (int co = 0; co < g.out_c; ++co)
          for (int ky = 0; ky < g.kernel_h; ++ky)
            for (int kx = 0; kx < g.kernel_w; ++kx) {
              const int dy = iy - ky, dx = ix - kx;
              if (dy < 0 || dx < 0 || dy % g.stride || dx % g.stride) continue;
              const int oy = dy / g.stride, ox = dx / g.stride;
              if (oy >= oh || ox >= ow) continue;
              acc += delta[(static_cast<std::size_t>(co) * oh + oy) * ow + ox] *
                     weights[((static_cast<std::size_t>(co) * g.in_c + ci) * g.kernel_h + ky) * g.kernel_w + kx];
            }
        din[(static_cast<std::size_t>(ci) * g.in_h + iy) * g.in_w + ix] = acc;
      }
}

// ---- linear ----------------------------------------------------------------

void linear_forward(std::span<const double> in, std::span<const double> weights, std::span<const double> bias,
                    std::span<double> out) {
  const std::size_t n_out = out.size();
  const NonZero nz(in);
  const std::size_t work = nz.index.size() * n_out;
  const int chunks = work > kParallelWork ? max_threads() : 1;

#pragma omp parallel for schedule(static) if (chunks > 1)
  for (int c = 0; c < chunks; ++c) {
    const std::size_t begin = n_out * c / chunks, end = n_out * (c + 1) / chunks;
    for (std::size_t o = begin; o < end; ++o) out[o] = bias.empty() ? 0.0 : bias[o];
    for (std::uint32_t i : nz.index) {
      const double v = in[i];
      const double* w = weights.data() + static_cast<std::size_t>(i) * n_out;
      for (std::size_t o = begin; o < end; ++o) out[o] += v * w[o];
    }
  }
}

void linear_forward_reference(std::span<const double> in, std::span<const double> weights,
                              std::span<const double> bias, std::span<double> out) {
  const std::size_t n_out = out.size();
  for (std::size_t o = 0; o < n_out; ++o) {
    double acc = bias.empty() ? 0.0 : bias[o];
    for (std::size_t i = 0; i < in.size(); ++i) acc += in[i] * weights[i * n_out + o];
    out[o] = acc;
  }
}

void linear_backward_weights(std::span<const double> in, std::span<const double> delta, std::span<double> dweights) {
  const std::size_t n_out = delta.size();
  for (std::size_t i = 0; i < in.size(); ++i) {
    const double v = in[i];
    if (v == 0.0) continue;
    double* dw = dweights.data() + i * n_out;
    for (std::size_t o = 0; o < n_out; ++o) dw[o] += v * delta[o];
  }
}

void linear_backward_input(std::span<const double> delta, std::span<const double> weights, std::span<double> din) {
  const std::size_t n_out = delta.size();
  const std::size_t n_in = din.size();

#pragma omp parallel for schedule(static) if (n_in * n_out > kParallelWork)
  for (std::size_t i = 0; i < n_in; ++i) {
    const double* w = weights.data() + i * n_out;
    double acc = 0.0;
    for (std::size_t o = 0; o < n_out; ++o) acc += w[o] * delta[o];
    din[i] = acc;
  }
}

void linear_backward_input_reference(std::span<const double> delta, std::span<const double> weights,
                                     std::span<double> din) {
  const std::size_t n_out = delta.size();
  std::fill(din.begin(), din.end(), 0.0);
  for (std::size_t o = 0; o < n_out; ++o)
    for (std::size_t i = 0; i < din.size(); ++i) din[i] += weights[i * n_out + o] * delta[o];
}

// ---- pooling ---------------------------------------------------------------

void avgpool_forward(const PoolGeometry& g, std::span<const double> in, std::span<double> out) {
  const int oh = g.out_h(), ow = g.out_w(), k = g.kernel;
  const double scale = 1.0 / (k * k);
  for (int c = 0; c < g.channels; ++c)
    for (int oy = 0; oy < oh; ++oy)
      for (int ox = 0; ox < ow; ++ox) {
        double acc = 0.0;
        for (int dy = 0; dy < k; ++dy)
          for (int dx = 0; dx < k; ++dx)
            acc += in[(static_cast<std::size_t>(c) * g.in_h + oy * k + dy) * g.in_w + ox * k + dx];
        out[(static_cast<std::size_t>(c) * oh + oy) * ow + ox] = acc * scale;
      }
}

void avgpool_backward(const PoolGeometry& g, std::span<const double> dout, std::span<double> din) {
  const int oh = g.out_h(), ow = g.out_w(), k = g.kernel;
  const double scale = 1.0 / (k * k);
  std::fill(din.begin(), din.end(), 0.0);
  for (int c = 0; c < g.channels; ++c)
    for (int oy = 0; oy < oh; ++oy)
      for (int ox = 0; ox < ow; ++ox) {
        const double d = dout[(static_cast<std::size_t>(c) * oh + oy) * ow + ox] * scale;
        for (int dy = 0; dy < k; ++dy)
          for (int dx = 0; dx < k; ++dx) din[(static_cast<std::size_t>(c) * g.in_h + oy * k + dy) * g.in_w + ox * k + dx] = d;
      }
}

void maxpool_forward(const PoolGeometry& g, std::span<const double> in, std::span<double> out,
                     std::span<std::uint32_t> argmax) {
  const int oh = g.out_h(), ow = g.out_w(), k = g.kernel;
  for (int c = 0; c < g.channels; ++c)
    for (int oy = 0; oy < oh; ++oy)
      for (int ox = 0; ox < ow; ++ox) {
        std::size_t best = (static_cast<std::size_t>(c) * g.in_h + oy * k) * g.in_w + ox * k;
        for (int dy = 0; dy < k; ++dy)
          for (int dx = 0; dx < k; ++dx) {
            const std::size_t idx = (static_cast<std::size_t>(c) * g.in_h + oy * k + dy) * g.in_w + ox * k + dx;
            if (in[idx] > in[best]) best = idx;
          }
        const std::size_t o = (static_cast<std::size_t>(c) * oh + oy) * ow + ox;
        out[o] = in[best];
        if (!argmax.empty()) argmax[o] = static_cast<std::uint32_t>(best);
      }
}

void maxpool_backward(const PoolGeometry& g, std::span<const double> dout, std::span<const std::uint32_t> argmax,
                      std::span<double> din) {
  std::fill(din.begin(), din.end(), 0.0);
  for (std::size_t o = 0; o < g.out_size(); ++o) din[argmax[o]] += dout[o];
}

}  // namespace snnball::kernels
