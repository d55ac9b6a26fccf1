#include "engine.hpp"

#include <algorithm>
#include <cmath>

namespace snnball::detail {

Plan::Plan(const NetworkSpec& s) : spec(&s) {
  out = s.shapes();
  const std::size_t n = s.layers.size();
  in.resize(n);
  conv.resize(n);
  pool.resize(n);
  for (std::size_t l = 0; l < n; ++l) {
    in[l] = l == 0 ? s.input : out[l - 1];
    const LayerSpec& ls = s.layers[l];
    if (ls.kind == LayerKind::conv2d) {
      conv[l] = {in[l].channels, in[l].height, in[l].width, ls.out_channels, ls.kernel_h, ls.kernel_w, ls.stride};
    } else if (ls.is_pool()) {
      pool[l] = {in[l].channels, in[l].height, in[l].width, ls.kernel_h};
    }
  }
  fanout = compute_fanout(s, in, out);
}

std::vector<std::vector<double>> compute_fanout(const NetworkSpec& spec, const std::vector<Shape>& in,
                                                const std::vector<Shape>& out) {
  const std::size_t n = spec.layers.size();
  std::vector<std::vector<double>> result(n);
  for (std::size_t l = 0; l < n; ++l) {
    if (!spec.layers[l].activation) continue;
    std::size_t next = l + 1;
    while (next < n && !spec.layers[next].has_weights()) ++next;
    if (next == n) {
      result[l].assign(out[l].size(), 0.0);
      continue;
    }
    const LayerSpec& target = spec.layers[next];
    std::vector<double> counts(in[next].size());
    if (target.kind == LayerKind::linear) {
      std::fill(counts.begin(), counts.end(), static_cast<double>(target.out_channels));
    } else {
      const kernels::ConvGeometry g{in[next].channels, in[next].height, in[next].width, target.out_channels,
                                    target.kernel_h, target.kernel_w, target.stride};
      std::vector<double> ones_delta(g.out_size(), 1.0), ones_w(g.weight_size(), 1.0);
      kernels::conv2d_backward_input(g, ones_delta, ones_w, counts);
    }
    // Route back through pooling: every input of a pooled cell inherits the
    // cell's fan-out; inputs outside the pooled area reach nothing.
    for (std::size_t p = next; p-- > l + 1;) {
      const Shape& pin = in[p];
      const Shape& pout = out[p];
      const int k = spec.layers[p].kernel_h;
      std::vector<double> up(pin.size(), 0.0);
      for (int c = 0; c < pout.channels; ++c)
        for (int oy = 0; oy < pout.height; ++oy)
          for (int ox = 0; ox < pout.width; ++ox) {
            const double v = counts[(static_cast<std::size_t>(c) * pout.height + oy) * pout.width + ox];
            for (int dy = 0; dy < k; ++dy)
              for (int dx = 0; dx < k; ++dx)
                up[(static_cast<std::size_t>(c) * pin.height + oy * k + dy) * pin.width + ox * k + dx] = v;
          }
      counts = std::move(up);
    }
    result[l] = std::move(counts);
  }
  return result;
}

void Recording::prepare(const Plan& plan, int t) {
  steps = t;
  const std::size_t n = plan.layers();
  out.resize(n);
  pre.resize(n);
  unnorm.resize(n);
  argmax.resize(n);
  current.resize(n);
  for (std::size_t l = 0; l < n; ++l) {
    const LayerSpec& ls = plan.spec->layers[l];
    const std::size_t size = plan.out_size(l) * static_cast<std::size_t>(t);
    out[l].assign(size, 0.0);
    pre[l].assign(ls.activation ? size : 0, 0.0);
    unnorm[l].assign(ls.batchnorm ? size : 0, 0.0);
    argmax[l].assign(ls.kind == LayerKind::maxpool ? size : 0, 0);
    current[l].assign(keep_current && ls.has_weights() ? size : 0, 0.0);
  }
}

namespace {

void apply_weights(const Plan& plan, std::size_t l, const LayerParams& p, std::span<const double> x,
                   std::span<double> current) {
  if (plan.spec->layers[l].kind == LayerKind::conv2d)
    kernels::conv2d_forward(plan.conv[l], x, p.weights, p.bias, current);
  else
    kernels::linear_forward(x, p.weights, p.bias, current);
}

void apply_batchnorm(const Plan& plan, std::size_t l, const LayerParams& p, std::span<double> current) {
  const std::size_t per_channel = plan.out[l].height * static_cast<std::size_t>(plan.out[l].width);
  const std::size_t channels = plan.out[l].channels;
  for (std::size_t c = 0; c < channels; ++c) {
    const double s = p.bn_scale[c], h = p.bn_shift[c];
    for (std::size_t i = c * per_channel; i < (c + 1) * per_channel; ++i) current[i] = s * current[i] + h;
  }
}

}  // namespace

ForwardResult simulate(const Plan& plan, const Weights& weights, std::span<const double> input, int steps,
                       Mode mode, Recording* rec) {
  const NetworkSpec& spec = *plan.spec;
  const std::size_t n_layers = plan.layers();
  if (rec) rec->prepare(plan, steps);

  std::vector<std::vector<double>> membrane(n_layers), scratch(n_layers), current(n_layers), unnorm(n_layers);
  std::vector<std::vector<std::uint32_t>> argmax_scratch(n_layers);
  for (std::size_t l = 0; l < n_layers; ++l) {
    const LayerSpec& ls = spec.layers[l];
    const std::size_t n = plan.out_size(l);
    scratch[l].resize(n);
    if (ls.has_weights()) current[l].resize(n);
    if (ls.batchnorm) unnorm[l].resize(n);
    if (ls.activation && ls.activation->mode != NeuronMode::quantized_relu) membrane[l].assign(n, 0.0);
    if (ls.kind == LayerKind::maxpool) argmax_scratch[l].resize(n);
  }

  ForwardResult result;
  const std::size_t n_out = plan.out_size(n_layers - 1);
  result.output.assign(n_out, 0.0);
  result.trace.spikes_per_layer.assign(n_layers, 0.0);
  result.trace.steps = steps;
  double synops = 0.0;

  for (int t = 0; t < steps; ++t) {
    std::span<const double> x = input;
    for (std::size_t l = 0; l < n_layers; ++l) {
      const LayerSpec& ls = spec.layers[l];
      const LayerParams& p = weights.layers[l];
      const std::size_t n = plan.out_size(l);
      std::span<double> y = rec ? rec->out_step(l, t, n) : std::span<double>(scratch[l]);

      if (ls.has_weights()) {
        std::span<double> c = current[l];
        const bool bn = ls.batchnorm && !p.bn_scale.empty();
        // The first layer sees the same frame every step.
        if (l != 0 || t == 0) {
          apply_weights(plan, l, p, x, c);
          if (bn) {
            std::copy(c.begin(), c.end(), unnorm[l].begin());
            apply_batchnorm(plan, l, p, c);
          }
        }
        if (rec && ls.batchnorm)
          std::copy(unnorm[l].begin(), unnorm[l].end(), Recording::slice(rec->unnorm[l], t, n).begin());
        if (rec && rec->keep_current) std::copy(c.begin(), c.end(), Recording::slice(rec->current[l], t, n).begin());

        if (!ls.activation) {
          std::copy(c.begin(), c.end(), y.begin());
        } else if (ls.activation->mode == NeuronMode::quantized_relu) {
          if (rec) std::copy(c.begin(), c.end(), Recording::slice(rec->pre[l], t, n).begin());
          const double range = p.act_range;
          const int bits = ls.activation->bits;
          for (std::size_t i = 0; i < n; ++i) y[i] = quantize_activation(c[i], bits, range);
        } else if (mode == Mode::ann) {
          for (std::size_t i = 0; i < n; ++i) y[i] = std::max(c[i], 0.0);
        } else {
          kernels::integrate_fire(membrane[l], c, *ls.activation, y,
                                  rec ? Recording::slice(rec->pre[l], t, n) : std::span<double>{});
        }
      } else if (ls.kind == LayerKind::avgpool) {
        kernels::avgpool_forward(plan.pool[l], x, y);
      } else {
        std::span<std::uint32_t> am = rec ? Recording::slice(rec->argmax[l], t, n)
                                          : std::span<std::uint32_t>(argmax_scratch[l]);
        kernels::maxpool_forward(plan.pool[l], x, y, am);
      }

      if (ls.activation) {
        const auto& fan = plan.fanout[l];
        const bool counts = ls.activation->mode != NeuronMode::quantized_relu;
        double emitted = 0.0, ops = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
          if (y[i] == 0.0) continue;
          const double events = counts ? y[i] : 1.0;
          emitted += events;
          ops += events * fan[i];
        }
        result.trace.spikes_per_layer[l] += emitted;
        synops += ops;
      }
      x = y;
    }
    for (std::size_t i = 0; i < n_out; ++i) result.output[i] += x[i];
  }
  for (double& v : result.output) v /= static_cast<double>(steps);
  result.trace.synaptic_ops = static_cast<std::uint64_t>(std::llround(synops));
  return result;
}

}  // namespace snnball::detail
