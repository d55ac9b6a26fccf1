#include "snnball/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "engine.hpp"
#include "snnball/deploy.hpp"
#include "snnball/error.hpp"

namespace snnball {

std::vector<double> encode_target(Pixel p) {
  if (p.x < 0 || p.x >= kFrameSide || p.y < 0 || p.y >= kFrameSide)
    throw ValidationError("target coordinate (" + std::to_string(p.x) + ", " + std::to_string(p.y) +
                          ") outside 0..63");
  std::vector<double> t(kOutputNeurons, 0.0);
  auto put = [&](int offset, int c) {
    t[offset + c] = 1.0;
    if (c > 0) t[offset + c - 1] = 0.5;
    if (c + 1 < kFrameSide) t[offset + c + 1] = 0.5;
  };
  put(0, p.x);
  put(kFrameSide, p.y);
  return t;
}

// ---- configuration ---------------------------------------------------------

TrainConfig TrainConfig::defaults_for(Profile profile) {
  TrainConfig c;
  c.profile = profile;
  switch (profile) {
    case Profile::sinabs_like: c.learning_rate = 1e-4; c.batch_size = 200; break;
    case Profile::lava_like: c.learning_rate = 1e-3; c.batch_size = 100; break;
    case Profile::metatf_like: c.learning_rate = 1e-4; c.batch_size = 1000; break;
    case Profile::custom: break;
  }
  return c;
}

TrainConfig TrainConfig::from_kv(const KeyValues& kv) {
  TrainConfig c = defaults_for(parse_profile(kv.get_string("profile", "custom")));
  c.learning_rate = kv.get_double("lr", c.learning_rate);
  c.batch_size = static_cast<int>(kv.get_int("batch", c.batch_size));
  c.epochs = static_cast<int>(kv.get_int("epochs", c.epochs));
  c.lambda_synops = kv.get_double("lambda_synops", c.lambda_synops);
  c.lambda_weightmax = kv.get_double("lambda_weightmax", c.lambda_weightmax);
  c.surrogate_width = kv.get_double("gamma", c.surrogate_width);
  c.seed = static_cast<std::uint64_t>(kv.get_int("seed", static_cast<long long>(c.seed)));
  c.init_gain = kv.get_double("init_gain", c.init_gain);
  c.steps = static_cast<int>(kv.get_int("steps", c.steps));
  c.weight_bits = static_cast<int>(kv.get_int("weight_bits", c.weight_bits));
  c.adam.beta1 = kv.get_double("beta1", c.adam.beta1);
  c.adam.beta2 = kv.get_double("beta2", c.adam.beta2);
  c.adam.epsilon = kv.get_double("epsilon", c.adam.epsilon);
  c.validate();
  return c;
}

KeyValues TrainConfig::to_kv() const {
  KeyValues kv;
  auto num = [](double v) {
    std::ostringstream s;
    s.precision(17);
    s << v;
    return s.str();
  };
  kv.set("profile", to_string(profile));
  kv.set("lr", num(learning_rate));
  kv.set("batch", std::to_string(batch_size));
  kv.set("epochs", std::to_string(epochs));
  kv.set("lambda_synops", num(lambda_synops));
  kv.set("lambda_weightmax", num(lambda_weightmax));
  kv.set("gamma", num(surrogate_width));
  kv.set("seed", std::to_string(seed));
  kv.set("init_gain", num(init_gain));
  kv.set("steps", std::to_string(steps));
  kv.set("weight_bits", std::to_string(weight_bits));
  return kv;
}

void TrainConfig::validate() const {
  if (!(learning_rate >= 0.0)) throw ValidationError("learning rate must be >= 0");
  if (batch_size < 1) throw ValidationError("batch size must be >= 1");
  if (epochs < 0) throw ValidationError("epochs must be >= 0");
  if (!(lambda_synops >= 0.0) || !(lambda_weightmax >= 0.0)) throw ValidationError("loss weights must be >= 0");
  if (!(surrogate_width > 0.0)) throw ValidationError("surrogate width must be > 0");
  if (steps < 0) throw ValidationError("steps must be >= 0");
  if (weight_bits < 0 || weight_bits == 1) throw ValidationError("weight_bits must be 0 or >= 2");
}

// ---- losses ----------------------------------------------------------------

double weightmax_penalty(const Weights& weights) {
  double total = 0.0;
  for (const auto& p : weights.layers) {
    double m = 0.0;
    for (double w : p.weights) m = std::max(m, std::abs(w));
    total += m;
  }
  return total;
}

namespace {

double mse(std::span<const double> output, std::span<const double> target) {
  if (output.size() != target.size() || output.empty()) throw ShapeError("output and target sizes differ");
  double s = 0.0;
  for (std::size_t i = 0; i < output.size(); ++i) {
    const double d = output[i] - target[i];
    s += d * d;
  }
  return s / static_cast<double>(output.size());
}

LossBreakdown combine(double mse_value, double synops, double wmax, const TrainConfig& c) {
  return {mse_value, synops, wmax, mse_value + c.lambda_synops * synops + c.lambda_weightmax * wmax};
}

}  // namespace

LossBreakdown loss(std::span<const double> output, std::span<const double> target, const ForwardTrace& trace,
                   const Weights& weights, const TrainConfig& config, int batch) {
  for (double v : output)
    if (!std::isfinite(v)) throw NumericError("non-finite network output");
  for (double v : target)
    if (!std::isfinite(v)) throw NumericError("non-finite target");
  if (batch < 1) throw ValidationError("batch must be >= 1");
  const double per_step = static_cast<double>(trace.synaptic_ops) / std::max(trace.steps, 1);
  return combine(mse(output, target), per_step / batch, weightmax_penalty(weights), config);
}

double surrogate_grad(double v, double theta, double gamma, bool periodic) {
  double centre = theta;
  if (periodic) centre = theta * std::max(1.0, std::round(v / theta));
  return std::exp(-std::abs(v - centre) / gamma) / gamma;
}

std::vector<Example> to_examples(std::span<const LabeledSample> samples) {
  std::vector<Example> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back({s.frame.as_input(), encode_target(s.truth_local)});
  return out;
}

// ---- backpropagation -------------------------------------------------------

namespace {

template <typename V>
auto at_step(V& v, int t, std::size_t n) {
  return std::span(v).subspan(static_cast<std::size_t>(t) * n, n);
}

Weights zeros_like(const Weights& w) {
  Weights z = w;
  for (auto& p : z.layers) {
    for (auto* v : {&p.weights, &p.bias, &p.bn_scale, &p.bn_shift}) std::fill(v->begin(), v->end(), 0.0);
  }
  return z;
}

void add_into(Weights& dst, const Weights& src) {
  for (std::size_t l = 0; l < dst.layers.size(); ++l) {
    auto& d = dst.layers[l];
    const auto& s = src.layers[l];
    auto add = [](std::vector<double>& a, const std::vector<double>& b) {
      for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
    };
    add(d.weights, s.weights);
    add(d.bias, s.bias);
    add(d.bn_scale, s.bn_scale);
    add(d.bn_shift, s.bn_shift);
  }
}

struct SampleLoss {
  double mse = 0.0;
  double synops = 0.0;
};

/// Per-thread scratch for one sample's forward recording and backward pass.
class Backprop {
 public:
  Backprop(const detail::Plan& plan, const TrainConfig& config, int steps)
      : plan_(plan), config_(config), steps_(steps) {}

  /// Adds scale·∂loss/∂params into `grad`.
  SampleLoss run(const Weights& w, const Example& ex, double scale, Weights& grad) {
    const NetworkSpec& spec = *plan_.spec;
    const std::size_t n_layers = plan_.layers();
    const int T = steps_;
    const auto result = detail::simulate(plan_, w, ex.input, T, detail::Mode::spiking, &rec_);

    SampleLoss out;
    out.mse = mse(result.output, ex.target);
    out.synops = static_cast<double>(result.trace.synaptic_ops) / T;

    const std::size_t n_out = plan_.out_size(n_layers - 1);
    dy_.assign(n_out * T, 0.0);
    for (std::size_t i = 0; i < n_out; ++i) {
      const double d = scale * 2.0 * (result.output[i] - ex.target[i]) / static_cast<double>(n_out) / T;
      for (int t = 0; t < T; ++t) dy_[t * n_out + i] = d;
    }

    for (std::size_t l = n_layers; l-- > 0;) {
      const LayerSpec& ls = spec.layers[l];
      const std::size_t n = plan_.out_size(l);
      const std::size_t n_in = plan_.in_size(l);
      const bool need_input_grad = l > 0;
      if (need_input_grad) dx_.assign(n_in * T, 0.0);

      if (ls.kind == LayerKind::avgpool) {
        for (int t = 0; t < T; ++t)
          kernels::avgpool_backward(plan_.pool[l], at_step(dy_, t, n), at_step(dx_, t, n_in));
      } else if (ls.kind == LayerKind::maxpool) {
        for (int t = 0; t < T; ++t)
          kernels::maxpool_backward(plan_.pool[l], at_step(dy_, t, n),
                                    at_step(rec_.argmax[l], t, n), at_step(dx_, t, n_in));
      } else {
        backward_weighted(l, w.layers[l], scale, grad.layers[l], need_input_grad);
      }
      if (need_input_grad) std::swap(dy_, dx_);
    }
    return out;
  }

 private:
  void backward_weighted(std::size_t l, const LayerParams& p, double scale, LayerParams& g, bool need_input_grad) {
    const LayerSpec& ls = plan_.spec->layers[l];
    const std::size_t n = plan_.out_size(l);
    const std::size_t n_in = plan_.in_size(l);
    const int T = steps_;
    // da: gradient w.r.t. the layer current (after batchnorm).
    da_.assign(n * T, 0.0);

    if (!ls.activation) {
      std::copy(dy_.begin(), dy_.end(), da_.begin());
    } else if (ls.activation->mode == NeuronMode::quantized_relu) {
      const double range = p.act_range;
      for (std::size_t k = 0; k < n * T; ++k) {
        const double z = rec_.pre[l][k];
        da_[k] = (z > 0.0 && z < range) ? dy_[k] : 0.0;
      }
    } else {
      const NeuronParams& a = *ls.activation;
      const bool periodic = a.mode == NeuronMode::if_multispike;
      const double keep = 1.0 - a.decay;
      const double theta = a.threshold;
      const double gamma = config_.surrogate_width;
      const double syn = config_.lambda_synops * scale / T;
      const auto& fan = plan_.fanout[l];
      carry_.assign(n, 0.0);
      for (int t = T - 1; t >= 0; --t) {
        const double* vpre = rec_.pre[l].data() + static_cast<std::size_t>(t) * n;
        const double* spikes = rec_.out[l].data() + static_cast<std::size_t>(t) * n;
        const double* dyt = dy_.data() + static_cast<std::size_t>(t) * n;
        double* dat = da_.data() + static_cast<std::size_t>(t) * n;
        for (std::size_t i = 0; i < n; ++i) {
          const double sg = surrogate_grad(vpre[i], theta, gamma, periodic);
          const double e = dyt[i] + syn * fan[i];
          const double next = keep * carry_[i];
          double grad_v;
          if (a.reset == ResetMode::subtract)
            grad_v = sg * (e - theta * next) + next;
          else
            grad_v = sg * e + (spikes[i] > 0.0 ? 0.0 : next);
          dat[i] = grad_v;
          carry_[i] = grad_v;
        }
      }
    }

    const std::size_t channels = static_cast<std::size_t>(ls.out_channels);
    const std::size_t per_channel = n / channels;
    if (!p.bn_scale.empty()) {
      for (int t = 0; t < T; ++t) {
        const double* u = rec_.unnorm[l].data() + static_cast<std::size_t>(t) * n;
        double* dat = da_.data() + static_cast<std::size_t>(t) * n;
        for (std::size_t c = 0; c < channels; ++c) {
          double ds = 0.0, dh = 0.0;
          for (std::size_t i = c * per_channel; i < (c + 1) * per_channel; ++i) {
            ds += dat[i] * u[i];
            dh += dat[i];
            dat[i] *= p.bn_scale[c];
          }
          g.bn_scale[c] += ds;
          g.bn_shift[c] += dh;
        }
      }
    }

    if (!g.bias.empty()) {
      for (std::size_t k = 0; k < n * T; ++k) g.bias[(k % n) / per_channel] += da_[k];
    }

    const bool conv = ls.kind == LayerKind::conv2d;
    if (l == 0) {
      // Constant input: sum the current gradient over time first.
      sum_.assign(n, 0.0);
      for (int t = 0; t < T; ++t)
        for (std::size_t i = 0; i < n; ++i) sum_[i] += da_[static_cast<std::size_t>(t) * n + i];
      weight_grad(conv, l, input_of(l, 0), sum_, g.weights);
    } else {
      for (int t = 0; t < T; ++t) weight_grad(conv, l, input_of(l, t), at_step(da_, t, n), g.weights);
    }

    if (need_input_grad) {
      for (int t = 0; t < T; ++t) {
        if (conv)
          kernels::conv2d_backward_input(plan_.conv[l], at_step(da_, t, n), p.weights, at_step(dx_, t, n_in));
        else
          kernels::linear_backward_input(at_step(da_, t, n), p.weights, at_step(dx_, t, n_in));
      }
    }
  }

  std::span<const double> input_of(std::size_t l, int t) const {
    if (l == 0) return input_;
    return rec_.out_step(l - 1, t, plan_.out_size(l - 1));
  }

  void weight_grad(bool conv, std::size_t l, std::span<const double> x, std::span<const double> delta,
                   std::vector<double>& dw) {
    if (conv)
      kernels::conv2d_backward_weights(plan_.conv[l], x, delta, dw);
    else
      kernels::linear_backward_weights(x, delta, dw);
  }

 public:
  void set_input(std::span<const double> input) { input_ = input; }

 private:
  const detail::Plan& plan_;
  const TrainConfig& config_;
  int steps_;
  detail::Recording rec_;
  std::span<const double> input_;
  std::vector<double> dy_, dx_, da_, carry_, sum_;
};

void add_weightmax_gradient(const Weights& w, double lambda, Weights& grad) {
  if (lambda == 0.0) return;
  for (std::size_t l = 0; l < w.layers.size(); ++l) {
    const auto& ws = w.layers[l].weights;
    if (ws.empty()) continue;
    std::size_t best = 0;
    for (std::size_t i = 1; i < ws.size(); ++i)
      if (std::abs(ws[i]) > std::abs(ws[best])) best = i;
    if (ws[best] != 0.0) grad.layers[l].weights[best] += lambda * (ws[best] > 0.0 ? 1.0 : -1.0);
  }
}

int thread_count() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

int thread_id() {
#ifdef _OPENMP
  return omp_get_thread_num();
#else
  return 0;
#endif
}

/// Mean loss and gradient over `batch`, accumulated in fixed thread order.
BatchGradient compute_batch(const detail::Plan& plan, const Weights& w, std::span<const Example> data,
                            std::span<const std::size_t> indices, const TrainConfig& config, int steps) {
  const int threads = std::min<int>(thread_count(), static_cast<int>(indices.size()));
  std::vector<Weights> grads(threads, zeros_like(w));
  std::vector<SampleLoss> losses(indices.size());
  const double scale = 1.0 / static_cast<double>(indices.size());

#pragma omp parallel num_threads(threads)
  {
    Backprop bp(plan, config, steps);
    const int tid = thread_id();
#pragma omp for schedule(static)
    for (std::size_t k = 0; k < indices.size(); ++k) {
      const Example& ex = data[indices[k]];
      bp.set_input(ex.input);
      losses[k] = bp.run(w, ex, scale, grads[tid]);
    }
  }

  BatchGradient out;
  out.gradient = std::move(grads[0]);
  for (int t = 1; t < threads; ++t) add_into(out.gradient, grads[t]);
  add_weightmax_gradient(w, config.lambda_weightmax, out.gradient);

  double m = 0.0, s = 0.0;
  for (const auto& l : losses) {
    m += l.mse;
    s += l.synops;
  }
  out.loss = combine(m * scale, s * scale, weightmax_penalty(w), config);
  return out;
}

void check_examples(const NetworkSpec& spec, std::span<const Example> data) {
  if (data.empty()) throw ValidationError("training data is empty");
  const std::size_t n_out = spec.output_shape().size();
  for (const auto& ex : data) {
    if (ex.input.size() != spec.input.size()) throw ShapeError("example input does not match the network");
    if (ex.target.size() != n_out) throw ShapeError("example target does not match the network output");
  }
}

int effective_steps(const NetworkSpec& spec, const TrainConfig& c) { return c.steps > 0 ? c.steps : spec.steps; }

}  // namespace

BatchGradient batch_gradient(const NetworkSpec& spec, const Weights& weights, std::span<const Example> batch,
                             const TrainConfig& config) {
  spec.validate();
  check_weights(spec, weights);
  check_examples(spec, batch);
  const detail::Plan plan(spec);
  std::vector<std::size_t> idx(batch.size());
  std::iota(idx.begin(), idx.end(), 0);
  return compute_batch(plan, weights, batch, idx, config, effective_steps(spec, config));
}

double batch_objective(const NetworkSpec& spec, const Weights& weights, std::span<const Example> batch,
                       const TrainConfig& config) {
  const detail::Plan plan(spec);
  const int steps = effective_steps(spec, config);
  double total = 0.0;
  for (const auto& ex : batch) total += mse(detail::simulate(plan, weights, ex.input, steps, detail::Mode::spiking, nullptr).output, ex.target);
  return total / static_cast<double>(batch.size()) + config.lambda_weightmax * weightmax_penalty(weights);
}

// ---- optimizer -------------------------------------------------------------

Adam::Adam(const Weights& like, AdamParams params) : params_(params), m_(zeros_like(like)), v_(zeros_like(like)) {}

void Adam::step(Weights& w, const Weights& g, double lr) {
  ++t_;
  const double c1 = 1.0 - std::pow(params_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(params_.beta2, static_cast<double>(t_));
  for (std::size_t l = 0; l < w.layers.size(); ++l) {
    auto update = [&](std::vector<double>& p, const std::vector<double>& grad, std::vector<double>& m,
                      std::vector<double>& v) {
      for (std::size_t i = 0; i < p.size(); ++i) {
        m[i] = params_.beta1 * m[i] + (1.0 - params_.beta1) * grad[i];
        v[i] = params_.beta2 * v[i] + (1.0 - params_.beta2) * grad[i] * grad[i];
        p[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + params_.epsilon);
      }
    };
    auto& pw = w.layers[l];
    const auto& pg = g.layers[l];
    auto& pm = m_.layers[l];
    auto& pv = v_.layers[l];
    update(pw.weights, pg.weights, pm.weights, pv.weights);
    update(pw.bias, pg.bias, pm.bias, pv.bias);
    update(pw.bn_scale, pg.bn_scale, pm.bn_scale, pv.bn_scale);
    update(pw.bn_shift, pg.bn_shift, pm.bn_shift, pv.bn_shift);
  }
}

// ---- training loops --------------------------------------------------------

namespace {

bool finite(const LossBreakdown& l) { return std::isfinite(l.total) && std::isfinite(l.mse); }

bool finite(const Weights& w) {
  for (const auto& p : w.layers)
    for (const auto* v : {&p.weights, &p.bias, &p.bn_scale, &p.bn_shift})
      for (double x : *v)
        if (!std::isfinite(x)) return false;
  return true;
}

TrainResult fit(const NetworkSpec& spec, std::span<const Example> data, const TrainConfig& config, Weights weights,
                const EpochCallback& on_epoch) {
  const detail::Plan plan(spec);
  const int steps = effective_steps(spec, config);
  Adam adam(weights, config.adam);
  std::mt19937_64 rng(config.seed ^ 0x5eed5eedULL);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);

  TrainResult result;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double mse_sum = 0.0, syn_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
      const std::span<const std::size_t> batch(order.data() + start, end - start);
      const BatchGradient bg = compute_batch(plan, weights, data, batch, config, steps);
      if (!finite(bg.loss) || !finite(bg.gradient)) throw DivergenceError(epoch, "non-finite loss or gradient");
      mse_sum += bg.loss.mse * static_cast<double>(batch.size());
      syn_sum += bg.loss.synops_penalty * static_cast<double>(batch.size());
      adam.step(weights, bg.gradient, config.learning_rate);
    }
    if (!finite(weights)) throw DivergenceError(epoch, "non-finite weights");
    const double n = static_cast<double>(order.size());
    const LossBreakdown entry = combine(mse_sum / n, syn_sum / n, weightmax_penalty(weights), config);
    if (!finite(entry)) throw DivergenceError(epoch, "non-finite loss");
    result.history.push_back(entry);
    if (on_epoch) on_epoch(epoch, entry, weights);
  }
  result.weights = std::move(weights);
  return result;
}

}  // namespace

TrainResult train_bptt(const NetworkSpec& spec, std::span<const Example> data, const TrainConfig& config,
                       const Weights* initial, const EpochCallback& on_epoch) {
  spec.validate();
  config.validate();
  if (spec.profile == Profile::metatf_like || spec.quantized() || !spec.spiking())
    throw ValidationError("BPTT training needs a spiking network (sinabs_like, lava_like or custom spiking)");
  check_examples(spec, data);
  Weights w = initial ? *initial : init_weights(spec, config.seed, config.init_gain);
  check_weights(spec, w);
  if (!initial) balance_thresholds(spec, w, data, effective_steps(spec, config));
  return fit(spec, data, config, std::move(w), on_epoch);
}

TrainResult train_bptt(const NetworkSpec& spec, std::span<const LabeledSample> data, const TrainConfig& config,
                       const Weights* initial, const EpochCallback& on_epoch) {
  const auto ex = to_examples(data);
  return train_bptt(spec, ex, config, initial, on_epoch);
}

void calibrate_quantized(const NetworkSpec& spec, Weights& w, std::span<const Example> data) {
  const detail::Plan plan(spec);
  const std::size_t count = std::min<std::size_t>(data.size(), 256);
  for (std::size_t l = 0; l < spec.layers.size(); ++l) {
    const LayerSpec& ls = spec.layers[l];
    if (!ls.has_weights()) continue;
    const bool bn = !w.layers[l].bn_scale.empty();
    const bool quant = ls.activation && ls.activation->mode == NeuronMode::quantized_relu;
    if (!bn && !quant) continue;
    const std::size_t n = plan.out_size(l);
    const std::size_t channels = static_cast<std::size_t>(ls.out_channels);
    const std::size_t per_channel = n / channels;
    detail::Recording rec;
    if (bn) {
      std::vector<double> sum(channels, 0.0), sq(channels, 0.0);
      for (std::size_t k = 0; k < count; ++k) {
        detail::simulate(plan, w, data[k].input, 1, detail::Mode::spiking, &rec);
        for (std::size_t i = 0; i < n; ++i) {
          const double u = rec.unnorm[l][i];
          sum[i / per_channel] += u;
          sq[i / per_channel] += u * u;
        }
      }
      const double m = static_cast<double>(count * per_channel);
      for (std::size_t c = 0; c < channels; ++c) {
        const double mean = sum[c] / m;
        const double var = std::max(sq[c] / m - mean * mean, 0.0);
        const double s = 1.0 / std::sqrt(var + 1e-5);
        w.layers[l].bn_scale[c] = s;
        w.layers[l].bn_shift[c] = -mean * s;
      }
    }
    if (quant) {
      // Mean of per-sample maxima: a single global maximum is an outlier on
      // sparse frames and would leave most activations in the zero bin.
      double peaks = 0.0;
      for (std::size_t k = 0; k < count; ++k) {
        detail::simulate(plan, w, data[k].input, 1, detail::Mode::spiking, &rec);
        double peak = 0.0;
        for (std::size_t i = 0; i < n; ++i) peak = std::max(peak, rec.pre[l][i]);
        peaks += peak;
      }
      const double range = peaks / static_cast<double>(count);
      w.layers[l].act_range = range > 0.0 ? range : 1.0;
    }
  }
}

void balance_thresholds(const NetworkSpec& spec, Weights& w, std::span<const Example> data, int steps,
                        double percentile) {
  if (!(percentile > 0.0 && percentile <= 1.0)) throw ValidationError("percentile must be in (0, 1]");
  const detail::Plan plan(spec);
  if (steps <= 0) steps = spec.steps;
  const std::size_t count = std::min<std::size_t>(data.size(), 128);
  detail::Recording rec;
  rec.keep_current = true;
  std::vector<double> positive;
  for (std::size_t l = 0; l < spec.layers.size(); ++l) {
    const LayerSpec& ls = spec.layers[l];
    if (!ls.has_weights() || !ls.activation || ls.activation->mode == NeuronMode::quantized_relu) continue;
    positive.clear();
    for (std::size_t k = 0; k < count; ++k) {
      detail::simulate(plan, w, data[k].input, steps, detail::Mode::spiking, &rec);
      for (double c : rec.current[l])
        if (c > 0.0) positive.push_back(c);
    }
    if (positive.empty()) continue;  // silent layer: nothing to calibrate against
    const auto at = static_cast<std::size_t>(percentile * static_cast<double>(positive.size() - 1));
    std::nth_element(positive.begin(), positive.begin() + static_cast<std::ptrdiff_t>(at), positive.end());
    const double scale = ls.activation->threshold / positive[at];
    for (double& v : w.layers[l].weights) v *= scale;
    for (double& v : w.layers[l].bias) v *= scale;
  }
}

TrainResult train_qat(const NetworkSpec& spec, std::span<const Example> data, const TrainConfig& config,
                      const Weights* initial, const EpochCallback& on_epoch) {
  spec.validate();
  config.validate();
  if (spec.spiking() || (!spec.quantized() && spec.profile != Profile::custom))
    throw ValidationError("QAT needs a quantized-ReLU network (metatf_like or custom)");
  check_examples(spec, data);
  Weights w = initial ? *initial : init_weights(spec, config.seed, config.init_gain);
  check_weights(spec, w);
  if (!initial) calibrate_quantized(spec, w, data);
  TrainConfig qat = config;
  qat.lambda_synops = 0.0;
  TrainResult result = fit(spec, data, qat, std::move(w), on_epoch);
  fold_batchnorm(spec, result.weights);
  if (config.weight_bits > 0) result.weights = quantize_weights(result.weights, config.weight_bits).weights;
  return result;
}

TrainResult train_qat(const NetworkSpec& spec, std::span<const LabeledSample> data, const TrainConfig& config,
                      const Weights* initial, const EpochCallback& on_epoch) {
  const auto ex = to_examples(data);
  return train_qat(spec, ex, config, initial, on_epoch);
}

void write_history(std::ostream& out, std::span<const LossBreakdown> history) {
  out << "epoch,mse,synops,weightmax,total\n";
  for (std::size_t e = 0; e < history.size(); ++e) {
    const auto& h = history[e];
    out << e << ',' << format_double(h.mse) << ',' << format_double(h.synops_penalty) << ','
        << format_double(h.weightmax_penalty) << ',' << format_double(h.total) << '\n';
  }
}

}  // namespace snnball
