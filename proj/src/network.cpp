#include "snnball/network.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include "engine.hpp"
#include "snnball/error.hpp"
#include "snnball/kv.hpp"

namespace snnball {

const char* to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::conv2d: return "conv2d";
    case LayerKind::avgpool: return "avgpool";
    case LayerKind::maxpool: return "maxpool";
    case LayerKind::linear: return "linear";
  }
  return "?";
}

LayerKind parse_layer_kind(std::string_view name) {
  if (name == "conv2d") return LayerKind::conv2d;
  if (name == "avgpool") return LayerKind::avgpool;
  if (name == "maxpool") return LayerKind::maxpool;
  if (name == "linear") return LayerKind::linear;
  throw ValidationError("unknown layer kind '" + std::string(name) + "'");
}

const char* to_string(Profile profile) {
  switch (profile) {
    case Profile::sinabs_like: return "sinabs_like";
    case Profile::metatf_like: return "metatf_like";
    case Profile::lava_like: return "lava_like";
    case Profile::custom: return "custom";
  }
  return "?";
}

Profile parse_profile(std::string_view name) {
  if (name == "sinabs_like") return Profile::sinabs_like;
  if (name == "metatf_like") return Profile::metatf_like;
  if (name == "lava_like") return Profile::lava_like;
  if (name == "custom") return Profile::custom;
  throw ValidationError("unknown profile '" + std::string(name) + "'");
}

LayerSpec LayerSpec::conv(int out_channels, int kernel, int stride, std::optional<NeuronParams> act) {
  LayerSpec s;
  s.kind = LayerKind::conv2d;
  s.out_channels = out_channels;
  s.kernel_h = s.kernel_w = kernel;
  s.stride = stride;
  s.activation = act;
  return s;
}

LayerSpec LayerSpec::linear(int features, std::optional<NeuronParams> act) {
  LayerSpec s;
  s.kind = LayerKind::linear;
  s.out_channels = features;
  s.activation = act;
  return s;
}

LayerSpec LayerSpec::avgpool(int kernel) {
  LayerSpec s;
  s.kind = LayerKind::avgpool;
  s.kernel_h = s.kernel_w = s.stride = kernel;
  return s;
}

LayerSpec LayerSpec::maxpool(int kernel) {
  LayerSpec s = avgpool(kernel);
  s.kind = LayerKind::maxpool;
  return s;
}

std::vector<Shape> NetworkSpec::shapes() const {
  if (layers.empty()) throw ShapeError("network has no layers");
  if (input.channels < 1 || input.height < 1 || input.width < 1) throw ShapeError("bad input shape");
  std::vector<Shape> result;
  Shape cur = input;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const LayerSpec& s = layers[l];
    const std::string where = "layer " + std::to_string(l) + " (" + to_string(s.kind) + "): ";
    if (s.stride < 1) throw ShapeError(where + "stride must be >= 1");
    if (s.kernel_h < 1 || s.kernel_w < 1) throw ShapeError(where + "kernel must be >= 1");
    switch (s.kind) {
      case LayerKind::conv2d:
        if (s.out_channels < 1) throw ShapeError(where + "needs output channels");
        if (s.kernel_h > cur.height || s.kernel_w > cur.width)
          throw ShapeError(where + "kernel larger than its " + std::to_string(cur.height) + "x" +
                           std::to_string(cur.width) + " input");
        cur = {s.out_channels, (cur.height - s.kernel_h) / s.stride + 1, (cur.width - s.kernel_w) / s.stride + 1};
        break;
      case LayerKind::avgpool:
      case LayerKind::maxpool:
        if (s.kernel_h != s.kernel_w || s.stride != s.kernel_h)
          throw ShapeError(where + "pooling must be square with stride equal to its window");
        if (s.kernel_h > cur.height || s.kernel_w > cur.width) throw ShapeError(where + "pool larger than input");
        if (s.activation || s.has_bias || s.batchnorm) throw ShapeError(where + "pooling layers carry no parameters");
        cur = {cur.channels, cur.height / s.kernel_h, cur.width / s.kernel_w};
        break;
      case LayerKind::linear:
        if (s.out_channels < 1) throw ShapeError(where + "needs output features");
        cur = {s.out_channels, 1, 1};
        break;
    }
    result.push_back(cur);
  }
  return result;
}

Shape NetworkSpec::input_of(std::size_t layer) const { return layer == 0 ? input : shapes().at(layer - 1); }

void NetworkSpec::validate() const {
  const auto out = shapes();
  if (steps < 1) throw ValidationError("steps must be >= 1");
  for (const auto& l : layers)
    if (l.activation) l.activation->validate();
  if (profile != Profile::custom) {
    if (!(input == Shape{1, kFrameSide, kFrameSide})) throw ShapeError("detector profiles take a 1x64x64 frame");
    if (out.back().size() != static_cast<std::size_t>(kOutputNeurons))
      throw ShapeError("detector profiles end in 128 output neurons");
  }
}

std::vector<int> NetworkSpec::blocks() const {
  std::vector<int> result;
  int block = 0;
  for (const auto& l : layers) {
    if (l.has_weights() || block == 0) ++block;
    result.push_back(block);
  }
  return result;
}

bool NetworkSpec::spiking() const {
  for (const auto& l : layers)
    if (l.activation && l.activation->mode != NeuronMode::quantized_relu) return true;
  return false;
}

bool NetworkSpec::quantized() const {
  for (const auto& l : layers)
    if (l.activation && l.activation->mode == NeuronMode::quantized_relu) return true;
  return false;
}

NetworkSpec build_profile(std::string_view name) {
  NetworkSpec spec;
  spec.profile = parse_profile(name);
  switch (spec.profile) {
    case Profile::sinabs_like: {
      const NeuronParams if_neuron{NeuronMode::if_multispike, 1.0, 0.0};
      spec.steps = 8;
      spec.layers = {LayerSpec::conv(4, 5, 2, if_neuron), LayerSpec::avgpool(2),
                     LayerSpec::conv(4, 3, 1, if_neuron), LayerSpec::avgpool(2),
                     LayerSpec::linear(64, if_neuron),    LayerSpec::linear(kOutputNeurons, if_neuron)};
      break;
    }
    case Profile::metatf_like: {
      NeuronParams qrelu{NeuronMode::quantized_relu, 1.0, 0.0};
      qrelu.bits = 4;
      spec.steps = 1;
      spec.weight_bits = 8;
      spec.layers = {LayerSpec::conv(4, 5, 2, qrelu), LayerSpec::maxpool(2), LayerSpec::conv(4, 3, 2, qrelu),
                     LayerSpec::linear(64, qrelu), LayerSpec::linear(kOutputNeurons)};
      for (auto& l : spec.layers) {
        if (!l.has_weights()) continue;
        l.has_bias = true;
        l.batchnorm = l.activation.has_value();
      }
      break;
    }
    case Profile::lava_like: {
      const NeuronParams lif{NeuronMode::lif_single, 0.25, 0.05};
      spec.steps = 20;
      spec.layers = {LayerSpec::conv(8, 5, 2, lif), LayerSpec::conv(16, 3, 1, lif), LayerSpec::linear(64, lif),
                     LayerSpec::linear(kOutputNeurons, lif)};
      break;
    }
    case Profile::custom:
      throw ValidationError("custom is not a built-in profile");
  }
  spec.validate();
  return spec;
}

// ---- weights ---------------------------------------------------------------

namespace {

std::size_t fan_in(const LayerSpec& s, const Shape& in) {
  return s.kind == LayerKind::conv2d ? static_cast<std::size_t>(in.channels) * s.kernel_h * s.kernel_w : in.size();
}

std::size_t weight_count(const LayerSpec& s, const Shape& in) {
  return fan_in(s, in) * static_cast<std::size_t>(s.out_channels);
}

}  // namespace

Weights zero_weights(const NetworkSpec& spec) {
  const auto out = spec.shapes();
  Weights w;
  w.layers.resize(spec.layers.size());
  for (std::size_t l = 0; l < spec.layers.size(); ++l) {
    const LayerSpec& s = spec.layers[l];
    if (!s.has_weights()) continue;
    const Shape in = l == 0 ? spec.input : out[l - 1];
    auto& p = w.layers[l];
    p.weights.assign(weight_count(s, in), 0.0);
    if (s.has_bias) p.bias.assign(s.out_channels, 0.0);
    if (s.batchnorm) {
      p.bn_scale.assign(s.out_channels, 1.0);
      p.bn_shift.assign(s.out_channels, 0.0);
    }
  }
  return w;
}

Weights init_weights(const NetworkSpec& spec, std::uint64_t seed, double gain) {
  Weights w = zero_weights(spec);
  std::mt19937_64 rng(seed);
  const auto out = spec.shapes();
  for (std::size_t l = 0; l < spec.layers.size(); ++l) {
    const LayerSpec& s = spec.layers[l];
    if (!s.has_weights()) continue;
    const Shape in = l == 0 ? spec.input : out[l - 1];
    const double bound = gain / std::sqrt(static_cast<double>(fan_in(s, in)));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (double& v : w.layers[l].weights) v = dist(rng);
  }
  return w;
}

void check_weights(const NetworkSpec& spec, const Weights& w) {
  const auto out = spec.shapes();
  if (w.layers.size() != spec.layers.size()) throw ShapeError("weights have the wrong number of layers");
  for (std::size_t l = 0; l < spec.layers.size(); ++l) {
    const LayerSpec& s = spec.layers[l];
    const LayerParams& p = w.layers[l];
    const std::string where = "layer " + std::to_string(l) + ": ";
    if (!s.has_weights()) {
      if (!p.weights.empty() || !p.bias.empty()) throw ShapeError(where + "pooling layer has parameters");
      continue;
    }
    const Shape in = l == 0 ? spec.input : out[l - 1];
    const auto channels = static_cast<std::size_t>(s.out_channels);
    if (p.weights.size() != weight_count(s, in)) throw ShapeError(where + "weight tensor has the wrong size");
    if (p.bias.size() != (s.has_bias ? channels : 0)) throw ShapeError(where + "bias has the wrong size");
    const std::size_t bn = p.bn_scale.size();
    if ((bn != 0 && (!s.batchnorm || bn != channels)) || p.bn_shift.size() != bn)
      throw ShapeError(where + "batchnorm parameters have the wrong size");
    for (const auto* v : {&p.weights, &p.bias, &p.bn_scale, &p.bn_shift})
      for (double x : *v)
        if (!std::isfinite(x)) throw NumericError(where + "non-finite parameter");
    if (s.activation && s.activation->mode == NeuronMode::quantized_relu && !(p.act_range > 0.0))
      throw NumericError(where + "quantized activation range must be positive");
  }
}

std::size_t parameter_count(const Weights& w) {
  std::size_t n = 0;
  for (const auto& p : w.layers) n += p.weights.size() + p.bias.size() + p.bn_scale.size() + p.bn_shift.size();
  return n;
}

void fold_batchnorm(const NetworkSpec& spec, Weights& w) {
  for (std::size_t l = 0; l < spec.layers.size(); ++l) {
    auto& p = w.layers[l];
    if (p.bn_scale.empty()) continue;
    const std::size_t channels = p.bn_scale.size();
    const std::size_t per_channel = p.weights.size() / channels;
    const bool input_major = spec.layers[l].kind == LayerKind::linear;
    for (std::size_t i = 0; i < p.weights.size(); ++i) {
      const std::size_t c = input_major ? i % channels : i / per_channel;
      p.weights[i] *= p.bn_scale[c];
    }
    if (p.bias.empty()) p.bias.assign(channels, 0.0);
    for (std::size_t c = 0; c < channels; ++c) p.bias[c] = p.bn_scale[c] * p.bias[c] + p.bn_shift[c];
    p.bn_scale.clear();
    p.bn_shift.clear();
  }
}

// ---- inference -------------------------------------------------------------

ForwardResult forward(const NetworkSpec& spec, const Weights& weights, std::span<const double> input, int steps,
                      ForwardOptions options) {
  spec.validate();
  check_weights(spec, weights);
  if (steps < 1) throw ValidationError("forward needs at least one step");
  if (input.size() != spec.input.size()) throw ShapeError("input does not match the network input shape");
  const detail::Plan plan(spec);
  if (!options.record_activity) return detail::simulate(plan, weights, input, steps, detail::Mode::spiking, nullptr);

  detail::Recording rec;
  ForwardResult result = detail::simulate(plan, weights, input, steps, detail::Mode::spiking, &rec);
  for (std::size_t l = 0; l < plan.layers(); ++l)
    result.trace.layers.push_back({plan.out[l], steps, std::move(rec.out[l])});
  return result;
}

ForwardResult forward(const NetworkSpec& spec, const Weights& weights, const EventFrame& frame, int steps,
                      ForwardOptions options) {
  const auto input = frame.as_input();
  return forward(spec, weights, input, steps, options);
}

struct CompiledNetwork::State {
  State(NetworkSpec s, Weights w) : spec(std::move(s)), weights(std::move(w)), plan(spec) {}
  NetworkSpec spec;
  Weights weights;
  detail::Plan plan;
};

CompiledNetwork::CompiledNetwork(NetworkSpec spec, Weights weights) {
  spec.validate();
  check_weights(spec, weights);
  state_ = std::make_shared<const State>(std::move(spec), std::move(weights));
}

const NetworkSpec& CompiledNetwork::spec() const { return state_->spec; }
const Weights& CompiledNetwork::weights() const { return state_->weights; }

ForwardResult CompiledNetwork::run(std::span<const double> input, int steps) const {
  if (input.size() != state_->spec.input.size()) throw ShapeError("input does not match the network input shape");
  if (steps < 0) throw ValidationError("steps must be >= 0");
  return detail::simulate(state_->plan, state_->weights, input, steps == 0 ? state_->spec.steps : steps,
                          detail::Mode::spiking, nullptr);
}

std::vector<double> forward_ann(const NetworkSpec& spec, const Weights& weights, std::span<const double> input) {
  spec.validate();
  check_weights(spec, weights);
  if (input.size() != spec.input.size()) throw ShapeError("input does not match the network input shape");
  const detail::Plan plan(spec);
  return detail::simulate(plan, weights, input, 1, detail::Mode::ann, nullptr).output;
}

std::vector<std::vector<double>> fanout(const NetworkSpec& spec) { return detail::Plan(spec).fanout; }

// ---- model file ------------------------------------------------------------

namespace {

void write_array(std::ostream& out, const char* name, const std::vector<double>& values) {
  out << name << ' ' << values.size() << '\n';
  for (std::size_t i = 0; i < values.size(); ++i)
    out << format_double(values[i]) << (((i + 1) % 8 == 0 || i + 1 == values.size()) ? '\n' : ' ');
}

class Reader {
 public:
  Reader(std::istream& in, std::string source) : in_(in), source_(std::move(source)) {}

  std::string word() {
    std::string w;
    skip_space();
    if (!(in_ >> w)) fail("unexpected end of file");
    return w;
  }
  void expect(const std::string& keyword) {
    if (const auto w = word(); w != keyword) fail("expected '" + keyword + "', got '" + w + "'");
  }
  long long integer() {
    const auto w = word();
    long long v = 0;
    auto [p, ec] = std::from_chars(w.data(), w.data() + w.size(), v);
    if (ec != std::errc{} || p != w.data() + w.size()) fail("expected integer, got '" + w + "'");
    return v;
  }
  double real() {
    const auto w = word();
    double v = 0;
    auto [p, ec] = std::from_chars(w.data(), w.data() + w.size(), v);
    if (ec != std::errc{} || p != w.data() + w.size()) fail("expected number, got '" + w + "'");
    return v;
  }
  std::vector<double> array(const std::string& name) {
    expect(name);
    const auto n = integer();
    if (n < 0) fail("negative array length");
    std::vector<double> v(static_cast<std::size_t>(n));
    for (double& x : v) x = real();
    return v;
  }
  [[noreturn]] void fail(const std::string& what) { throw ParseError(source_, line_, what); }

 private:
  void skip_space() {
    while (true) {
      const int c = in_.peek();
      if (c == '\n') ++line_;
      if (c == EOF || !std::isspace(c)) return;
      in_.get();
    }
  }
  std::istream& in_;
  std::string source_;
  std::size_t line_ = 1;
};

// key=value tokens of a layer line
std::string field(const std::string& token, const char* key, Reader& r) {
  const std::string prefix = std::string(key) + "=";
  if (token.rfind(prefix, 0) != 0) r.fail("expected " + prefix + "...");
  return token.substr(prefix.size());
}

int int_field(const std::string& token, const char* key, Reader& r) {
  const auto v = field(token, key, r);
  int out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || p != v.data() + v.size()) r.fail(std::string("bad integer for ") + key);
  return out;
}

double real_field(const std::string& token, const char* key, Reader& r) {
  const auto v = field(token, key, r);
  double out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || p != v.data() + v.size()) r.fail(std::string("bad number for ") + key);
  return out;
}

}  // namespace

void write_model(std::ostream& out, const NetworkSpec& spec, const Weights& weights) {
  check_weights(spec, weights);
  out << "snnball-model " << kModelFormatVersion << '\n';
  out << "profile " << to_string(spec.profile) << '\n';
  out << "steps " << spec.steps << '\n';
  out << "input " << spec.input.channels << ' ' << spec.input.height << ' ' << spec.input.width << '\n';
  out << "weight_bits " << spec.weight_bits << '\n';
  out << "layers " << spec.layers.size() << '\n';
  for (const LayerSpec& l : spec.layers) {
    out << "layer " << to_string(l.kind) << " out=" << l.out_channels << " kernel=" << l.kernel_h << 'x'
        << l.kernel_w << " stride=" << l.stride << " bias=" << l.has_bias << " batchnorm=" << l.batchnorm;
    if (l.activation) {
      const NeuronParams& a = *l.activation;
      out << " activation=" << to_string(a.mode) << " threshold=" << format_double(a.threshold)
          << " decay=" << format_double(a.decay) << " reset=" << (a.reset == ResetMode::subtract ? "subtract" : "zero")
          << " bits=" << a.bits;
    } else {
      out << " activation=none";
    }
    out << '\n';
  }
  for (std::size_t l = 0; l < spec.layers.size(); ++l) {
    const LayerParams& p = weights.layers[l];
    out << "params " << l << " act_range " << format_double(p.act_range) << '\n';
    write_array(out, "weights", p.weights);
    write_array(out, "bias", p.bias);
    write_array(out, "bn_scale", p.bn_scale);
    write_array(out, "bn_shift", p.bn_shift);
  }
  out << "end\n";
}

void save_model(const std::filesystem::path& path, const NetworkSpec& spec, const Weights& weights) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  write_model(out, spec, weights);
}

Model read_model(std::istream& in, const std::string& source) {
  Reader r(in, source);
  Model m;
  r.expect("snnball-model");
  if (const auto version = r.integer(); version != kModelFormatVersion)
    r.fail("unsupported model format version " + std::to_string(version));
  r.expect("profile");
  m.spec.profile = parse_profile(r.word());
  r.expect("steps");
  m.spec.steps = static_cast<int>(r.integer());
  r.expect("input");
  m.spec.input.channels = static_cast<int>(r.integer());
  m.spec.input.height = static_cast<int>(r.integer());
  m.spec.input.width = static_cast<int>(r.integer());
  r.expect("weight_bits");
  m.spec.weight_bits = static_cast<int>(r.integer());
  r.expect("layers");
  const auto n = r.integer();
  if (n < 1 || n > 1000) r.fail("bad layer count");
  for (long long i = 0; i < n; ++i) {
    r.expect("layer");
    LayerSpec l;
    l.kind = parse_layer_kind(r.word());
    l.out_channels = int_field(r.word(), "out", r);
    const auto kernel = field(r.word(), "kernel", r);
    const auto x = kernel.find('x');
    if (x == std::string::npos) r.fail("kernel must be HxW");
    l.kernel_h = int_field("k=" + kernel.substr(0, x), "k", r);
    l.kernel_w = int_field("k=" + kernel.substr(x + 1), "k", r);
    l.stride = int_field(r.word(), "stride", r);
    l.has_bias = field(r.word(), "bias", r) == "1";
    l.batchnorm = field(r.word(), "batchnorm", r) == "1";
    const auto act = field(r.word(), "activation", r);
    if (act != "none") {
      NeuronParams a;
      a.mode = parse_neuron_mode(act);
      a.threshold = real_field(r.word(), "threshold", r);
      a.decay = real_field(r.word(), "decay", r);
      a.reset = field(r.word(), "reset", r) == "zero" ? ResetMode::zero : ResetMode::subtract;
      a.bits = int_field(r.word(), "bits", r);
      l.activation = a;
    }
    m.spec.layers.push_back(l);
  }
  m.spec.validate();
  m.weights.layers.resize(m.spec.layers.size());
  for (std::size_t l = 0; l < m.spec.layers.size(); ++l) {
    r.expect("params");
    if (r.integer() != static_cast<long long>(l)) r.fail("parameter blocks out of order");
    r.expect("act_range");
    auto& p = m.weights.layers[l];
    p.act_range = r.real();
    p.weights = r.array("weights");
    p.bias = r.array("bias");
    p.bn_scale = r.array("bn_scale");
    p.bn_shift = r.array("bn_shift");
  }
  r.expect("end");
  check_weights(m.spec, m.weights);
  return m;
}

Model load_model(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  return read_model(in, path.string());
}

}  // namespace snnball
