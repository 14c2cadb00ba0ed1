#include "snatchml/network.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include "snatchml/error.hpp"
#include "snatchml/rng.hpp"

namespace snatchml {

std::vector<int> realized_widths(const NetworkSpec& spec) {
  const auto& base = spec.layer_widths;
  if (base.size() < 2) fail(ErrorCode::kConfig, "network needs at least input and output widths");
  if (!(spec.width_expansion > 0.0) || !std::isfinite(spec.width_expansion)) {
    fail(ErrorCode::kConfig, "width_expansion must be positive and finite");
  }
  std::vector<int> out(base.size());
  for (std::size_t i = 0; i < base.size(); ++i) {
    if (base[i] < 1) fail(ErrorCode::kConfig, "layer width " + std::to_string(i) + " must be >= 1");
    if (i == 0 || i + 1 == base.size()) {
      out[i] = base[i];
    } else {
      const double scaled = std::floor(base[i] * spec.width_expansion + 0.5);
      out[i] = std::max(1, static_cast<int>(scaled));
    }
  }
  return out;
}

Network::Network(NetworkSpec spec, std::vector<DenseLayer> layers)
    : spec_(std::move(spec)), widths_(realized_widths(spec_)), layers_(std::move(layers)) {
  if (layers_.size() + 1 != widths_.size()) {
    fail(ErrorCode::kShape, "layer count does not match spec widths");
  }
  for (std::size_t j = 0; j < layers_.size(); ++j) {
    const auto& l = layers_[j];
    if (l.in != static_cast<std::size_t>(widths_[j]) ||
        l.out != static_cast<std::size_t>(widths_[j + 1]) || l.weights.size() != l.in * l.out ||
        l.bias.size() != l.out) {
      fail(ErrorCode::kShape, "layer " + std::to_string(j) + " shape does not chain");
    }
  }
}

int Network::last_hidden() const {
  return layers_.size() >= 2 ? static_cast<int>(layers_.size()) - 2 : kLogits;
}

bool Network::all_finite() const {
  for (const auto& l : layers_) {
    for (double v : l.weights) if (!std::isfinite(v)) return false;
    for (double v : l.bias) if (!std::isfinite(v)) return false;
  }
  return true;
}

Network build(const NetworkSpec& spec) {
  const auto widths = realized_widths(spec);
  if (spec.init.kind == InitKind::kGaussian &&
      (!(spec.init.sigma >= 0.0) || !std::isfinite(spec.init.sigma))) {
    fail(ErrorCode::kConfig, "gaussian init sigma must be finite and >= 0");
  }
  Rng rng(spec.seed);
  std::vector<DenseLayer> layers;
  for (std::size_t j = 0; j + 1 < widths.size(); ++j) {
    DenseLayer l;
    l.in = static_cast<std::size_t>(widths[j]);
    l.out = static_cast<std::size_t>(widths[j + 1]);
    l.weights.resize(l.in * l.out);
    l.bias.assign(l.out, 0.0);
    if (spec.init.kind == InitKind::kGaussian) {
      for (auto& w : l.weights) w = spec.init.sigma * rng.normal();
      for (auto& b : l.bias) b = spec.init.sigma * rng.normal();
    } else {
      const double scale = std::sqrt(2.0 / static_cast<double>(l.in));
      for (auto& w : l.weights) w = scale * rng.normal();
    }
    layers.push_back(std::move(l));
  }
  return Network(spec, std::move(layers));
}

double apply_activation(Activation act, double z) {
  switch (act) {
    case Activation::kRelu: return z > 0.0 ? z : 0.0;
    case Activation::kTanh: return std::tanh(z);
  }
  return z;
}

double activation_derivative(Activation act, double a) {
  switch (act) {
    case Activation::kRelu: return a > 0.0 ? 1.0 : 0.0;
    case Activation::kTanh: return 1.0 - a * a;
  }
  return 1.0;
}

namespace {

void affine(const DenseLayer& l, std::span<const double> x, std::vector<double>& out) {
  out.resize(l.out);
  for (std::size_t r = 0; r < l.out; ++r) {
    const double* row = l.weights.data() + r * l.in;
    double acc = l.bias[r];
    for (std::size_t c = 0; c < l.in; ++c) acc += row[c] * x[c];
    out[r] = acc;
  }
}

void check_input(const Network& net, std::span<const double> x) {
  if (x.size() != net.input_dim()) {
    fail(ErrorCode::kShape, "input has " + std::to_string(x.size()) + " features, network expects " +
                                std::to_string(net.input_dim()));
  }
}

}  // namespace

ForwardTrace forward(const Network& net, std::span<const double> x) {
  check_input(net, x);
  ForwardTrace trace;
  trace.activations.resize(net.layer_count());
  std::span<const double> input = x;
  const auto act = net.spec().activation;
  for (std::size_t j = 0; j < net.layer_count(); ++j) {
    auto& out = trace.activations[j];
    affine(net.layers()[j], input, out);
    if (j + 1 < net.layer_count()) {
      for (auto& v : out) v = apply_activation(act, v);
    }
    input = out;
  }
  return trace;
}

std::vector<double> predict_logits(const Network& net, std::span<const double> x) {
  check_input(net, x);
  std::vector<double> a(x.begin(), x.end());
  std::vector<double> b;
  const auto act = net.spec().activation;
  for (std::size_t j = 0; j < net.layer_count(); ++j) {
    affine(net.layers()[j], a, b);
    if (j + 1 < net.layer_count()) {
      for (auto& v : b) v = apply_activation(act, v);
    }
    std::swap(a, b);
  }
  return a;
}

std::size_t param_count(std::span<const int> widths) {
  std::size_t total = 0;
  for (std::size_t j = 0; j + 1 < widths.size(); ++j) {
    total += static_cast<std::size_t>(widths[j]) * widths[j + 1] + widths[j + 1];
  }
  return total;
}

std::size_t param_count(const Network& net) {
  std::size_t total = 0;
  for (const auto& l : net.layers()) total += l.weights.size() + l.bias.size();
  return total;
}

std::vector<double> tap(const ForwardTrace& trace, int k) {
  if (k == kLogits) return trace.logits();
  if (k < 0 || static_cast<std::size_t>(k) >= trace.activations.size()) {
    fail(ErrorCode::kIndex, "layer tap " + std::to_string(k) + " out of range [0, " +
                                std::to_string(trace.activations.size()) + ")");
  }
  return trace.activations[static_cast<std::size_t>(k)];
}

std::vector<double> softmax(std::span<const double> logits) {
  std::vector<double> p(logits.size());
  if (logits.empty()) return p;
  const double peak = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp(logits[i] - peak);
    sum += p[i];
  }
  for (auto& v : p) v /= sum;
  return p;
}

std::size_t argmax(std::span<const double> values) {
  return static_cast<std::size_t>(std::max_element(values.begin(), values.end()) - values.begin());
}

// ---------------------------------------------------------------------------
// Binary format

namespace {

constexpr char kMagic[4] = {'S', 'N', 'M', 'L'};
constexpr std::uint16_t kFormatVersion = 1;

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out_.insert(out_.end(), b, b + n);
  }
  template <typename T>
  void le(T value) {
    for (std::size_t i = 0; i < sizeof(T); ++i) {
      out_.push_back(static_cast<std::uint8_t>(value >> (8 * i)));
    }
  }
  void f64(double v) { le(std::bit_cast<std::uint64_t>(v)); }
  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> in) : in_(in) {}
  template <typename T>
  T le() {
    need(sizeof(T));
    T value = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) {
      value |= static_cast<T>(static_cast<T>(in_[pos_ + i]) << (8 * i));
    }
    pos_ += sizeof(T);
    return value;
  }
  double f64() { return std::bit_cast<double>(le<std::uint64_t>()); }
  void need(std::size_t n) const {
    if (in_.size() - pos_ < n) fail(ErrorCode::kFormat, "model payload truncated");
  }
  std::span<const std::uint8_t> take(std::size_t n) {
    need(n);
    auto s = in_.subspan(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == in_.size(); }

 private:
  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> serialize(const Network& net) {
  if (!net.all_finite()) fail(ErrorCode::kNumeric, "refusing to serialize non-finite weights");
  Writer w;
  w.bytes(kMagic, 4);
  w.le<std::uint16_t>(kFormatVersion);
  const auto& spec = net.spec();
  w.le<std::uint32_t>(static_cast<std::uint32_t>(spec.layer_widths.size()));
  for (int width : spec.layer_widths) w.le<std::uint32_t>(static_cast<std::uint32_t>(width));
  w.le<std::uint8_t>(static_cast<std::uint8_t>(spec.activation));
  w.f64(spec.width_expansion);
  w.le<std::uint8_t>(static_cast<std::uint8_t>(spec.init.kind));
  w.f64(spec.init.sigma);
  w.le<std::uint64_t>(spec.seed);
  for (const auto& l : net.layers()) {
    for (double v : l.weights) w.f64(v);
    for (double v : l.bias) w.f64(v);
  }
  return w.take();
}

Network deserialize(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  const auto magic = r.take(4);
  if (std::memcmp(magic.data(), kMagic, 4) != 0) fail(ErrorCode::kFormat, "bad model magic");
  if (const auto version = r.le<std::uint16_t>(); version != kFormatVersion) {
    fail(ErrorCode::kFormat, "unsupported model format version " + std::to_string(version));
  }
  NetworkSpec spec;
  const auto n_widths = r.le<std::uint32_t>();
  if (n_widths < 2 || n_widths > 1024) fail(ErrorCode::kFormat, "implausible width count");
  for (std::uint32_t i = 0; i < n_widths; ++i) {
    const auto width = r.le<std::uint32_t>();
    if (width == 0 || width > (1u << 24)) fail(ErrorCode::kFormat, "implausible layer width");
    spec.layer_widths.push_back(static_cast<int>(width));
  }
  const auto act = r.le<std::uint8_t>();
  if (act > 1) fail(ErrorCode::kFormat, "unknown activation tag");
  spec.activation = static_cast<Activation>(act);
  spec.width_expansion = r.f64();
  const auto init = r.le<std::uint8_t>();
  if (init > 1) fail(ErrorCode::kFormat, "unknown init tag");
  spec.init.kind = static_cast<InitKind>(init);
  spec.init.sigma = r.f64();
  spec.seed = r.le<std::uint64_t>();

  std::vector<int> widths;
  try {
    widths = realized_widths(spec);
  } catch (const Error& e) {
    fail(ErrorCode::kFormat, std::string("corrupt spec: ") + e.what());
  }
  std::vector<DenseLayer> layers;
  for (std::size_t j = 0; j + 1 < widths.size(); ++j) {
    DenseLayer l;
    l.in = static_cast<std::size_t>(widths[j]);
    l.out = static_cast<std::size_t>(widths[j + 1]);
    r.need((l.in * l.out + l.out) * 8);
    l.weights.resize(l.in * l.out);
    l.bias.resize(l.out);
    for (auto& v : l.weights) v = r.f64();
    for (auto& v : l.bias) v = r.f64();
    layers.push_back(std::move(l));
  }
  if (!r.done()) fail(ErrorCode::kFormat, "trailing bytes after model payload");
  Network net(std::move(spec), std::move(layers));
  if (!net.all_finite()) fail(ErrorCode::kFormat, "model contains non-finite weights");
  return net;
}

void save_network(const Network& net, const std::filesystem::path& path) {
  const auto bytes = serialize(net);
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::kIo, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorCode::kIo, "write failed for " + path.string());
}

Network load_network(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::kIo, "cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return deserialize(bytes);
}

}  // namespace snatchml
