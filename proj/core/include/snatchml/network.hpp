#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace snatchml {

enum class Activation : std::uint8_t { kRelu = 0, kTanh = 1 };

enum class InitKind : std::uint8_t { kGaussian = 0, kHe = 1 };

struct InitSpec {
  InitKind kind = InitKind::kHe;
  double sigma = 1.0;  // only used by kGaussian

  bool operator==(const InitSpec&) const = default;
};

struct NetworkSpec {
  // [d_in, h_1, ..., h_L, n_out]. Hidden widths are scaled by width_expansion.
  std::vector<int> layer_widths;
  Activation activation = Activation::kRelu;
  double width_expansion = 1.0;
  InitSpec init;
  std::uint64_t seed = 0;

  bool operator==(const NetworkSpec&) const = default;
};

// Hidden widths become max(1, floor(h * expansion + 0.5)); the input and
// output widths are left alone.
std::vector<int> realized_widths(const NetworkSpec& spec);

// One affine map. weights is row-major with `out` rows and `in` columns.
struct DenseLayer {
  std::size_t in = 0;
  std::size_t out = 0;
  std::vector<double> weights;
  std::vector<double> bias;

  double& w(std::size_t row, std::size_t col) { return weights[row * in + col]; }
  double w(std::size_t row, std::size_t col) const { return weights[row * in + col]; }

  bool operator==(const DenseLayer&) const = default;
};

// Tap index selecting the output logits.
inline constexpr int kLogits = -1;

// Post-activation output of every layer; the last entry is the logit vector
// (the output layer is linear).
struct ForwardTrace {
  std::vector<std::vector<double>> activations;

  const std::vector<double>& logits() const { return activations.back(); }
};

class Network {
 public:
  Network(NetworkSpec spec, std::vector<DenseLayer> layers);

  const NetworkSpec& spec() const { return spec_; }
  const std::vector<int>& widths() const { return widths_; }
  std::size_t layer_count() const { return layers_.size(); }
  std::size_t input_dim() const { return layers_.front().in; }
  std::size_t output_dim() const { return layers_.back().out; }
  // Default white-box tap: the last hidden layer, or the logits for a
  // network without hidden layers.
  int last_hidden() const;

  const std::vector<DenseLayer>& layers() const { return layers_; }
  std::vector<DenseLayer>& mutable_layers() { return layers_; }

  bool all_finite() const;

  bool operator==(const Network&) const = default;

 private:
  NetworkSpec spec_;
  std::vector<int> widths_;
  std::vector<DenseLayer> layers_;
};

Network build(const NetworkSpec& spec);

ForwardTrace forward(const Network& net, std::span<const double> x);

// Logits only; skips storing intermediate activations.
std::vector<double> predict_logits(const Network& net, std::span<const double> x);

std::size_t param_count(const Network& net);
std::size_t param_count(std::span<const int> widths);

// k in [0, layer_count) or kLogits.
std::vector<double> tap(const ForwardTrace& trace, int k);

double apply_activation(Activation act, double z);
// Derivative expressed through the activation output a = act(z).
double activation_derivative(Activation act, double a);

std::vector<double> softmax(std::span<const double> logits);
std::size_t argmax(std::span<const double> values);

// Binary model format, little-endian:
//   "SNML" | u16 version | u32 width count | u32 widths... | u8 activation |
//   f64 expansion | u8 init kind | f64 init sigma | u64 seed |
//   per layer: weights row-major then bias, all f64.
std::vector<std::uint8_t> serialize(const Network& net);
Network deserialize(std::span<const std::uint8_t> bytes);

void save_network(const Network& net, const std::filesystem::path& path);
Network load_network(const std::filesystem::path& path);

}  // namespace snatchml
