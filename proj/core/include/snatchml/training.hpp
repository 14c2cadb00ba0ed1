#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "snatchml/datasets.hpp"
#include "snatchml/network.hpp"

namespace snatchml {

struct TrainConfig {
  int epochs = 50;  // 0 leaves the network untouched
  int batch_size = 16;
  double learning_rate = 0.05;
  std::uint64_t seed = 0;
  bool shuffle = true;
};

// How the outer (unlearning) step of meta-unlearning is applied.
//   kCommitInner:  theta <- theta' + beta * grad L_hijack(theta')
//   kEvaluateOnly: theta <- theta  + beta * grad L_hijack(theta')
// In kEvaluateOnly the original-task step only serves to pick the point at
// which the hijack gradient is evaluated.
enum class UnlearnMode { kCommitInner, kEvaluateOnly };

struct UnlearnConfig {
  double alpha = 1.0;   // inner (original task) step size
  double beta = 0.01;   // outer (hijack ascent) step size
  UnlearnMode mode = UnlearnMode::kCommitInner;
  // Layer feeding the auxiliary hijack head; kLogits or a hidden index.
  // Unset means the network's last hidden layer.
  std::optional<int> tap_layer;
  double head_learning_rate = 0.1;
};

struct TrainReport {
  std::vector<double> loss_curve;  // mean training loss per epoch
  double train_accuracy = 0.0;
  std::optional<double> test_accuracy;
  double wall_clock_s = 0.0;
};

struct Example {
  const std::vector<double>* x;
  int label;
};

// Gradient storage mirrors the network's layers.
using Gradients = std::vector<DenseLayer>;

struct LossAndGrad {
  double loss = 0.0;
  Gradients grads;
};

// Mean softmax cross-entropy over the batch and its gradient.
LossAndGrad loss_and_grad(const Network& net, std::span<const Example> batch);

// Convenience: the whole dataset as one batch on its original labels.
std::vector<Example> original_examples(const LabeledDataset& ds);
std::vector<Example> hijack_examples(const LabeledDataset& ds);

double mean_loss(const Network& net, std::span<const Example> examples);
double accuracy(const Network& net, std::span<const Example> examples);
double original_accuracy(const Network& net, const LabeledDataset& ds);

// Plain mini-batch SGD on the original labels. `eval` (optional) fills
// TrainReport::test_accuracy.
std::pair<Network, TrainReport> train(Network net, const LabeledDataset& ds,
                                      const TrainConfig& cfg,
                                      const LabeledDataset* eval = nullptr);

// Same loop on arbitrary examples (used for surrogates).
std::pair<Network, TrainReport> train_examples(Network net, std::span<const Example> examples,
                                               const TrainConfig& cfg);

using GradientFn = std::function<std::vector<double>(std::span<const double>)>;

// One meta-unlearning update of a flat parameter vector.
std::vector<double> meta_unlearn_step(std::span<const double> theta,
                                      const GradientFn& original_grad,
                                      const GradientFn& hijack_grad, double alpha, double beta,
                                      UnlearnMode mode);

// Trains on the original task while ascending the hijack loss measured by an
// auxiliary linear head on the tapped layer. The head takes its own SGD step
// each batch and is discarded at the end. The inner step uses ucfg.alpha;
// cfg supplies epochs, batching and the shuffle seed.
std::pair<Network, TrainReport> meta_unlearn_train(Network net, const LabeledDataset& ds,
                                                   const TrainConfig& cfg,
                                                   const UnlearnConfig& ucfg,
                                                   const LabeledDataset* eval = nullptr);

struct SurrogateSpec {
  std::vector<int> hidden_widths = {32};
  Activation activation = Activation::kRelu;
};

// Fresh MLP from BEK vectors to hijack labels. Inputs are standardized during
// training and the standardization is folded into the first layer, so the
// returned network consumes raw BEK vectors.
Network train_surrogate(const std::vector<std::vector<double>>& bek_vectors,
                        const std::vector<int>& hijack_labels, const TrainConfig& cfg,
                        const SurrogateSpec& spec = {});

std::vector<double> flatten(const Network& net);
void unflatten(std::span<const double> theta, Network& net);

}  // namespace snatchml
