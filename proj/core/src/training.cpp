#include "snatchml/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

#include "snatchml/error.hpp"
#include "snatchml/rng.hpp"

namespace snatchml {

namespace {

constexpr double kDivergenceLoss = 1e6;

Gradients zero_like(const Network& net) {
  Gradients g;
  g.reserve(net.layer_count());
  for (const auto& l : net.layers()) {
    DenseLayer z;
    z.in = l.in;
    z.out = l.out;
    z.weights.assign(l.weights.size(), 0.0);
    z.bias.assign(l.bias.size(), 0.0);
    g.push_back(std::move(z));
  }
  return g;
}

// Accumulates dL/dparams for layers [0, top] given dL/d(output of layer top).
void backward(const Network& net, std::span<const double> x, const ForwardTrace& trace,
              std::size_t top, std::vector<double> delta, Gradients& grads) {
  const auto act = net.spec().activation;
  std::vector<double> next;
  for (std::size_t j = top + 1; j-- > 0;) {
    const auto& layer = net.layers()[j];
    if (j + 1 < net.layer_count()) {
      const auto& a = trace.activations[j];
      for (std::size_t r = 0; r < layer.out; ++r) delta[r] *= activation_derivative(act, a[r]);
    }
    const std::span<const double> input =
        j == 0 ? x : std::span<const double>(trace.activations[j - 1]);
    auto& g = grads[j];
    for (std::size_t r = 0; r < layer.out; ++r) {
      const double d = delta[r];
      double* row = g.weights.data() + r * layer.in;
      for (std::size_t c = 0; c < layer.in; ++c) row[c] += d * input[c];
      g.bias[r] += d;
    }
    if (j == 0) break;
    next.assign(layer.in, 0.0);
    for (std::size_t r = 0; r < layer.out; ++r) {
      const double d = delta[r];
      const double* row = layer.weights.data() + r * layer.in;
      for (std::size_t c = 0; c < layer.in; ++c) next[c] += row[c] * d;
    }
    std::swap(delta, next);
  }
}

// Softmax cross-entropy of one logit vector; writes (p - onehot) * scale.
double cross_entropy(std::span<const double> logits, int label, double scale,
                     std::vector<double>& delta) {
  if (label < 0 || static_cast<std::size_t>(label) >= logits.size()) {
    fail(ErrorCode::kParameter, "label " + std::to_string(label) + " outside " +
                                    std::to_string(logits.size()) + " outputs");
  }
  const double peak = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (double z : logits) sum += std::exp(z - peak);
  const double log_norm = peak + std::log(sum);
  delta.resize(logits.size());
  for (std::size_t k = 0; k < logits.size(); ++k) {
    delta[k] = std::exp(logits[k] - log_norm) * scale;
  }
  delta[static_cast<std::size_t>(label)] -= scale;
  return log_norm - logits[static_cast<std::size_t>(label)];
}

void check_finite(const ForwardTrace& trace) {
  for (const auto& a : trace.activations) {
    for (double v : a) {
      if (!std::isfinite(v)) fail(ErrorCode::kNumeric, "non-finite activation in forward pass");
    }
  }
}

void sgd_update(Network& net, const Gradients& grads, double lr) {
  auto& layers = net.mutable_layers();
  for (std::size_t j = 0; j < layers.size(); ++j) {
    auto& w = layers[j].weights;
    const auto& gw = grads[j].weights;
    for (std::size_t i = 0; i < w.size(); ++i) w[i] -= lr * gw[i];
    auto& b = layers[j].bias;
    const auto& gb = grads[j].bias;
    for (std::size_t i = 0; i < b.size(); ++i) b[i] -= lr * gb[i];
  }
}

void check_config(const TrainConfig& cfg) {
  if (cfg.epochs < 0) fail(ErrorCode::kConfig, "epochs must be >= 0");
  if (cfg.batch_size < 1) fail(ErrorCode::kConfig, "batch_size must be >= 1");
  if (!(cfg.learning_rate >= 0.0) || !std::isfinite(cfg.learning_rate)) {
    fail(ErrorCode::kConfig, "learning_rate must be finite and >= 0");
  }
}

void check_epoch_loss(double loss, int epoch) {
  if (!std::isfinite(loss) || loss > kDivergenceLoss) {
    fail(ErrorCode::kTraining, "training diverged at epoch " + std::to_string(epoch) +
                                   " (loss " + std::to_string(loss) + ")");
  }
}

// Mini-batch driver shared by train and meta_unlearn_train. step() receives the
// batch and returns its mean loss before the update.
template <typename Step>
std::vector<double> run_epochs(std::size_t n, const TrainConfig& cfg, Step&& step) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(cfg.seed);
  std::vector<double> curve;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    if (cfg.shuffle) rng.shuffle(order);
    double total = 0.0;
    for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(n, start + static_cast<std::size_t>(cfg.batch_size));
      const double loss = step(std::span<const std::size_t>(order.data() + start, end - start));
      if (!std::isfinite(loss) || loss > kDivergenceLoss) check_epoch_loss(loss, epoch);
      total += loss * static_cast<double>(end - start);
    }
    const double mean = total / static_cast<double>(n);
    check_epoch_loss(mean, epoch);
    curve.push_back(mean);
  }
  return curve;
}

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

}  // namespace

LossAndGrad loss_and_grad(const Network& net, std::span<const Example> batch) {
  if (batch.empty()) fail(ErrorCode::kParameter, "empty batch");
  LossAndGrad out;
  out.grads = zero_like(net);
  const double scale = 1.0 / static_cast<double>(batch.size());
  std::vector<double> delta;
  for (const auto& ex : batch) {
    const auto trace = forward(net, *ex.x);
    check_finite(trace);
    out.loss += cross_entropy(trace.logits(), ex.label, scale, delta) * scale;
    backward(net, *ex.x, trace, net.layer_count() - 1, delta, out.grads);
  }
  if (!std::isfinite(out.loss)) fail(ErrorCode::kNumeric, "non-finite loss");
  return out;
}

std::vector<Example> original_examples(const LabeledDataset& ds) {
  std::vector<Example> out;
  out.reserve(ds.size());
  for (const auto& s : ds.samples()) out.push_back({&s.features, s.original_label});
  return out;
}

std::vector<Example> hijack_examples(const LabeledDataset& ds) {
  if (!ds.has_hijack_labels()) fail(ErrorCode::kConfig, "dataset has no hijack labels");
  std::vector<Example> out;
  out.reserve(ds.size());
  for (const auto& s : ds.samples()) out.push_back({&s.features, *s.hijack_label});
  return out;
}

double mean_loss(const Network& net, std::span<const Example> examples) {
  if (examples.empty()) fail(ErrorCode::kParameter, "no examples");
  double total = 0.0;
  std::vector<double> delta;
  for (const auto& ex : examples) {
    total += cross_entropy(predict_logits(net, *ex.x), ex.label, 1.0, delta);
  }
  return total / static_cast<double>(examples.size());
}

double accuracy(const Network& net, std::span<const Example> examples) {
  if (examples.empty()) fail(ErrorCode::kParameter, "no examples");
  std::size_t hits = 0;
  for (const auto& ex : examples) {
    if (static_cast<int>(argmax(predict_logits(net, *ex.x))) == ex.label) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(examples.size());
}

double original_accuracy(const Network& net, const LabeledDataset& ds) {
  return accuracy(net, original_examples(ds));
}

std::pair<Network, TrainReport> train_examples(Network net, std::span<const Example> examples,
                                               const TrainConfig& cfg) {
  check_config(cfg);
  if (examples.empty()) fail(ErrorCode::kParameter, "no training examples");
  const auto start = std::chrono::steady_clock::now();
  std::vector<Example> batch;
  TrainReport report;
  report.loss_curve = run_epochs(examples.size(), cfg, [&](std::span<const std::size_t> idx) {
    batch.clear();
    for (auto i : idx) batch.push_back(examples[i]);
    auto lg = loss_and_grad(net, batch);
    sgd_update(net, lg.grads, cfg.learning_rate);
    return lg.loss;
  });
  if (!net.all_finite()) fail(ErrorCode::kTraining, "training produced non-finite weights");
  report.train_accuracy = accuracy(net, examples);
  report.wall_clock_s = seconds_since(start);
  return {std::move(net), std::move(report)};
}

std::pair<Network, TrainReport> train(Network net, const LabeledDataset& ds,
                                      const TrainConfig& cfg, const LabeledDataset* eval) {
  if (ds.feature_dim() != net.input_dim()) {
    fail(ErrorCode::kShape, "dataset feature_dim does not match network input");
  }
  if (static_cast<std::size_t>(ds.n_classes_original()) > net.output_dim()) {
    fail(ErrorCode::kConfig, "network has fewer outputs than original classes");
  }
  const auto examples = original_examples(ds);
  auto result = train_examples(std::move(net), examples, cfg);
  if (eval) result.second.test_accuracy = original_accuracy(result.first, *eval);
  return result;
}

std::vector<double> flatten(const Network& net) {
  std::vector<double> theta;
  theta.reserve(param_count(net));
  for (const auto& l : net.layers()) {
    theta.insert(theta.end(), l.weights.begin(), l.weights.end());
    theta.insert(theta.end(), l.bias.begin(), l.bias.end());
  }
  return theta;
}

void unflatten(std::span<const double> theta, Network& net) {
  if (theta.size() != param_count(net)) fail(ErrorCode::kShape, "parameter vector size mismatch");
  std::size_t pos = 0;
  for (auto& l : net.mutable_layers()) {
    std::copy_n(theta.begin() + static_cast<std::ptrdiff_t>(pos), l.weights.size(), l.weights.begin());
    pos += l.weights.size();
    std::copy_n(theta.begin() + static_cast<std::ptrdiff_t>(pos), l.bias.size(), l.bias.begin());
    pos += l.bias.size();
  }
}

namespace {

std::vector<double> flatten(const Gradients& grads) {
  std::vector<double> out;
  for (const auto& l : grads) {
    out.insert(out.end(), l.weights.begin(), l.weights.end());
    out.insert(out.end(), l.bias.begin(), l.bias.end());
  }
  return out;
}

}  // namespace

std::vector<double> meta_unlearn_step(std::span<const double> theta,
                                      const GradientFn& original_grad,
                                      const GradientFn& hijack_grad, double alpha, double beta,
                                      UnlearnMode mode) {
  const auto g_orig = original_grad(theta);
  if (g_orig.size() != theta.size()) fail(ErrorCode::kShape, "original gradient size mismatch");
  std::vector<double> inner(theta.size());
  for (std::size_t i = 0; i < theta.size(); ++i) inner[i] = theta[i] - alpha * g_orig[i];
  if (beta == 0.0) {
    if (mode == UnlearnMode::kCommitInner) return inner;
    return {theta.begin(), theta.end()};
  }
  const auto g_hijack = hijack_grad(inner);
  if (g_hijack.size() != theta.size()) fail(ErrorCode::kShape, "hijack gradient size mismatch");
  std::vector<double> out(theta.size());
  const std::span<const double> base =
      mode == UnlearnMode::kCommitInner ? std::span<const double>(inner) : theta;
  for (std::size_t i = 0; i < theta.size(); ++i) out[i] = base[i] + beta * g_hijack[i];
  return out;
}

std::pair<Network, TrainReport> meta_unlearn_train(Network net, const LabeledDataset& ds,
                                                   const TrainConfig& cfg,
                                                   const UnlearnConfig& ucfg,
                                                   const LabeledDataset* eval) {
  check_config(cfg);
  if (!ds.has_hijack_labels()) fail(ErrorCode::kConfig, "meta-unlearning needs hijack labels");
  if (!(ucfg.alpha > 0.0) || !std::isfinite(ucfg.alpha)) {
    fail(ErrorCode::kConfig, "unlearn alpha must be finite and > 0");
  }
  if (!(ucfg.beta >= 0.0) || !std::isfinite(ucfg.beta)) {
    fail(ErrorCode::kConfig, "unlearn beta must be finite and >= 0");
  }
  if (ds.feature_dim() != net.input_dim()) {
    fail(ErrorCode::kShape, "dataset feature_dim does not match network input");
  }
  const int tap_layer = ucfg.tap_layer.value_or(net.last_hidden());
  const std::size_t top =
      tap_layer == kLogits ? net.layer_count() - 1 : static_cast<std::size_t>(tap_layer);
  if (tap_layer != kLogits && (tap_layer < 0 || top >= net.layer_count())) {
    fail(ErrorCode::kIndex, "unlearn tap layer " + std::to_string(tap_layer) + " out of range");
  }

  const auto start = std::chrono::steady_clock::now();
  const auto orig = original_examples(ds);
  const auto m = static_cast<std::size_t>(ds.n_classes_hijack());

  // Auxiliary hijack head on the tapped layer.
  DenseLayer head;
  head.in = net.layers()[top].out;
  head.out = m;
  head.weights.resize(head.in * head.out);
  head.bias.assign(head.out, 0.0);
  {
    Rng rng(derive_seed(cfg.seed, 0x48454144));
    const double scale = std::sqrt(1.0 / static_cast<double>(head.in));
    for (auto& w : head.weights) w = scale * rng.normal();
  }

  Network scratch = net;
  std::vector<Example> batch;
  std::vector<const Sample*> batch_samples;

  // Gradient of the hijack loss w.r.t. the body, evaluated through the head;
  // also applies the head's own descent step at the same point.
  const GradientFn hijack_grad = [&](std::span<const double> theta) {
    unflatten(theta, scratch);
    Gradients grads = zero_like(scratch);
    DenseLayer head_grad = head;
    std::fill(head_grad.weights.begin(), head_grad.weights.end(), 0.0);
    std::fill(head_grad.bias.begin(), head_grad.bias.end(), 0.0);
    const double scale = 1.0 / static_cast<double>(batch_samples.size());
    std::vector<double> head_logits(m);
    std::vector<double> delta;
    for (const Sample* s : batch_samples) {
      const auto trace = forward(scratch, s->features);
      check_finite(trace);
      const auto& feat = trace.activations[top];
      for (std::size_t r = 0; r < m; ++r) {
        double acc = head.bias[r];
        for (std::size_t c = 0; c < head.in; ++c) acc += head.w(r, c) * feat[c];
        head_logits[r] = acc;
      }
      cross_entropy(head_logits, *s->hijack_label, scale, delta);
      std::vector<double> upstream(head.in, 0.0);
      for (std::size_t r = 0; r < m; ++r) {
        for (std::size_t c = 0; c < head.in; ++c) {
          head_grad.w(r, c) += delta[r] * feat[c];
          upstream[c] += head.w(r, c) * delta[r];
        }
        head_grad.bias[r] += delta[r];
      }
      backward(scratch, s->features, trace, top, std::move(upstream), grads);
    }
    for (std::size_t i = 0; i < head.weights.size(); ++i) {
      head.weights[i] -= ucfg.head_learning_rate * head_grad.weights[i];
    }
    for (std::size_t i = 0; i < head.bias.size(); ++i) {
      head.bias[i] -= ucfg.head_learning_rate * head_grad.bias[i];
    }
    return flatten(grads);
  };

  TrainReport report;
  auto theta = flatten(net);
  report.loss_curve = run_epochs(ds.size(), cfg, [&](std::span<const std::size_t> idx) {
    batch.clear();
    batch_samples.clear();
    for (auto i : idx) {
      batch.push_back(orig[i]);
      batch_samples.push_back(&ds[i]);
    }
    double loss = 0.0;
    const GradientFn tracked = [&](std::span<const double> t) {
      unflatten(t, scratch);
      auto lg = loss_and_grad(scratch, batch);
      loss = lg.loss;
      return flatten(lg.grads);
    };
    theta = meta_unlearn_step(theta, tracked, hijack_grad, ucfg.alpha, ucfg.beta, ucfg.mode);
    return loss;
  });
  unflatten(theta, net);
  if (!net.all_finite()) fail(ErrorCode::kTraining, "meta-unlearning produced non-finite weights");
  report.train_accuracy = accuracy(net, orig);
  if (eval) report.test_accuracy = original_accuracy(net, *eval);
  report.wall_clock_s = seconds_since(start);
  return {std::move(net), std::move(report)};
}

Network train_surrogate(const std::vector<std::vector<double>>& bek_vectors,
                        const std::vector<int>& hijack_labels, const TrainConfig& cfg,
                        const SurrogateSpec& spec) {
  if (bek_vectors.empty() || bek_vectors.size() != hijack_labels.size()) {
    fail(ErrorCode::kParameter, "surrogate needs one label per BEK vector");
  }
  const std::size_t dim = bek_vectors.front().size();
  for (const auto& v : bek_vectors) {
    if (v.size() != dim) fail(ErrorCode::kShape, "BEK vectors differ in length");
  }
  std::vector<int> distinct = hijack_labels;
  std::sort(distinct.begin(), distinct.end());
  distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
  if (distinct.size() < 2) fail(ErrorCode::kConfig, "surrogate needs at least 2 hijack classes");
  if (distinct.front() < 0) fail(ErrorCode::kParameter, "negative hijack label");
  const int m = distinct.back() + 1;

  // Per-feature standardization; constant features keep unit scale.
  std::vector<double> mean(dim, 0.0);
  std::vector<double> stdev(dim, 0.0);
  for (const auto& v : bek_vectors) for (std::size_t i = 0; i < dim; ++i) mean[i] += v[i];
  for (auto& mu : mean) mu /= static_cast<double>(bek_vectors.size());
  for (const auto& v : bek_vectors) {
    for (std::size_t i = 0; i < dim; ++i) stdev[i] += (v[i] - mean[i]) * (v[i] - mean[i]);
  }
  for (auto& s : stdev) {
    s = std::sqrt(s / static_cast<double>(bek_vectors.size()));
    if (s < 1e-12) s = 1.0;
  }
  std::vector<std::vector<double>> standardized = bek_vectors;
  for (auto& v : standardized) for (std::size_t i = 0; i < dim; ++i) v[i] = (v[i] - mean[i]) / stdev[i];

  NetworkSpec ns;
  ns.layer_widths.push_back(static_cast<int>(dim));
  ns.layer_widths.insert(ns.layer_widths.end(), spec.hidden_widths.begin(), spec.hidden_widths.end());
  ns.layer_widths.push_back(m);
  ns.activation = spec.activation;
  ns.init.kind = InitKind::kHe;
  ns.seed = derive_seed(cfg.seed, 0x5355524f);

  std::vector<Example> examples;
  examples.reserve(standardized.size());
  for (std::size_t i = 0; i < standardized.size(); ++i) {
    examples.push_back({&standardized[i], hijack_labels[i]});
  }
  auto net = train_examples(build(ns), examples, cfg).first;

  // Fold (x - mean) / stdev into the first affine map.
  auto& first = net.mutable_layers().front();
  for (std::size_t r = 0; r < first.out; ++r) {
    double shift = 0.0;
    for (std::size_t c = 0; c < first.in; ++c) {
      first.w(r, c) /= stdev[c];
      shift += first.w(r, c) * mean[c];
    }
    first.bias[r] -= shift;
  }
  return net;
}

}  // namespace snatchml
