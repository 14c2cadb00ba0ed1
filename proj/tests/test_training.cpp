#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "snatchml/error.hpp"
#include "snatchml/hijack.hpp"
#include "snatchml/training.hpp"
#include "test_util.hpp"

using namespace snatchml;

namespace {

NetworkSpec spec_of(std::vector<int> widths, Activation act = Activation::kRelu, std::uint64_t seed = 0) {
  NetworkSpec s;
  s.layer_widths = std::move(widths);
  s.activation = act;
  s.seed = seed;
  return s;
}

// Central finite differences over every parameter; returns the worst
// |analytic - numeric| / max(|analytic|, |numeric|, 1e-4).
double worst_gradient_error(Network net, const std::vector<std::vector<double>>& xs,
                            const std::vector<int>& ys) {
  std::vector<Example> batch;
  for (std::size_t i = 0; i < xs.size(); ++i) batch.push_back({&xs[i], ys[i]});
  const auto analytic = loss_and_grad(net, batch).grads;
  const double eps = 1e-5;
  double worst = 0.0;
  for (std::size_t j = 0; j < net.layer_count(); ++j) {
    auto probe = [&](double& param, double grad) {
      const double keep = param;
      param = keep + eps;
      const double up = mean_loss(net, batch);
      param = keep - eps;
      const double down = mean_loss(net, batch);
      param = keep;
      const double numeric = (up - down) / (2 * eps);
      const double denom = std::max({std::abs(grad), std::abs(numeric), 1e-4});
      worst = std::max(worst, std::abs(grad - numeric) / denom);
    };
    auto& layer = net.mutable_layers()[j];
    for (std::size_t k = 0; k < layer.weights.size(); ++k) probe(layer.weights[k], analytic[j].weights[k]);
    for (std::size_t k = 0; k < layer.bias.size(); ++k) probe(layer.bias[k], analytic[j].bias[k]);
  }
  return worst;
}

LabeledDataset separable_two_class(std::uint64_t seed) {
  return generate_dual_blobs(2, 2, 4, 20, 6.0, 0.0, 0.3, seed);
}

}  // namespace

TEST_SUITE("training") {

TEST_CASE("zero-weight net on two classes has loss ln 2") {
  auto net = build(spec_of({3, 4, 2}));
  for (auto& l : net.mutable_layers()) {
    std::fill(l.weights.begin(), l.weights.end(), 0.0);
    std::fill(l.bias.begin(), l.bias.end(), 0.0);
  }
  const std::vector<double> x = {1.0, 2.0, 3.0};
  std::vector<Example> batch = {{&x, 0}, {&x, 1}};
  CHECK(loss_and_grad(net, batch).loss == doctest::Approx(std::log(2.0)).epsilon(1e-14));
}

TEST_CASE("gradients of a 3-4-3 net match finite differences") {
  std::mt19937_64 gen(21);
  for (auto act : {Activation::kRelu, Activation::kTanh}) {
    for (int trial = 0; trial < 10; ++trial) {
      const auto net = build(spec_of({3, 4, 3}, act, gen()));
      std::vector<std::vector<double>> xs;
      std::vector<int> ys;
      for (int i = 0; i < 5; ++i) {
        xs.push_back(test_util::random_vector(gen, 3, -2.0, 2.0));
        ys.push_back(static_cast<int>(gen() % 3));
      }
      CHECK(worst_gradient_error(net, xs, ys) < 1e-6);
    }
  }
}

TEST_CASE("duplicating every sample leaves loss and gradients unchanged") {
  const auto net = build(spec_of({3, 5, 3}, Activation::kTanh, 2));
  std::mt19937_64 gen(3);
  std::vector<std::vector<double>> xs;
  for (int i = 0; i < 4; ++i) xs.push_back(test_util::random_vector(gen, 3));
  std::vector<Example> once, twice;
  for (int i = 0; i < 4; ++i) {
    once.push_back({&xs[i], i % 3});
    twice.push_back({&xs[i], i % 3});
    twice.push_back({&xs[i], i % 3});
  }
  const auto a = loss_and_grad(net, once);
  const auto b = loss_and_grad(net, twice);
  CHECK(a.loss == doctest::Approx(b.loss).epsilon(1e-14));
  for (std::size_t j = 0; j < a.grads.size(); ++j) {
    for (std::size_t k = 0; k < a.grads[j].weights.size(); ++k) {
      CHECK(a.grads[j].weights[k] == doctest::Approx(b.grads[j].weights[k]).epsilon(1e-12));
    }
  }
}

TEST_CASE("separable two-class blobs are fit exactly") {
  const auto ds = separable_two_class(4);
  const auto [net, report] = train(build(spec_of({4, 8, 2}, Activation::kRelu, 1)), ds, {50, 8, 0.05, 2, true});
  CHECK(report.train_accuracy == 1.0);
  CHECK(report.loss_curve.size() == 50);
  CHECK(report.loss_curve.back() < report.loss_curve.front());
}

TEST_CASE("zero learning rate and zero epochs leave weights untouched") {
  const auto ds = separable_two_class(1);
  const auto start = build(spec_of({4, 8, 2}, Activation::kRelu, 1));
  CHECK(train(start, ds, {5, 8, 0.0, 2, true}).first == start);
  CHECK(train(start, ds, {0, 8, 0.05, 2, true}).first == start);
}

TEST_CASE("training is reproducible and depends on the shuffle seed") {
  const auto ds = test_util::small_blobs(2);
  const auto start = build(spec_of({8, 16, 4}, Activation::kRelu, 1));
  const auto a = train(start, ds, {5, 16, 0.05, 7, true}).first;
  const auto b = train(start, ds, {5, 16, 0.05, 7, true}).first;
  const auto c = train(start, ds, {5, 16, 0.05, 8, true}).first;
  CHECK(a == b);
  CHECK_FALSE(a == c);
}

TEST_CASE("divergence is reported as a training error") {
  const auto ds = test_util::small_blobs(0);
  try {
    train(build(spec_of({8, 32, 4}, Activation::kRelu, 1)), ds, {20, 4, 1e6, 1, true});
    FAIL("expected divergence");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kTraining);
  }
}

TEST_CASE("bad train configs are rejected") {
  const auto ds = test_util::small_blobs(0);
  const auto net = build(spec_of({8, 4, 4}));
  CHECK_THROWS_AS(train(net, ds, {-1, 16, 0.1, 0, true}), Error);
  CHECK_THROWS_AS(train(net, ds, {1, 0, 0.1, 0, true}), Error);
  CHECK_THROWS_AS(train(net, ds, {1, 16, -0.1, 0, true}), Error);
  CHECK_THROWS_AS(train(build(spec_of({3, 4, 4})), ds, {1, 16, 0.1, 0, true}), Error);
}

TEST_CASE("meta-unlearning step on the one-parameter quadratic") {
  const GradientFn orig = [](std::span<const double> t) { return std::vector<double>{2.0 * t[0]}; };
  const GradientFn hij = [](std::span<const double> t) { return std::vector<double>{2.0 * (t[0] - 1.0)}; };
  const std::vector<double> theta = {1.0};
  // Inner: theta' = 1 - 0.1 * 2 = 0.8. Outer ascent on L_j evaluated at theta'.
  const auto eval_only = meta_unlearn_step(theta, orig, hij, 0.1, 0.1, UnlearnMode::kEvaluateOnly);
  CHECK(std::abs(eval_only[0] - 0.96) < 1e-12);
  const auto commit = meta_unlearn_step(theta, orig, hij, 0.1, 0.1, UnlearnMode::kCommitInner);
  CHECK(std::abs(commit[0] - 0.76) < 1e-12);
  const auto no_outer = meta_unlearn_step(theta, orig, hij, 0.1, 0.0, UnlearnMode::kCommitInner);
  CHECK(no_outer[0] == 0.8);
}

TEST_CASE("meta-unlearning with beta = 0 is plain training") {
  const auto ds = test_util::small_blobs(1);
  const auto start = build(spec_of({8, 16, 16, 4}, Activation::kTanh, 3));
  const TrainConfig cfg{6, 16, 0.05, 5, true};
  UnlearnConfig u;
  u.alpha = cfg.learning_rate;
  u.beta = 0.0;
  CHECK(meta_unlearn_train(start, ds, cfg, u).first == train(start, ds, cfg).first);
}

TEST_CASE("meta-unlearning rejects bad inputs") {
  const auto ds = test_util::small_blobs(1);
  const auto net = build(spec_of({8, 16, 4}, Activation::kTanh, 3));
  UnlearnConfig u;
  u.alpha = 0.0;
  CHECK_THROWS_AS(meta_unlearn_train(net, ds, {1, 16, 0.1, 0, true}, u), Error);
  u = {};
  u.beta = -1.0;
  CHECK_THROWS_AS(meta_unlearn_train(net, ds, {1, 16, 0.1, 0, true}, u), Error);
  u = {};
  u.tap_layer = 5;
  CHECK_THROWS_AS(meta_unlearn_train(net, ds, {1, 16, 0.1, 0, true}, u), Error);
}

TEST_CASE("surrogate: clustered vectors are classified perfectly") {
  std::mt19937_64 gen(8);
  std::normal_distribution<double> noise(0.0, 0.05);
  std::vector<std::vector<double>> train_x, test_x;
  std::vector<int> train_y, test_y;
  for (int i = 0; i < 120; ++i) {
    const int c = i % 4;
    std::vector<double> v(6, 0.0);
    v[c] = 5.0;
    for (auto& x : v) x += noise(gen);
    (i < 80 ? train_x : test_x).push_back(v);
    (i < 80 ? train_y : test_y).push_back(c);
  }
  const auto net = train_surrogate(train_x, train_y, {60, 8, 0.05, 1, true});
  int hits = 0;
  for (std::size_t i = 0; i < test_x.size(); ++i) {
    hits += static_cast<int>(argmax(predict_logits(net, test_x[i]))) == test_y[i];
  }
  CHECK(hits == static_cast<int>(test_x.size()));
}

TEST_CASE("surrogate: untrained is near chance, trained beats the distance rule when separable") {
  const auto ds = test_util::small_blobs(0, 0.1);
  const auto [train_ds, test_ds] = split(ds, {0.5, 1, Stratify::kHijack});
  const auto net = train(build(spec_of({8, 32, 4}, Activation::kRelu, 3)), train_ds, {30, 16, 0.05, 5, true}).first;
  const auto src = BekSource::layer(0);
  const double untrained = surrogate_hijack_accuracy(net, src, train_ds.samples(), test_ds.samples(), {0, 16, 0.05, 1, true});
  CHECK(untrained < 0.5);
  const double trained = surrogate_hijack_accuracy(net, src, train_ds.samples(), test_ds.samples(), {100, 16, 0.05, 1, true});
  const auto refs = build_reference_db_from(test_ds, 1, 2);
  const double snatch = run_attack(net, src, refs.references, refs.queries, Metric::kL2, 1).top_n[0];
  CHECK(trained >= snatch);
}

TEST_CASE("flatten and unflatten are inverse") {
  auto net = build(spec_of({3, 5, 2}, Activation::kRelu, 4));
  const auto theta = flatten(net);
  CHECK(theta.size() == param_count(net));
  auto copy = build(spec_of({3, 5, 2}, Activation::kRelu, 99));
  unflatten(theta, copy);
  CHECK(flatten(copy) == theta);
  CHECK_THROWS_AS(unflatten(std::vector<double>(3), copy), Error);
}

}  // TEST_SUITE
