#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "snatchml/error.hpp"
#include "snatchml/hijack.hpp"
#include "test_util.hpp"

using namespace snatchml;

namespace {

BekVector bek(std::vector<double> v, BekSource src = BekSource::logits()) {
  return {std::move(v), src, 0};
}

// Brute force: sort every (distance, class) pair and read off classes in
// order of first appearance.
std::vector<int> oracle_rank(const std::vector<std::pair<std::vector<double>, int>>& entries,
                             const std::vector<double>& q, Metric metric, int m) {
  std::vector<std::pair<double, int>> all;
  for (const auto& [v, c] : entries) {
    double d = 0.0;
    if (metric == Metric::kL2) {
      for (std::size_t i = 0; i < v.size(); ++i) d += (v[i] - q[i]) * (v[i] - q[i]);
      d = std::sqrt(d);
    } else {
      double dot = 0, nv = 0, nq = 0;
      for (std::size_t i = 0; i < v.size(); ++i) dot += v[i] * q[i], nv += v[i] * v[i], nq += q[i] * q[i];
      d = (nv == 0 || nq == 0) ? 2.0 : 1.0 - dot / (std::sqrt(nv) * std::sqrt(nq));
    }
    all.push_back({d, c});
  }
  std::sort(all.begin(), all.end());
  std::vector<int> order;
  for (const auto& [d, c] : all) {
    if (std::find(order.begin(), order.end(), c) == order.end()) order.push_back(c);
  }
  CHECK(static_cast<int>(order.size()) == m);
  return order;
}

ReferenceDb make_db(const std::vector<std::pair<std::vector<double>, int>>& entries, int m) {
  std::vector<std::pair<BekVector, int>> e;
  for (const auto& [v, c] : entries) e.emplace_back(bek(v), c);
  return ReferenceDb(std::move(e), m);
}

NetworkSpec spec_of(std::vector<int> widths, std::uint64_t seed = 0) {
  NetworkSpec s;
  s.layer_widths = std::move(widths);
  s.seed = seed;
  return s;
}

}  // namespace

TEST_SUITE("hijack") {

TEST_CASE("distance examples") {
  CHECK(distance(std::vector<double>{3, 4}, std::vector<double>{0, 0}, Metric::kL2) == 5.0);
  CHECK(distance(std::vector<double>{0.3, -2, 7}, std::vector<double>{0.3, -2, 7}, Metric::kCosine) ==
        doctest::Approx(0.0).epsilon(1e-15));
  CHECK(distance(std::vector<double>{1, 0}, std::vector<double>{0, 1}, Metric::kCosine) == 1.0);
  DistanceDiagnostics diag;
  CHECK(distance(std::vector<double>{0, 0}, std::vector<double>{0, 1}, Metric::kCosine, &diag) == 2.0);
  CHECK(diag.zero_vector_cosines == 1);
  CHECK_THROWS_AS(distance(std::vector<double>{1}, std::vector<double>{1, 2}, Metric::kL2), Error);
}

TEST_CASE("classify: nearest class and tie rule") {
  const auto db = make_db({{{0, 0}, 0}, {{10, 10}, 1}}, 2);
  CHECK(classify(db, bek({1, 1}), Metric::kL2).ranked_labels.front() == 0);
  const auto tie = make_db({{{1, 0}, 1}, {{-1, 0}, 0}}, 2);
  CHECK(classify(tie, bek({0, 0}), Metric::kL2).ranked_labels.front() == 0);
  CHECK(classify(tie, bek({0, 5}), Metric::kL2).ranked_labels == std::vector<int>{0, 1});
}

TEST_CASE("classify: validation") {
  CHECK_THROWS_AS(make_db({{{0, 0}, 0}}, 2), Error);                       // class 1 uncovered
  CHECK_THROWS_AS(make_db({{{0, 0}, 0}, {{1}, 1}}, 2), Error);             // ragged
  CHECK_THROWS_AS(make_db({{{0, 0}, 0}, {{1, NAN}, 1}}, 2), Error);        // non-finite
  const auto db = make_db({{{0, 0}, 0}, {{1, 1}, 1}}, 2);
  CHECK_THROWS_AS(classify(db, bek({0, 0}, BekSource::layer(0)), Metric::kL2), Error);
  CHECK_THROWS_AS(classify(db, bek({0, 0, 0}), Metric::kL2), Error);
}

TEST_CASE("property: classify equals the brute-force oracle") {
  std::mt19937_64 gen(2024);
  for (int trial = 0; trial < 300; ++trial) {
    const int m = 1 + static_cast<int>(gen() % 6);
    const std::size_t dim = 1 + gen() % 8;
    std::vector<std::pair<std::vector<double>, int>> entries;
    for (int c = 0; c < m; ++c) {
      const int per = 1 + static_cast<int>(gen() % 4);
      for (int k = 0; k < per; ++k) entries.push_back({test_util::random_vector(gen, dim), c});
    }
    const auto db = make_db(entries, m);
    for (auto metric : {Metric::kL2, Metric::kCosine}) {
      const auto q = test_util::random_vector(gen, dim);
      const auto v = classify(db, bek(q), metric);
      CHECK(v.ranked_labels == oracle_rank(entries, q, metric, m));
      CHECK(std::is_sorted(v.distances.begin(), v.distances.end()));
    }
  }
}

TEST_CASE("property: ranking invariance under scaling") {
  std::mt19937_64 gen(99);
  std::uniform_real_distribution<double> scale(0.1, 10.0);
  for (int trial = 0; trial < 200; ++trial) {
    const int m = 2 + static_cast<int>(gen() % 4);
    const std::size_t dim = 2 + gen() % 6;
    std::vector<std::pair<std::vector<double>, int>> entries, uniform, each;
    const double s = scale(gen);
    for (int c = 0; c < m; ++c) {
      for (int k = 0; k < 2; ++k) {
        auto v = test_util::random_vector(gen, dim);
        entries.push_back({v, c});
        auto u = v, w = v;
        const double t = scale(gen);
        for (auto& x : u) x *= s;
        for (auto& x : w) x *= t;
        uniform.push_back({u, c});
        each.push_back({w, c});
      }
    }
    const auto q = test_util::random_vector(gen, dim);
    auto qs = q;
    for (auto& x : qs) x *= s;
    auto qt = q;
    const double tq = scale(gen);
    for (auto& x : qt) x *= tq;
    const auto base_l2 = classify(make_db(entries, m), bek(q), Metric::kL2).ranked_labels;
    const auto base_cos = classify(make_db(entries, m), bek(q), Metric::kCosine).ranked_labels;
    CHECK(classify(make_db(uniform, m), bek(qs), Metric::kL2).ranked_labels == base_l2);
    CHECK(classify(make_db(each, m), bek(qt), Metric::kCosine).ranked_labels == base_cos);
  }
}

TEST_CASE("top-N accuracy: self retrieval, full coverage, monotone") {
  std::mt19937_64 gen(5);
  std::vector<std::pair<std::vector<double>, int>> entries;
  std::vector<LabeledBek> self, random_q;
  for (int c = 0; c < 5; ++c) {
    auto v = test_util::random_vector(gen, 4);
    entries.push_back({v, c});
    self.push_back({bek(v), c});
  }
  for (int i = 0; i < 40; ++i) random_q.push_back({bek(test_util::random_vector(gen, 4)), i % 5});
  const auto db = make_db(entries, 5);
  CHECK(top_n_accuracy(db, self, Metric::kL2, 1) == 1.0);
  double prev = 0.0;
  for (int n = 1; n <= 5; ++n) {
    const double acc = top_n_accuracy(db, random_q, Metric::kL2, n);
    CHECK(acc >= prev);
    prev = acc;
  }
  CHECK(prev == 1.0);
  CHECK_THROWS_AS(top_n_accuracy(db, random_q, Metric::kL2, 0), Error);
  CHECK_THROWS_AS(top_n_accuracy(db, random_q, Metric::kL2, 6), Error);
}

TEST_CASE("lower bound") {
  CHECK(hijack_lower_bound(2) == 0.5);
  CHECK(hijack_lower_bound(5) == 0.2);
  CHECK(hijack_lower_bound(6) == 1.0 / 6.0);
  CHECK(hijack_lower_bound(85) == doctest::Approx(0.0118).epsilon(0.01));
  CHECK_THROWS_AS(hijack_lower_bound(0), Error);
}

TEST_CASE("extract_bek: lengths, trace equality, purity") {
  const auto net = build(spec_of({5, 7, 6}, 3));
  const std::vector<double> x = {0.1, -0.4, 0.9, 0.0, 2.0};
  CHECK(extract_bek(net, x, BekSource::logits()).values.size() == 6);
  CHECK(extract_bek(net, x, BekSource::layer(0)).values == forward(net, x).activations[0]);
  CHECK(extract_bek(net, x, BekSource::layer(0)).values == extract_bek(net, x, BekSource::layer(0)).values);
  CHECK_THROWS_AS(extract_bek(net, x, BekSource::layer(2)), Error);
}

TEST_CASE("source and metric parsing") {
  CHECK(BekSource::parse("logits").is_logits());
  CHECK(BekSource::parse("layer:3").layer_index() == 3);
  CHECK(BekSource::parse("layer:3").to_string() == "layer:3");
  CHECK_THROWS_AS(BekSource::parse("layer:"), Error);
  CHECK_THROWS_AS(BekSource::parse("layer:-1"), Error);
  CHECK_THROWS_AS(BekSource::parse("fc7"), Error);
  CHECK(parse_metric("cosine") == Metric::kCosine);
  CHECK_THROWS_AS(parse_metric("l3"), Error);
}

TEST_CASE("run_attack: full coverage at N = m and the network is untouched") {
  const auto ds = test_util::small_blobs(0);
  const auto net = build(spec_of({8, 16, 4}, 3));
  const auto before = serialize(net);
  const auto refs = build_reference_db_from(ds, 2, 1);
  const auto report = run_attack(net, BekSource::layer(0), refs.references, refs.queries, Metric::kCosine, 8, 1);
  CHECK(report.top_n.size() == 8);
  CHECK(report.top_n.back() == 1.0);
  CHECK(std::is_sorted(report.top_n.begin(), report.top_n.end()));
  CHECK(report.lower_bound == 0.125);
  CHECK(report.num_queries == refs.queries.size());
  CHECK(serialize(net) == before);
  CHECK_THROWS_AS(run_attack(net, BekSource::layer(0), refs.references, refs.queries, Metric::kL2, 9), Error);
}

TEST_CASE("truncate_logits") {
  const auto v = bek({3, 9, 5});
  CHECK(truncate_logits(v, 3).values == v.values);
  CHECK(truncate_logits(v, 1).values == std::vector<double>{3, 9, 3});
  CHECK(truncate_logits(v, 2).values == std::vector<double>{3, 9, 5});
  CHECK_THROWS_AS(truncate_logits(v, 0), Error);
  CHECK_THROWS_AS(truncate_logits(v, 4), Error);
}

}  // TEST_SUITE
