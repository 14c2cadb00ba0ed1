#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <set>

#include "snatchml/datasets.hpp"
#include "snatchml/error.hpp"
#include "test_util.hpp"

using namespace snatchml;

namespace {

template <class F>
ErrorCode code_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an Error");
  return ErrorCode::kUsage;
}

LabeledDataset labeled(const std::vector<int>& labels, int n_classes) {
  std::vector<Sample> samples;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    samples.push_back({{static_cast<double>(i), 0.5}, labels[i], labels[i] % 2});
  }
  return LabeledDataset("t", std::move(samples), n_classes, 2);
}

// Multiset of feature vectors, used to check partitions.
std::multiset<std::vector<double>> features_of(const std::vector<Sample>& s) {
  std::multiset<std::vector<double>> out;
  for (const auto& x : s) out.insert(x.features);
  return out;
}

void write_idx(const std::filesystem::path& images, const std::filesystem::path& labels, int count,
               int label_count, int rows, int cols, const std::vector<unsigned char>& label_values) {
  auto be32 = [](std::ofstream& out, std::uint32_t v) {
    const unsigned char b[4] = {static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16),
                                static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
    out.write(reinterpret_cast<const char*>(b), 4);
  };
  std::ofstream img(images, std::ios::binary);
  be32(img, 0x803);
  be32(img, static_cast<std::uint32_t>(count));
  be32(img, static_cast<std::uint32_t>(rows));
  be32(img, static_cast<std::uint32_t>(cols));
  for (int i = 0; i < count * rows * cols; ++i) img.put(static_cast<char>(i == 0 ? 255 : i % 200));
  std::ofstream lab(labels, std::ios::binary);
  be32(lab, 0x801);
  be32(lab, static_cast<std::uint32_t>(label_count));
  for (int i = 0; i < label_count; ++i) lab.put(static_cast<char>(label_values[i % label_values.size()]));
}

}  // namespace

TEST_SUITE("datasets") {

TEST_CASE("dual blobs: size and labels") {
  const auto ds = generate_dual_blobs(2, 2, 4, 5, 5.0, 5.0, 0.1, 7);
  CHECK(ds.size() == 20);
  CHECK(ds.feature_dim() == 4);
  CHECK(ds.has_hijack_labels());
  for (const auto& s : ds.samples()) {
    CHECK(s.features.size() == 4);
    CHECK(s.hijack_label.has_value());
  }
}

TEST_CASE("dual blobs: zero noise collapses every cell to one point") {
  const auto ds = generate_dual_blobs(3, 4, 8, 6, 4.0, 4.0, 0.0, 2);
  std::map<std::pair<int, int>, std::vector<double>> first;
  for (const auto& s : ds.samples()) {
    const auto key = std::make_pair(s.original_label, *s.hijack_label);
    auto [it, fresh] = first.emplace(key, s.features);
    if (!fresh) CHECK(it->second == s.features);
  }
  CHECK(first.size() == 12);
}

TEST_CASE("dual blobs: deterministic for a seed") {
  const auto a = generate_dual_blobs(3, 5, 16, 10, 4.0, 4.0, 0.5, 1);
  const auto b = generate_dual_blobs(3, 5, 16, 10, 4.0, 4.0, 0.5, 1);
  const auto c = generate_dual_blobs(3, 5, 16, 10, 4.0, 4.0, 0.5, 2);
  CHECK(a == b);
  CHECK_FALSE(a == c);
}

TEST_CASE("dual blobs: parameter errors") {
  CHECK(code_of([] { generate_dual_blobs(1, 2, 4, 5, 1.0, 1.0, 0.1, 0); }) == ErrorCode::kParameter);
  CHECK(code_of([] { generate_dual_blobs(2, 2, 4, 0, 1.0, 1.0, 0.1, 0); }) == ErrorCode::kParameter);
  CHECK(code_of([] { generate_dual_blobs(2, 2, 4, 5, 1.0, 1.0, -0.1, 0); }) == ErrorCode::kParameter);
}

// Nearest-centroid separability of the hijack classes at zero noise. With
// random directions, a large original offset can push a cell closer to
// another hijack centroid, so this is checked where it must hold: orthogonal
// directions, and random directions when the hijack offset dominates.
TEST_CASE("property: hijack classes are nearest-centroid separable without noise") {
  auto check = [](const DualBlobParams& p) {
    const auto ds = generate_dual_blobs(p);
    std::vector<std::vector<double>> centroid(p.m_hijack, std::vector<double>(p.dim, 0.0));
    std::vector<int> count(p.m_hijack, 0);
    for (const auto& s : ds.samples()) {
      for (int d = 0; d < p.dim; ++d) centroid[*s.hijack_label][d] += s.features[d];
      ++count[*s.hijack_label];
    }
    for (int c = 0; c < p.m_hijack; ++c) for (auto& v : centroid[c]) v /= count[c];
    for (const auto& s : ds.samples()) {
      int best = -1;
      double best_d = 1e300;
      for (int c = 0; c < p.m_hijack; ++c) {
        double d = 0.0;
        for (int k = 0; k < p.dim; ++k) d += (s.features[k] - centroid[c][k]) * (s.features[k] - centroid[c][k]);
        if (d < best_d) best_d = d, best = c;
      }
      if (best != *s.hijack_label) return false;
    }
    return true;
  };
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    DualBlobParams orth;
    orth.n_orig = 3;
    orth.m_hijack = 4;
    orth.dim = 8;
    orth.n_per_cell = 3;
    orth.noise_sigma = 0.0;
    orth.directions = DirectionMode::kOrthogonal;
    orth.seed = seed;
    CHECK(check(orth));

    DualBlobParams dominant = orth;
    dominant.directions = DirectionMode::kRandom;
    dominant.orig_sep = 0.0;
    dominant.hijack_sep = 3.0;
    CHECK(check(dominant));
  }
}

TEST_CASE("csv: header echo and optional hijack column") {
  const auto dir = test_util::scratch_dir("csv");
  test_util::write_text(dir / "a.csv", "orig_label,hijack_label,f0,f1\n0,1,0.5,1.5\n1,0,2,3\n1,1,-1,4e-3\n");
  const auto a = load_csv(dir / "a.csv", true);
  CHECK(a.size() == 3);
  CHECK(a.feature_dim() == 2);
  CHECK(a.has_hijack_labels());
  CHECK(a[2].features[1] == 4e-3);

  test_util::write_text(dir / "b.csv", "orig_label,f0\n0,1\n1,2\n");
  const auto b = load_csv(dir / "b.csv", false);
  CHECK_FALSE(b.has_hijack_labels());
  CHECK(b.feature_dim() == 1);
}

TEST_CASE("csv: bad cell names the row") {
  const auto dir = test_util::scratch_dir("csv_bad");
  test_util::write_text(dir / "bad.csv", "orig_label,hijack_label,f0,f1\n2,0,1.5,abc\n");
  try {
    load_csv(dir / "bad.csv", true);
    FAIL("expected a format error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kFormat);
    CHECK(std::string(e.what()).find("row 1") != std::string::npos);
  }
  CHECK(code_of([&] { load_csv(dir / "missing.csv", true); }) == ErrorCode::kIo);
}

TEST_CASE("csv: write and reload round-trips exactly") {
  const auto dir = test_util::scratch_dir("csv_rt");
  const auto ds = test_util::small_blobs(4);
  write_csv(ds, dir / "ds.csv");
  CsvOptions opt;
  opt.n_classes_original = ds.n_classes_original();
  opt.n_classes_hijack = ds.n_classes_hijack();
  const auto back = load_csv(dir / "ds.csv", true, opt);
  REQUIRE(back.size() == ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) CHECK(back[i] == ds[i]);
}

TEST_CASE("idx: shape, scaling, count mismatch") {
  const auto dir = test_util::scratch_dir("idx");
  write_idx(dir / "img", dir / "lab", 10, 10, 28, 28, {0, 1, 2});
  const auto ds = load_idx_images(dir / "img", dir / "lab");
  CHECK(ds.size() == 10);
  CHECK(ds.feature_dim() == 784);
  CHECK(ds[0].features[0] == 1.0);
  CHECK(ds[0].features[1] == 1.0 / 255.0);

  write_idx(dir / "img2", dir / "lab2", 10, 9, 28, 28, {0, 1});
  CHECK(code_of([&] { load_idx_images(dir / "img2", dir / "lab2"); }) == ErrorCode::kFormat);
  // Images where labels are expected.
  CHECK(code_of([&] { load_idx_images(dir / "img", dir / "img"); }) == ErrorCode::kFormat);
}

TEST_CASE("split: 20 samples at 0.7 stratified") {
  std::vector<int> labels;
  for (int i = 0; i < 20; ++i) labels.push_back(i % 2);
  const auto [train, test] = split(labeled(labels, 2), {0.7, 3, Stratify::kOriginal});
  CHECK(train.size() == 14);
  CHECK(test.size() == 6);
  const auto [again, _] = split(labeled(labels, 2), {0.7, 3, Stratify::kOriginal});
  CHECK(again == train);
}

TEST_CASE("split: per-class counts follow the rounding rule") {
  std::vector<int> labels;
  for (int i = 0; i < 100; ++i) labels.push_back(i % 4);
  const auto [train, test] = split(labeled(labels, 4), {0.5, 9, Stratify::kOriginal});
  // Oracle: 25 per class, test side floor(0.5 * 25) = 12, train side 13.
  for (int c = 0; c < 4; ++c) {
    const auto tl = train.original_labels();
    const auto el = test.original_labels();
    CHECK(std::count(tl.begin(), tl.end(), c) == 13);
    CHECK(std::count(el.begin(), el.end(), c) == 12);
  }
}

TEST_CASE("property: split is a disjoint cover of the input") {
  std::mt19937_64 gen(17);
  for (int trial = 0; trial < 50; ++trial) {
    const int n = 4 + static_cast<int>(gen() % 60);
    const int k = 2 + static_cast<int>(gen() % 4);
    std::vector<int> labels;
    for (int i = 0; i < n; ++i) labels.push_back(i < k ? i : static_cast<int>(gen() % k));
    const auto ds = labeled(labels, k);
    const double frac = 0.2 + 0.6 * static_cast<double>(gen() % 1000) / 1000.0;
    const auto strat = trial % 3 == 0 ? Stratify::kNone : trial % 3 == 1 ? Stratify::kOriginal : Stratify::kHijack;
    try {
      const auto [train, test] = split(ds, {frac, gen(), strat});
      auto all = features_of(train.samples());
      for (const auto& f : features_of(test.samples())) all.insert(f);
      CHECK(all == features_of(ds.samples()));
      CHECK(train.size() + test.size() == ds.size());
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::kSplit);  // tiny inputs may leave a side empty
    }
  }
}

TEST_CASE("reference db: one per class, deterministic, disjoint from queries") {
  const auto ds = generate_dual_blobs(2, 5, 6, 4, 3.0, 3.0, 0.2, 1);
  const auto a = build_reference_db_from(ds, 1, 5);
  CHECK(a.references.size() == 5);
  for (int c = 0; c < 5; ++c) CHECK(*a.references[c].hijack_label == c);
  const auto b = build_reference_db_from(ds, 1, 5);
  CHECK(a.references == b.references);
  CHECK(a.queries == b.queries);
  auto all = features_of(a.references);
  for (const auto& f : features_of(a.queries)) all.insert(f);
  CHECK(all == features_of(ds.samples()));
  CHECK(a.references.size() + a.queries.size() == ds.size());

  CHECK(code_of([&] { build_reference_db_from(ds, 0, 5); }) == ErrorCode::kParameter);
  CHECK(code_of([&] { build_reference_db_from(ds, 100, 5); }) == ErrorCode::kCoverage);
}

TEST_CASE("restrict_classes relabels densely") {
  const auto ds = test_util::small_blobs(0);
  const auto sub = restrict_classes(ds, {1, 3}, {0, 5, 7});
  CHECK(sub.n_classes_original() == 2);
  CHECK(sub.n_classes_hijack() == 3);
  CHECK(sub.size() == 2 * 3 * 12);
  CHECK(code_of([&] { restrict_classes(ds, {1, 9}, {}); }) == ErrorCode::kConfig);
}

TEST_CASE("dataset invariants are enforced") {
  std::vector<Sample> ragged = {{{1.0, 2.0}, 0, 0}, {{1.0}, 1, 0}};
  CHECK(code_of([&] { LabeledDataset("r", ragged, 2, 1); }) == ErrorCode::kShape);
  std::vector<Sample> out_of_range = {{{1.0}, 0, 0}, {{1.0}, 2, 0}};
  CHECK(code_of([&] { LabeledDataset("o", out_of_range, 2, 1); }) == ErrorCode::kParameter);
  std::vector<Sample> mixed = {{{1.0}, 0, 0}, {{1.0}, 1, std::nullopt}};
  CHECK(code_of([&] { LabeledDataset("m", mixed, 2, 1); }) == ErrorCode::kParameter);
}

}  // TEST_SUITE
