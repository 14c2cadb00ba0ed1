#include "snatchml/datasets.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "snatchml/error.hpp"
#include "snatchml/rng.hpp"

namespace snatchml {

LabeledDataset::LabeledDataset(std::string name, std::vector<Sample> samples,
                               int n_classes_original, int n_classes_hijack)
    : name_(std::move(name)),
      samples_(std::move(samples)),
      n_classes_original_(n_classes_original),
      n_classes_hijack_(n_classes_hijack),
      feature_dim_(0) {
  if (samples_.empty()) fail(ErrorCode::kParameter, "dataset '" + name_ + "' is empty");
  if (n_classes_original_ < 2) {
    fail(ErrorCode::kParameter, "dataset '" + name_ + "' needs at least 2 original classes");
  }
  if (n_classes_hijack_ < 0) fail(ErrorCode::kParameter, "negative hijack class count");
  feature_dim_ = samples_.front().features.size();
  if (feature_dim_ == 0) fail(ErrorCode::kShape, "dataset '" + name_ + "' has zero-length features");
  const bool with_hijack = samples_.front().hijack_label.has_value();
  for (std::size_t i = 0; i < samples_.size(); ++i) {
    const Sample& s = samples_[i];
    if (s.features.size() != feature_dim_) {
      fail(ErrorCode::kShape, "sample " + std::to_string(i) + " has " +
                                  std::to_string(s.features.size()) + " features, expected " +
                                  std::to_string(feature_dim_));
    }
    if (s.original_label < 0 || s.original_label >= n_classes_original_) {
      fail(ErrorCode::kParameter, "sample " + std::to_string(i) + " original label " +
                                      std::to_string(s.original_label) + " out of range");
    }
    if (s.hijack_label.has_value() != with_hijack) {
      fail(ErrorCode::kParameter, "hijack labels must be present for all samples or none");
    }
    if (with_hijack && (*s.hijack_label < 0 || *s.hijack_label >= n_classes_hijack_)) {
      fail(ErrorCode::kParameter, "sample " + std::to_string(i) + " hijack label " +
                                      std::to_string(*s.hijack_label) + " out of range");
    }
  }
}

std::vector<int> LabeledDataset::original_labels() const {
  std::vector<int> out;
  out.reserve(samples_.size());
  for (const auto& s : samples_) out.push_back(s.original_label);
  return out;
}

std::vector<int> LabeledDataset::hijack_labels() const {
  if (!has_hijack_labels()) fail(ErrorCode::kConfig, "dataset '" + name_ + "' has no hijack labels");
  std::vector<int> out;
  out.reserve(samples_.size());
  for (const auto& s : samples_) out.push_back(*s.hijack_label);
  return out;
}

namespace {

std::vector<std::vector<double>> unit_directions(int count, int dim, Rng& rng) {
  std::vector<std::vector<double>> dirs(count, std::vector<double>(dim));
  for (auto& d : dirs) {
    double norm = 0.0;
    while (norm == 0.0) {
      norm = 0.0;
      for (auto& v : d) {
        v = rng.normal();
        norm += v * v;
      }
    }
    norm = std::sqrt(norm);
    for (auto& v : d) v /= norm;
  }
  return dirs;
}

// Modified Gram-Schmidt; requires count <= dim.
std::vector<std::vector<double>> orthonormal_directions(int count, int dim, Rng& rng) {
  std::vector<std::vector<double>> basis;
  while (static_cast<int>(basis.size()) < count) {
    auto v = unit_directions(1, dim, rng).front();
    for (const auto& b : basis) {
      double dot = 0.0;
      for (int i = 0; i < dim; ++i) dot += v[i] * b[i];
      for (int i = 0; i < dim; ++i) v[i] -= dot * b[i];
    }
    double norm = 0.0;
    for (double x : v) norm += x * x;
    norm = std::sqrt(norm);
    if (norm < 1e-8) continue;
    for (auto& x : v) x /= norm;
    basis.push_back(std::move(v));
  }
  return basis;
}

}  // namespace

LabeledDataset generate_dual_blobs(const DualBlobParams& p) {
  if (p.n_orig < 2 || p.m_hijack < 2) {
    fail(ErrorCode::kParameter, "generate_dual_blobs needs n_orig >= 2 and m_hijack >= 2");
  }
  if (p.dim < 2) fail(ErrorCode::kParameter, "generate_dual_blobs needs dim >= 2");
  if (p.n_per_cell < 1) fail(ErrorCode::kParameter, "generate_dual_blobs needs n_per_cell >= 1");
  if (!(p.noise_sigma >= 0.0) || !std::isfinite(p.noise_sigma)) {
    fail(ErrorCode::kParameter, "noise_sigma must be finite and >= 0");
  }
  if (!std::isfinite(p.orig_sep) || !std::isfinite(p.hijack_sep)) {
    fail(ErrorCode::kParameter, "separations must be finite");
  }

  Rng rng(p.seed);
  std::vector<std::vector<double>> orig_dirs;
  std::vector<std::vector<double>> hijack_dirs;
  if (p.directions == DirectionMode::kOrthogonal) {
    if (p.n_orig + p.m_hijack > p.dim) {
      fail(ErrorCode::kParameter, "orthogonal directions need dim >= n_orig + m_hijack");
    }
    auto basis = orthonormal_directions(p.n_orig + p.m_hijack, p.dim, rng);
    orig_dirs.assign(basis.begin(), basis.begin() + p.n_orig);
    hijack_dirs.assign(basis.begin() + p.n_orig, basis.end());
  } else {
    orig_dirs = unit_directions(p.n_orig, p.dim, rng);
    hijack_dirs = unit_directions(p.m_hijack, p.dim, rng);
  }

  std::vector<Sample> samples;
  samples.reserve(static_cast<std::size_t>(p.n_orig) * p.m_hijack * p.n_per_cell);
  for (int o = 0; o < p.n_orig; ++o) {
    for (int h = 0; h < p.m_hijack; ++h) {
      std::vector<double> mean(p.dim);
      for (int i = 0; i < p.dim; ++i) {
        mean[i] = p.orig_sep * orig_dirs[o][i] + p.hijack_sep * hijack_dirs[h][i];
      }
      for (int c = 0; c < p.n_per_cell; ++c) {
        Sample s;
        s.features = mean;
        if (p.noise_sigma > 0.0) {
          for (auto& v : s.features) v += p.noise_sigma * rng.normal();
        }
        s.original_label = o;
        s.hijack_label = h;
        samples.push_back(std::move(s));
      }
    }
  }
  return LabeledDataset("dual_blobs", std::move(samples), p.n_orig, p.m_hijack);
}

LabeledDataset generate_dual_blobs(int n_orig, int m_hijack, int dim, int n_per_cell,
                                   double orig_sep, double hijack_sep, double noise_sigma,
                                   std::uint64_t seed) {
  DualBlobParams p;
  p.n_orig = n_orig;
  p.m_hijack = m_hijack;
  p.dim = dim;
  p.n_per_cell = n_per_cell;
  p.orig_sep = orig_sep;
  p.hijack_sep = hijack_sep;
  p.noise_sigma = noise_sigma;
  p.seed = seed;
  return generate_dual_blobs(p);
}

// ---------------------------------------------------------------------------
// CSV

namespace {

std::vector<std::string_view> split_cells(std::string_view line) {
  std::vector<std::string_view> cells;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      cells.push_back(line.substr(start));
      break;
    }
    cells.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
  return cells;
}

[[noreturn]] void csv_error(const std::filesystem::path& path, std::size_t row,
                            const std::string& what) {
  fail(ErrorCode::kFormat, path.string() + ": row " + std::to_string(row) + ": " + what);
}

int parse_label(std::string_view cell, const std::filesystem::path& path, std::size_t row,
                const char* column) {
  int value = 0;
  const auto* end = cell.data() + cell.size();
  const auto [ptr, ec] = std::from_chars(cell.data(), end, value);
  if (cell.empty() || ec != std::errc() || ptr != end) {
    csv_error(path, row, std::string("non-integer ") + column + " '" + std::string(cell) + "'");
  }
  if (value < 0) csv_error(path, row, std::string("negative ") + column);
  return value;
}

double parse_real(std::string_view cell, const std::filesystem::path& path, std::size_t row,
                  std::size_t column) {
  double value = 0.0;
  const auto* end = cell.data() + cell.size();
  const auto [ptr, ec] = std::from_chars(cell.data(), end, value);
  if (cell.empty() || ec != std::errc() || ptr != end || !std::isfinite(value)) {
    csv_error(path, row, "non-numeric cell '" + std::string(cell) + "' in column " +
                             std::to_string(column));
  }
  return value;
}

void strip_cr(std::string& line) {
  if (!line.empty() && line.back() == '\r') line.pop_back();
}

}  // namespace

LabeledDataset load_csv(const std::filesystem::path& path, bool has_hijack_column,
                        const CsvOptions& options) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::kIo, "cannot open " + path.string());

  std::string line;
  if (!std::getline(in, line)) fail(ErrorCode::kFormat, path.string() + ": missing header");
  strip_cr(line);
  if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
  const auto header = split_cells(line);
  const std::size_t label_cols = has_hijack_column ? 2 : 1;
  if (header.size() <= label_cols) fail(ErrorCode::kFormat, path.string() + ": no feature columns");
  if (header[0] != "orig_label") {
    fail(ErrorCode::kFormat, path.string() + ": first column must be orig_label");
  }
  if (has_hijack_column && header[1] != "hijack_label") {
    fail(ErrorCode::kFormat, path.string() + ": second column must be hijack_label");
  }
  for (std::size_t c = label_cols; c < header.size(); ++c) {
    if (header[c] != "f" + std::to_string(c - label_cols)) {
      fail(ErrorCode::kFormat, path.string() + ": unexpected header column '" +
                                   std::string(header[c]) + "'");
    }
  }
  const std::size_t dim = header.size() - label_cols;

  std::vector<Sample> samples;
  int max_orig = -1;
  int max_hijack = -1;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    strip_cr(line);
    if (line.empty()) continue;
    ++row;
    const auto cells = split_cells(line);
    if (cells.size() != header.size()) {
      csv_error(path, row, "expected " + std::to_string(header.size()) + " cells, got " +
                               std::to_string(cells.size()));
    }
    Sample s;
    s.original_label = parse_label(cells[0], path, row, "orig_label");
    max_orig = std::max(max_orig, s.original_label);
    if (has_hijack_column) {
      s.hijack_label = parse_label(cells[1], path, row, "hijack_label");
      max_hijack = std::max(max_hijack, *s.hijack_label);
    }
    s.features.reserve(dim);
    for (std::size_t c = label_cols; c < cells.size(); ++c) {
      s.features.push_back(parse_real(cells[c], path, row, c));
    }
    samples.push_back(std::move(s));
  }
  if (samples.empty()) fail(ErrorCode::kFormat, path.string() + ": no data rows");

  const int n = options.n_classes_original.value_or(max_orig + 1);
  const int m = has_hijack_column ? options.n_classes_hijack.value_or(max_hijack + 1) : 0;
  if (n <= max_orig || (has_hijack_column && m <= max_hijack)) {
    fail(ErrorCode::kFormat, path.string() + ": label exceeds declared class count");
  }
  return LabeledDataset(path.stem().string(), std::move(samples), n, m);
}

void write_csv(const LabeledDataset& ds, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::kIo, "cannot write " + path.string());
  const bool hijack = ds.has_hijack_labels();
  out << "orig_label";
  if (hijack) out << ",hijack_label";
  for (std::size_t i = 0; i < ds.feature_dim(); ++i) out << ",f" << i;
  out << '\n';
  char buf[64];
  for (const auto& s : ds.samples()) {
    out << s.original_label;
    if (hijack) out << ',' << *s.hijack_label;
    for (double v : s.features) {
      const auto res = std::to_chars(buf, buf + sizeof(buf), v);
      out << ',' << std::string_view(buf, static_cast<std::size_t>(res.ptr - buf));
    }
    out << '\n';
  }
  if (!out) fail(ErrorCode::kIo, "write failed for " + path.string());
}

// ---------------------------------------------------------------------------
// IDX

namespace {

constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

std::uint32_t read_be_u32(std::istream& in, const std::filesystem::path& path) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (!in) fail(ErrorCode::kFormat, path.string() + ": truncated header");
  return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) |
         (std::uint32_t(b[2]) << 8) | std::uint32_t(b[3]);
}

std::ifstream open_binary(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::kIo, "cannot open " + path.string());
  return in;
}

}  // namespace

LabeledDataset load_idx_images(const std::filesystem::path& images_path,
                               const std::filesystem::path& labels_path) {
  auto images = open_binary(images_path);
  if (const auto magic = read_be_u32(images, images_path); magic != kIdxImagesMagic) {
    std::ostringstream msg;
    msg << images_path.string() << ": bad magic 0x" << std::hex << magic << " for IDX images";
    fail(ErrorCode::kFormat, msg.str());
  }
  const std::uint32_t count = read_be_u32(images, images_path);
  const std::uint32_t rows = read_be_u32(images, images_path);
  const std::uint32_t cols = read_be_u32(images, images_path);

  auto labels = open_binary(labels_path);
  if (const auto magic = read_be_u32(labels, labels_path); magic != kIdxLabelsMagic) {
    std::ostringstream msg;
    msg << labels_path.string() << ": bad magic 0x" << std::hex << magic << " for IDX labels";
    fail(ErrorCode::kFormat, msg.str());
  }
  const std::uint32_t label_count = read_be_u32(labels, labels_path);
  if (label_count != count) {
    fail(ErrorCode::kFormat, "IDX count mismatch: " + std::to_string(count) + " images vs " +
                                 std::to_string(label_count) + " labels");
  }
  if (count == 0) fail(ErrorCode::kFormat, images_path.string() + ": no images");

  const std::size_t dim = static_cast<std::size_t>(rows) * cols;
  std::vector<unsigned char> pixels(dim);
  std::vector<Sample> samples;
  samples.reserve(count);
  int max_label = 0;
  for (std::uint32_t i = 0; i < count; ++i) {
    images.read(reinterpret_cast<char*>(pixels.data()), static_cast<std::streamsize>(dim));
    if (!images) fail(ErrorCode::kFormat, images_path.string() + ": truncated pixel data");
    char label = 0;
    labels.read(&label, 1);
    if (!labels) fail(ErrorCode::kFormat, labels_path.string() + ": truncated label data");
    Sample s;
    s.features.resize(dim);
    for (std::size_t p = 0; p < dim; ++p) s.features[p] = pixels[p] / 255.0;
    s.original_label = static_cast<unsigned char>(label);
    max_label = std::max(max_label, s.original_label);
    samples.push_back(std::move(s));
  }
  return LabeledDataset(images_path.stem().string(), std::move(samples),
                        std::max(2, max_label + 1), 0);
}

// ---------------------------------------------------------------------------
// Splits

std::pair<LabeledDataset, LabeledDataset> split(const LabeledDataset& ds, const SplitSpec& spec) {
  if (!(spec.train_fraction > 0.0 && spec.train_fraction < 1.0)) {
    fail(ErrorCode::kParameter, "train_fraction must lie in (0, 1)");
  }
  if (ds.size() < 2) fail(ErrorCode::kSplit, "cannot split a dataset with a single sample");

  std::map<int, std::vector<std::size_t>> strata;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    int key = 0;
    if (spec.stratify_by == Stratify::kOriginal) {
      key = ds[i].original_label;
    } else if (spec.stratify_by == Stratify::kHijack) {
      if (!ds[i].hijack_label) fail(ErrorCode::kConfig, "stratify_by=hijack without hijack labels");
      key = *ds[i].hijack_label;
    }
    strata[key].push_back(i);
  }

  Rng rng(spec.seed);
  std::vector<char> is_test(ds.size(), 0);
  for (auto& [key, members] : strata) {
    const std::size_t c = members.size();
    auto n_test = static_cast<std::size_t>(
        std::floor((1.0 - spec.train_fraction) * static_cast<double>(c) + 1e-9));
    if (c >= 2) n_test = std::clamp<std::size_t>(n_test, 1, c - 1);
    rng.shuffle(members);
    for (std::size_t j = 0; j < n_test; ++j) is_test[members[j]] = 1;
  }

  std::vector<Sample> train;
  std::vector<Sample> test;
  for (std::size_t i = 0; i < ds.size(); ++i) (is_test[i] ? test : train).push_back(ds[i]);
  if (train.empty() || test.empty()) {
    fail(ErrorCode::kSplit, "split of '" + ds.name() + "' left one side empty");
  }
  return {LabeledDataset(ds.name() + "/train", std::move(train), ds.n_classes_original(),
                         ds.n_classes_hijack()),
          LabeledDataset(ds.name() + "/test", std::move(test), ds.n_classes_original(),
                         ds.n_classes_hijack())};
}

ReferenceSplit build_reference_db_from(const LabeledDataset& ds, int samples_per_class,
                                       std::uint64_t seed) {
  if (samples_per_class < 1) fail(ErrorCode::kParameter, "samples_per_class must be >= 1");
  if (!ds.has_hijack_labels()) fail(ErrorCode::kConfig, "reference db needs hijack labels");

  const int m = ds.n_classes_hijack();
  std::vector<std::vector<std::size_t>> by_class(m);
  for (std::size_t i = 0; i < ds.size(); ++i) by_class[*ds[i].hijack_label].push_back(i);

  Rng rng(seed);
  std::vector<char> is_ref(ds.size(), 0);
  ReferenceSplit out;
  for (int c = 0; c < m; ++c) {
    auto& members = by_class[c];
    if (static_cast<int>(members.size()) < samples_per_class) {
      fail(ErrorCode::kCoverage, "hijack class " + std::to_string(c) + " has " +
                                     std::to_string(members.size()) + " samples, need " +
                                     std::to_string(samples_per_class));
    }
    rng.shuffle(members);
    std::sort(members.begin(), members.begin() + samples_per_class);
    for (int j = 0; j < samples_per_class; ++j) {
      is_ref[members[j]] = 1;
      out.references.push_back(ds[members[j]]);
    }
  }
  for (std::size_t i = 0; i < ds.size(); ++i) {
    if (!is_ref[i]) out.queries.push_back(ds[i]);
  }
  return out;
}

LabeledDataset restrict_classes(const LabeledDataset& ds, const std::vector<int>& original_classes,
                                const std::vector<int>& hijack_classes) {
  auto remap = [](const std::vector<int>& keep, int count, const char* what) {
    std::vector<int> table(count, -1);
    for (std::size_t i = 0; i < keep.size(); ++i) {
      if (keep[i] < 0 || keep[i] >= count) {
        fail(ErrorCode::kConfig, std::string(what) + " class " + std::to_string(keep[i]) +
                                     " not present (have " + std::to_string(count) + ")");
      }
      if (table[keep[i]] != -1) fail(ErrorCode::kConfig, std::string("duplicate ") + what + " class");
      table[keep[i]] = static_cast<int>(i);
    }
    return table;
  };
  const auto orig_map = remap(original_classes, ds.n_classes_original(), "original");
  const bool keep_all_hijack = hijack_classes.empty();
  std::vector<int> hijack_map;
  if (!keep_all_hijack) {
    if (!ds.has_hijack_labels()) fail(ErrorCode::kConfig, "dataset has no hijack labels");
    hijack_map = remap(hijack_classes, ds.n_classes_hijack(), "hijack");
  }

  std::vector<Sample> kept;
  for (const auto& s : ds.samples()) {
    const int o = orig_map[s.original_label];
    if (o < 0) continue;
    Sample t = s;
    t.original_label = o;
    if (!keep_all_hijack) {
      const int h = hijack_map[*s.hijack_label];
      if (h < 0) continue;
      t.hijack_label = h;
    }
    kept.push_back(std::move(t));
  }
  if (kept.empty()) fail(ErrorCode::kConfig, "class restriction left no samples");
  const int m = keep_all_hijack ? ds.n_classes_hijack() : static_cast<int>(hijack_classes.size());
  return LabeledDataset(ds.name(), std::move(kept), static_cast<int>(original_classes.size()), m);
}

}  // namespace snatchml
