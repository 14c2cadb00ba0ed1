#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <random>
#include <string>
#include <vector>

#include "snatchml/datasets.hpp"
#include "snatchml/network.hpp"

namespace test_util {

// Fresh, empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("snatchml_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
}

inline std::string read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Independent of the library RNG on purpose.
inline std::vector<double> random_vector(std::mt19937_64& gen, std::size_t n, double lo = -1.0,
                                         double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> v(n);
  for (auto& x : v) x = dist(gen);
  return v;
}

inline snatchml::LabeledDataset small_blobs(std::uint64_t seed = 0, double noise = 0.3) {
  snatchml::DualBlobParams p;
  p.n_orig = 4;
  p.m_hijack = 8;
  p.dim = 8;
  p.n_per_cell = 12;
  p.orig_sep = 4.0;
  p.hijack_sep = 4.0;
  p.noise_sigma = noise;
  p.seed = seed;
  return snatchml::generate_dual_blobs(p);
}

}  // namespace test_util
