#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "contra/linalg.hpp"

namespace contra::data {

enum class Split { train, val };

struct LabeledDataset {
  Matrix samples;  // n×D, inside [-1, 1]^D
  std::vector<std::size_t> labels;
  std::size_t num_classes = 0;
  Split split = Split::train;

  std::size_t size() const { return labels.size(); }
  std::size_t dim() const { return samples.cols; }
  // Rows of one class, in dataset order.
  Matrix class_samples(std::size_t c) const;
  std::size_t class_count(std::size_t c) const;
};

struct DatasetPair {
  LabeledDataset train;
  LabeledDataset val;
  // Factor applied to raw coordinates to fit [-1, 1]^D (1 when already inside).
  double scale = 1.0;
};

// Class c centered at ring_radius·(cos 2πc/C, sin 2πc/C, 0, ...), isotropic σ.
DatasetPair make_gaussian_mixture(std::size_t classes, std::size_t n_per_class, double ring_radius, double sigma,
                                  std::uint64_t seed, std::size_t dim = 2);

// Class c uniform on a circle of radius (c+1)/C with N(0, 0.02²) radial noise.
DatasetPair make_rings(std::size_t classes, std::size_t n_per_class, std::uint64_t seed);

// Header `x0,x1,...,label`, 17 significant digits, LF line endings.
std::string to_csv(const LabeledDataset& dataset);
void save_csv(const std::filesystem::path& path, const LabeledDataset& dataset);
LabeledDataset load_csv(const std::filesystem::path& path, Split split = Split::train);

}  // namespace contra::data
