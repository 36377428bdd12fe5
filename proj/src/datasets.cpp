#include "contra/datasets.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

#include "contra/errors.hpp"

namespace contra::data {

namespace {

std::size_t val_count(std::size_t n_per_class) {
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(0.1 * static_cast<double>(n_per_class))));
}

// Per-class raw samples are split 90/10 and the whole output is shrunk into
// [-1, 1]^D when any coordinate falls outside.
DatasetPair assemble(const std::vector<Matrix>& per_class, std::size_t n_per_class) {
  const std::size_t classes = per_class.size();
  const std::size_t dim = per_class.front().cols;
  const std::size_t n_val = val_count(n_per_class);
  const std::size_t n_train = n_per_class - n_val;

  double max_abs = 0.0;
  for (const auto& m : per_class)
    for (double v : m.data) max_abs = std::max(max_abs, std::abs(v));

  DatasetPair out;
  out.scale = max_abs > 1.0 ? 1.0 / max_abs : 1.0;
  out.train = {Matrix(n_train * classes, dim), {}, classes, Split::train};
  out.val = {Matrix(n_val * classes, dim), {}, classes, Split::val};
  for (std::size_t c = 0; c < classes; ++c) {
    for (std::size_t i = 0; i < n_per_class; ++i) {
      auto& target = i < n_train ? out.train : out.val;
      const std::size_t row = target.labels.size();
      for (std::size_t d = 0; d < dim; ++d) target.samples(row, d) = per_class[c](i, d) * out.scale;
      target.labels.push_back(c);
    }
  }
  return out;
}

void check_common(std::size_t classes, std::size_t n_per_class) {
  if (classes < 2) throw ConfigError("dataset: classes must be >= 2, got " + std::to_string(classes));
  if (n_per_class < 4) throw ConfigError("dataset: n_per_class must be >= 4, got " + std::to_string(n_per_class));
}

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::vector<std::string> split_commas(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string field;
  while (std::getline(ss, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

}  // namespace

Matrix LabeledDataset::class_samples(std::size_t c) const {
  Matrix out(class_count(c), samples.cols);
  std::size_t row = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] != c) continue;
    std::copy(samples.row(i).begin(), samples.row(i).end(), out.row(row++).begin());
  }
  return out;
}

std::size_t LabeledDataset::class_count(std::size_t c) const {
  return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), c));
}

DatasetPair make_gaussian_mixture(std::size_t classes, std::size_t n_per_class, double ring_radius, double sigma,
                                  std::uint64_t seed, std::size_t dim) {
  check_common(classes, n_per_class);
  if (!(sigma > 0.0)) throw ConfigError("make_gaussian_mixture: sigma must be > 0");
  if (!(ring_radius >= 0.0)) throw ConfigError("make_gaussian_mixture: ring_radius must be >= 0");
  if (dim < 2) throw ConfigError("make_gaussian_mixture: dim must be >= 2");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, sigma);
  std::vector<Matrix> per_class;
  for (std::size_t c = 0; c < classes; ++c) {
    const double angle = 2.0 * std::numbers::pi * static_cast<double>(c) / static_cast<double>(classes);
    Matrix m(n_per_class, dim);
    for (std::size_t i = 0; i < n_per_class; ++i) {
      for (std::size_t d = 0; d < dim; ++d) m(i, d) = noise(rng);
      m(i, 0) += ring_radius * std::cos(angle);
      m(i, 1) += ring_radius * std::sin(angle);
    }
    per_class.push_back(std::move(m));
  }
  return assemble(per_class, n_per_class);
}

DatasetPair make_rings(std::size_t classes, std::size_t n_per_class, std::uint64_t seed) {
  check_common(classes, n_per_class);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> angle(0.0, 2.0 * std::numbers::pi);
  std::normal_distribution<double> radial(0.0, 0.02);
  std::vector<Matrix> per_class;
  for (std::size_t c = 0; c < classes; ++c) {
    const double radius = static_cast<double>(c + 1) / static_cast<double>(classes);
    Matrix m(n_per_class, 2);
    for (std::size_t i = 0; i < n_per_class; ++i) {
      const double a = angle(rng);
      const double r = radius + radial(rng);
      m(i, 0) = r * std::cos(a);
      m(i, 1) = r * std::sin(a);
    }
    per_class.push_back(std::move(m));
  }
  return assemble(per_class, n_per_class);
}

std::string to_csv(const LabeledDataset& dataset) {
  std::ostringstream out;
  for (std::size_t d = 0; d < dataset.dim(); ++d) out << 'x' << d << ',';
  out << "label\n";
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    for (double v : dataset.samples.row(i)) out << format_double(v) << ',';
    out << dataset.labels[i] << '\n';
  }
  return out.str();
}

void save_csv(const std::filesystem::path& path, const LabeledDataset& dataset) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("save_csv: cannot open " + path.string());
  out << to_csv(dataset);
  if (!out) throw std::runtime_error("save_csv: write failed for " + path.string());
}

LabeledDataset load_csv(const std::filesystem::path& path, Split split) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_csv: cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line.empty()) throw ConfigError("load_csv: " + path.string() + " is empty");
  if (line.back() == '\r') line.pop_back();
  const auto header = split_commas(line);
  if (header.size() < 3 || header.back() != "label") {
    throw ConfigError("load_csv: bad header '" + line + "', expected x0,x1,...,label");
  }
  const std::size_t dim = header.size() - 1;
  for (std::size_t d = 0; d < dim; ++d) {
    if (header[d] != "x" + std::to_string(d)) throw ConfigError("load_csv: bad header column '" + header[d] + "'");
  }

  std::vector<double> values;
  LabeledDataset ds;
  ds.split = split;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto fields = split_commas(line);
    const auto bad = [&](const std::string& why) {
      return ConfigError("load_csv: " + path.string() + " line " + std::to_string(line_no) + ": " + why);
    };
    if (fields.size() != dim + 1) throw bad("expected " + std::to_string(dim + 1) + " fields");
    for (std::size_t d = 0; d < dim; ++d) {
      double v = 0.0;
      const auto& f = fields[d];
      const auto res = std::from_chars(f.data(), f.data() + f.size(), v);
      if (res.ec != std::errc{} || res.ptr != f.data() + f.size() || !std::isfinite(v)) throw bad("bad number '" + f + "'");
      values.push_back(v);
    }
    std::size_t label = 0;
    const auto& f = fields[dim];
    const auto res = std::from_chars(f.data(), f.data() + f.size(), label);
    if (res.ec != std::errc{} || res.ptr != f.data() + f.size()) throw bad("bad label '" + f + "'");
    ds.labels.push_back(label);
  }
  if (ds.labels.empty()) throw ConfigError("load_csv: " + path.string() + " has no samples");
  ds.samples = Matrix(ds.labels.size(), dim, std::move(values));
  ds.num_classes = *std::max_element(ds.labels.begin(), ds.labels.end()) + 1;
  return ds;
}

}  // namespace contra::data
