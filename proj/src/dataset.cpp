// SPDX-License-Identifier: Apache-2.0
#include "fedconv/dataset.hpp"

#include <array>
#include <cmath>
#include <fstream>
#include <random>

#include "fedconv/errors.hpp"

namespace fedconv {

Shape Dataset::sample_shape() const {
  const Shape& s = samples.shape();
  return Shape(s.begin() + 1, s.end());
}

Tensor Dataset::batch(std::span<const std::size_t> indices) const {
  if (indices.empty()) throw UsageError("empty batch");
  Shape shape = samples.shape();
  const std::size_t stride = samples.numel() / shape[0];
  shape[0] = indices.size();
  Tensor out(shape);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= size()) throw UsageError("sample index out of range");
    std::copy_n(samples.data().data() + indices[i] * stride, stride, out.data().data() + i * stride);
  }
  return out;
}

std::vector<int> Dataset::batch_labels(std::span<const std::size_t> indices) const {
  std::vector<int> out;
  out.reserve(indices.size());
  for (auto i : indices) out.push_back(labels.at(i));
  return out;
}

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
  Dataset d;
  d.class_count = class_count;
  if (indices.empty()) return d;
  d.samples = batch(indices);
  d.labels = batch_labels(indices);
  return d;
}

std::vector<std::size_t> Dataset::class_histogram() const {
  std::vector<std::size_t> h(class_count, 0);
  for (int l : labels) ++h.at(static_cast<std::size_t>(l));
  return h;
}

void Dataset::validate() const {
  if (labels.empty()) throw InputError("dataset has no samples");
  if (samples.rank() < 2 || samples.dim(0) != labels.size()) {
    throw InputError("dataset sample tensor " + shape_str(samples.shape()) + " does not match " +
                     std::to_string(labels.size()) + " labels");
  }
  for (int l : labels) {
    if (l < 0 || static_cast<std::size_t>(l) >= class_count) {
      throw InputError("label " + std::to_string(l) + " outside [0, " + std::to_string(class_count) + ")");
    }
  }
}

namespace {

std::vector<unsigned char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return std::vector<unsigned char>(std::istreambuf_iterator<char>(in), {});
}

std::uint32_t read_be32(const std::vector<unsigned char>& buf, std::size_t at, const std::filesystem::path& path) {
  if (buf.size() < at + 4) throw FormatError(path.string() + ": truncated IDX header");
  return (std::uint32_t{buf[at]} << 24) | (std::uint32_t{buf[at + 1]} << 16) |
         (std::uint32_t{buf[at + 2]} << 8) | std::uint32_t{buf[at + 3]};
}

}  // namespace

Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels) {
  const auto img = read_file(images);
  const auto lab = read_file(labels);

  if (read_be32(img, 0, images) != 0x00000803u) throw FormatError(images.string() + ": bad IDX image magic");
  if (read_be32(lab, 0, labels) != 0x00000801u) throw FormatError(labels.string() + ": bad IDX label magic");
  const std::size_t n = read_be32(img, 4, images);
  const std::size_t rows = read_be32(img, 8, images);
  const std::size_t cols = read_be32(img, 12, images);
  const std::size_t n_labels = read_be32(lab, 4, labels);
  if (n != n_labels) {
    throw FormatError("IDX count mismatch: " + std::to_string(n) + " images, " + std::to_string(n_labels) + " labels");
  }
  if (n == 0 || rows == 0 || cols == 0) throw FormatError(images.string() + ": empty IDX file");
  const std::size_t pixels = rows * cols;
  if (img.size() != 16 + n * pixels) throw FormatError(images.string() + ": truncated or oversized image payload");
  if (lab.size() != 8 + n) throw FormatError(labels.string() + ": truncated or oversized label payload");

  Dataset d;
  d.samples = Tensor({n, 1, rows, cols});
  for (std::size_t i = 0; i < n * pixels; ++i) d.samples[i] = img[16 + i] / 255.0;
  d.labels.resize(n);
  int max_label = 0;
  for (std::size_t i = 0; i < n; ++i) {
    d.labels[i] = lab[8 + i];
    max_label = std::max(max_label, d.labels[i]);
  }
  d.class_count = static_cast<std::size_t>(max_label) + 1;
  return d;
}

Dataset gen_synthetic(std::size_t classes, std::size_t per_class, const Shape& sample_shape, double separation,
                      std::uint64_t seed) {
  if (!(separation > 0.0)) throw ConfigError("synthetic separation must be positive");
  if (classes == 0 || per_class == 0) throw ConfigError("synthetic dataset needs classes and samples");
  const std::size_t dim = shape_numel(sample_shape);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);

  std::vector<std::vector<double>> means(classes, std::vector<double>(dim));
  for (auto& m : means) {
    double norm = 0.0;
    for (auto& v : m) {
      v = normal(rng);
      norm += v * v;
    }
    norm = std::sqrt(norm);
    for (auto& v : m) v *= separation / norm;
  }

  Shape full{classes * per_class};
  full.insert(full.end(), sample_shape.begin(), sample_shape.end());
  Dataset d;
  d.samples = Tensor(full);
  d.class_count = classes;
  d.labels.reserve(classes * per_class);
  std::size_t row = 0;
  // Classes interleaved so any prefix is roughly balanced.
  for (std::size_t i = 0; i < per_class; ++i) {
    for (std::size_t c = 0; c < classes; ++c, ++row) {
      double* dst = d.samples.data().data() + row * dim;
      for (std::size_t j = 0; j < dim; ++j) dst[j] = means[c][j] + normal(rng);
      d.labels.push_back(static_cast<int>(c));
    }
  }
  return d;
}

}  // namespace fedconv
