// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <vector>

#include "fedconv/tensor.hpp"

namespace fedconv {

/// Labelled samples stored as one [N, ...] tensor.
struct Dataset {
  Tensor samples;
  std::vector<int> labels;
  std::size_t class_count = 0;

  std::size_t size() const { return labels.size(); }
  bool empty() const { return labels.empty(); }
  /// Shape of one sample (samples.shape() without the leading N).
  Shape sample_shape() const;

  Dataset subset(std::span<const std::size_t> indices) const;
  Tensor batch(std::span<const std::size_t> indices) const;
  std::vector<int> batch_labels(std::span<const std::size_t> indices) const;
  std::vector<std::size_t> class_histogram() const;

  /// Checks the labels range, N >= 1 and the sample/label count agreement.
  void validate() const;
};

/// Reads an IDX image file (magic 0x00000803) and its label file (magic
/// 0x00000801). Pixels are scaled to [0, 1]; samples are [N, 1, rows, cols].
Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels);

/// Gaussian class blobs: class means are random unit directions scaled by
/// `separation`, samples add unit-variance noise. Deterministic in `seed`.
Dataset gen_synthetic(std::size_t classes, std::size_t per_class, const Shape& sample_shape,
                      double separation, std::uint64_t seed);

}  // namespace fedconv
