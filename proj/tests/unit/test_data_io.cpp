// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "fedconv/dataset.hpp"
#include "fedconv/errors.hpp"
#include "fedconv/model.hpp"

using namespace fedconv;

namespace {

void write_bytes(const std::filesystem::path& p, const std::vector<unsigned char>& bytes) {
  std::ofstream out(p, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

struct Fixture {
  std::filesystem::path dir = std::filesystem::temp_directory_path() / "fedconv_idx_test";
  std::filesystem::path images = dir / "img", labels = dir / "lab";
  Fixture() {
    std::filesystem::create_directories(dir);
    // Two 2x3 images.
    write_bytes(images, {0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0, 3, 0, 51, 102, 153, 204, 255,
                         255, 0, 0, 0, 0, 0});
    write_bytes(labels, {0, 0, 8, 1, 0, 0, 0, 2, 3, 1});
  }
  ~Fixture() { std::filesystem::remove_all(dir); }
};

}  // namespace

TEST_CASE("load_idx") {
  Fixture f;
  SUBCASE("hand-made fixture") {
    Dataset d = load_idx(f.images, f.labels);
    CHECK(d.samples.shape() == Shape{2, 1, 2, 3});
    CHECK(d.samples.values() == std::vector<double>{0, 0.2, 0.4, 0.6, 0.8, 1, 1, 0, 0, 0, 0, 0});
    CHECK(d.labels == std::vector<int>{3, 1});
    CHECK(d.class_count == 4);
  }
  SUBCASE("wrong label magic") {
    write_bytes(f.labels, {0, 0, 8, 3, 0, 0, 0, 2, 3, 1});
    CHECK_THROWS_AS(load_idx(f.images, f.labels), FormatError);
  }
  SUBCASE("truncated images") {
    write_bytes(f.images, {0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0, 3, 0, 51});
    CHECK_THROWS_AS(load_idx(f.images, f.labels), FormatError);
  }
  SUBCASE("count mismatch") {
    write_bytes(f.labels, {0, 0, 8, 1, 0, 0, 0, 1, 3});
    CHECK_THROWS_AS(load_idx(f.images, f.labels), FormatError);
  }
  SUBCASE("missing file") { CHECK_THROWS_AS(load_idx(f.dir / "nope", f.labels), IoError); }
}

TEST_CASE("bundled MNIST subset") {
  const std::filesystem::path dir = FEDCONV_DATA_DIR;
  Dataset d = load_idx(dir / "mnist10k-images-idx3-ubyte", dir / "mnist10k-labels-idx1-ubyte");
  CHECK(d.size() == 10000);
  CHECK(d.class_count == 10);
  CHECK(d.sample_shape() == Shape{1, 28, 28});
  CHECK(d.samples.min() >= 0.0);
  CHECK(d.samples.max() <= 1.0);
}

TEST_CASE("gen_synthetic") {
  Dataset d = gen_synthetic(2, 10, {3}, 1.0, 4);
  CHECK(d.size() == 20);
  CHECK(d.samples.shape() == Shape{20, 3});
  Dataset again = gen_synthetic(2, 10, {3}, 1.0, 4);
  CHECK(d.samples == again.samples);
  CHECK(d.labels == again.labels);
  CHECK_THROWS_AS(gen_synthetic(2, 10, {3}, 0.0, 4), ConfigError);

  SUBCASE("a linear probe separates well-separated blobs") {
    Dataset s = gen_synthetic(4, 25, {16}, 10.0, 7);
    auto spec = make_sequential({16}, 4, {{"probe", LayerKind::dense, 0, 4}});
    auto p = local_train(spec, init_params(spec, 1), s, {.epochs = 50, .lr = 0.05, .batch_size = 8, .seed = 2});
    CHECK(evaluate(spec, p, s).accuracy == 1.0);
  }
}
