// SPDX-License-Identifier: Apache-2.0
#include "fedconv/container.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "fedconv/errors.hpp"

namespace fedconv {

static_assert(std::endian::native == std::endian::little, "container I/O assumes a little-endian host");

namespace {

template <typename T>
void put(std::string& out, T value) {
  char buf[sizeof(T)];
  std::memcpy(buf, &value, sizeof(T));
  out.append(buf, sizeof(T));
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    T value;
    std::memcpy(&value, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return value;
  }

  std::string_view take(std::size_t n) {
    need(n);
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw FormatError("parameter container truncated");
  }

  std::string_view bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string encode_container(std::string_view magic, const NamedTensors& tensors) {
  std::string out(magic);
  put<std::uint16_t>(out, kContainerVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) put<std::uint32_t>(out, static_cast<std::uint32_t>(d));
    out.append(reinterpret_cast<const char*>(t.data().data()), t.numel() * sizeof(double));
  }
  return out;
}

NamedTensors decode_container(std::string_view magic, std::string_view bytes) {
  Reader r(bytes);
  if (r.take(magic.size()) != magic) throw FormatError("bad container magic, expected " + std::string(magic));
  const auto version = r.get<std::uint16_t>();
  if (version != kContainerVersion) throw FormatError("unsupported container version " + std::to_string(version));
  const auto count = r.get<std::uint32_t>();
  NamedTensors out;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = r.get<std::uint32_t>();
    std::string name(r.take(name_len));
    const auto rank = r.get<std::uint32_t>();
    if (rank == 0) throw FormatError("record " + name + " has rank 0");
    Shape shape(rank);
    for (auto& d : shape) {
      d = r.get<std::uint32_t>();
      if (d == 0) throw FormatError("record " + name + " has a zero dimension");
    }
    const std::size_t n = shape_numel(shape);
    auto payload = r.take(n * sizeof(double));
    std::vector<double> data(n);
    std::memcpy(data.data(), payload.data(), payload.size());
    if (!out.emplace(name, Tensor(std::move(shape), std::move(data))).second) {
      throw FormatError("duplicate record " + name);
    }
  }
  if (!r.done()) throw FormatError("trailing bytes after parameter container");
  return out;
}

void write_container(const std::filesystem::path& path, std::string_view magic, const NamedTensors& tensors) {
  const std::string bytes = encode_container(magic, tensors);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

NamedTensors read_container(const std::filesystem::path& path, std::string_view magic) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return decode_container(magic, ss.str());
}

void save_params(const std::filesystem::path& path, const ParameterSet& params) {
  write_container(path, kParamsMagic, params.to_named());
}

ParameterSet load_params(const std::filesystem::path& path, const ModelSpec& spec) {
  return ParameterSet::from_named(spec, read_container(path, kParamsMagic));
}

std::uint64_t fingerprint(const NamedTensors& tensors) {
  std::uint64_t h = 1469598103934665603ull;
  auto mix = [&](const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 1099511628211ull;
    }
  };
  for (const auto& [name, t] : tensors) {
    mix(name.data(), name.size());
    for (auto d : t.shape()) mix(&d, sizeof(d));
    mix(t.data().data(), t.numel() * sizeof(double));
  }
  return h;
}

}  // namespace fedconv
