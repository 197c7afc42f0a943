// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include "fedconv/model.hpp"

namespace fedconv {

/// Binary layout, all integers little-endian:
///   magic[4] | u16 version | u32 record count |
///   per record: u32 name length | name bytes | u32 rank | u32 dims[rank] | f64 data[numel]
inline constexpr std::string_view kParamsMagic = "FCPS";
inline constexpr std::string_view kConvParamsMagic = "FCCV";
inline constexpr std::uint16_t kContainerVersion = 1;

std::string encode_container(std::string_view magic, const NamedTensors& tensors);
/// Throws FormatError on a wrong magic, unknown version, truncation or
/// trailing bytes.
NamedTensors decode_container(std::string_view magic, std::string_view bytes);

void write_container(const std::filesystem::path& path, std::string_view magic, const NamedTensors& tensors);
NamedTensors read_container(const std::filesystem::path& path, std::string_view magic);

void save_params(const std::filesystem::path& path, const ParameterSet& params);
ParameterSet load_params(const std::filesystem::path& path, const ModelSpec& spec);

/// FNV-1a over names, shapes and payload bytes.
std::uint64_t fingerprint(const NamedTensors& tensors);

}  // namespace fedconv
