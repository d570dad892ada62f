#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>

#include "mtb/numerics/tensor.hpp"

namespace mtb {

// MTT1 layout: "MTT1", u8 rank, rank x u32 LE extents, f32 LE values.
std::string encode_mtt1(const Tensor& tensor);
Tensor decode_mtt1(std::string_view bytes, std::string_view origin = "<memory>");

void write_mtt1(const std::filesystem::path& path, const Tensor& tensor);
Tensor read_mtt1(const std::filesystem::path& path);

// Sidecar metadata: one "key=value" per line, keys sorted.
using Metadata = std::map<std::string, std::string>;
void write_metadata(const std::filesystem::path& path, const Metadata& meta);
Metadata read_metadata(const std::filesystem::path& path);
const std::string& metadata_value(const Metadata& meta, const std::string& key, const std::filesystem::path& origin);

// FNV-1a, 64-bit.
std::uint64_t fnv1a64(std::string_view bytes);
std::string hex64(std::uint64_t value);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view contents);

}  // namespace mtb
