#include "mtb/numerics/mtt1.hpp"

#include <bit>
#include <fstream>
#include <sstream>

#include <fmt/format.h>

#include "mtb/errors.hpp"

namespace mtb {

namespace {

constexpr std::string_view kMagic = "MTT1";

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

std::uint32_t get_u32(std::string_view in, std::size_t pos) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  return v;
}

}  // namespace

std::string encode_mtt1(const Tensor& tensor) {
  if (tensor.rank() == 0 || tensor.rank() > 255) {
    throw ShapeError(fmt::format("MTT1 supports rank 1..255, got {}", tensor.rank()));
  }
  std::string out;
  out.reserve(5 + 4 * tensor.rank() + 4 * tensor.size());
  out.append(kMagic);
  out.push_back(static_cast<char>(tensor.rank()));
  for (std::size_t e : tensor.shape()) {
    if (e > 0xFFFFFFFFu) throw ShapeError("MTT1 extent exceeds 32 bits");
    put_u32(out, static_cast<std::uint32_t>(e));
  }
  for (float v : tensor) put_u32(out, std::bit_cast<std::uint32_t>(v));
  return out;
}

Tensor decode_mtt1(std::string_view bytes, std::string_view origin) {
  if (bytes.size() < 5 || bytes.substr(0, 4) != kMagic) {
    throw IoError(fmt::format("{}: not an MTT1 tensor (bad magic)", origin));
  }
  const std::size_t rank = static_cast<unsigned char>(bytes[4]);
  if (rank == 0) throw IoError(fmt::format("{}: MTT1 rank must be positive", origin));
  std::size_t pos = 5;
  if (bytes.size() < pos + 4 * rank) throw IoError(fmt::format("{}: truncated MTT1 header", origin));
  Shape shape(rank);
  for (std::size_t a = 0; a < rank; ++a, pos += 4) {
    shape[a] = get_u32(bytes, pos);
    if (shape[a] == 0) throw IoError(fmt::format("{}: MTT1 extent {} is zero", origin, a));
  }
  const std::size_t n = shape_size(shape);
  if (bytes.size() != pos + 4 * n) {
    throw IoError(fmt::format("{}: MTT1 payload has {} bytes, shape {} needs {}", origin, bytes.size() - pos,
                              shape_to_string(shape), 4 * n));
  }
  std::vector<float> values(n);
  for (std::size_t i = 0; i < n; ++i, pos += 4) values[i] = std::bit_cast<float>(get_u32(bytes, pos));
  return Tensor(std::move(shape), std::move(values));
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(fmt::format("cannot open {}", path.string()));
  std::ostringstream ss;
  ss << in.rdbuf();
  return std::move(ss).str();
}

void write_file(const std::filesystem::path& path, std::string_view contents) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError(fmt::format("cannot write {}", path.string()));
  out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
  if (!out) throw IoError(fmt::format("write failed for {}", path.string()));
}

void write_mtt1(const std::filesystem::path& path, const Tensor& tensor) { write_file(path, encode_mtt1(tensor)); }

Tensor read_mtt1(const std::filesystem::path& path) { return decode_mtt1(read_file(path), path.string()); }

void write_metadata(const std::filesystem::path& path, const Metadata& meta) {
  std::string text;
  for (const auto& [k, v] : meta) {
    if (k.find_first_of("=\n") != std::string::npos || v.find('\n') != std::string::npos) {
      throw IoError(fmt::format("metadata entry '{}' contains a reserved character", k));
    }
    text += fmt::format("{}={}\n", k, v);
  }
  write_file(path, text);
}

Metadata read_metadata(const std::filesystem::path& path) {
  std::istringstream in(read_file(path));
  Metadata meta;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw IoError(fmt::format("{}:{}: expected key=value", path.string(), lineno));
    meta[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return meta;
}

const std::string& metadata_value(const Metadata& meta, const std::string& key, const std::filesystem::path& origin) {
  auto it = meta.find(key);
  if (it == meta.end()) throw IoError(fmt::format("{}: missing metadata key '{}'", origin.string(), key));
  return it->second;
}

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : bytes) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t value) { return fmt::format("{:016x}", value); }

}  // namespace mtb
