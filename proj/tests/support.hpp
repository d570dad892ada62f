#pragma once

#include <filesystem>
#include <random>
#include <string>

#include "mtb/numerics/rng.hpp"
#include "mtb/numerics/tensor.hpp"

namespace mtb::test {

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& name) {
    path_ = std::filesystem::temp_directory_path() /
            ("mtb_" + name + "_" + std::to_string(std::random_device{}()));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& leaf) const { return path_ / leaf; }

 private:
  std::filesystem::path path_;
};

template <typename T>
BasicTensor<T> random_tensor(const Shape& shape, std::uint64_t seed, double lo = 0.0, double hi = 1.0) {
  BasicTensor<T> t(shape);
  Rng rng(seed);
  for (auto& v : t) v = static_cast<T>(rng.uniform(lo, hi));
  return t;
}

inline std::filesystem::path source_dir() { return MTB_SOURCE_DIR; }

}  // namespace mtb::test
