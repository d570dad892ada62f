#include "mtb/poison/ppm.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>

#include <fmt/format.h>

#include "mtb/errors.hpp"
#include "mtb/numerics/mtt1.hpp"

namespace mtb {

namespace fs = std::filesystem;

namespace {

class HeaderReader {
 public:
  HeaderReader(std::string_view bytes, std::string_view origin) : bytes_(bytes), origin_(origin) {}

  void skip_space_and_comments() {
    while (pos_ < bytes_.size()) {
      const char c = bytes_[pos_];
      if (c == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else if (std::isspace(static_cast<unsigned char>(c))) {
        ++pos_;
      } else {
        break;
      }
    }
  }

  unsigned long number(const char* what) {
    skip_space_and_comments();
    const std::size_t start = pos_;
    while (pos_ < bytes_.size() && std::isdigit(static_cast<unsigned char>(bytes_[pos_]))) ++pos_;
    if (start == pos_ || pos_ - start > 9) throw IoError(fmt::format("{}: malformed PPM header ({})", origin_, what));
    return std::stoul(std::string(bytes_.substr(start, pos_ - start)));
  }

  std::size_t& pos() { return pos_; }

 private:
  std::string_view bytes_;
  std::string_view origin_;
  std::size_t pos_ = 0;
};

}  // namespace

Tensor decode_ppm(std::string_view bytes, std::string_view origin) {
  if (bytes.size() < 2 || bytes.substr(0, 2) != "P6") {
    throw IoError(fmt::format("{}: not a binary PPM (missing P6 magic)", origin));
  }
  HeaderReader reader(bytes.substr(2), origin);
  const unsigned long width = reader.number("width");
  const unsigned long height = reader.number("height");
  const unsigned long maxval = reader.number("maxval");
  if (width == 0 || height == 0) throw IoError(fmt::format("{}: PPM has zero size", origin));
  if (maxval == 0 || maxval > 255) throw IoError(fmt::format("{}: PPM maxval {} is not 8-bit", origin, maxval));
  std::size_t pos = 2 + reader.pos();
  if (pos >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[pos]))) {
    throw IoError(fmt::format("{}: malformed PPM header (no separator before raster)", origin));
  }
  ++pos;
  const std::size_t pixels = width * height;
  if (bytes.size() - pos != 3 * pixels) {
    throw IoError(fmt::format("{}: PPM raster has {} bytes, expected {}", origin, bytes.size() - pos, 3 * pixels));
  }
  Tensor image({3, height, width});
  for (std::size_t p = 0; p < pixels; ++p) {
    for (std::size_t c = 0; c < 3; ++c) {
      const auto v = static_cast<unsigned char>(bytes[pos + 3 * p + c]);
      if (v > maxval) throw IoError(fmt::format("{}: sample {} exceeds maxval {}", origin, v, maxval));
      image[c * pixels + p] = static_cast<float>(v) / static_cast<float>(maxval);
    }
  }
  return image;
}

std::string encode_ppm(const Tensor& image) {
  if (image.rank() != 3 || image.extent(0) != 3) throw ShapeError("encode_ppm expects a 3 x H x W image");
  const std::size_t h = image.extent(1), w = image.extent(2), pixels = h * w;
  std::string out = fmt::format("P6\n{} {}\n255\n", w, h);
  for (std::size_t p = 0; p < pixels; ++p) {
    for (std::size_t c = 0; c < 3; ++c) {
      const float v = std::clamp(image[c * pixels + p], 0.0f, 1.0f);
      out.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0f))));
    }
  }
  return out;
}

namespace {

std::vector<fs::path> sorted_ppm_files(const fs::path& dir) {
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".ppm") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  return files;
}

}  // namespace

CleanDataset ingest_ppm(const fs::path& dir, DatasetTag tag) {
  if (!fs::is_directory(dir)) throw IoError(fmt::format("{}: not a directory", dir.string()));
  std::vector<fs::path> class_dirs;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_directory()) class_dirs.push_back(entry.path());
  }
  std::sort(class_dirs.begin(), class_dirs.end());
  if (class_dirs.empty()) class_dirs.push_back(dir);

  CleanDataset out;
  out.tag = tag;
  out.source = "ppm:" + dir.string();
  out.num_classes = static_cast<int>(class_dirs.size());
  for (std::size_t label = 0; label < class_dirs.size(); ++label) {
    for (const fs::path& file : sorted_ppm_files(class_dirs[label])) {
      Tensor image = decode_ppm(read_file(file), file.string());
      if (!out.images.empty() && image.shape() != out.images.front().shape()) {
        throw IoError(fmt::format("{}: dimensions {} differ from {}", file.string(), shape_to_string(image.shape()),
                                  shape_to_string(out.images.front().shape())));
      }
      out.images.push_back(std::move(image));
      out.content_labels.push_back(static_cast<int>(label));
      out.provenance.push_back(fnv1a64(fs::weakly_canonical(file).string()));
    }
  }
  if (out.images.empty()) throw IoError(fmt::format("{}: no images found", dir.string()));
  return out;
}

}  // namespace mtb
