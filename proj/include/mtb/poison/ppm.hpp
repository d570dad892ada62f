#pragma once

#include <filesystem>
#include <string_view>

#include "mtb/poison/dataset.hpp"

namespace mtb {

// Decodes a binary P6 image (maxval 1..255) into a 3 x H x W tensor in [0,1].
Tensor decode_ppm(std::string_view bytes, std::string_view origin);
std::string encode_ppm(const Tensor& image);

/// Loads every *.ppm under `dir`. Files in immediate subdirectories take the
/// lexicographic index of the subdirectory name as their content label; a
/// directory with no subdirectories is a single class. Ordering is
/// lexicographic by (class, file name).
CleanDataset ingest_ppm(const std::filesystem::path& dir, DatasetTag tag);

}  // namespace mtb
