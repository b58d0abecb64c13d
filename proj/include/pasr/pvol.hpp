#pragma once
// PVOL raster files.
//
// Header (32 bytes, little-endian):
//   "PVOL" | u16 version=1 | u8 dtype | u8 rank | 3 x u32 dims | 3 x f32 spacing
// followed by the row-major payload. dtype 0 = f32 intensities, 1 = u8 labels,
// 2 = f64 (parameter tensors in checkpoints).

#include <cstdint>
#include <filesystem>
#include <span>
#include <variant>
#include <vector>

#include "pasr/datamodel.hpp"

namespace pasr {

enum class PvolType : std::uint16_t { Real32 = 0, Label8 = 1, Real64 = 2 };

inline constexpr std::size_t kPvolHeaderBytes = 32;

void save_volume(const Volume& v, const std::filesystem::path& path);
void save_volume(const LabelMap& v, const std::filesystem::path& path);

// num_classes of a loaded label file is max(value) + 1 (at least 2).
std::variant<Volume, LabelMap> load_volume(const std::filesystem::path& path);

Volume load_image(const std::filesystem::path& path);
// Validates 0 <= v < num_classes.
LabelMap load_labels(const std::filesystem::path& path, int num_classes);

struct RealTensorFile {
  Extent extent;
  std::vector<double> values;
};

void save_tensor(std::span<const double> values, const Extent& extent, const std::filesystem::path& path);
RealTensorFile load_tensor(const std::filesystem::path& path);

}  // namespace pasr
