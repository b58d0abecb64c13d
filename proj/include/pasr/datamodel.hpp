#pragma once
// Core raster types and dataset containers.
//
// Rasters are single-channel and stored row-major with the last axis varying
// fastest. Rank-2 rasters are represented internally with depth = 1 so that
// all spatial code can iterate (d, h, w) uniformly.

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace pasr {

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Extent {
  int rank = 2;
  std::size_t d = 1;
  std::size_t h = 1;
  std::size_t w = 1;

  static Extent plane(std::size_t rows, std::size_t cols) { return {2, 1, rows, cols}; }
  static Extent volume(std::size_t depth, std::size_t rows, std::size_t cols) {
    return {3, depth, rows, cols};
  }

  std::size_t count() const { return d * h * w; }
  std::size_t index(std::size_t z, std::size_t y, std::size_t x) const { return (z * h + y) * w + x; }
  bool operator==(const Extent&) const = default;

  // Extents in on-disk order (slowest first), trailing unused entries = 1.
  std::array<std::uint32_t, 3> disk_dims() const;
  static Extent from_disk(int rank, const std::array<std::uint32_t, 3>& dims);
  std::string str() const;
};

// Per-axis physical voxel size, indexed like Extent's (d, h, w).
struct Spacing {
  float d = 1.0f;
  float h = 1.0f;
  float w = 1.0f;
  bool operator==(const Spacing&) const = default;
};

class Volume {
 public:
  Volume() = default;
  Volume(Extent extent, std::vector<float> data, Spacing spacing = {});

  const Extent& extent() const { return extent_; }
  const Spacing& spacing() const { return spacing_; }
  const std::vector<float>& data() const { return data_; }
  float operator[](std::size_t i) const { return data_[i]; }
  bool operator==(const Volume&) const = default;

 private:
  Extent extent_;
  Spacing spacing_;
  std::vector<float> data_;
};

class LabelMap {
 public:
  LabelMap() = default;
  LabelMap(Extent extent, std::vector<std::uint8_t> data, int num_classes, Spacing spacing = {});

  const Extent& extent() const { return extent_; }
  const Spacing& spacing() const { return spacing_; }
  const std::vector<std::uint8_t>& data() const { return data_; }
  int num_classes() const { return num_classes_; }
  std::uint8_t operator[](std::size_t i) const { return data_[i]; }
  bool operator==(const LabelMap&) const = default;

 private:
  Extent extent_;
  Spacing spacing_;
  std::vector<std::uint8_t> data_;
  int num_classes_ = 2;
};

// Binary copy-paste mask. Voxels equal to 1 are kept from the background
// source; the 0-region is the pasted block.
class Mask {
 public:
  Mask() = default;
  Mask(Extent extent, std::vector<std::uint8_t> data);

  static Mask filled(Extent extent, std::uint8_t value);

  const Extent& extent() const { return extent_; }
  const std::vector<std::uint8_t>& data() const { return data_; }
  std::uint8_t operator[](std::size_t i) const { return data_[i]; }
  std::size_t count_ones() const;
  Mask inverted() const;
  bool operator==(const Mask&) const = default;

 private:
  Extent extent_;
  std::vector<std::uint8_t> data_;
};

struct LabeledSample {
  std::string id;
  Volume image;
  LabelMap label;
};

struct UnlabeledSample {
  std::string id;
  Volume image;
};

struct DatasetSplit {
  int num_classes = 2;
  std::vector<LabeledSample> labeled;
  std::vector<UnlabeledSample> unlabeled;
  std::vector<LabeledSample> validation;
  std::vector<LabeledSample> test;

  // Checks shared extent/spacing/num_classes and id disjointness.
  void validate() const;
  const Volume& any_image() const;
};

// Manifest lines: `num_classes <M>` once, then `<role> <id> <image> [<label>]`
// with role in {labeled, unlabeled, val, test}. Relative paths resolve against
// the manifest's directory.
DatasetSplit load_manifest(const std::filesystem::path& path);

}  // namespace pasr
