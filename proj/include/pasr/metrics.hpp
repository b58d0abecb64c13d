#pragma once
// Overlap and surface-distance metrics on binary rasters.

#include <stdexcept>
#include <vector>

#include "pasr/datamodel.hpp"

namespace pasr {

// Raised when a surface metric is asked for with an empty mask.
class EmptyMaskError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Binary raster with values 0/1; any non-zero counts as inside.
struct BinaryImage {
  Extent extent;
  std::vector<std::uint8_t> data;

  static BinaryImage of_class(const LabelMap& labels, int cls);
  std::size_t count() const;
};

double dice(const BinaryImage& pred, const BinaryImage& gt);
double jaccard(const BinaryImage& pred, const BinaryImage& gt);

// Voxels inside the mask with at least one face neighbour outside it (or on
// the raster border).
std::vector<std::size_t> boundary_voxels(const BinaryImage& m);

// Euclidean distance (physical units) from every voxel to the nearest voxel of
// `sites`. Exact separable transform; +inf when sites is empty.
std::vector<double> distance_to_sites(const BinaryImage& sites, const Spacing& spacing);

// Pooled directed boundary-to-boundary distances, pred->gt then gt->pred.
std::vector<double> surface_distances(const BinaryImage& pred, const BinaryImage& gt, const Spacing& spacing);

// q-th percentile (0..100), linear interpolation between order statistics.
double percentile(std::vector<double> values, double q);

double hd95(const BinaryImage& pred, const BinaryImage& gt, const Spacing& spacing = {});
double asd(const BinaryImage& pred, const BinaryImage& gt, const Spacing& spacing = {});

}  // namespace pasr
