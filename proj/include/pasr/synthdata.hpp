#pragma once
// Synthetic ellipse datasets with an intensity shift on the unlabeled pool.

#include <cstdint>
#include <filesystem>
#include <random>
#include <utility>
#include <vector>

#include "pasr/datamodel.hpp"

namespace pasr {

struct SynthSpec {
  int image_size = 64;
  int num_classes = 2;
  int min_shapes = 1;
  int max_shapes = 2;
  // Semi-axis range as a fraction of image_size.
  double min_radius = 0.10;
  double max_radius = 0.22;
  // Mean intensity per class; empty selects an evenly spaced ramp in [0.2, 0.8].
  std::vector<double> class_means;
  double noise_sigma = 0.1;
  double shift_delta = 0.0;
  // Noise level of the unlabeled pool; negative reuses noise_sigma.
  double unlabeled_noise_sigma = -1.0;
  int labeled = 4;
  int unlabeled = 28;
  int val = 4;
  int test = 8;
  std::uint64_t seed = 0;

  void validate() const;
  double class_mean(int c) const;
};

struct Ellipse {
  double cy, cx;
  double ry, rx;
  double angle;
  bool contains(double y, double x) const;
};

// Draws one image and its label map. `shift` and `sigma` let the caller apply
// the unlabeled-pool distribution change.
std::pair<Volume, LabelMap> sample_image(const SynthSpec& spec, std::mt19937_64& rng, double shift = 0.0,
                                         double sigma = -1.0);

// Seed for sample `index` (global over roles: labeled, unlabeled, val, test).
std::uint64_t sample_seed(std::uint64_t seed, std::uint64_t index);

// Writes <out>/{labeled,unlabeled,val,test,hidden}/ PVOL files and
// <out>/manifest.txt. Unlabeled ground truth goes to hidden/ only.
DatasetSplit generate_dataset(const SynthSpec& spec, const std::filesystem::path& out_dir);

}  // namespace pasr
