#pragma once
// Bidirectional copy-paste.
//
// The mask S keeps the background source where S = 1; its 0-block is the
// region cropped out of the other source and pasted in:
//   x_mix_p = x_b^l * S + x_t^u * (1 - S)   (unlabeled block into labeled image)
//   x_mix_q = x_s^u * S + x_a^l * (1 - S)   (labeled block into unlabeled image)
// and the same selection applies to labels / pseudo-labels.

#include <random>
#include <string>
#include <utility>

#include "pasr/datamodel.hpp"

namespace pasr {

enum class MixDirection {
  UnlabeledIntoLabeled,  // p: labeled background, unlabeled block
  LabeledIntoUnlabeled,  // q: unlabeled background, labeled block
};

struct MixedSample {
  Volume image;
  LabelMap label;
  Mask mask;
  std::string foreground_id;  // source of the pasted block
  std::string background_id;
  MixDirection direction;
};

// Zero-block of per-axis extent round(mask_ratio * dim) at a uniformly random
// offset; all other voxels are 1.
Mask generate_mask(const Extent& extent, double mask_ratio, std::mt19937_64& rng);

// Per-axis block extent for a given ratio (d, h, w); rank-2 keeps d = 1.
Extent mask_block_extent(const Extent& extent, double mask_ratio);

std::pair<Volume, Volume> mix_images(const Volume& x_a_l, const Volume& x_b_l, const Volume& x_s_u,
                                     const Volume& x_t_u, const Mask& s);

std::pair<LabelMap, LabelMap> mix_labels(const LabelMap& y_a_l, const LabelMap& y_b_l, const LabelMap& l_s_p,
                                         const LabelMap& l_t_p, const Mask& s);

struct MixSources {
  const LabeledSample* a;
  const LabeledSample* b;
  const UnlabeledSample* s;
  const UnlabeledSample* t;
  const LabelMap* pseudo_s;
  const LabelMap* pseudo_t;
};

// Returns {p, q}.
std::pair<MixedSample, MixedSample> bidirectional_mix(const MixSources& src, const Mask& s);

}  // namespace pasr
