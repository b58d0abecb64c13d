#include "pasr/mixing.hpp"

#include <cmath>

namespace pasr {

namespace {

template <typename T>
std::vector<T> select(const std::vector<T>& keep, const std::vector<T>& paste, const Mask& s) {
  std::vector<T> out(keep.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = s[i] ? keep[i] : paste[i];
  return out;
}

void check_same(const Extent& a, const Extent& b, const char* what) {
  if (!(a == b)) throw ValidationError(std::string(what) + ": extent mismatch " + a.str() + " vs " + b.str());
}

}  // namespace

Extent mask_block_extent(const Extent& extent, double mask_ratio) {
  if (!(mask_ratio > 0.0 && mask_ratio < 1.0)) throw ValidationError("mask_ratio must lie in (0, 1)");
  auto block = [&](std::size_t dim) {
    const auto b = static_cast<long long>(std::llround(mask_ratio * static_cast<double>(dim)));
    if (b < 1) throw ValidationError("mask block extent < 1 for axis of size " + std::to_string(dim));
    return static_cast<std::size_t>(b);
  };
  Extent out = extent;
  if (extent.rank == 3) out.d = block(extent.d);
  out.h = block(extent.h);
  out.w = block(extent.w);
  return out;
}

Mask generate_mask(const Extent& extent, double mask_ratio, std::mt19937_64& rng) {
  const Extent block = mask_block_extent(extent, mask_ratio);
  auto offset = [&](std::size_t dim, std::size_t b) {
    std::uniform_int_distribution<std::size_t> u(0, dim - b);
    return u(rng);
  };
  const std::size_t oz = extent.rank == 3 ? offset(extent.d, block.d) : 0;
  const std::size_t oy = offset(extent.h, block.h);
  const std::size_t ox = offset(extent.w, block.w);

  std::vector<std::uint8_t> data(extent.count(), 1);
  for (std::size_t z = oz; z < oz + block.d; ++z) {
    for (std::size_t y = oy; y < oy + block.h; ++y) {
      for (std::size_t x = ox; x < ox + block.w; ++x) data[extent.index(z, y, x)] = 0;
    }
  }
  return Mask(extent, std::move(data));
}

std::pair<Volume, Volume> mix_images(const Volume& x_a_l, const Volume& x_b_l, const Volume& x_s_u,
                                     const Volume& x_t_u, const Mask& s) {
  for (const Volume* v : {&x_a_l, &x_b_l, &x_s_u, &x_t_u}) check_same(v->extent(), s.extent(), "mix_images");
  Volume p(s.extent(), select(x_b_l.data(), x_t_u.data(), s), x_b_l.spacing());
  Volume q(s.extent(), select(x_s_u.data(), x_a_l.data(), s), x_s_u.spacing());
  return {std::move(p), std::move(q)};
}

std::pair<LabelMap, LabelMap> mix_labels(const LabelMap& y_a_l, const LabelMap& y_b_l, const LabelMap& l_s_p,
                                         const LabelMap& l_t_p, const Mask& s) {
  const int m = y_a_l.num_classes();
  for (const LabelMap* l : {&y_a_l, &y_b_l, &l_s_p, &l_t_p}) {
    check_same(l->extent(), s.extent(), "mix_labels");
    if (l->num_classes() != m) throw ValidationError("mix_labels: num_classes mismatch");
  }
  LabelMap p(s.extent(), select(y_b_l.data(), l_t_p.data(), s), m, y_b_l.spacing());
  LabelMap q(s.extent(), select(l_s_p.data(), y_a_l.data(), s), m, l_s_p.spacing());
  return {std::move(p), std::move(q)};
}

std::pair<MixedSample, MixedSample> bidirectional_mix(const MixSources& src, const Mask& s) {
  auto [xp, xq] = mix_images(src.a->image, src.b->image, src.s->image, src.t->image, s);
  auto [lp, lq] = mix_labels(src.a->label, src.b->label, *src.pseudo_s, *src.pseudo_t, s);
  MixedSample p{std::move(xp), std::move(lp), s, src.t->id, src.b->id, MixDirection::UnlabeledIntoLabeled};
  MixedSample q{std::move(xq), std::move(lq), s, src.a->id, src.s->id, MixDirection::LabeledIntoUnlabeled};
  return {std::move(p), std::move(q)};
}

}  // namespace pasr
