#include "pasr/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace pasr {

namespace {

constexpr double kFar = 1e30;

void require_same(const BinaryImage& a, const BinaryImage& b, const char* what) {
  if (a.extent != b.extent) {
    throw std::invalid_argument(std::string(what) + ": extent mismatch " + a.extent.str() + " vs " + b.extent.str());
  }
}

std::pair<std::size_t, std::size_t> overlap(const BinaryImage& p, const BinaryImage& g) {
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < p.data.size(); ++i) {
    const bool a = p.data[i] != 0, b = g.data[i] != 0;
    inter += a && b;
    uni += a || b;
  }
  return {inter, uni};
}

// Lower envelope of parabolas f(p) + a (q - p)^2 over one line.
void envelope_1d(const double* f, double* out, std::size_t n, double a, std::vector<std::size_t>& v,
                 std::vector<double>& z) {
  v.resize(n);
  z.resize(n + 1);
  std::size_t k = 0;
  v[0] = 0;
  z[0] = -std::numeric_limits<double>::infinity();
  z[1] = std::numeric_limits<double>::infinity();
  auto cross = [&](std::size_t q, std::size_t p) {
    const double dq = static_cast<double>(q), dp = static_cast<double>(p);
    return ((f[q] + a * dq * dq) - (f[p] + a * dp * dp)) / (2.0 * a * (dq - dp));
  };
  for (std::size_t q = 1; q < n; ++q) {
    double s = cross(q, v[k]);
    while (s <= z[k]) {
      --k;
      s = cross(q, v[k]);
    }
    ++k;
    v[k] = q;
    z[k] = s;
    z[k + 1] = std::numeric_limits<double>::infinity();
  }
  k = 0;
  for (std::size_t q = 0; q < n; ++q) {
    while (z[k + 1] < static_cast<double>(q)) ++k;
    const double d = static_cast<double>(q) - static_cast<double>(v[k]);
    out[q] = a * d * d + f[v[k]];
  }
}

}  // namespace

BinaryImage BinaryImage::of_class(const LabelMap& labels, int cls) {
  BinaryImage b{labels.extent(), std::vector<std::uint8_t>(labels.data().size())};
  for (std::size_t i = 0; i < b.data.size(); ++i) b.data[i] = labels[i] == cls ? 1 : 0;
  return b;
}

std::size_t BinaryImage::count() const {
  return static_cast<std::size_t>(std::count_if(data.begin(), data.end(), [](std::uint8_t v) { return v != 0; }));
}

double dice(const BinaryImage& pred, const BinaryImage& gt) {
  require_same(pred, gt, "dice");
  const std::size_t np = pred.count(), ng = gt.count();
  if (np + ng == 0) return 1.0;
  return 2.0 * static_cast<double>(overlap(pred, gt).first) / static_cast<double>(np + ng);
}

double jaccard(const BinaryImage& pred, const BinaryImage& gt) {
  require_same(pred, gt, "jaccard");
  const auto [inter, uni] = overlap(pred, gt);
  if (uni == 0) return 1.0;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

std::vector<std::size_t> boundary_voxels(const BinaryImage& m) {
  const Extent& e = m.extent;
  std::vector<std::size_t> out;
  auto inside = [&](std::size_t z, std::size_t y, std::size_t x) { return m.data[e.index(z, y, x)] != 0; };
  for (std::size_t z = 0; z < e.d; ++z)
    for (std::size_t y = 0; y < e.h; ++y)
      for (std::size_t x = 0; x < e.w; ++x) {
        if (!inside(z, y, x)) continue;
        // Raster borders count as outside.
        bool edge = y == 0 || y + 1 == e.h || x == 0 || x + 1 == e.w || !inside(z, y - 1, x) ||
                    !inside(z, y + 1, x) || !inside(z, y, x - 1) || !inside(z, y, x + 1);
        if (e.rank == 3) edge = edge || z == 0 || z + 1 == e.d || !inside(z - 1, y, x) || !inside(z + 1, y, x);
        if (edge) out.push_back(e.index(z, y, x));
      }
  return out;
}

std::vector<double> distance_to_sites(const BinaryImage& sites, const Spacing& spacing) {
  const Extent& e = sites.extent;
  std::vector<double> f(e.count());
  bool any = false;
  for (std::size_t i = 0; i < f.size(); ++i) {
    f[i] = sites.data[i] ? 0.0 : kFar;
    any = any || sites.data[i];
  }
  if (!any) return std::vector<double>(f.size(), std::numeric_limits<double>::infinity());

  std::vector<double> line, res;
  std::vector<std::size_t> v;
  std::vector<double> z;
  auto pass = [&](std::size_t len, std::size_t stride, std::size_t lines, auto start_of, double step) {
    if (len == 1) return;
    line.resize(len);
    res.resize(len);
    const double a = step * step;
    for (std::size_t l = 0; l < lines; ++l) {
      const std::size_t s0 = start_of(l);
      for (std::size_t i = 0; i < len; ++i) line[i] = f[s0 + i * stride];
      envelope_1d(line.data(), res.data(), len, a, v, z);
      for (std::size_t i = 0; i < len; ++i) f[s0 + i * stride] = res[i];
    }
  };
  // x lines
  pass(e.w, 1, e.d * e.h, [&](std::size_t l) { return l * e.w; }, spacing.w);
  // y lines
  pass(e.h, e.w, e.d * e.w, [&](std::size_t l) { return (l / e.w) * e.h * e.w + l % e.w; }, spacing.h);
  // z lines
  if (e.rank == 3) pass(e.d, e.h * e.w, e.h * e.w, [&](std::size_t l) { return l; }, spacing.d);

  for (auto& x : f) x = std::sqrt(x);
  return f;
}

std::vector<double> surface_distances(const BinaryImage& pred, const BinaryImage& gt, const Spacing& spacing) {
  require_same(pred, gt, "surface distance");
  if (pred.count() == 0 || gt.count() == 0) {
    throw EmptyMaskError("surface distance undefined: " + std::string(pred.count() == 0 ? "prediction" : "ground truth") +
                         " mask is empty");
  }
  const auto bp = boundary_voxels(pred);
  const auto bg = boundary_voxels(gt);
  auto as_image = [&](const std::vector<std::size_t>& idx) {
    BinaryImage b{pred.extent, std::vector<std::uint8_t>(pred.data.size(), 0)};
    for (auto i : idx) b.data[i] = 1;
    return b;
  };
  const auto to_gt = distance_to_sites(as_image(bg), spacing);
  const auto to_pred = distance_to_sites(as_image(bp), spacing);
  std::vector<double> out;
  out.reserve(bp.size() + bg.size());
  for (auto i : bp) out.push_back(to_gt[i]);
  for (auto i : bg) out.push_back(to_pred[i]);
  return out;
}

double percentile(std::vector<double> values, double q) {
  if (values.empty()) throw std::invalid_argument("percentile of an empty set");
  std::sort(values.begin(), values.end());
  const double pos = q / 100.0 * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return values[lo] + frac * (values[hi] - values[lo]);
}

double hd95(const BinaryImage& pred, const BinaryImage& gt, const Spacing& spacing) {
  return percentile(surface_distances(pred, gt, spacing), 95.0);
}

double asd(const BinaryImage& pred, const BinaryImage& gt, const Spacing& spacing) {
  const auto d = surface_distances(pred, gt, spacing);
  return std::accumulate(d.begin(), d.end(), 0.0) / static_cast<double>(d.size());
}

}  // namespace pasr
