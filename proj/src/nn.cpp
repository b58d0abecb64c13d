#include "pasr/nn.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace pasr {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

struct Offset {
  long dz, dy, dx;
};

std::vector<Offset> kernel_offsets(const ConvShape& s) {
  const long r = s.kernel / 2;
  std::vector<Offset> out;
  const long rz = s.rank == 3 ? r : 0;
  for (long dz = -rz; dz <= rz; ++dz)
    for (long dy = -r; dy <= r; ++dy)
      for (long dx = -r; dx <= r; ++dx) out.push_back({dz, dy, dx});
  return out;
}

// Gathers (forward) or scatters (backward) between an input tensor and the
// column matrix [in_channels * taps] x [positions].
template <bool Scatter>
void im2col_pass(std::conditional_t<Scatter, Tensor&, const Tensor&> img, const ConvShape& s,
                 std::conditional_t<Scatter, const double*, double*> col) {
  const Extent& e = img.extent;
  const long D = static_cast<long>(e.d), H = static_cast<long>(e.h), W = static_cast<long>(e.w);
  const std::size_t P = e.count();
  const auto offsets = kernel_offsets(s);
  for (std::size_t ci = 0; ci < s.in_channels; ++ci) {
    auto* plane = img.channel(ci);
    for (std::size_t t = 0; t < offsets.size(); ++t) {
      const auto [dz, dy, dx] = offsets[t];
      auto* row = col + (ci * offsets.size() + t) * P;
      const long x0 = std::max(0L, -dx);
      const long x1 = std::min(W, W - dx);
      for (long z = 0; z < D; ++z) {
        const long zz = z + dz;
        for (long y = 0; y < H; ++y) {
          const long yy = y + dy;
          auto* r = row + (z * H + y) * W;
          if (zz < 0 || zz >= D || yy < 0 || yy >= H) {
            if constexpr (!Scatter) std::fill(r, r + W, 0.0);
            continue;
          }
          auto* src = plane + (zz * H + yy) * W;
          if constexpr (Scatter) {
            for (long x = x0; x < x1; ++x) src[x + dx] += r[x];
          } else {
            for (long x = 0; x < x0; ++x) r[x] = 0.0;
            for (long x = x0; x < x1; ++x) r[x] = src[x + dx];
            for (long x = std::max(x0, x1); x < W; ++x) r[x] = 0.0;
          }
        }
      }
    }
  }
}

void check_conv(const Tensor& in, const ConvShape& s, std::size_t wcount, std::size_t bcount) {
  if (in.channels != s.in_channels) {
    throw std::invalid_argument("conv: input has " + std::to_string(in.channels) + " channels, expected " +
                                std::to_string(s.in_channels));
  }
  if (in.extent.rank != s.rank) throw std::invalid_argument("conv: rank mismatch");
  if (wcount != s.weight_count()) throw std::invalid_argument("conv: weight size mismatch");
  if (bcount != s.out_channels) throw std::invalid_argument("conv: bias size mismatch");
}

}  // namespace

Tensor Tensor::from_volume(const Volume& v) {
  Tensor t(1, v.extent());
  std::copy(v.data().begin(), v.data().end(), t.data.begin());
  return t;
}

Tensor conv_forward(const Tensor& in, const ConvShape& s, std::span<const double> weight,
                    std::span<const double> bias) {
  check_conv(in, s, weight.size(), bias.size());
  const std::size_t P = in.plane();
  const std::size_t K = s.in_channels * s.taps();
  Tensor out(s.out_channels, in.extent);
  MapMat o(out.data.data(), static_cast<Eigen::Index>(s.out_channels), static_cast<Eigen::Index>(P));
  ConstMapMat w(weight.data(), static_cast<Eigen::Index>(s.out_channels), static_cast<Eigen::Index>(K));
  if (s.kernel == 1) {
    ConstMapMat x(in.data.data(), static_cast<Eigen::Index>(K), static_cast<Eigen::Index>(P));
    o.noalias() = w * x;
  } else {
    std::vector<double> col(K * P);
    im2col_pass<false>(in, s, col.data());
    ConstMapMat x(col.data(), static_cast<Eigen::Index>(K), static_cast<Eigen::Index>(P));
    o.noalias() = w * x;
  }
  for (std::size_t c = 0; c < s.out_channels; ++c) o.row(static_cast<Eigen::Index>(c)).array() += bias[c];
  return out;
}

void conv_backward(const Tensor& in, const ConvShape& s, std::span<const double> weight, const Tensor& dout,
                   std::span<double> dweight, std::span<double> dbias, Tensor* din) {
  check_conv(in, s, weight.size(), dbias.size());
  const std::size_t P = in.plane();
  const std::size_t K = s.in_channels * s.taps();
  ConstMapMat g(dout.data.data(), static_cast<Eigen::Index>(s.out_channels), static_cast<Eigen::Index>(P));
  ConstMapMat w(weight.data(), static_cast<Eigen::Index>(s.out_channels), static_cast<Eigen::Index>(K));
  MapMat dw(dweight.data(), static_cast<Eigen::Index>(s.out_channels), static_cast<Eigen::Index>(K));
  for (std::size_t c = 0; c < s.out_channels; ++c) dbias[c] += g.row(static_cast<Eigen::Index>(c)).sum();

  if (s.kernel == 1) {
    ConstMapMat x(in.data.data(), static_cast<Eigen::Index>(K), static_cast<Eigen::Index>(P));
    dw.noalias() += g * x.transpose();
    if (din) {
      *din = Tensor(s.in_channels, in.extent);
      MapMat dx(din->data.data(), static_cast<Eigen::Index>(K), static_cast<Eigen::Index>(P));
      dx.noalias() = w.transpose() * g;
    }
    return;
  }
  std::vector<double> col(K * P);
  im2col_pass<false>(in, s, col.data());
  {
    ConstMapMat x(col.data(), static_cast<Eigen::Index>(K), static_cast<Eigen::Index>(P));
    dw.noalias() += g * x.transpose();
  }
  if (din) {
    MapMat dcol(col.data(), static_cast<Eigen::Index>(K), static_cast<Eigen::Index>(P));
    dcol.noalias() = w.transpose() * g;
    *din = Tensor(s.in_channels, in.extent);
    im2col_pass<true>(*din, s, col.data());
  }
}

void relu_inplace(Tensor& t) {
  for (auto& v : t.data) v = v > 0.0 ? v : 0.0;
}

void relu_backward(const Tensor& out, Tensor& dout) {
  for (std::size_t i = 0; i < dout.data.size(); ++i) {
    if (!(out.data[i] > 0.0)) dout.data[i] = 0.0;
  }
}

Extent halve(const Extent& e) {
  Extent out = e;
  if (e.rank == 3) out.d = e.d / 2;
  out.h = e.h / 2;
  out.w = e.w / 2;
  return out;
}

PoolResult maxpool2(const Tensor& in) {
  const Extent& e = in.extent;
  const Extent o = halve(e);
  const std::size_t kz = e.rank == 3 ? 2 : 1;
  PoolResult r{Tensor(in.channels, o), std::vector<std::uint32_t>(in.channels * o.count())};
  for (std::size_t c = 0; c < in.channels; ++c) {
    const double* src = in.channel(c);
    double* dst = r.out.channel(c);
    for (std::size_t z = 0; z < o.d; ++z)
      for (std::size_t y = 0; y < o.h; ++y)
        for (std::size_t x = 0; x < o.w; ++x) {
          std::size_t best = e.index(z * kz, y * 2, x * 2);
          for (std::size_t a = 0; a < kz; ++a)
            for (std::size_t b = 0; b < 2; ++b)
              for (std::size_t q = 0; q < 2; ++q) {
                const std::size_t i = e.index(z * kz + a, y * 2 + b, x * 2 + q);
                if (src[i] > src[best]) best = i;
              }
          const std::size_t oi = o.index(z, y, x);
          dst[oi] = src[best];
          r.argmax[c * o.count() + oi] = static_cast<std::uint32_t>(best);
        }
  }
  return r;
}

Tensor maxpool2_backward(const PoolResult& pool, const Tensor& dout, const Tensor& like_input) {
  Tensor din(like_input.channels, like_input.extent);
  const std::size_t n = dout.plane();
  for (std::size_t c = 0; c < dout.channels; ++c) {
    double* d = din.channel(c);
    const double* g = dout.channel(c);
    for (std::size_t i = 0; i < n; ++i) d[pool.argmax[c * n + i]] += g[i];
  }
  return din;
}

Tensor resize_nearest(const Tensor& in, const Extent& target) {
  const Extent& s = in.extent;
  Tensor out(in.channels, target);
  for (std::size_t c = 0; c < in.channels; ++c) {
    const double* src = in.channel(c);
    double* dst = out.channel(c);
    for (std::size_t z = 0; z < target.d; ++z) {
      const std::size_t sz = z * s.d / target.d;
      for (std::size_t y = 0; y < target.h; ++y) {
        const std::size_t sy = y * s.h / target.h;
        for (std::size_t x = 0; x < target.w; ++x) dst[target.index(z, y, x)] = src[s.index(sz, sy, x * s.w / target.w)];
      }
    }
  }
  return out;
}

Tensor resize_nearest_backward(const Tensor& dout, const Extent& source) {
  const Extent& t = dout.extent;
  Tensor din(dout.channels, source);
  for (std::size_t c = 0; c < dout.channels; ++c) {
    const double* g = dout.channel(c);
    double* d = din.channel(c);
    for (std::size_t z = 0; z < t.d; ++z) {
      const std::size_t sz = z * source.d / t.d;
      for (std::size_t y = 0; y < t.h; ++y) {
        const std::size_t sy = y * source.h / t.h;
        for (std::size_t x = 0; x < t.w; ++x) d[source.index(sz, sy, x * source.w / t.w)] += g[t.index(z, y, x)];
      }
    }
  }
  return din;
}

Tensor upsample2(const Tensor& in) {
  Extent big = in.extent;
  if (big.rank == 3) big.d *= 2;
  big.h *= 2;
  big.w *= 2;
  return resize_nearest(in, big);
}

Tensor upsample2_backward(const Tensor& dout, const Extent& small) { return resize_nearest_backward(dout, small); }

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  if (!(a.extent == b.extent)) throw std::invalid_argument("concat: extent mismatch");
  Tensor out(a.channels + b.channels, a.extent);
  std::copy(a.data.begin(), a.data.end(), out.data.begin());
  std::copy(b.data.begin(), b.data.end(), out.data.begin() + static_cast<std::ptrdiff_t>(a.data.size()));
  return out;
}

std::pair<Tensor, Tensor> split_channels(const Tensor& t, std::size_t first) {
  Tensor a(first, t.extent);
  Tensor b(t.channels - first, t.extent);
  const auto cut = t.data.begin() + static_cast<std::ptrdiff_t>(a.data.size());
  std::copy(t.data.begin(), cut, a.data.begin());
  std::copy(cut, t.data.end(), b.data.begin());
  return {std::move(a), std::move(b)};
}

Tensor softmax_channels(const Tensor& logits) {
  Tensor p(logits.channels, logits.extent);
  const std::size_t n = logits.plane();
  for (std::size_t i = 0; i < n; ++i) {
    double m = logits.at(0, i);
    for (std::size_t c = 1; c < logits.channels; ++c) m = std::max(m, logits.at(c, i));
    double z = 0.0;
    for (std::size_t c = 0; c < logits.channels; ++c) {
      const double e = std::exp(logits.at(c, i) - m);
      p.at(c, i) = e;
      z += e;
    }
    for (std::size_t c = 0; c < logits.channels; ++c) p.at(c, i) /= z;
  }
  return p;
}

}  // namespace pasr
