#pragma once
// Dense activation tensors and the convolutional building blocks of the
// segmentation network, each with an explicit backward pass.
//
// Layout is [channel][d][h][w]. Rank-2 tensors use d = 1 and 2D kernels; rank-3
// tensors use cubic kernels and pool along depth as well.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "pasr/datamodel.hpp"

namespace pasr {

struct Tensor {
  std::size_t channels = 0;
  Extent extent;
  std::vector<double> data;

  Tensor() = default;
  Tensor(std::size_t c, Extent e) : channels(c), extent(e), data(c * e.count(), 0.0) {}

  static Tensor from_volume(const Volume& v);

  std::size_t plane() const { return extent.count(); }
  double* channel(std::size_t c) { return data.data() + c * plane(); }
  const double* channel(std::size_t c) const { return data.data() + c * plane(); }
  double& at(std::size_t c, std::size_t i) { return data[c * plane() + i]; }
  double at(std::size_t c, std::size_t i) const { return data[c * plane() + i]; }
};

struct ConvShape {
  std::size_t in_channels;
  std::size_t out_channels;
  int kernel;  // 1 or 3 (odd, same padding)
  int rank;

  std::size_t taps() const { return rank == 3 ? std::size_t(kernel) * kernel * kernel : std::size_t(kernel) * kernel; }
  std::size_t weight_count() const { return out_channels * in_channels * taps(); }
};

// out = W * im2col(in) + b, zero padded so spatial extent is preserved.
Tensor conv_forward(const Tensor& in, const ConvShape& shape, std::span<const double> weight,
                    std::span<const double> bias);

// Accumulates into dweight / dbias; writes din when non-null.
void conv_backward(const Tensor& in, const ConvShape& shape, std::span<const double> weight, const Tensor& dout,
                   std::span<double> dweight, std::span<double> dbias, Tensor* din);

void relu_inplace(Tensor& t);
// Zeroes dout where the relu output was not positive.
void relu_backward(const Tensor& out, Tensor& dout);

struct PoolResult {
  Tensor out;
  std::vector<std::uint32_t> argmax;  // flat input index per output element
};

PoolResult maxpool2(const Tensor& in);
Tensor maxpool2_backward(const PoolResult& pool, const Tensor& dout, const Tensor& like_input);

Tensor upsample2(const Tensor& in);
Tensor upsample2_backward(const Tensor& dout, const Extent& small);

// Nearest-neighbour resize from a coarse grid to `target`.
Tensor resize_nearest(const Tensor& in, const Extent& target);
Tensor resize_nearest_backward(const Tensor& dout, const Extent& source);

Tensor concat_channels(const Tensor& a, const Tensor& b);
std::pair<Tensor, Tensor> split_channels(const Tensor& t, std::size_t first);

Extent halve(const Extent& e);

// Per-voxel softmax across channels.
Tensor softmax_channels(const Tensor& logits);

}  // namespace pasr
