#pragma once
// Desk-scale U-Net with a graph branch at a chosen encoder layer.
//
// Encoder level k (1-based) max-pools (k > 1) then applies two 3x3 conv + relu
// stages with base_channels * 2^(k-1) channels. The decoder upsamples
// (nearest), concatenates the skip and applies two conv + relu stages; a 1x1
// conv yields linear logits.
//
// With the graph branch on, the tap-layer output is pooled to a grid of nodes
// G, turned into the similarity matrix A, aggregated by the GCN into G-hat and
// clustered by the soft-max head. With fusion on, G-hat is projected back to
// the tap channel count, upsampled to the tap extent and added to the tap
// features before the rest of the network consumes them.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "pasr/config.hpp"
#include "pasr/graph.hpp"
#include "pasr/nn.hpp"

namespace pasr {

struct ArchConfig {
  int rank = 2;
  int encoder_depth = 5;
  int base_channels = 8;
  int num_classes = 2;
  int tap_layer = 1;
  bool graph_fusion = true;
  int num_clusters = 2;
  int cluster_hidden = 16;

  static ArchConfig from_run(const RunConfig& cfg, int num_classes, int rank = 2);
  void validate() const;
  std::size_t channels(int level) const;  // 1-based level
  std::size_t tap_channels() const { return channels(tap_layer); }
  // Throws std::invalid_argument when an active axis is not divisible by
  // 2^(encoder_depth - 1).
  void check_input(const Extent& e) const;
  bool operator==(const ArchConfig&) const = default;
};

struct ParamTensor {
  std::string name;
  std::vector<std::size_t> shape;
  std::vector<double> values;
  bool operator==(const ParamTensor&) const = default;
};

// Flat ordered list of named tensors. Teacher and student copies share names,
// shapes and order.
struct NetParams {
  std::vector<ParamTensor> tensors;

  std::size_t index(const std::string& name) const;
  const ParamTensor& at(const std::string& name) const { return tensors[index(name)]; }
  ParamTensor& at(const std::string& name) { return tensors[index(name)]; }
  NetParams zeros_like() const;
  bool same_structure(const NetParams& other) const;
  std::size_t scalar_count() const;
  bool all_finite() const;
  void set_zero();
  bool operator==(const NetParams&) const = default;
};

NetParams init_params(const ArchConfig& arch, std::uint64_t seed);

struct ForwardOptions {
  bool build_graph = false;
  bool fuse = false;
  int grid_size = 16;
  double mu = 2.0;
  AdjacencyNorm adjacency_norm = AdjacencyNorm::RowSoftmax;

  static ForwardOptions from_run(const RunConfig& cfg);
  static ForwardOptions plain() { return {}; }
};

struct GraphProducts {
  int grid = 0;  // effective grid side
  Matrix nodes;
  Similarity sim;
  Matrix propagation;
  GcnCache gcn;
  Matrix ghat;
  ClusterCache cluster;

  const Matrix& similarity() const { return sim.a; }
  const Matrix& assignments() const { return cluster.assign; }
};

struct ForwardOutput {
  Tensor logits;
  Tensor tap_features;  // tap-layer output before fusion
  std::optional<GraphProducts> graph;
};

struct ForwardCache {
  std::vector<Tensor> enc_in;
  std::vector<Tensor> enc_mid;
  std::vector<Tensor> enc_out;  // fused at the tap level
  std::vector<PoolResult> pools;
  std::vector<Tensor> dec_in;
  std::vector<Tensor> dec_mid;
  std::vector<Tensor> dec_out;
};

struct EncodeOutput {
  Tensor deepest;
  Tensor tap;
  std::vector<Tensor> levels;
};

EncodeOutput encode(const ArchConfig& arch, const NetParams& params, const Tensor& x);

ForwardOutput forward_segment(const ArchConfig& arch, const NetParams& params, const Tensor& x,
                              const ForwardOptions& opts, ForwardCache* cache = nullptr);

struct Upstream {
  const Tensor* dlogits = nullptr;
  const Matrix* dsimilarity = nullptr;  // dL/dA
  const Matrix* dassign = nullptr;      // dL/dC
};

// Accumulates parameter gradients into `grads` (same structure as params).
void backward_segment(const ArchConfig& arch, const NetParams& params, const ForwardOptions& opts,
                      const ForwardCache& cache, const ForwardOutput& out, const Upstream& up, NetParams& grads);

// Per-voxel argmax of the logits; ties go to the lowest class index.
LabelMap argmax_labels(const Tensor& logits, const Spacing& spacing = {});

LabelMap predict_labels(const ArchConfig& arch, const NetParams& params, const Volume& image,
                        const ForwardOptions& opts);

ClusterHead cluster_head_of(const ArchConfig& arch, const NetParams& params);

}  // namespace pasr
