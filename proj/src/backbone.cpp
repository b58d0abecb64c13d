#include "pasr/backbone.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

namespace pasr {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct ConvSlot {
  std::size_t w = 0;
  std::size_t b = 0;
  ConvShape shape{};
};

struct Layout {
  std::vector<ConvSlot> enc1, enc2;  // per level, 0-based
  std::vector<ConvSlot> dec1, dec2;  // per level 0 .. depth-2
  ConvSlot head;
  std::size_t gcn_w = 0, proj_w = 0, fc1_w = 0, fc1_b = 0, fc2_w = 0, fc2_b = 0;
  std::size_t tap_channels = 0;
  std::size_t count = 0;
};

Layout make_layout(const ArchConfig& a) {
  Layout l;
  std::size_t next = 0;
  auto conv = [&](std::size_t in, std::size_t out, int k) {
    ConvSlot s{next, next + 1, ConvShape{in, out, k, a.rank}};
    next += 2;
    return s;
  };
  std::size_t prev = 1;
  for (int k = 1; k <= a.encoder_depth; ++k) {
    const std::size_t c = a.channels(k);
    l.enc1.push_back(conv(prev, c, 3));
    l.enc2.push_back(conv(c, c, 3));
    prev = c;
  }
  l.dec1.resize(static_cast<std::size_t>(a.encoder_depth - 1));
  l.dec2.resize(l.dec1.size());
  for (int k = a.encoder_depth - 1; k >= 1; --k) {
    const std::size_t c = a.channels(k);
    l.dec1[static_cast<std::size_t>(k - 1)] = conv(c + a.channels(k + 1), c, 3);
    l.dec2[static_cast<std::size_t>(k - 1)] = conv(c, c, 3);
  }
  l.head = conv(a.channels(1), static_cast<std::size_t>(a.num_classes), 1);
  l.tap_channels = a.tap_channels();
  l.gcn_w = next++;
  l.proj_w = next++;
  l.fc1_w = next++;
  l.fc1_b = next++;
  l.fc2_w = next++;
  l.fc2_b = next++;
  l.count = next;
  return l;
}

std::span<const double> cspan(const NetParams& p, std::size_t i) { return p.tensors[i].values; }
std::span<double> mspan(NetParams& p, std::size_t i) { return p.tensors[i].values; }

Matrix as_matrix(const ParamTensor& t) {
  return Eigen::Map<const RowMat>(t.values.data(), static_cast<Eigen::Index>(t.shape[0]),
                                  static_cast<Eigen::Index>(t.shape[1]));
}

RowVector as_row(const ParamTensor& t) {
  return Eigen::Map<const RowVector>(t.values.data(), static_cast<Eigen::Index>(t.values.size()));
}

void add_matrix(ParamTensor& t, const Matrix& g) {
  Eigen::Map<RowMat>(t.values.data(), static_cast<Eigen::Index>(t.shape[0]), static_cast<Eigen::Index>(t.shape[1])) += g;
}

void add_row(ParamTensor& t, const RowVector& g) {
  Eigen::Map<RowVector>(t.values.data(), static_cast<Eigen::Index>(t.values.size())) += g;
}

Tensor conv_relu(const Tensor& in, const NetParams& p, const ConvSlot& s) {
  Tensor out = conv_forward(in, s.shape, cspan(p, s.w), cspan(p, s.b));
  relu_inplace(out);
  return out;
}

// dout holds dL/d(relu output); returns dL/d(conv input).
Tensor conv_relu_backward(const Tensor& in, const Tensor& out, Tensor dout, const NetParams& p, const ConvSlot& s,
                          NetParams& grads, bool need_input_grad = true) {
  relu_backward(out, dout);
  Tensor din;
  conv_backward(in, s.shape, cspan(p, s.w), dout, mspan(grads, s.w), mspan(grads, s.b),
                need_input_grad ? &din : nullptr);
  return din;
}

Extent grid_extent(int rank, int g) {
  const auto gg = static_cast<std::size_t>(g);
  return rank == 3 ? Extent::volume(gg, gg, gg) : Extent::plane(gg, gg);
}

int effective_grid(const Extent& e, int g) {
  std::size_t m = std::min(e.h, e.w);
  if (e.rank == 3) m = std::min(m, e.d);
  return static_cast<int>(std::min<std::size_t>(static_cast<std::size_t>(g), m));
}

Tensor nodes_to_tensor(const Matrix& m, const Extent& grid) {
  Tensor t(static_cast<std::size_t>(m.cols()), grid);
  for (std::size_t c = 0; c < t.channels; ++c)
    for (std::size_t n = 0; n < t.plane(); ++n) t.at(c, n) = m(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(c));
  return t;
}

Matrix tensor_to_nodes(const Tensor& t) {
  Matrix m(static_cast<Eigen::Index>(t.plane()), static_cast<Eigen::Index>(t.channels));
  for (std::size_t c = 0; c < t.channels; ++c)
    for (std::size_t n = 0; n < t.plane(); ++n) m(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(c)) = t.at(c, n);
  return m;
}

GraphProducts build_graph(const Tensor& tap, const NetParams& p, const Layout& l, const ArchConfig& arch,
                          const ForwardOptions& opts) {
  GraphProducts g;
  g.grid = effective_grid(tap.extent, opts.grid_size);
  g.nodes = pool_to_grid(tap, g.grid);
  g.sim = pairwise_similarity(g.nodes, opts.mu);
  g.propagation = propagation_matrix(g.sim.a, opts.adjacency_norm);
  g.ghat = gcn_forward(g.propagation, g.nodes, as_matrix(p.tensors[l.gcn_w]), &g.gcn);
  cluster_assign(g.ghat, cluster_head_of(arch, p), &g.cluster);
  return g;
}

struct EncoderRun {
  Tensor tap_raw;
  std::optional<GraphProducts> graph;
};

EncoderRun run_encoder(const ArchConfig& arch, const NetParams& p, const Layout& l, const Tensor& x,
                       const ForwardOptions& opts, ForwardCache& c) {
  arch.check_input(x.extent);
  if (x.channels != 1) throw std::invalid_argument("network input must be single-channel");
  const auto depth = static_cast<std::size_t>(arch.encoder_depth);
  const auto tap = static_cast<std::size_t>(arch.tap_layer - 1);
  EncoderRun r;
  c.enc_in.resize(depth);
  c.enc_mid.resize(depth);
  c.enc_out.resize(depth);
  c.pools.resize(depth);
  for (std::size_t k = 0; k < depth; ++k) {
    if (k == 0) {
      c.enc_in[k] = x;
    } else {
      c.pools[k] = maxpool2(c.enc_out[k - 1]);
      c.enc_in[k] = c.pools[k].out;
    }
    c.enc_mid[k] = conv_relu(c.enc_in[k], p, l.enc1[k]);
    c.enc_out[k] = conv_relu(c.enc_mid[k], p, l.enc2[k]);
    if (k != tap) continue;
    r.tap_raw = c.enc_out[k];
    if (!opts.build_graph) continue;
    r.graph = build_graph(r.tap_raw, p, l, arch, opts);
    if (opts.fuse) {
      const Matrix projected = r.graph->ghat * as_matrix(p.tensors[l.proj_w]);
      const Tensor up = resize_nearest(nodes_to_tensor(projected, grid_extent(arch.rank, r.graph->grid)), r.tap_raw.extent);
      for (std::size_t i = 0; i < up.data.size(); ++i) c.enc_out[k].data[i] += up.data[i];
    }
  }
  return r;
}

}  // namespace

ArchConfig ArchConfig::from_run(const RunConfig& cfg, int num_classes, int rank) {
  ArchConfig a;
  a.rank = rank;
  a.encoder_depth = cfg.encoder_depth;
  a.base_channels = cfg.base_channels;
  a.num_classes = num_classes;
  a.tap_layer = cfg.tap_layer;
  a.graph_fusion = cfg.graph_enabled();
  a.num_clusters = cfg.clusters_for(num_classes);
  a.cluster_hidden = cfg.cluster_hidden;
  a.validate();
  return a;
}

void ArchConfig::validate() const {
  auto need = [](bool ok, const char* what) {
    if (!ok) throw std::invalid_argument(std::string("architecture: ") + what);
  };
  need(rank == 2 || rank == 3, "rank must be 2 or 3");
  need(encoder_depth >= 1, "encoder_depth >= 1");
  need(base_channels >= 1, "base_channels >= 1");
  need(num_classes >= 2, "num_classes >= 2");
  need(tap_layer >= 1 && tap_layer <= encoder_depth, "1 <= tap_layer <= encoder_depth");
  need(num_clusters >= 1, "num_clusters >= 1");
  need(cluster_hidden >= 1, "cluster_hidden >= 1");
}

std::size_t ArchConfig::channels(int level) const {
  return static_cast<std::size_t>(base_channels) << static_cast<std::size_t>(level - 1);
}

void ArchConfig::check_input(const Extent& e) const {
  if (e.rank != rank) throw std::invalid_argument("input rank does not match architecture rank");
  const std::size_t div = std::size_t{1} << static_cast<std::size_t>(encoder_depth - 1);
  const bool ok = e.h % div == 0 && e.w % div == 0 && (rank == 2 || e.d % div == 0);
  if (!ok) {
    throw std::invalid_argument("input extent " + e.str() + " is not divisible by 2^(depth-1) = " + std::to_string(div));
  }
}

std::size_t NetParams::index(const std::string& name) const {
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    if (tensors[i].name == name) return i;
  }
  throw std::out_of_range("no parameter named '" + name + "'");
}

NetParams NetParams::zeros_like() const {
  NetParams z = *this;
  z.set_zero();
  return z;
}

void NetParams::set_zero() {
  for (auto& t : tensors) std::fill(t.values.begin(), t.values.end(), 0.0);
}

bool NetParams::same_structure(const NetParams& other) const {
  if (tensors.size() != other.tensors.size()) return false;
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    if (tensors[i].name != other.tensors[i].name || tensors[i].shape != other.tensors[i].shape) return false;
  }
  return true;
}

std::size_t NetParams::scalar_count() const {
  std::size_t n = 0;
  for (const auto& t : tensors) n += t.values.size();
  return n;
}

bool NetParams::all_finite() const {
  for (const auto& t : tensors)
    for (double v : t.values)
      if (!std::isfinite(v)) return false;
  return true;
}

NetParams init_params(const ArchConfig& arch, std::uint64_t seed) {
  arch.validate();
  const Layout l = make_layout(arch);
  NetParams p;
  p.tensors.resize(l.count);
  std::mt19937_64 rng(seed);

  auto fill_normal = [&](ParamTensor& t, std::size_t fan_in) {
    std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
    for (auto& v : t.values) v = dist(rng);
  };
  auto make = [&](std::size_t idx, std::string name, std::vector<std::size_t> shape) -> ParamTensor& {
    std::size_t n = 1;
    for (auto s : shape) n *= s;
    p.tensors[idx] = ParamTensor{std::move(name), std::move(shape), std::vector<double>(n, 0.0)};
    return p.tensors[idx];
  };
  auto conv = [&](const ConvSlot& s, const std::string& prefix) {
    const std::size_t k = static_cast<std::size_t>(s.shape.kernel);
    std::vector<std::size_t> shape{s.shape.out_channels, s.shape.in_channels};
    if (arch.rank == 3) shape.push_back(k);
    shape.push_back(k);
    shape.push_back(k);
    fill_normal(make(s.w, prefix + ".weight", shape), s.shape.in_channels * s.shape.taps());
    make(s.b, prefix + ".bias", {s.shape.out_channels});
  };

  for (std::size_t k = 0; k < l.enc1.size(); ++k) {
    conv(l.enc1[k], "enc" + std::to_string(k + 1) + ".conv1");
    conv(l.enc2[k], "enc" + std::to_string(k + 1) + ".conv2");
  }
  for (std::size_t k = l.dec1.size(); k-- > 0;) {
    conv(l.dec1[k], "dec" + std::to_string(k + 1) + ".conv1");
    conv(l.dec2[k], "dec" + std::to_string(k + 1) + ".conv2");
  }
  conv(l.head, "head");

  const std::size_t d = l.tap_channels;
  const auto hidden = static_cast<std::size_t>(arch.cluster_hidden);
  const auto clusters = static_cast<std::size_t>(arch.num_clusters);
  fill_normal(make(l.gcn_w, "graph.gcn.weight", {d, d}), d);
  // Zero so that switching fusion on leaves a pretrained backbone unchanged.
  make(l.proj_w, "graph.proj.weight", {d, d});
  fill_normal(make(l.fc1_w, "cluster.fc1.weight", {d, hidden}), d);
  make(l.fc1_b, "cluster.fc1.bias", {hidden});
  fill_normal(make(l.fc2_w, "cluster.fc2.weight", {hidden, clusters}), hidden);
  make(l.fc2_b, "cluster.fc2.bias", {clusters});
  return p;
}

ForwardOptions ForwardOptions::from_run(const RunConfig& cfg) {
  ForwardOptions o;
  o.build_graph = cfg.graph_enabled();
  o.fuse = o.build_graph;
  o.grid_size = cfg.grid_size;
  o.mu = cfg.mu;
  o.adjacency_norm = cfg.adjacency_norm;
  return o;
}

ClusterHead cluster_head_of(const ArchConfig& arch, const NetParams& params) {
  const Layout l = make_layout(arch);
  return ClusterHead{as_matrix(params.tensors[l.fc1_w]), as_row(params.tensors[l.fc1_b]),
                     as_matrix(params.tensors[l.fc2_w]), as_row(params.tensors[l.fc2_b])};
}

EncodeOutput encode(const ArchConfig& arch, const NetParams& params, const Tensor& x) {
  const Layout l = make_layout(arch);
  ForwardCache c;
  EncoderRun r = run_encoder(arch, params, l, x, ForwardOptions::plain(), c);
  EncodeOutput out;
  out.deepest = c.enc_out.back();
  out.tap = std::move(r.tap_raw);
  out.levels = std::move(c.enc_out);
  return out;
}

ForwardOutput forward_segment(const ArchConfig& arch, const NetParams& params, const Tensor& x,
                              const ForwardOptions& opts, ForwardCache* cache) {
  if (opts.fuse && !opts.build_graph) throw std::invalid_argument("graph fusion requires the graph branch");
  const Layout l = make_layout(arch);
  if (params.tensors.size() != l.count) throw std::invalid_argument("parameter list does not match architecture");
  ForwardCache local;
  ForwardCache& c = cache ? *cache : local;
  EncoderRun r = run_encoder(arch, params, l, x, opts, c);

  const auto depth = static_cast<std::size_t>(arch.encoder_depth);
  c.dec_in.assign(depth > 0 ? depth - 1 : 0, Tensor{});
  c.dec_mid.assign(c.dec_in.size(), Tensor{});
  c.dec_out.assign(c.dec_in.size(), Tensor{});
  const Tensor* below = &c.enc_out[depth - 1];
  for (std::size_t k = depth - 1; k-- > 0;) {
    c.dec_in[k] = concat_channels(c.enc_out[k], upsample2(*below));
    c.dec_mid[k] = conv_relu(c.dec_in[k], params, l.dec1[k]);
    c.dec_out[k] = conv_relu(c.dec_mid[k], params, l.dec2[k]);
    below = &c.dec_out[k];
  }
  ForwardOutput out;
  out.logits = conv_forward(*below, l.head.shape, cspan(params, l.head.w), cspan(params, l.head.b));
  out.tap_features = std::move(r.tap_raw);
  out.graph = std::move(r.graph);
  return out;
}

void backward_segment(const ArchConfig& arch, const NetParams& params, const ForwardOptions& opts,
                      const ForwardCache& c, const ForwardOutput& out, const Upstream& up, NetParams& grads) {
  const Layout l = make_layout(arch);
  if (!grads.same_structure(params)) throw std::invalid_argument("gradient buffer does not match parameters");
  const auto depth = static_cast<std::size_t>(arch.encoder_depth);
  const auto tap = static_cast<std::size_t>(arch.tap_layer - 1);

  std::vector<Tensor> d_enc(depth);
  for (std::size_t k = 0; k < depth; ++k) d_enc[k] = Tensor(c.enc_out[k].channels, c.enc_out[k].extent);

  // Head and decoder.
  const Tensor& head_in = depth > 1 ? c.dec_out[0] : c.enc_out[0];
  Tensor d_below;
  if (up.dlogits) {
    conv_backward(head_in, l.head.shape, cspan(params, l.head.w), *up.dlogits, mspan(grads, l.head.w),
                  mspan(grads, l.head.b), &d_below);
  } else {
    d_below = Tensor(head_in.channels, head_in.extent);
  }
  for (std::size_t k = 0; k + 1 < depth; ++k) {
    Tensor d_mid = conv_relu_backward(c.dec_mid[k], c.dec_out[k], std::move(d_below), params, l.dec2[k], grads);
    Tensor d_in = conv_relu_backward(c.dec_in[k], c.dec_mid[k], std::move(d_mid), params, l.dec1[k], grads);
    auto [d_skip, d_up] = split_channels(d_in, c.enc_out[k].channels);
    for (std::size_t i = 0; i < d_skip.data.size(); ++i) d_enc[k].data[i] += d_skip.data[i];
    const Extent& small = (k + 2 < depth) ? c.dec_out[k + 1].extent : c.enc_out[depth - 1].extent;
    d_below = upsample2_backward(d_up, small);
  }
  if (depth > 1) {
    for (std::size_t i = 0; i < d_below.data.size(); ++i) d_enc[depth - 1].data[i] += d_below.data[i];
  } else {
    d_enc[0] = std::move(d_below);
  }

  // Encoder, deepest first.
  for (std::size_t k = depth; k-- > 0;) {
    Tensor d_out = std::move(d_enc[k]);
    const Tensor* relu_out = &c.enc_out[k];
    if (k == tap && out.graph) {
      const GraphProducts& g = *out.graph;
      const Tensor& tap_raw = out.tap_features;
      relu_out = &tap_raw;
      Matrix dghat = Matrix::Zero(g.ghat.rows(), g.ghat.cols());
      if (opts.fuse) {
        const Extent ge = grid_extent(arch.rank, g.grid);
        const Matrix dproj = tensor_to_nodes(resize_nearest_backward(d_out, ge));
        const Matrix proj = as_matrix(params.tensors[l.proj_w]);
        dghat += dproj * proj.transpose();
        add_matrix(grads.tensors[l.proj_w], g.ghat.transpose() * dproj);
      }
      if (up.dassign) {
        ClusterGrads cg = cluster_assign_backward(g.ghat, cluster_head_of(arch, params), g.cluster, *up.dassign);
        dghat += cg.dghat;
        add_matrix(grads.tensors[l.fc1_w], cg.dw1);
        add_row(grads.tensors[l.fc1_b], cg.db1);
        add_matrix(grads.tensors[l.fc2_w], cg.dw2);
        add_row(grads.tensors[l.fc2_b], cg.db2);
      }
      GcnGrads gg = gcn_backward(g.propagation, g.nodes, as_matrix(params.tensors[l.gcn_w]), g.gcn, dghat);
      add_matrix(grads.tensors[l.gcn_w], gg.dw);
      Matrix da = propagation_matrix_backward(g.sim.a, g.propagation, gg.da, opts.adjacency_norm);
      if (up.dsimilarity) da += *up.dsimilarity;
      const Matrix dnodes = gg.dnodes + pairwise_similarity_backward(g.nodes, g.sim, da, opts.mu);
      const Tensor dtap = pool_to_grid_backward(dnodes, tap_raw, g.grid);
      for (std::size_t i = 0; i < d_out.data.size(); ++i) d_out.data[i] += dtap.data[i];
    }
    Tensor d_mid = conv_relu_backward(c.enc_mid[k], *relu_out, std::move(d_out), params, l.enc2[k], grads);
    Tensor d_in = conv_relu_backward(c.enc_in[k], c.enc_mid[k], std::move(d_mid), params, l.enc1[k], grads, k > 0);
    if (k > 0) {
      const Tensor d_prev = maxpool2_backward(c.pools[k], d_in, c.enc_out[k - 1]);
      for (std::size_t i = 0; i < d_prev.data.size(); ++i) d_enc[k - 1].data[i] += d_prev.data[i];
    }
  }
}

LabelMap argmax_labels(const Tensor& logits, const Spacing& spacing) {
  std::vector<std::uint8_t> labels(logits.plane());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < logits.channels; ++c) {
      if (logits.at(c, i) > logits.at(best, i)) best = c;
    }
    labels[i] = static_cast<std::uint8_t>(best);
  }
  return LabelMap(logits.extent, std::move(labels), static_cast<int>(logits.channels), spacing);
}

LabelMap predict_labels(const ArchConfig& arch, const NetParams& params, const Volume& image,
                        const ForwardOptions& opts) {
  const ForwardOutput out = forward_segment(arch, params, Tensor::from_volume(image), opts);
  return argmax_labels(out.logits, image.spacing());
}

}  // namespace pasr
