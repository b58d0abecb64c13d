#include "pasr/graph.hpp"

#include <cmath>
#include <stdexcept>

namespace pasr {

namespace {

struct Cell {
  std::size_t begin, end;
};

std::vector<Cell> adaptive_cells(std::size_t extent, std::size_t g) {
  std::vector<Cell> cells(g);
  for (std::size_t i = 0; i < g; ++i) {
    cells[i].begin = i * extent / g;
    cells[i].end = ((i + 1) * extent + g - 1) / g;
  }
  return cells;
}

struct GridCells {
  std::vector<Cell> z, y, x;
};

GridCells grid_cells(const Extent& e, int g) {
  if (g < 1) throw std::invalid_argument("pool_to_grid: grid size must be >= 1");
  const auto gg = static_cast<std::size_t>(g);
  if (gg > e.h || gg > e.w || (e.rank == 3 && gg > e.d)) {
    throw std::invalid_argument("pool_to_grid: grid " + std::to_string(g) + " larger than spatial extent " + e.str());
  }
  GridCells c;
  c.z = e.rank == 3 ? adaptive_cells(e.d, gg) : std::vector<Cell>{{0, 1}};
  c.y = adaptive_cells(e.h, gg);
  c.x = adaptive_cells(e.w, gg);
  return c;
}

void require_square(const Matrix& m, const char* what) {
  if (m.rows() != m.cols()) throw std::invalid_argument(std::string(what) + ": matrix must be square");
}

}  // namespace

std::size_t grid_nodes(int g, int rank) {
  const auto gg = static_cast<std::size_t>(g);
  return rank == 3 ? gg * gg * gg : gg * gg;
}

Matrix pool_to_grid(const Tensor& features, int g) {
  const auto cells = grid_cells(features.extent, g);
  const Extent& e = features.extent;
  Matrix nodes(static_cast<Eigen::Index>(cells.z.size() * cells.y.size() * cells.x.size()),
               static_cast<Eigen::Index>(features.channels));
  for (std::size_t c = 0; c < features.channels; ++c) {
    const double* src = features.channel(c);
    Eigen::Index n = 0;
    for (const auto& cz : cells.z)
      for (const auto& cy : cells.y)
        for (const auto& cx : cells.x) {
          double sum = 0.0;
          for (std::size_t z = cz.begin; z < cz.end; ++z)
            for (std::size_t y = cy.begin; y < cy.end; ++y)
              for (std::size_t x = cx.begin; x < cx.end; ++x) sum += src[e.index(z, y, x)];
          const double count = double((cz.end - cz.begin) * (cy.end - cy.begin) * (cx.end - cx.begin));
          nodes(n++, static_cast<Eigen::Index>(c)) = sum / count;
        }
  }
  return nodes;
}

Tensor pool_to_grid_backward(const Matrix& dnodes, const Tensor& like_features, int g) {
  const auto cells = grid_cells(like_features.extent, g);
  const Extent& e = like_features.extent;
  Tensor out(like_features.channels, e);
  for (std::size_t c = 0; c < out.channels; ++c) {
    double* dst = out.channel(c);
    Eigen::Index n = 0;
    for (const auto& cz : cells.z)
      for (const auto& cy : cells.y)
        for (const auto& cx : cells.x) {
          const double count = double((cz.end - cz.begin) * (cy.end - cy.begin) * (cx.end - cx.begin));
          const double v = dnodes(n++, static_cast<Eigen::Index>(c)) / count;
          for (std::size_t z = cz.begin; z < cz.end; ++z)
            for (std::size_t y = cy.begin; y < cy.end; ++y)
              for (std::size_t x = cx.begin; x < cx.end; ++x) dst[e.index(z, y, x)] += v;
        }
  }
  return out;
}

Similarity pairwise_similarity(const Matrix& nodes, double mu) {
  if (!(mu > 0.0)) throw std::invalid_argument("pairwise_similarity: mu must be positive");
  if (nodes.rows() < 1) throw std::invalid_argument("pairwise_similarity: need at least one node");
  if (!nodes.allFinite()) throw std::invalid_argument("pairwise_similarity: non-finite node features");
  Similarity s;
  s.a = nodes * nodes.transpose();
  s.gram_max = s.a(0, 0);
  for (Eigen::Index i = 0; i < s.a.rows(); ++i)
    for (Eigen::Index j = 0; j < s.a.cols(); ++j) {
      if (s.a(i, j) > s.gram_max) {
        s.gram_max = s.a(i, j);
        s.arg_row = i;
        s.arg_col = j;
      }
    }
  s.a.array() -= s.gram_max / mu;
  return s;
}

Matrix pairwise_similarity_backward(const Matrix& nodes, const Similarity& sim, const Matrix& da, double mu) {
  Matrix dnodes = (da + da.transpose()) * nodes;
  const double shift = da.sum() / mu;
  dnodes.row(sim.arg_row) -= shift * nodes.row(sim.arg_col);
  dnodes.row(sim.arg_col) -= shift * nodes.row(sim.arg_row);
  return dnodes;
}

double alignment_distance(const Matrix& a_u, const Matrix& a_m) {
  if (a_u.rows() != a_m.rows() || a_u.cols() != a_m.cols()) {
    throw std::invalid_argument("alignment_distance: shape mismatch");
  }
  return (a_u - a_m).cwiseAbs().sum() / static_cast<double>(a_u.size());
}

Matrix alignment_distance_grad(const Matrix& a_u, const Matrix& a_m) {
  if (a_u.rows() != a_m.rows() || a_u.cols() != a_m.cols()) {
    throw std::invalid_argument("alignment_distance: shape mismatch");
  }
  const double inv = 1.0 / static_cast<double>(a_m.size());
  return (a_m - a_u).unaryExpr([inv](double d) { return d > 0.0 ? inv : (d < 0.0 ? -inv : 0.0); });
}

Matrix row_softmax(const Matrix& a) {
  Matrix s(a.rows(), a.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    const double m = a.row(i).maxCoeff();
    s.row(i) = (a.row(i).array() - m).exp().matrix();
    s.row(i) /= s.row(i).sum();
  }
  return s;
}

Matrix row_softmax_backward(const Matrix& s, const Matrix& ds) {
  Matrix d(s.rows(), s.cols());
  for (Eigen::Index i = 0; i < s.rows(); ++i) {
    const double dot = s.row(i).dot(ds.row(i));
    d.row(i) = s.row(i).cwiseProduct((ds.row(i).array() - dot).matrix());
  }
  return d;
}

Matrix propagation_matrix(const Matrix& a, AdjacencyNorm norm) {
  switch (norm) {
    case AdjacencyNorm::None: return a;
    case AdjacencyNorm::Mean: return a / static_cast<double>(a.rows());
    case AdjacencyNorm::RowSoftmax: return row_softmax(a);
  }
  return a;
}

Matrix propagation_matrix_backward(const Matrix& a, const Matrix& prop, const Matrix& dprop, AdjacencyNorm norm) {
  switch (norm) {
    case AdjacencyNorm::None: return dprop;
    case AdjacencyNorm::Mean: return dprop / static_cast<double>(a.rows());
    case AdjacencyNorm::RowSoftmax: return row_softmax_backward(prop, dprop);
  }
  return dprop;
}

Matrix gcn_forward(const Matrix& a, const Matrix& nodes, const Matrix& w, GcnCache* cache) {
  require_square(a, "gcn_forward");
  if (a.cols() != nodes.rows() || nodes.cols() != w.rows()) throw std::invalid_argument("gcn_forward: shape mismatch");
  Matrix ag = a * nodes;
  Matrix pre = ag * w;
  Matrix out = pre.cwiseMax(0.0);
  if (cache) {
    cache->ag = std::move(ag);
    cache->pre = std::move(pre);
  }
  return out;
}

GcnGrads gcn_backward(const Matrix& a, const Matrix& nodes, const Matrix& w, const GcnCache& cache,
                      const Matrix& dout) {
  const Matrix dpre = dout.cwiseProduct(cache.pre.unaryExpr([](double v) { return v > 0.0 ? 1.0 : 0.0; }));
  GcnGrads g;
  g.dw = cache.ag.transpose() * dpre;
  const Matrix dag = dpre * w.transpose();
  g.da = dag * nodes.transpose();
  g.dnodes = a.transpose() * dag;
  return g;
}

Matrix cluster_assign(const Matrix& ghat, const ClusterHead& head, ClusterCache* cache) {
  if (ghat.cols() != head.w1.rows() || head.w1.cols() != head.b1.cols() || head.w1.cols() != head.w2.rows() ||
      head.w2.cols() != head.b2.cols()) {
    throw std::invalid_argument("cluster_assign: shape mismatch");
  }
  Matrix hidden = ((ghat * head.w1).rowwise() + head.b1).cwiseMax(0.0);
  Matrix logits = (hidden * head.w2).rowwise() + head.b2;
  Matrix assign = row_softmax(logits);
  if (cache) {
    cache->hidden = std::move(hidden);
    cache->assign = assign;
  }
  return assign;
}

ClusterGrads cluster_assign_backward(const Matrix& ghat, const ClusterHead& head, const ClusterCache& cache,
                                     const Matrix& dassign) {
  ClusterGrads g;
  const Matrix dlogits = row_softmax_backward(cache.assign, dassign);
  g.dw2 = cache.hidden.transpose() * dlogits;
  g.db2 = dlogits.colwise().sum();
  Matrix dhidden = dlogits * head.w2.transpose();
  dhidden = dhidden.cwiseProduct(cache.hidden.unaryExpr([](double v) { return v > 0.0 ? 1.0 : 0.0; }));
  g.dw1 = ghat.transpose() * dhidden;
  g.db1 = dhidden.colwise().sum();
  g.dghat = dhidden * head.w1.transpose();
  return g;
}

bool is_row_stochastic(const Matrix& c, double tol) {
  for (Eigen::Index i = 0; i < c.rows(); ++i) {
    if (std::abs(c.row(i).sum() - 1.0) > tol) return false;
    for (Eigen::Index j = 0; j < c.cols(); ++j) {
      if (!(c(i, j) >= 0.0 && c(i, j) <= 1.0)) return false;
    }
  }
  return true;
}

double clustering_loss(const Matrix& a, const Matrix& c) {
  require_square(a, "clustering_loss");
  if (a.rows() != c.rows()) throw std::invalid_argument("clustering_loss: shape mismatch");
  // Tr(A C C^T) = sum_ij A_ij (C C^T)_ji
  return -(a * c * c.transpose()).trace();
}

std::pair<Matrix, Matrix> clustering_loss_grad(const Matrix& a, const Matrix& c) {
  require_square(a, "clustering_loss");
  if (a.rows() != c.rows()) throw std::invalid_argument("clustering_loss: shape mismatch");
  Matrix da = -(c * c.transpose());
  Matrix dc = -(a + a.transpose()) * c;
  return {std::move(da), std::move(dc)};
}

}  // namespace pasr
