#pragma once
// Feature graphs over pooled voxel nodes.
//
// Nodes are the cells of a g x g (or g^3) adaptive-average grid over a feature
// map; node features are channel vectors. Edge weights come from the shifted
// Gram matrix A = G G^T - max(G G^T) / mu, computed per sample.
//
// Every forward op has a matching backward so the losses can be trained and
// checked against finite differences.

#include <Eigen/Dense>
#include <utility>

#include "pasr/config.hpp"
#include "pasr/nn.hpp"

namespace pasr {

using Matrix = Eigen::MatrixXd;
using RowVector = Eigen::RowVectorXd;

enum class GraphSource { TeacherUnlabeled, StudentMixed };

struct VoxelGraph {
  Matrix nodes;       // N x d
  Matrix similarity;  // N x N
  GraphSource source = GraphSource::StudentMixed;
};

// Node count for grid side g at a given rank.
std::size_t grid_nodes(int g, int rank);

Matrix pool_to_grid(const Tensor& features, int g);
Tensor pool_to_grid_backward(const Matrix& dnodes, const Tensor& like_features, int g);

struct Similarity {
  Matrix a;
  Eigen::Index arg_row = 0;  // first argmax of the Gram matrix
  Eigen::Index arg_col = 0;
  double gram_max = 0.0;
};

Similarity pairwise_similarity(const Matrix& nodes, double mu);
Matrix pairwise_similarity_backward(const Matrix& nodes, const Similarity& sim, const Matrix& da, double mu);

// Mean absolute elementwise difference.
double alignment_distance(const Matrix& a_u, const Matrix& a_m);
// Gradient w.r.t. a_m (sign(a_m - a_u) / N^2; sign(0) = 0).
Matrix alignment_distance_grad(const Matrix& a_u, const Matrix& a_m);

Matrix row_softmax(const Matrix& a);
Matrix row_softmax_backward(const Matrix& s, const Matrix& ds);

// Propagation matrix fed to the GCN for the configured normalization.
Matrix propagation_matrix(const Matrix& a, AdjacencyNorm norm);
Matrix propagation_matrix_backward(const Matrix& a, const Matrix& prop, const Matrix& dprop, AdjacencyNorm norm);

struct GcnCache {
  Matrix ag;   // A G
  Matrix pre;  // A G W
};

// relu(A G W)
Matrix gcn_forward(const Matrix& a, const Matrix& nodes, const Matrix& w, GcnCache* cache = nullptr);

struct GcnGrads {
  Matrix da;
  Matrix dnodes;
  Matrix dw;
};

GcnGrads gcn_backward(const Matrix& a, const Matrix& nodes, const Matrix& w, const GcnCache& cache,
                      const Matrix& dout);

// Two-layer perceptron d' -> hidden (relu) -> K with a row softmax.
struct ClusterHead {
  Matrix w1;
  RowVector b1;
  Matrix w2;
  RowVector b2;
};

struct ClusterCache {
  Matrix hidden;  // post-relu
  Matrix assign;  // row-stochastic N x K
};

Matrix cluster_assign(const Matrix& ghat, const ClusterHead& head, ClusterCache* cache = nullptr);

struct ClusterGrads {
  Matrix dghat;
  Matrix dw1;
  RowVector db1;
  Matrix dw2;
  RowVector db2;
};

ClusterGrads cluster_assign_backward(const Matrix& ghat, const ClusterHead& head, const ClusterCache& cache,
                                     const Matrix& dassign);

bool is_row_stochastic(const Matrix& c, double tol = 1e-6);

// -Tr(A C C^T)
double clustering_loss(const Matrix& a, const Matrix& c);
// {dA, dC}
std::pair<Matrix, Matrix> clustering_loss_grad(const Matrix& a, const Matrix& c);

}  // namespace pasr
