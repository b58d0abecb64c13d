#pragma once
// Segmentation losses on mixed samples and the weighted total objective.

#include <stdexcept>

#include "pasr/config.hpp"
#include "pasr/datamodel.hpp"
#include "pasr/nn.hpp"

namespace pasr {

class NonFiniteLoss : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr double kDiceSmooth = 1e-5;

// 0.5 * CE + 0.5 * (1 - mean foreground soft Dice), both restricted to voxels
// where region == 1. CE is divided by the region's voxel count (Region) or by
// the total voxel count (Total). Empty region -> 0.
//
// When dlogits is non-null, weight * dLoss/dlogits is added to it.
double combined_region_loss(const Tensor& logits, const LabelMap& target, const Mask& region,
                            RegionNorm norm = RegionNorm::Region, Tensor* dlogits = nullptr, double weight = 1.0);

// Full-image combined loss.
double combined_loss(const Tensor& logits, const LabelMap& target, Tensor* dlogits = nullptr, double weight = 1.0);

struct PredictionGrads {
  Tensor* dlogits_p = nullptr;
  Tensor* dlogits_q = nullptr;
  double weight = 1.0;
};

// L_p = crl(p, S) + gamma * crl(p, 1 - S)
// L_q = crl(q, 1 - S) + gamma * crl(q, S)
// Returns L_p + L_q. Ground-truth regions carry weight 1, pseudo-label regions
// weight gamma.
double prediction_loss(const Tensor& logits_p, const LabelMap& l_mix_p, const Tensor& logits_q,
                       const LabelMap& l_mix_q, const Mask& s, double gamma, RegionNorm norm = RegionNorm::Region,
                       const PredictionGrads& grads = {});

struct LossBreakdown {
  double l_pre = 0.0;
  double l_st = 0.0;
  double l_cl = 0.0;
  double total = 0.0;
  double alpha = 0.0;
  double beta = 0.0;
  double gamma = 0.0;
};

// total = l_pre + alpha * l_st + beta * l_cl. Throws NonFiniteLoss.
LossBreakdown total_loss(double l_pre, double l_st, double l_cl, double alpha, double beta, double gamma = 0.0);

}  // namespace pasr
