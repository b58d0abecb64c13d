#include "pasr/losses.hpp"

#include <cmath>
#include <vector>

namespace pasr {

double combined_region_loss(const Tensor& logits, const LabelMap& target, const Mask& region, RegionNorm norm,
                            Tensor* dlogits, double weight) {
  if (logits.extent != target.extent() || logits.extent != region.extent()) {
    throw std::invalid_argument("combined_region_loss: shape mismatch (" + logits.extent.str() + " vs " +
                                target.extent().str() + " vs " + region.extent().str() + ")");
  }
  if (static_cast<int>(logits.channels) != target.num_classes()) {
    throw std::invalid_argument("combined_region_loss: logits channels do not match num_classes");
  }
  if (dlogits && (dlogits->channels != logits.channels || dlogits->extent != logits.extent)) {
    throw std::invalid_argument("combined_region_loss: gradient buffer shape mismatch");
  }
  const std::size_t n = logits.plane();
  const std::size_t m = logits.channels;
  const std::size_t in_region = region.count_ones();
  if (in_region == 0) return 0.0;

  // Stable softmax / log-softmax per voxel, region voxels only.
  std::vector<double> prob(m * n, 0.0);
  double ce = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!region[i]) continue;
    double mx = logits.at(0, i);
    for (std::size_t c = 1; c < m; ++c) mx = std::max(mx, logits.at(c, i));
    double z = 0.0;
    for (std::size_t c = 0; c < m; ++c) {
      prob[c * n + i] = std::exp(logits.at(c, i) - mx);
      z += prob[c * n + i];
    }
    for (std::size_t c = 0; c < m; ++c) prob[c * n + i] /= z;
    ce -= logits.at(target[i], i) - mx - std::log(z);
  }
  const double ce_den = static_cast<double>(norm == RegionNorm::Region ? in_region : n);
  ce /= ce_den;

  const std::size_t fg = m - 1;
  std::vector<double> inter(m, 0.0), psum(m, 0.0), gsum(m, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    if (!region[i]) continue;
    for (std::size_t c = 1; c < m; ++c) {
      const double p = prob[c * n + i];
      const double g = target[i] == c ? 1.0 : 0.0;
      inter[c] += p * g;
      psum[c] += p;
      gsum[c] += g;
    }
  }
  double dice_mean = 0.0;
  for (std::size_t c = 1; c < m; ++c) {
    dice_mean += (2.0 * inter[c] + kDiceSmooth) / (psum[c] + gsum[c] + kDiceSmooth);
  }
  dice_mean /= static_cast<double>(fg);
  const double loss = 0.5 * ce + 0.5 * (1.0 - dice_mean);

  if (dlogits) {
    std::vector<double> dp(m);
    for (std::size_t i = 0; i < n; ++i) {
      if (!region[i]) continue;
      // dL/dp from the Dice term; CE is folded in through p - onehot.
      double dot = 0.0;
      dp[0] = 0.0;
      for (std::size_t c = 1; c < m; ++c) {
        const double num = 2.0 * inter[c] + kDiceSmooth;
        const double den = psum[c] + gsum[c] + kDiceSmooth;
        const double g = target[i] == c ? 1.0 : 0.0;
        dp[c] = -0.5 / static_cast<double>(fg) * (2.0 * g * den - num) / (den * den);
        dot += prob[c * n + i] * dp[c];
      }
      for (std::size_t c = 0; c < m; ++c) {
        const double p = prob[c * n + i];
        const double d_ce = 0.5 / ce_den * (p - (target[i] == c ? 1.0 : 0.0));
        const double d_dice = p * (dp[c] - dot);
        dlogits->at(c, i) += weight * (d_ce + d_dice);
      }
    }
  }
  return loss;
}

double combined_loss(const Tensor& logits, const LabelMap& target, Tensor* dlogits, double weight) {
  return combined_region_loss(logits, target, Mask::filled(logits.extent, 1), RegionNorm::Region, dlogits, weight);
}

double prediction_loss(const Tensor& logits_p, const LabelMap& l_mix_p, const Tensor& logits_q,
                       const LabelMap& l_mix_q, const Mask& s, double gamma, RegionNorm norm,
                       const PredictionGrads& grads) {
  if (gamma < 0.0 || gamma > 1.0) throw std::invalid_argument("prediction_loss: gamma must lie in [0, 1]");
  const Mask inv = s.inverted();
  const double w = grads.weight;
  const double lp = combined_region_loss(logits_p, l_mix_p, s, norm, grads.dlogits_p, w) +
                    gamma * combined_region_loss(logits_p, l_mix_p, inv, norm, grads.dlogits_p, w * gamma);
  const double lq = combined_region_loss(logits_q, l_mix_q, inv, norm, grads.dlogits_q, w) +
                    gamma * combined_region_loss(logits_q, l_mix_q, s, norm, grads.dlogits_q, w * gamma);
  return lp + lq;
}

LossBreakdown total_loss(double l_pre, double l_st, double l_cl, double alpha, double beta, double gamma) {
  if (alpha < 0.0 || beta < 0.0) throw std::invalid_argument("total_loss: weights must be non-negative");
  LossBreakdown b{l_pre, l_st, l_cl, 0.0, alpha, beta, gamma};
  b.total = l_pre + alpha * l_st + beta * l_cl;
  if (!std::isfinite(l_pre) || !std::isfinite(l_st) || !std::isfinite(l_cl) || !std::isfinite(b.total)) {
    throw NonFiniteLoss("non-finite loss component (l_pre=" + std::to_string(l_pre) + ", l_st=" +
                        std::to_string(l_st) + ", l_cl=" + std::to_string(l_cl) + ")");
  }
  return b;
}

}  // namespace pasr
