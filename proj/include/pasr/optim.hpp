#pragma once
// Gradient-descent optimizers over NetParams.

#include <cstdint>

#include "pasr/backbone.hpp"
#include "pasr/config.hpp"

namespace pasr {

struct OptimizerState {
  OptimizerKind kind = OptimizerKind::Sgd;
  std::uint64_t steps = 0;
  NetParams first;   // SGD velocity or Adam first moment
  NetParams second;  // Adam second moment (empty for SGD)

  bool operator==(const OptimizerState&) const = default;
};

struct OptimizerSettings {
  OptimizerKind kind = OptimizerKind::Sgd;
  double lr = 0.01;
  double momentum = 0.9;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  static OptimizerSettings from_run(const RunConfig& cfg);
};

OptimizerState make_optimizer_state(const OptimizerSettings& s, const NetParams& like);

// In-place parameter update from grads.
//   SGD:  v = momentum * v + g;  p -= lr * v
//   Adam: bias-corrected moments.
void optimizer_step(const OptimizerSettings& s, OptimizerState& state, NetParams& params, const NetParams& grads);

}  // namespace pasr
