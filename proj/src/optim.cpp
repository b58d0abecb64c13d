#include "pasr/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace pasr {

OptimizerSettings OptimizerSettings::from_run(const RunConfig& cfg) {
  OptimizerSettings s;
  s.kind = cfg.optimizer;
  s.lr = cfg.lr;
  s.momentum = cfg.momentum;
  return s;
}

OptimizerState make_optimizer_state(const OptimizerSettings& s, const NetParams& like) {
  OptimizerState st;
  st.kind = s.kind;
  st.first = like.zeros_like();
  if (s.kind == OptimizerKind::Adam) st.second = like.zeros_like();
  return st;
}

void optimizer_step(const OptimizerSettings& s, OptimizerState& state, NetParams& params, const NetParams& grads) {
  if (!params.same_structure(grads) || !params.same_structure(state.first)) {
    throw std::invalid_argument("optimizer_step: parameter/gradient structure mismatch");
  }
  if (state.kind != s.kind) throw std::invalid_argument("optimizer_step: state belongs to a different optimizer");
  ++state.steps;
  if (s.kind == OptimizerKind::Sgd) {
    for (std::size_t t = 0; t < params.tensors.size(); ++t) {
      auto& p = params.tensors[t].values;
      auto& v = state.first.tensors[t].values;
      const auto& g = grads.tensors[t].values;
      for (std::size_t i = 0; i < p.size(); ++i) {
        v[i] = s.momentum * v[i] + g[i];
        p[i] -= s.lr * v[i];
      }
    }
    return;
  }
  const double k = static_cast<double>(state.steps);
  const double c1 = 1.0 - std::pow(s.beta1, k);
  const double c2 = 1.0 - std::pow(s.beta2, k);
  for (std::size_t t = 0; t < params.tensors.size(); ++t) {
    auto& p = params.tensors[t].values;
    auto& m = state.first.tensors[t].values;
    auto& v = state.second.tensors[t].values;
    const auto& g = grads.tensors[t].values;
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = s.beta1 * m[i] + (1.0 - s.beta1) * g[i];
      v[i] = s.beta2 * v[i] + (1.0 - s.beta2) * g[i] * g[i];
      p[i] -= s.lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + s.eps);
    }
  }
}

}  // namespace pasr
