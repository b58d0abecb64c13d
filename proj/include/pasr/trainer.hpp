#pragma once
// Supervised pretraining, self-training with bidirectional copy-paste and
// graph alignment, and the EMA teacher.

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <vector>

#include "pasr/backbone.hpp"
#include "pasr/checkpoint.hpp"
#include "pasr/config.hpp"
#include "pasr/datamodel.hpp"
#include "pasr/losses.hpp"

namespace pasr {

ArchConfig arch_for(const RunConfig& cfg, const DatasetSplit& split);

struct PretrainResult {
  NetParams params;
  std::vector<LossRecord> history;  // l_pre holds the batch loss
};

// Full-image combined loss on labeled pairs; graph branch off.
PretrainResult pretrain(const RunConfig& cfg, const DatasetSplit& split);

// Copies every backbone tensor from `trained` into fresh parameters for
// `arch`; graph and cluster tensors are freshly initialized. Pretraining never
// touches those, so this equals pretraining directly with `arch`.
NetParams retarget_params(const NetParams& trained, const ArchConfig& arch, std::uint64_t seed);

// Per-voxel argmax of teacher logits.
std::vector<LabelMap> generate_pseudo_labels(const ArchConfig& arch, const NetParams& teacher,
                                             const ForwardOptions& opts, const std::vector<Volume>& images);

// t' = lambda * t + (1 - lambda) * s, elementwise.
void ema_update(NetParams& teacher, const NetParams& student, double lambda);

struct MixedPair {
  std::size_t a, b;  // labeled indices
  std::size_t s, t;  // unlabeled indices
  Mask mask;
};

struct StepBatch {
  std::vector<MixedPair> pairs;
};

// Draws cfg.batch_size pairs with a != b and s != t, plus one mask per pair.
StepBatch sample_batch(TrainState& state, const DatasetSplit& split);

TrainState init_selftrain(const RunConfig& cfg, const ArchConfig& arch, const NetParams& teacher_init);

// Loss of one batch at the current parameters. Accumulates student gradients
// of the total into `grads`; teacher alignment gradients go to
// `teacher_grads` when that option is enabled and the pointer is set.
LossBreakdown selftrain_objective(const TrainState& state, const DatasetSplit& split, const StepBatch& batch,
                                  NetParams& grads, NetParams* teacher_grads = nullptr);

// One student gradient step plus the EMA teacher update. Appends to history.
LossBreakdown selftrain_step(TrainState& state, const DatasetSplit& split, const StepBatch& batch);

struct SelftrainOptions {
  std::optional<std::filesystem::path> out_dir;  // logs + checkpoints
  std::optional<std::uint64_t> stop_at;          // stop early (for resume studies)
  bool validate = true;
  std::function<void(const TrainState&)> on_step;
};

// Runs until state.iteration reaches cfg.selftrain_iters (or stop_at).
void run_selftrain(TrainState& state, const DatasetSplit& split, const SelftrainOptions& opts = {});

std::filesystem::path checkpoint_dir(const std::filesystem::path& out_dir, std::uint64_t iteration);

}  // namespace pasr
