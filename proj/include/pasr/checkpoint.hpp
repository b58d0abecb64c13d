#pragma once
// Training state and its on-disk checkpoint archive.
//
// A checkpoint is a directory:
//   meta.txt                 iteration, architecture, config digest
//   config.txt               full RunConfig text
//   teacher/<name>.pvol      f64 parameter tensors (flattened)
//   student/<name>.pvol
//   optim/first/, optim/second/
//   rng.txt                  engine state
//   losses.csv, val_rows.txt      history up to this iteration

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "pasr/backbone.hpp"
#include "pasr/config.hpp"
#include "pasr/losses.hpp"
#include "pasr/optim.hpp"

namespace pasr {

struct LossRecord {
  std::uint64_t iteration = 0;
  LossBreakdown loss;
  bool operator==(const LossRecord& o) const {
    return iteration == o.iteration && loss.l_pre == o.loss.l_pre && loss.l_st == o.loss.l_st &&
           loss.l_cl == o.loss.l_cl && loss.total == o.loss.total;
  }
};

struct TrainState {
  RunConfig cfg;
  ArchConfig arch;
  NetParams teacher;
  NetParams student;
  OptimizerState opt;
  std::uint64_t iteration = 0;
  std::mt19937_64 rng;
  std::vector<LossRecord> history;
  std::vector<std::string> val_rows;  // val_metrics.csv data lines
};

void save_params(const NetParams& params, const std::filesystem::path& dir);
// Loads tensors named like `like` from dir; shapes must agree.
NetParams load_params(const NetParams& like, const std::filesystem::path& dir);

void save_checkpoint(const TrainState& state, const std::filesystem::path& dir);
TrainState load_checkpoint(const std::filesystem::path& dir);

// Teacher-only archive written after pretraining.
void save_pretrained(const RunConfig& cfg, const ArchConfig& arch, const NetParams& teacher,
                     const std::vector<LossRecord>& history, const std::filesystem::path& dir);
struct PretrainedModel {
  RunConfig cfg;
  ArchConfig arch;
  NetParams params;
};
PretrainedModel load_pretrained(const std::filesystem::path& dir);

// Reads teacher/student params from either archive kind. `which` is
// "student" or "teacher"; a pretrained archive only has a teacher.
PretrainedModel load_model(const std::filesystem::path& dir, const std::string& which = "student");

std::string loss_csv_header();
std::string loss_csv_row(const LossRecord& r);
void write_loss_csv(const std::filesystem::path& path, const std::vector<LossRecord>& history);
std::vector<LossRecord> read_loss_csv(const std::filesystem::path& path);

}  // namespace pasr
