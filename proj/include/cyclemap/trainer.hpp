#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "cyclemap/model.hpp"

namespace cyclemap {

enum class Objective { Cyclic, Isometric, Supervised };

const char* objective_name(Objective o);
Objective objective_from_name(const std::string& name);

struct TrainConfig {
  int batch_size = 4;
  int epochs = 10;
  /// 0 derives it: 100 in one-shot mode, otherwise one pass over the
  /// ordered pairs.
  int steps_per_epoch = 0;
  /// -1 derives it: 2 in one-shot mode (200 steps), otherwise 1.
  int coupling_epochs = -1;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double clip_norm = 10.0;
  int k = 70;
  int m = 5;
  int s = 352;
  int L = 7;
  double reg = 1e-3;
  Objective objective = Objective::Cyclic;
  double coupling_weight = 1.0;
  bool one_shot = false;
  bool self_pairs = false;
  std::uint64_t seed = 0;

  int resolved_steps_per_epoch(std::size_t n_shapes) const;
  int resolved_coupling_epochs() const;
  void validate() const;

  /// Canonical text encoding: sorted key=value lines.
  std::string encode() const;
  static TrainConfig decode(const std::string& text);
  /// Applies key=value overrides (the same keys as encode()).
  void set(const std::string& key, const std::string& value);
};

struct AdamState {
  Eigen::VectorXd m;
  Eigen::VectorXd v;
  std::int64_t t = 0;
};

/// One adaptive-moment update with bias correction. The gradient is clipped
/// to the configured global norm first. An all-zero gradient only decays the
/// moments. Returns the pre-clip gradient norm.
double adam_update(Eigen::VectorXd& params, const Eigen::VectorXd& grad, AdamState& state, const TrainConfig& config);

struct PairIndex {
  std::size_t x, y;
  bool operator==(const PairIndex&) const = default;
};

/// Uniform ordered pairs; (X, X) only in self-pairs mode. One-shot mode
/// always returns (0, 1).
std::vector<PairIndex> sample_pairs(std::size_t n_shapes, int batch_size, std::mt19937_64& rng,
                                    bool self_pairs = false, bool one_shot = false);

struct LossLogRow {
  std::int64_t step = 0;
  int epoch = 0;
  std::string phase;
  LossBreakdown losses;
};

struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;
  std::uint32_t version = kVersion;
  TrainConfig config;
  ModelParams params;
  AdamState optimizer;
  std::int64_t epoch = 0;  // completed epochs
  std::int64_t step = 0;   // completed steps
  std::string rng_state;
};

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);
/// Throws UsageError naming the first field where the checkpoint's model
/// shape (k, m, s, L) differs from the config.
void check_compatible(const Checkpoint& ckpt, const TrainConfig& config);

Checkpoint initial_checkpoint(const TrainConfig& config);

/// Mean loss over the batch and one optimizer update. Throws NumericalError
/// on a non-finite loss, naming the pair.
LossBreakdown step(Checkpoint& state, const std::vector<ShapeContext>& dataset, const std::vector<PairIndex>& batch,
                   bool coupling_phase);

struct TrainOptions {
  /// Called after every completed epoch (for checkpointing).
  std::function<void(const Checkpoint&)> on_epoch;
  /// Called after every step.
  std::function<void(const LossLogRow&)> on_step;
};

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<LossLogRow> log;
};

/// Runs the remaining epochs of `start` (a fresh initial_checkpoint or a
/// loaded one): coupling epochs first, then the configured objective.
TrainResult train(const std::vector<ShapeContext>& dataset, Checkpoint start, const TrainOptions& options = {});
TrainResult train(const std::vector<ShapeContext>& dataset, const TrainConfig& config,
                  const TrainOptions& options = {});

void write_loss_csv(const std::vector<LossLogRow>& log, const std::filesystem::path& path);
std::string loss_csv_header();
std::string loss_csv_row(const LossLogRow& row);

}  // namespace cyclemap
