#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "cyclemap/cache.hpp"
#include "cyclemap/synth.hpp"
#include "cyclemap/trainer.hpp"

namespace cyclemap {

namespace fs = std::filesystem;

// Command implementations behind the CLI. Each throws cyclemap::Error
// subclasses; the CLI maps them onto exit codes.

struct PreprocessItem {
  std::string file;
  std::string status;  // "written", "skipped" or "failed"
  std::string error;
  std::size_t n = 0;
  int k = 0;
  PreprocessTimings timings;
  std::vector<std::string> recomputed;
};

struct PreprocessReport {
  std::vector<PreprocessItem> items;
  bool ok() const;
};

/// One `<stem>.cysh` per mesh file (.off/.obj/.ply) in mesh_dir. An optional
/// `<stem>.labels` sidecar supplies per-vertex correspondence labels. Up to
/// date entries are skipped; per-file errors are collected.
PreprocessReport cmd_preprocess(const fs::path& mesh_dir, const fs::path& cache_dir, const PreprocessConfig& config,
                                bool force = false);

/// Cache files of a directory in name order.
std::vector<fs::path> list_caches(const fs::path& cache_dir);
/// Loads caches as training contexts; throws UsageError if their basis or
/// descriptor fingerprints differ.
std::vector<ShapeContext> load_dataset(const std::vector<fs::path>& caches);

struct TrainRequest {
  fs::path cache_dir;
  fs::path checkpoint;  // rewritten after every epoch
  fs::path loss_log;    // empty: <checkpoint>.losses.csv
  std::optional<fs::path> resume;
  TrainConfig config;
};

TrainResult cmd_train(const TrainRequest& request);

/// Writes `source_index,target_index,confidence` for every source vertex and,
/// when soft_out is given, P (target x source) as a float64 .npy file.
PointMap cmd_infer(const fs::path& checkpoint, const fs::path& cache_x, const fs::path& cache_y,
                   const fs::path& out_csv, const std::optional<fs::path>& soft_out = std::nullopt);

struct EvalSummary {
  double mean = 0, median = 0, sum = 0;
  std::size_t n = 0;
  std::vector<double> thresholds;
  std::vector<double> curve;
};

/// 0 to 0.25 in steps of 0.0025.
std::vector<double> default_thresholds();
/// "lo:hi:step" or a comma-separated list; must be non-decreasing.
std::vector<double> parse_thresholds(const std::string& text);

EvalSummary cmd_eval(const fs::path& map_csv, const fs::path& gt_csv, const fs::path& cache_y,
                     const fs::path& errors_csv, const fs::path& curve_csv,
                     const std::vector<double>& thresholds = default_thresholds());

/// Colours Y by its normalized coordinates and pulls the colours back to X
/// through the map.
void cmd_colorize(const fs::path& cache_x, const fs::path& cache_y, const fs::path& map_csv, const fs::path& out_x,
                  const fs::path& out_y);

struct SynthRequest {
  SynthBase base;
  double bend_angle = 0.5;
  double stretch = 0.3;
  double stretch_cap = 1.0;  // radians
  Eigen::Vector3d stretch_direction{0.0, 1.0, 0.3};
};

/// Writes base.off, bent.off and (when stretch > 0) stretched.off, which is
/// the bent shape with the local stretch, each with an identity `.labels`
/// sidecar, plus identity ground-truth CSVs from base to each deformed shape.
std::vector<fs::path> cmd_synth(const SynthRequest& request, const fs::path& out_dir);

PointMap read_map_csv(const fs::path& path);
void write_map_csv(const PointMap& map, const fs::path& path);

/// Rows x cols float64 matrix as a NumPy .npy file (Fortran order).
void write_npy(const Eigen::MatrixXd& m, const fs::path& path);

}  // namespace cyclemap
