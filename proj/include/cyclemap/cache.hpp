#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "cyclemap/descriptor.hpp"
#include "cyclemap/geodesy.hpp"
#include "cyclemap/model.hpp"
#include "cyclemap/spectral.hpp"

namespace cyclemap {

struct PreprocessConfig {
  std::size_t target_n = 3000;  // decimate above this many vertices
  int k = 70;
  int m = 5;
  int s = 352;
  int bins = 10;
  double radius_fraction = 0.05;
  double scale_lo = 0.2;
  double scale_hi = 2.0;
  std::size_t distance_samples = 0;  // 0: every vertex

  void validate() const;
  MultiscaleOptions multiscale() const;

  // Each section's fingerprint covers the settings it depends on, including
  // the upstream mesh, so a change only invalidates what it touches.
  std::string mesh_fingerprint() const;
  std::string basis_fingerprint() const;
  std::string descriptor_fingerprint() const;
  std::string distance_fingerprint() const;
};

/// Everything preprocessing derives from one source mesh.
struct ShapeCache {
  static constexpr std::uint32_t kVersion = 1;

  std::string name;
  std::uint64_t source_hash = 0;
  std::shared_ptr<const TriMesh> mesh;  // decimated, unit area
  std::vector<int> vertex_map;          // source vertex -> cached vertex
  std::vector<int> origin;              // cached vertex -> source vertex
  std::vector<int> labels;              // per cached vertex; empty when absent
  SpectralBasis basis;
  DescriptorStack stack;
  std::shared_ptr<const DistanceMatrix> dist;
  std::map<std::string, std::string> fingerprints;  // section -> fingerprint

  ShapeContext context() const;
};

/// FNV-1a 64 of a byte string / file.
std::uint64_t fnv1a64(const std::string& bytes);
std::uint64_t hash_file(const std::filesystem::path& path);

/// Per-vertex integer labels, one per line (the sidecar `<stem>.labels`).
std::vector<int> read_labels(const std::filesystem::path& path);
void write_labels(const std::vector<int>& labels, const std::filesystem::path& path);

struct PreprocessTimings {
  double mesh = 0, basis = 0, descriptor = 0, distance = 0;
};

/// Builds the cache from a source mesh. When `previous` matches the source
/// hash, sections whose fingerprints still match are reused. Descriptors and
/// distances are rounded to float32 here, so a saved and reloaded cache is
/// identical to the in-memory one.
ShapeCache preprocess(const TriMesh& source, const std::vector<int>& source_labels, const std::string& name,
                      std::uint64_t source_hash, const PreprocessConfig& config, const ShapeCache* previous = nullptr,
                      PreprocessTimings* timings = nullptr, std::vector<std::string>* recomputed = nullptr);

void save_cache(const ShapeCache& cache, const std::filesystem::path& path);
/// Verifies magic, version, the section table and every section checksum.
ShapeCache load_cache(const std::filesystem::path& path);

/// Source labels mapped onto cached vertices through `origin`.
std::vector<int> cached_labels(const std::vector<int>& source_labels, const std::vector<int>& origin);

}  // namespace cyclemap
