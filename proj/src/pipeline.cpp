#include "cyclemap/pipeline.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <mutex>
#include <sstream>

#include "cyclemap/error.hpp"
#include "cyclemap/parallel.hpp"

namespace cyclemap {
namespace {

std::string fmt_double(double v) {
  char buf[32];
  auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

bool is_mesh_file(const fs::path& p) { return fs::is_regular_file(p) && format_from_extension(p).has_value(); }

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == sep) {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

template <class T>
T parse_field(const std::string& text, const std::string& file, std::size_t line) {
  T v{};
  auto r = std::from_chars(text.data(), text.data() + text.size(), v);
  if (r.ec != std::errc() || r.ptr != text.data() + text.size())
    throw ParseError(file, line, "bad number '" + text + "'");
  return v;
}

std::ofstream open_csv(const fs::path& path) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw DataError("cannot write " + path.string());
  return f;
}

// Source hash covers the mesh bytes and the label sidecar, so editing either
// invalidates the cache.
std::uint64_t source_hash(const fs::path& mesh, const fs::path& labels) {
  std::uint64_t h = hash_file(mesh);
  if (fs::exists(labels)) h ^= hash_file(labels) * 0x9E3779B97F4A7C15ULL;
  return h;
}

void check_same(const std::string& what, const ShapeCache& a, const ShapeCache& b) {
  const auto fa = a.fingerprints.find(what), fb = b.fingerprints.find(what);
  const std::string va = fa == a.fingerprints.end() ? "" : fa->second;
  const std::string vb = fb == b.fingerprints.end() ? "" : fb->second;
  if (va != vb)
    throw UsageError("incompatible caches: " + what + " settings differ between " + a.name + " (" + va + ") and " +
                     b.name + " (" + vb + ")");
}

Colors coordinate_colors(const TriMesh& mesh) {
  const auto& V = mesh.vertices();
  const Eigen::RowVector3d lo = V.colwise().minCoeff(), hi = V.colwise().maxCoeff();
  Colors c(V.rows(), 3);
  for (Eigen::Index i = 0; i < V.rows(); ++i)
    for (int k = 0; k < 3; ++k) {
      const double span = hi(k) - lo(k);
      const double t = span > 0.0 ? (V(i, k) - lo(k)) / span : 0.5;
      c(i, k) = static_cast<unsigned char>(std::lround(255.0 * std::clamp(t, 0.0, 1.0)));
    }
  return c;
}

}  // namespace

bool PreprocessReport::ok() const {
  return std::none_of(items.begin(), items.end(), [](const PreprocessItem& i) { return i.status == "failed"; });
}

PreprocessReport cmd_preprocess(const fs::path& mesh_dir, const fs::path& cache_dir, const PreprocessConfig& config,
                                bool force) {
  config.validate();
  if (!fs::is_directory(mesh_dir)) throw UsageError("not a directory: " + mesh_dir.string());
  fs::create_directories(cache_dir);
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(mesh_dir))
    if (is_mesh_file(e.path())) files.push_back(e.path());
  std::sort(files.begin(), files.end());
  if (files.empty()) throw UsageError("no .off/.obj/.ply files in " + mesh_dir.string());

  PreprocessReport report;
  report.items.resize(files.size());
  parallel_for(files.size(), [&](std::size_t i) {
    const fs::path& src = files[i];
    PreprocessItem& item = report.items[i];
    item.file = src.filename().string();
    try {
      const fs::path labels_path = fs::path(src).replace_extension(".labels");
      const fs::path out = cache_dir / (src.stem().string() + ".cysh");
      const std::uint64_t hash = source_hash(src, labels_path);
      std::optional<ShapeCache> prev;
      if (!force && fs::exists(out)) {
        // A damaged cache is an error, not something to paper over.
        prev = load_cache(out);
      }
      std::vector<std::string> recomputed;
      const TriMesh mesh = load_mesh(src);
      const std::vector<int> labels = fs::exists(labels_path) ? read_labels(labels_path) : std::vector<int>{};
      ShapeCache c = preprocess(mesh, labels, src.stem().string(), hash, config, prev ? &*prev : nullptr,
                                &item.timings, &recomputed);
      item.n = c.mesh->n_vertices();
      item.k = static_cast<int>(c.basis.k());
      item.recomputed = recomputed;
      if (recomputed.empty()) {
        item.status = "skipped";
      } else {
        save_cache(c, out);
        item.status = "written";
      }
    } catch (const std::exception& e) {
      item.status = "failed";
      item.error = src.string() + ": " + e.what();
    }
  });
  return report;
}

std::vector<fs::path> list_caches(const fs::path& cache_dir) {
  if (!fs::is_directory(cache_dir)) throw UsageError("not a directory: " + cache_dir.string());
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(cache_dir))
    if (e.path().extension() == ".cysh") out.push_back(e.path());
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<ShapeContext> load_dataset(const std::vector<fs::path>& caches) {
  std::vector<ShapeCache> loaded;
  for (const auto& p : caches) loaded.push_back(load_cache(p));
  for (std::size_t i = 1; i < loaded.size(); ++i) {
    check_same("basis", loaded[0], loaded[i]);
    check_same("descriptor", loaded[0], loaded[i]);
  }
  std::vector<ShapeContext> out;
  for (const auto& c : loaded) out.push_back(c.context());
  return out;
}

TrainResult cmd_train(const TrainRequest& req) {
  const auto caches = list_caches(req.cache_dir);
  if (req.config.one_shot && caches.size() != 2)
    throw UsageError("--one-shot needs exactly 2 cached shapes, found " + std::to_string(caches.size()));
  if (!req.config.self_pairs && caches.size() < 2)
    throw UsageError("training needs at least 2 cached shapes, found " + std::to_string(caches.size()));
  const auto dataset = load_dataset(caches);
  for (const auto& s : dataset)
    if (s.basis.k() != req.config.k)
      throw UsageError("cache " + s.name + " has k=" + std::to_string(s.basis.k()) + " but training asks for k=" +
                       std::to_string(req.config.k));

  Checkpoint start;
  if (req.resume) {
    start = load_checkpoint(*req.resume);
    check_compatible(start, req.config);
    // The stored config governs the trajectory; only the epoch budget may grow.
    start.config.epochs = req.config.epochs;
  } else {
    start = initial_checkpoint(req.config);
  }

  const fs::path log_path = req.loss_log.empty() ? fs::path(req.checkpoint.string() + ".losses.csv") : req.loss_log;
  // Rows from before a resume are kept when the old log is there.
  std::vector<std::string> previous_rows;
  if (req.resume && fs::exists(log_path)) {
    std::ifstream in(log_path);
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
      const auto comma = line.find(',');
      if (comma == std::string::npos) continue;
      if (std::stoll(line.substr(0, comma)) < start.step) previous_rows.push_back(line);
    }
  }
  std::vector<LossLogRow> rows;
  auto flush_log = [&] {
    auto f = open_csv(log_path);
    f << loss_csv_header() << "\n";
    for (const auto& r : previous_rows) f << r << "\n";
    for (const auto& r : rows) f << loss_csv_row(r) << "\n";
    if (!f) throw DataError("write failed: " + log_path.string());
  };
  TrainOptions opts;
  opts.on_step = [&](const LossLogRow& r) { rows.push_back(r); };
  opts.on_epoch = [&](const Checkpoint& ck) {
    save_checkpoint(ck, req.checkpoint);
    flush_log();
  };
  TrainResult res = train(dataset, std::move(start), opts);
  if (res.log.empty()) {
    save_checkpoint(res.checkpoint, req.checkpoint);
    flush_log();
  }
  return res;
}

PointMap cmd_infer(const fs::path& checkpoint, const fs::path& cache_x, const fs::path& cache_y,
                   const fs::path& out_csv, const std::optional<fs::path>& soft_out) {
  const Checkpoint ck = load_checkpoint(checkpoint);
  const ShapeCache cx = load_cache(cache_x), cy = load_cache(cache_y);
  check_same("basis", cx, cy);
  check_same("descriptor", cx, cy);
  if (cx.basis.k() != ck.config.k)
    throw UsageError("incompatible checkpoint: k is " + std::to_string(ck.config.k) + " in the checkpoint but " +
                     std::to_string(cx.basis.k()) + " in the caches");
  if (cx.stack.m() != ck.config.m || cx.stack.s() != ck.config.s)
    throw UsageError("incompatible checkpoint: descriptor shape differs from the caches");
  const PairForward f = forward_pair(ck.params, cx.context(), cy.context(), ck.config.reg);
  const PointMap map = hard_assignment(f.forward.P);
  write_map_csv(map, out_csv);
  if (soft_out) write_npy(f.P(), *soft_out);
  return map;
}

std::vector<double> default_thresholds() {
  std::vector<double> t;
  for (int i = 0; i <= 100; ++i) t.push_back(0.0025 * i);
  return t;
}

std::vector<double> parse_thresholds(const std::string& text) {
  std::vector<double> out;
  const auto parts = split(text, ':');
  auto num = [&](const std::string& s) {
    double v = 0;
    auto r = std::from_chars(s.data(), s.data() + s.size(), v);
    if (r.ec != std::errc() || r.ptr != s.data() + s.size() || !std::isfinite(v))
      throw UsageError("bad threshold '" + s + "'");
    return v;
  };
  if (parts.size() == 3) {
    const double lo = num(parts[0]), hi = num(parts[1]), step = num(parts[2]);
    if (!(step > 0.0) || hi < lo) throw UsageError("threshold range must be lo:hi:step with lo <= hi, step > 0");
    const auto count = static_cast<long>(std::floor((hi - lo) / step + 1e-9));
    for (long i = 0; i <= count; ++i) out.push_back(lo + step * static_cast<double>(i));
  } else if (parts.size() == 1) {
    for (const auto& s : split(text, ',')) out.push_back(num(s));
  } else {
    throw UsageError("thresholds must be lo:hi:step or a comma-separated list");
  }
  if (out.empty()) throw UsageError("no thresholds given");
  for (std::size_t i = 1; i < out.size(); ++i)
    if (out[i] < out[i - 1]) throw UsageError("thresholds must be ascending");
  return out;
}

EvalSummary cmd_eval(const fs::path& map_csv, const fs::path& gt_csv, const fs::path& cache_y,
                     const fs::path& errors_csv, const fs::path& curve_csv, const std::vector<double>& thresholds) {
  for (std::size_t i = 1; i < thresholds.size(); ++i)
    if (thresholds[i] < thresholds[i - 1]) throw UsageError("thresholds must be ascending");
  const PointMap map = read_map_csv(map_csv);
  const PointMap gt = read_map_csv(gt_csv);
  if (map.size() != gt.size())
    throw DataError("map has " + std::to_string(map.size()) + " rows but ground truth has " +
                    std::to_string(gt.size()));
  const ShapeCache cy = load_cache(cache_y);
  const auto ny = static_cast<int>(cy.mesh->n_vertices());
  for (const PointMap* pm : {&map, &gt})
    for (int v : pm->assignments)
      if (v < 0 || v >= ny) throw DataError("target index " + std::to_string(v) + " out of range for " + cy.name);

  // A sampled distance matrix does not cover every vertex; fall back to a
  // full one for evaluation.
  std::shared_ptr<const DistanceMatrix> d = cy.dist;
  if (static_cast<int>(d->size()) != ny) d = std::make_shared<DistanceMatrix>(distance_matrix(*cy.mesh));
  const GeodesicErrors e = geodesic_error(map, gt, *d, cy.mesh->total_area());

  EvalSummary s;
  s.n = e.per_point.size();
  s.sum = e.sum;
  s.mean = e.mean;
  if (!e.per_point.empty()) {
    std::vector<double> sorted = e.per_point;
    std::sort(sorted.begin(), sorted.end());
    const std::size_t h = sorted.size() / 2;
    s.median = sorted.size() % 2 ? sorted[h] : 0.5 * (sorted[h - 1] + sorted[h]);
  }
  s.thresholds = thresholds;
  s.curve = cumulative_curve(e.per_point, thresholds);

  auto fe = open_csv(errors_csv);
  fe << "vertex,error\n";
  for (std::size_t i = 0; i < e.per_point.size(); ++i) fe << i << "," << fmt_double(e.per_point[i]) << "\n";
  auto fc = open_csv(curve_csv);
  fc << "threshold,fraction\n";
  for (std::size_t i = 0; i < thresholds.size(); ++i) fc << fmt_double(thresholds[i]) << "," << fmt_double(s.curve[i]) << "\n";
  return s;
}

void cmd_colorize(const fs::path& cache_x, const fs::path& cache_y, const fs::path& map_csv, const fs::path& out_x,
                  const fs::path& out_y) {
  const ShapeCache cx = load_cache(cache_x), cy = load_cache(cache_y);
  const PointMap map = read_map_csv(map_csv);
  if (map.size() != cx.mesh->n_vertices())
    throw DataError("map has " + std::to_string(map.size()) + " rows but " + cx.name + " has " +
                    std::to_string(cx.mesh->n_vertices()) + " vertices");
  const Colors cy_colors = coordinate_colors(*cy.mesh);
  Colors cx_colors(static_cast<Eigen::Index>(map.size()), 3);
  for (std::size_t i = 0; i < map.size(); ++i) {
    const int j = map.assignments[i];
    if (j < 0 || j >= cy_colors.rows()) throw DataError("target index " + std::to_string(j) + " out of range");
    cx_colors.row(static_cast<Eigen::Index>(i)) = cy_colors.row(j);
  }
  save_ply(*cx.mesh, out_x, PlyEncoding::BinaryLittleEndian, &cx_colors);
  save_ply(*cy.mesh, out_y, PlyEncoding::BinaryLittleEndian, &cy_colors);
}

std::vector<fs::path> cmd_synth(const SynthRequest& req, const fs::path& out_dir) {
  fs::create_directories(out_dir);
  const TriMesh base = make_synth_base(req.base);
  std::vector<std::pair<std::string, TriMesh>> shapes{{"base", base}};
  const TriMesh bent = bend(base, req.bend_angle);
  shapes.emplace_back("bent", bent);
  if (req.stretch > 0.0)
    shapes.emplace_back("stretched", local_stretch(bent, req.stretch_direction, req.stretch, req.stretch_cap));

  std::vector<int> iota(base.n_vertices());
  for (std::size_t i = 0; i < iota.size(); ++i) iota[i] = static_cast<int>(i);
  const PointMap identity = PointMap::identity(base.n_vertices());
  std::vector<fs::path> written;
  for (const auto& [name, mesh] : shapes) {
    const fs::path p = out_dir / (name + ".off");
    save_off(mesh, p);
    write_labels(iota, out_dir / (name + ".labels"));
    written.push_back(p);
    if (name != "base") write_map_csv(identity, out_dir / ("gt_base_" + name + ".csv"));
  }
  return written;
}

PointMap read_map_csv(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw DataError("cannot open " + path.string());
  const std::string file = path.string();
  std::string line;
  if (!std::getline(f, line)) throw ParseError(file, 1, "empty file, expected a header row");
  const auto header = split(line, ',');
  if (header.size() < 2 || header[0] != "source_index" || header[1] != "target_index")
    throw ParseError(file, 1, "expected header source_index,target_index[,confidence]");
  const bool has_conf = header.size() >= 3;
  PointMap m;
  std::size_t lineno = 1;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    const auto cols = split(line, ',');
    if (cols.size() != header.size()) throw ParseError(file, lineno, "expected " + std::to_string(header.size()) + " columns");
    const auto src = parse_field<long>(cols[0], file, lineno);
    if (src != static_cast<long>(m.assignments.size()))
      throw ParseError(file, lineno, "source indices must be 0, 1, 2, ... in order");
    m.assignments.push_back(static_cast<int>(parse_field<long>(cols[1], file, lineno)));
    if (has_conf) m.confidences.push_back(parse_field<double>(cols[2], file, lineno));
  }
  return m;
}

void write_map_csv(const PointMap& map, const fs::path& path) {
  auto f = open_csv(path);
  f << "source_index,target_index,confidence\n";
  for (std::size_t i = 0; i < map.size(); ++i) {
    const double conf = i < map.confidences.size() ? map.confidences[i] : 1.0;
    f << i << "," << map.assignments[i] << "," << fmt_double(conf) << "\n";
  }
  if (!f) throw DataError("write failed: " + path.string());
}

void write_npy(const Eigen::MatrixXd& m, const fs::path& path) {
  std::string header = "{'descr': '<f8', 'fortran_order': True, 'shape': (" + std::to_string(m.rows()) + ", " +
                       std::to_string(m.cols()) + "), }";
  // Magic (6) + version (2) + length (2) + header, padded with spaces to a
  // multiple of 64 and ended by a newline.
  const std::size_t unpadded = 10 + header.size() + 1;
  header.append((64 - unpadded % 64) % 64, ' ');
  header += '\n';
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("cannot write " + path.string());
  f.write("\x93NUMPY\x01\x00", 8);
  const auto len = static_cast<std::uint16_t>(header.size());
  const char lenb[2] = {static_cast<char>(len & 0xFF), static_cast<char>(len >> 8)};
  f.write(lenb, 2);
  f << header;
  // Eigen's default storage is column-major, matching fortran_order.
  f.write(reinterpret_cast<const char*>(m.data()), static_cast<std::streamsize>(sizeof(double) * m.size()));
  if (!f) throw DataError("write failed: " + path.string());
}

}  // namespace cyclemap
