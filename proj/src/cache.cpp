#include "cyclemap/cache.hpp"

#include <zlib.h>

#include <chrono>
#include <charconv>
#include <fstream>
#include <sstream>

#include "binary_io.hpp"
#include "cyclemap/error.hpp"

namespace cyclemap {
namespace {

constexpr const char* kSections[] = {"meta", "mesh", "labels", "basis", "descriptor", "distance"};

std::string fmt_double(double v) {
  char buf[32];
  auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

std::uint32_t crc(const std::string& bytes) {
  uLong c = crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths, so feed large sections in pieces.
  std::size_t off = 0;
  while (off < bytes.size()) {
    const std::size_t len = std::min<std::size_t>(bytes.size() - off, 1u << 30);
    c = crc32(c, reinterpret_cast<const Bytef*>(bytes.data() + off), static_cast<uInt>(len));
    off += len;
  }
  return static_cast<std::uint32_t>(c);
}

void put_ints(binio::Writer& w, const std::vector<int>& v) {
  w.put<std::uint64_t>(v.size());
  for (int x : v) w.put<std::int32_t>(x);
}

std::vector<int> get_ints(binio::Reader& r, const char* what) {
  const auto n = r.get<std::uint64_t>(what);
  r.need_elements(n, 4, what);
  std::vector<int> v(n);
  for (auto& x : v) x = r.get<std::int32_t>(what);
  return v;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

Eigen::MatrixXd round_to_float(const Eigen::MatrixXd& m) { return m.cast<float>().cast<double>(); }

std::string encode_mesh(const ShapeCache& c) {
  binio::Writer w;
  const auto& V = c.mesh->vertices();
  const auto& F = c.mesh->faces();
  w.put<std::uint64_t>(static_cast<std::uint64_t>(V.rows()));
  w.put<std::uint64_t>(static_cast<std::uint64_t>(F.rows()));
  for (Eigen::Index i = 0; i < V.rows(); ++i)
    for (int k = 0; k < 3; ++k) w.put<double>(V(i, k));
  for (Eigen::Index i = 0; i < F.rows(); ++i)
    for (int k = 0; k < 3; ++k) w.put<std::int32_t>(F(i, k));
  put_ints(w, c.vertex_map);
  put_ints(w, c.origin);
  return std::move(w.bytes());
}

std::string encode_labels(const ShapeCache& c) {
  binio::Writer w;
  put_ints(w, c.labels);
  return std::move(w.bytes());
}

std::string encode_basis(const ShapeCache& c) {
  binio::Writer w;
  const auto& B = c.basis;
  w.put<std::uint64_t>(static_cast<std::uint64_t>(B.n()));
  w.put<std::uint64_t>(static_cast<std::uint64_t>(B.k()));
  for (Eigen::Index j = 0; j < B.k(); ++j) w.put<double>(B.eigenvalues(j));
  for (Eigen::Index j = 0; j < B.k(); ++j)
    for (Eigen::Index i = 0; i < B.n(); ++i) w.put<double>(B.eigenfunctions(i, j));
  for (Eigen::Index i = 0; i < B.n(); ++i) w.put<double>(B.mass(i));
  return std::move(w.bytes());
}

std::string encode_descriptor(const ShapeCache& c) {
  binio::Writer w;
  const auto& st = c.stack;
  w.put<std::uint32_t>(static_cast<std::uint32_t>(st.m()));
  w.put<std::uint64_t>(static_cast<std::uint64_t>(st.n()));
  w.put<std::uint64_t>(static_cast<std::uint64_t>(st.s()));
  w.put<double>(st.radius);
  w.put<double>(st.radius_fraction);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(st.bins));
  w.put<std::uint64_t>(st.n_sparse);
  for (double s : st.scales) w.put<double>(s);
  for (const auto& slice : st.slices)
    for (Eigen::Index i = 0; i < slice.rows(); ++i)
      for (Eigen::Index j = 0; j < slice.cols(); ++j) w.put<float>(static_cast<float>(slice(i, j)));
  return std::move(w.bytes());
}

std::string encode_distance(const ShapeCache& c) {
  binio::Writer w;
  const auto& D = *c.dist;
  put_ints(w, D.sample_indices);
  w.put<std::uint8_t>(static_cast<std::uint8_t>((D.has_unreachable ? 1 : 0) | (D.dijkstra_fallback ? 2 : 0)));
  for (Eigen::Index j = 0; j < D.values.cols(); ++j)
    for (Eigen::Index i = 0; i < D.values.rows(); ++i) w.put<float>(static_cast<float>(D.values(i, j)));
  return std::move(w.bytes());
}

std::string encode_meta(const ShapeCache& c) {
  std::map<std::string, std::string> kv{{"name", c.name}, {"source_hash", std::to_string(c.source_hash)}};
  for (const auto& [sec, fp] : c.fingerprints) kv["fingerprint." + sec] = fp;
  std::string out;
  for (const auto& [k, v] : kv) out += k + "=" + v + "\n";
  return out;
}

}  // namespace

void PreprocessConfig::validate() const {
  if (target_n < 4) throw UsageError("target vertex count must be >= 4");
  if (k < 1) throw UsageError("k must be >= 1");
  if (m < 1) throw UsageError("m must be >= 1");
  if (bins < 2) throw UsageError("bins must be >= 2");
  if (s < 32 * bins) throw UsageError("s must be >= 32 * bins");
  if (!(radius_fraction > 0.0)) throw UsageError("radius_fraction must be positive");
  if (!(scale_lo > 0.0) || scale_hi < scale_lo) throw UsageError("scale range must satisfy 0 < lo <= hi");
}

MultiscaleOptions PreprocessConfig::multiscale() const {
  MultiscaleOptions o;
  o.m = m;
  o.lo = scale_lo;
  o.hi = scale_hi;
  o.radius_fraction = radius_fraction;
  o.bins = bins;
  o.width = s;
  return o;
}

std::string PreprocessConfig::mesh_fingerprint() const { return "target_n=" + std::to_string(target_n); }
std::string PreprocessConfig::basis_fingerprint() const { return mesh_fingerprint() + ";k=" + std::to_string(k); }
std::string PreprocessConfig::descriptor_fingerprint() const {
  return mesh_fingerprint() + ";m=" + std::to_string(m) + ";s=" + std::to_string(s) + ";bins=" + std::to_string(bins) +
         ";radius_fraction=" + fmt_double(radius_fraction) + ";scales=" + fmt_double(scale_lo) + ":" +
         fmt_double(scale_hi);
}
std::string PreprocessConfig::distance_fingerprint() const {
  return mesh_fingerprint() + ";samples=" + std::to_string(distance_samples);
}

ShapeContext ShapeCache::context() const {
  ShapeContext c;
  c.name = name;
  c.mesh = mesh;
  c.basis = basis;
  c.stack = stack;
  c.dist = dist;
  c.labels = labels;
  return c;
}

std::uint64_t fnv1a64(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : bytes) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t hash_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open " + path.string());
  return fnv1a64(std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>()));
}

std::vector<int> read_labels(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw DataError("cannot open " + path.string());
  std::vector<int> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    int v = 0;
    auto r = std::from_chars(line.data(), line.data() + line.size(), v);
    if (r.ec != std::errc() || r.ptr != line.data() + line.size())
      throw ParseError(path.string(), lineno, "expected one integer label per line");
    out.push_back(v);
  }
  return out;
}

void write_labels(const std::vector<int>& labels, const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw DataError("cannot write " + path.string());
  for (int v : labels) f << v << "\n";
  if (!f) throw DataError("write failed: " + path.string());
}

std::vector<int> cached_labels(const std::vector<int>& source_labels, const std::vector<int>& origin) {
  if (source_labels.empty()) return {};
  std::vector<int> out(origin.size());
  for (std::size_t i = 0; i < origin.size(); ++i) {
    const int o = origin[i];
    if (o < 0 || static_cast<std::size_t>(o) >= source_labels.size())
      throw DataError("label file has " + std::to_string(source_labels.size()) + " entries but vertex " +
                      std::to_string(o) + " is referenced");
    out[i] = source_labels[o];
  }
  return out;
}

ShapeCache preprocess(const TriMesh& source, const std::vector<int>& source_labels, const std::string& name,
                      std::uint64_t source_hash, const PreprocessConfig& cfg, const ShapeCache* prev,
                      PreprocessTimings* timings, std::vector<std::string>* recomputed) {
  cfg.validate();
  if (!source_labels.empty() && source_labels.size() != source.n_vertices())
    throw DataError(name + ": " + std::to_string(source_labels.size()) + " labels for " +
                    std::to_string(source.n_vertices()) + " vertices");
  if (prev && prev->source_hash != source_hash) prev = nullptr;
  auto reusable = [&](const char* section, const std::string& fp) {
    if (!prev) return false;
    auto it = prev->fingerprints.find(section);
    return it != prev->fingerprints.end() && it->second == fp;
  };
  auto note = [&](const char* section) {
    if (recomputed) recomputed->push_back(section);
  };
  PreprocessTimings local;
  PreprocessTimings& t = timings ? *timings : local;

  ShapeCache c;
  c.name = name;
  c.source_hash = source_hash;
  c.fingerprints["mesh"] = cfg.mesh_fingerprint();
  c.fingerprints["basis"] = cfg.basis_fingerprint();
  c.fingerprints["descriptor"] = cfg.descriptor_fingerprint();
  c.fingerprints["distance"] = cfg.distance_fingerprint();

  const bool mesh_ok = reusable("mesh", c.fingerprints["mesh"]);
  auto t0 = std::chrono::steady_clock::now();
  if (mesh_ok) {
    c.mesh = prev->mesh;
    c.vertex_map = prev->vertex_map;
    c.origin = prev->origin;
  } else {
    note("mesh");
    if (source.n_vertices() > cfg.target_n) {
      DecimationResult d = decimate(source, cfg.target_n);
      c.mesh = std::make_shared<TriMesh>(normalize_unit_area(d.mesh));
      c.vertex_map = std::move(d.vertex_map);
      c.origin = std::move(d.origin);
    } else {
      c.mesh = std::make_shared<TriMesh>(normalize_unit_area(source));
      c.vertex_map.resize(source.n_vertices());
      for (std::size_t i = 0; i < c.vertex_map.size(); ++i) c.vertex_map[i] = static_cast<int>(i);
      c.origin = c.vertex_map;
    }
  }
  c.labels = cached_labels(source_labels, c.origin);
  t.mesh = seconds_since(t0);

  // Downstream sections are only reusable when the mesh itself was reused.
  t0 = std::chrono::steady_clock::now();
  if (mesh_ok && reusable("basis", c.fingerprints["basis"])) {
    c.basis = prev->basis;
  } else {
    note("basis");
    c.basis = eigenbasis(cotan_laplacian(*c.mesh), cfg.k);
  }
  t.basis = seconds_since(t0);

  t0 = std::chrono::steady_clock::now();
  if (mesh_ok && reusable("descriptor", c.fingerprints["descriptor"])) {
    c.stack = prev->stack;
  } else {
    note("descriptor");
    c.stack = multiscale_shot(*c.mesh, cfg.multiscale());
    for (auto& slice : c.stack.slices) slice = round_to_float(slice);
  }
  t.descriptor = seconds_since(t0);

  t0 = std::chrono::steady_clock::now();
  if (mesh_ok && reusable("distance", c.fingerprints["distance"])) {
    c.dist = prev->dist;
  } else {
    note("distance");
    std::optional<std::vector<int>> sample;
    if (cfg.distance_samples > 0 && cfg.distance_samples < c.mesh->n_vertices()) {
      sample = fps_sample(*c.mesh, cfg.distance_samples, 0);
      std::sort(sample->begin(), sample->end());
    }
    DistanceMatrix d = distance_matrix(*c.mesh, sample);
    d.values = round_to_float(d.values);
    c.dist = std::make_shared<DistanceMatrix>(std::move(d));
  }
  t.distance = seconds_since(t0);
  return c;
}

void save_cache(const ShapeCache& c, const std::filesystem::path& path) {
  std::vector<std::pair<std::string, std::string>> sections{
      {"meta", encode_meta(c)},           {"mesh", encode_mesh(c)},
      {"labels", encode_labels(c)},       {"basis", encode_basis(c)},
      {"descriptor", encode_descriptor(c)}, {"distance", encode_distance(c)},
  };
  // Header: magic, version, count, then per section: name, offset, length,
  // crc32. Offsets are absolute.
  std::size_t header = 4 + 4 + 4;
  for (const auto& [name, body] : sections) header += 8 + name.size() + 8 + 8 + 4;
  binio::Writer w;
  w.put_bytes("CYSH");
  w.put<std::uint32_t>(ShapeCache::kVersion);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(sections.size()));
  std::uint64_t offset = header;
  for (const auto& [name, body] : sections) {
    w.put_string(name);
    w.put<std::uint64_t>(offset);
    w.put<std::uint64_t>(body.size());
    w.put<std::uint32_t>(crc(body));
    offset += body.size();
  }
  for (const auto& [name, body] : sections) w.put_bytes(body);

  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw DataError("cannot write " + tmp);
    f.write(w.bytes().data(), static_cast<std::streamsize>(w.bytes().size()));
    if (!f) throw DataError("write failed: " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

ShapeCache load_cache(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open cache " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  const std::string file = path.string();
  if (bytes.size() < 4) throw DataError(file + ": truncated cache (while reading magic)");
  if (bytes.compare(0, 4, "CYSH") != 0) throw DataError(file + ": not a shape cache (bad magic)");
  binio::Reader hr(bytes, file, "cache", 4);
  const auto version = hr.get<std::uint32_t>("version");
  if (version != ShapeCache::kVersion)
    throw DataError(file + ": cache version " + std::to_string(version) + " is not supported (expected " +
                    std::to_string(ShapeCache::kVersion) + ")");
  const auto count = hr.get<std::uint32_t>("section count");
  struct Entry {
    std::uint64_t offset, length;
  };
  std::map<std::string, Entry> table;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string name = hr.get_string("section table");
    const auto off = hr.get<std::uint64_t>("section table");
    const auto len = hr.get<std::uint64_t>("section table");
    const auto sum = hr.get<std::uint32_t>("section table");
    if (off > bytes.size() || len > bytes.size() - off)
      throw DataError(file + ": truncated cache (section '" + name + "' extends past the end)");
    if (crc(bytes.substr(off, len)) != sum) throw DataError(file + ": checksum mismatch in section '" + name + "'");
    table[name] = {off, len};
  }
  for (const char* s : kSections)
    if (!table.count(s)) throw DataError(file + ": missing section '" + s + "'");
  auto reader = [&](const char* s) {
    const Entry& e = table[s];
    return binio::Reader(bytes, file, std::string("cache section '") + s + "'", e.offset, e.offset + e.length);
  };

  ShapeCache c;
  {
    const Entry& e = table["meta"];
    std::istringstream is(bytes.substr(e.offset, e.length));
    for (std::string line; std::getline(is, line);) {
      const auto eq = line.find('=');
      if (eq == std::string::npos) throw DataError(file + ": malformed meta line '" + line + "'");
      const std::string key = line.substr(0, eq), value = line.substr(eq + 1);
      if (key == "name") c.name = value;
      else if (key == "source_hash") c.source_hash = std::stoull(value);
      else if (key.rfind("fingerprint.", 0) == 0) c.fingerprints[key.substr(12)] = value;
    }
  }
  {
    auto r = reader("mesh");
    const auto nv = r.get<std::uint64_t>("vertex count");
    const auto nf = r.get<std::uint64_t>("face count");
    r.need_elements(nv, 24, "vertices");
    Vertices V(static_cast<Eigen::Index>(nv), 3);
    for (Eigen::Index i = 0; i < V.rows(); ++i)
      for (int k = 0; k < 3; ++k) V(i, k) = r.get<double>("vertices");
    r.need_elements(nf, 12, "faces");
    Faces F(static_cast<Eigen::Index>(nf), 3);
    for (Eigen::Index i = 0; i < F.rows(); ++i)
      for (int k = 0; k < 3; ++k) F(i, k) = r.get<std::int32_t>("faces");
    c.mesh = std::make_shared<TriMesh>(std::move(V), std::move(F));
    c.vertex_map = get_ints(r, "vertex map");
    c.origin = get_ints(r, "origin");
  }
  {
    auto r = reader("labels");
    c.labels = get_ints(r, "labels");
  }
  {
    auto r = reader("basis");
    const auto n = r.get<std::uint64_t>("basis size");
    const auto k = r.get<std::uint64_t>("basis size");
    r.need_elements(k, 8, "eigenvalues");
    c.basis.eigenvalues.resize(static_cast<Eigen::Index>(k));
    for (Eigen::Index j = 0; j < c.basis.eigenvalues.size(); ++j) c.basis.eigenvalues(j) = r.get<double>("eigenvalues");
    r.need_matrix(n, k, 8, "eigenfunctions");
    c.basis.eigenfunctions.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(k));
    for (Eigen::Index j = 0; j < c.basis.eigenfunctions.cols(); ++j)
      for (Eigen::Index i = 0; i < c.basis.eigenfunctions.rows(); ++i)
        c.basis.eigenfunctions(i, j) = r.get<double>("eigenfunctions");
    r.need_elements(n, 8, "mass");
    c.basis.mass.resize(static_cast<Eigen::Index>(n));
    for (Eigen::Index i = 0; i < c.basis.mass.size(); ++i) c.basis.mass(i) = r.get<double>("mass");
  }
  {
    auto r = reader("descriptor");
    const auto m = r.get<std::uint32_t>("descriptor header");
    const auto n = r.get<std::uint64_t>("descriptor header");
    const auto s = r.get<std::uint64_t>("descriptor header");
    c.stack.radius = r.get<double>("descriptor header");
    c.stack.radius_fraction = r.get<double>("descriptor header");
    c.stack.bins = static_cast<int>(r.get<std::uint32_t>("descriptor header"));
    c.stack.n_sparse = r.get<std::uint64_t>("descriptor header");
    r.need_elements(m, 8, "scales");
    for (std::uint32_t i = 0; i < m; ++i) c.stack.scales.push_back(r.get<double>("scales"));
    r.need_matrix(n, s, 4 * static_cast<std::size_t>(std::max<std::uint32_t>(m, 1)), "descriptor values");
    for (std::uint32_t l = 0; l < m; ++l) {
      Eigen::MatrixXd slice(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(s));
      for (Eigen::Index i = 0; i < slice.rows(); ++i)
        for (Eigen::Index j = 0; j < slice.cols(); ++j) slice(i, j) = r.get<float>("descriptor values");
      c.stack.slices.push_back(std::move(slice));
    }
  }
  {
    auto r = reader("distance");
    DistanceMatrix d;
    d.sample_indices = get_ints(r, "sample indices");
    const auto flags = r.get<std::uint8_t>("distance flags");
    d.has_unreachable = flags & 1;
    d.dijkstra_fallback = flags & 2;
    const auto p = static_cast<Eigen::Index>(d.sample_indices.size());
    r.need_matrix(static_cast<std::uint64_t>(p), static_cast<std::uint64_t>(p), 4, "distances");
    d.values.resize(p, p);
    for (Eigen::Index j = 0; j < p; ++j)
      for (Eigen::Index i = 0; i < p; ++i) d.values(i, j) = r.get<float>("distances");
    c.dist = std::make_shared<DistanceMatrix>(std::move(d));
  }
  const auto n = static_cast<Eigen::Index>(c.mesh->n_vertices());
  if (c.basis.n() != n || c.stack.n() != n || (!c.labels.empty() && c.labels.size() != c.mesh->n_vertices()))
    throw DataError(file + ": cache sections disagree on the vertex count");
  return c;
}

}  // namespace cyclemap
