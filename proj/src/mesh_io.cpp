#include <algorithm>
#include <array>
#include <bit>
#include <charconv>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string_view>

#include "cyclemap/error.hpp"
#include "cyclemap/mesh.hpp"

namespace cyclemap {
namespace fs = std::filesystem;

namespace {

static_assert(std::endian::native == std::endian::little, "binary I/O assumes a little-endian host");

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Line reader that tracks 1-based line numbers and strips comments.
class LineReader {
 public:
  LineReader(std::string_view text, std::string file) : text_(text), file_(std::move(file)) {}

  // Next non-empty, non-comment line; false at end of input.
  bool next(std::string_view& line) {
    while (pos_ < text_.size()) {
      std::size_t end = text_.find('\n', pos_);
      if (end == std::string_view::npos) end = text_.size();
      std::string_view raw = text_.substr(pos_, end - pos_);
      pos_ = end + 1;
      ++line_;
      if (const auto hash = raw.find('#'); hash != std::string_view::npos) raw = raw.substr(0, hash);
      raw = trim(raw);
      if (!raw.empty()) {
        line = raw;
        return true;
      }
    }
    return false;
  }

  std::size_t line() const { return line_; }
  std::size_t offset() const { return pos_; }
  [[noreturn]] void fail(const std::string& what) const { throw ParseError(file_, line_, what); }

  static std::string_view trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
  }

 private:
  std::string_view text_;
  std::string file_;
  std::size_t pos_ = 0;
  std::size_t line_ = 0;
};

std::vector<std::string_view> split_ws(std::string_view s) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && (s[i] == ' ' || s[i] == '\t' || s[i] == '\r')) ++i;
    if (i >= s.size()) break;
    std::size_t j = i;
    while (j < s.size() && s[j] != ' ' && s[j] != '\t' && s[j] != '\r') ++j;
    out.push_back(s.substr(i, j - i));
    i = j;
  }
  return out;
}

template <typename T>
bool parse_number(std::string_view tok, T& out) {
  const char* b = tok.data();
  const char* e = tok.data() + tok.size();
  if (!tok.empty() && tok.front() == '+') ++b;
  auto [p, ec] = std::from_chars(b, e, out);
  return ec == std::errc() && p == e;
}

struct RawMesh {
  std::vector<double> coords;
  std::vector<int> tris;
  std::vector<unsigned char> rgb;
};

void fan(const std::vector<long long>& poly, std::vector<int>& tris, std::size_t n_vertices, LineReader& lr) {
  if (poly.size() < 3) lr.fail("face with fewer than 3 vertices");
  for (long long idx : poly)
    if (idx < 0 || idx >= static_cast<long long>(n_vertices))
      lr.fail("face index " + std::to_string(idx) + " out of range [0, " + std::to_string(n_vertices) + ")");
  for (std::size_t k = 1; k + 1 < poly.size(); ++k) {
    tris.push_back(static_cast<int>(poly[0]));
    tris.push_back(static_cast<int>(poly[k]));
    tris.push_back(static_cast<int>(poly[k + 1]));
  }
}

TriMesh to_mesh(const RawMesh& raw) {
  const auto n = static_cast<Eigen::Index>(raw.coords.size() / 3);
  const auto f = static_cast<Eigen::Index>(raw.tris.size() / 3);
  if (n == 0) throw DataError("empty mesh: no vertices");
  if (f == 0) throw DataError("empty mesh: no faces");
  Vertices v = Eigen::Map<const Vertices>(raw.coords.data(), n, 3);
  Faces fc = Eigen::Map<const Faces>(raw.tris.data(), f, 3);
  return TriMesh(std::move(v), std::move(fc));
}

RawMesh parse_off(std::string_view text, const std::string& file) {
  LineReader lr(text, file);
  std::string_view line;
  if (!lr.next(line)) lr.fail("empty file");
  auto toks = split_ws(line);
  if (toks.empty() || (toks[0] != "OFF" && toks[0] != "COFF")) lr.fail("missing OFF header");
  toks.erase(toks.begin());
  if (toks.empty()) {
    if (!lr.next(line)) lr.fail("missing counts line");
    toks = split_ws(line);
  }
  long long nv = 0, nf = 0;
  if (toks.size() < 2 || !parse_number(toks[0], nv) || !parse_number(toks[1], nf) || nv < 0 || nf < 0)
    lr.fail("malformed counts line");
  RawMesh raw;
  raw.coords.reserve(static_cast<std::size_t>(nv) * 3);
  for (long long i = 0; i < nv; ++i) {
    if (!lr.next(line)) lr.fail("unexpected end of file in vertex list");
    const auto t = split_ws(line);
    double x, y, z;
    if (t.size() < 3 || !parse_number(t[0], x) || !parse_number(t[1], y) || !parse_number(t[2], z))
      lr.fail("malformed vertex");
    raw.coords.insert(raw.coords.end(), {x, y, z});
  }
  for (long long i = 0; i < nf; ++i) {
    if (!lr.next(line)) lr.fail("unexpected end of file in face list");
    const auto t = split_ws(line);
    long long cnt = 0;
    if (t.empty() || !parse_number(t[0], cnt) || cnt < 3 || static_cast<long long>(t.size()) < cnt + 1)
      lr.fail("malformed face");
    std::vector<long long> poly(static_cast<std::size_t>(cnt));
    for (long long k = 0; k < cnt; ++k)
      if (!parse_number(t[static_cast<std::size_t>(k + 1)], poly[static_cast<std::size_t>(k)]))
        lr.fail("malformed face index");
    fan(poly, raw.tris, static_cast<std::size_t>(nv), lr);
  }
  return raw;
}

RawMesh parse_obj(std::string_view text, const std::string& file) {
  LineReader lr(text, file);
  std::string_view line;
  RawMesh raw;
  // OBJ allows faces before all vertices are declared only in theory; indices
  // are checked after the whole file is read.
  std::vector<std::pair<std::vector<long long>, std::size_t>> polys;
  while (lr.next(line)) {
    const auto t = split_ws(line);
    if (t[0] == "v") {
      double x, y, z;
      if (t.size() < 4 || !parse_number(t[1], x) || !parse_number(t[2], y) || !parse_number(t[3], z))
        lr.fail("malformed vertex");
      raw.coords.insert(raw.coords.end(), {x, y, z});
    } else if (t[0] == "f") {
      std::vector<long long> poly;
      for (std::size_t k = 1; k < t.size(); ++k) {
        std::string_view tok = t[k].substr(0, t[k].find('/'));
        long long idx = 0;
        if (!parse_number(tok, idx) || idx == 0) lr.fail("malformed face index");
        const long long nv = static_cast<long long>(raw.coords.size() / 3);
        poly.push_back(idx > 0 ? idx - 1 : nv + idx);
      }
      polys.emplace_back(std::move(poly), lr.line());
    }
  }
  const std::size_t nv = raw.coords.size() / 3;
  for (const auto& [poly, line_no] : polys) {
    if (poly.size() < 3) throw ParseError(file, line_no, "face with fewer than 3 vertices");
    for (long long idx : poly)
      if (idx < 0 || idx >= static_cast<long long>(nv))
        throw ParseError(file, line_no,
                         "face index " + std::to_string(idx) + " out of range [0, " + std::to_string(nv) + ")");
    for (std::size_t k = 1; k + 1 < poly.size(); ++k)
      raw.tris.insert(raw.tris.end(), {static_cast<int>(poly[0]), static_cast<int>(poly[k]), static_cast<int>(poly[k + 1])});
  }
  return raw;
}

enum class PlyType { Int8, UInt8, Int16, UInt16, Int32, UInt32, Float32, Float64 };

std::optional<PlyType> ply_type(std::string_view s) {
  if (s == "char" || s == "int8") return PlyType::Int8;
  if (s == "uchar" || s == "uint8") return PlyType::UInt8;
  if (s == "short" || s == "int16") return PlyType::Int16;
  if (s == "ushort" || s == "uint16") return PlyType::UInt16;
  if (s == "int" || s == "int32") return PlyType::Int32;
  if (s == "uint" || s == "uint32") return PlyType::UInt32;
  if (s == "float" || s == "float32") return PlyType::Float32;
  if (s == "double" || s == "float64") return PlyType::Float64;
  return std::nullopt;
}

std::size_t ply_size(PlyType t) {
  switch (t) {
    case PlyType::Int8:
    case PlyType::UInt8: return 1;
    case PlyType::Int16:
    case PlyType::UInt16: return 2;
    case PlyType::Int32:
    case PlyType::UInt32:
    case PlyType::Float32: return 4;
    case PlyType::Float64: return 8;
  }
  return 0;
}

struct PlyProperty {
  std::string name;
  PlyType type = PlyType::Float32;
  bool is_list = false;
  PlyType count_type = PlyType::UInt8;
};

struct PlyElement {
  std::string name;
  std::size_t count = 0;
  std::vector<PlyProperty> props;
};

class BinaryCursor {
 public:
  BinaryCursor(std::string_view data, std::size_t pos, std::string file)
      : data_(data), pos_(pos), file_(std::move(file)) {}

  double read(PlyType t) {
    const std::size_t sz = ply_size(t);
    if (pos_ + sz > data_.size())
      throw DataError(file_ + ": byte " + std::to_string(pos_) + ": unexpected end of binary data");
    const char* p = data_.data() + pos_;
    pos_ += sz;
    switch (t) {
      case PlyType::Int8: return load<std::int8_t>(p);
      case PlyType::UInt8: return load<std::uint8_t>(p);
      case PlyType::Int16: return load<std::int16_t>(p);
      case PlyType::UInt16: return load<std::uint16_t>(p);
      case PlyType::Int32: return load<std::int32_t>(p);
      case PlyType::UInt32: return load<std::uint32_t>(p);
      case PlyType::Float32: return load<float>(p);
      case PlyType::Float64: return load<double>(p);
    }
    return 0.0;
  }
  std::size_t pos() const { return pos_; }

 private:
  template <typename T>
  static double load(const char* p) {
    T v;
    std::memcpy(&v, p, sizeof(T));
    return static_cast<double>(v);
  }
  std::string_view data_;
  std::size_t pos_;
  std::string file_;
};

RawMesh parse_ply(std::string_view text, const std::string& file) {
  LineReader lr(text, file);
  std::string_view line;
  if (!lr.next(line) || line != "ply") lr.fail("missing ply magic");
  bool binary = false;
  std::vector<PlyElement> elements;
  while (true) {
    if (!lr.next(line)) lr.fail("unterminated header");
    const auto t = split_ws(line);
    if (t[0] == "format") {
      if (t.size() < 2) lr.fail("malformed format line");
      if (t[1] == "ascii")
        binary = false;
      else if (t[1] == "binary_little_endian")
        binary = true;
      else
        lr.fail("unsupported PLY format '" + std::string(t[1]) + "'");
    } else if (t[0] == "comment" || t[0] == "obj_info") {
      continue;
    } else if (t[0] == "element") {
      long long cnt = 0;
      if (t.size() < 3 || !parse_number(t[2], cnt) || cnt < 0) lr.fail("malformed element line");
      elements.push_back({std::string(t[1]), static_cast<std::size_t>(cnt), {}});
    } else if (t[0] == "property") {
      if (elements.empty()) lr.fail("property before element");
      PlyProperty p;
      if (t.size() >= 5 && t[1] == "list") {
        auto ct = ply_type(t[2]);
        auto it = ply_type(t[3]);
        if (!ct || !it) lr.fail("unknown list property type");
        p.is_list = true;
        p.count_type = *ct;
        p.type = *it;
        p.name = std::string(t[4]);
      } else if (t.size() >= 3) {
        auto ty = ply_type(t[1]);
        if (!ty) lr.fail("unknown property type '" + std::string(t[1]) + "'");
        p.type = *ty;
        p.name = std::string(t[2]);
      } else {
        lr.fail("malformed property line");
      }
      elements.back().props.push_back(p);
    } else if (t[0] == "end_header") {
      break;
    } else {
      lr.fail("unexpected header keyword '" + std::string(t[0]) + "'");
    }
  }

  RawMesh raw;
  std::size_t nv = 0;
  for (const auto& e : elements)
    if (e.name == "vertex") nv = e.count;

  auto vertex_slot = [](const PlyElement& e, std::string_view name) -> int {
    for (std::size_t k = 0; k < e.props.size(); ++k)
      if (e.props[k].name == name) return static_cast<int>(k);
    return -1;
  };

  // Header is pure ASCII, so the line reader's offset is the body start.
  const std::size_t body = lr.offset();
  BinaryCursor cur(text, body, file);
  LineReader body_lines(text.substr(std::min(body, text.size())), file);
  std::string_view body_line;
  std::vector<std::string_view> toks;
  std::size_t tok_i = 0;
  auto next_ascii = [&]() -> double {
    while (tok_i >= toks.size()) {
      if (!body_lines.next(body_line))
        throw ParseError(file, lr.line() + body_lines.line(), "unexpected end of data");
      toks = split_ws(body_line);
      tok_i = 0;
    }
    double v = 0.0;
    if (!parse_number(toks[tok_i++], v)) throw ParseError(file, lr.line() + body_lines.line(), "malformed number");
    return v;
  };
  auto value = [&](PlyType t) { return binary ? cur.read(t) : next_ascii(); };

  for (const auto& e : elements) {
    const int ix = vertex_slot(e, "x"), iy = vertex_slot(e, "y"), iz = vertex_slot(e, "z");
    const int ir = vertex_slot(e, "red"), ig = vertex_slot(e, "green"), ib = vertex_slot(e, "blue");
    const bool is_vertex = e.name == "vertex";
    const bool is_face = e.name == "face";
    if (is_vertex && (ix < 0 || iy < 0 || iz < 0)) throw DataError(file + ": vertex element lacks x/y/z");
    const bool colors = is_vertex && ir >= 0 && ig >= 0 && ib >= 0;
    std::vector<double> vals(e.props.size());
    for (std::size_t r = 0; r < e.count; ++r) {
      std::vector<long long> poly;
      for (std::size_t k = 0; k < e.props.size(); ++k) {
        const auto& p = e.props[k];
        if (p.is_list) {
          const auto cnt = static_cast<long long>(value(p.count_type));
          if (cnt < 0) throw DataError(file + ": negative list length");
          const bool indices = is_face && (p.name == "vertex_indices" || p.name == "vertex_index");
          for (long long c = 0; c < cnt; ++c) {
            const double v = value(p.type);
            if (indices) poly.push_back(static_cast<long long>(v));
          }
        } else {
          vals[k] = value(p.type);
        }
      }
      if (is_vertex) {
        raw.coords.insert(raw.coords.end(), {vals[static_cast<std::size_t>(ix)], vals[static_cast<std::size_t>(iy)],
                                             vals[static_cast<std::size_t>(iz)]});
        if (colors)
          for (int slot : {ir, ig, ib}) raw.rgb.push_back(static_cast<unsigned char>(vals[static_cast<std::size_t>(slot)]));
      } else if (is_face) {
        if (poly.size() < 3) throw DataError(file + ": face " + std::to_string(r) + " with fewer than 3 vertices");
        for (long long idx : poly)
          if (idx < 0 || idx >= static_cast<long long>(nv))
            throw DataError(file + ": face " + std::to_string(r) + " index " + std::to_string(idx) +
                            " out of range [0, " + std::to_string(nv) + ")");
        for (std::size_t k = 1; k + 1 < poly.size(); ++k)
          raw.tris.insert(raw.tris.end(),
                          {static_cast<int>(poly[0]), static_cast<int>(poly[k]), static_cast<int>(poly[k + 1])});
      }
    }
  }
  return raw;
}

std::ofstream open_out(const fs::path& path, bool binary = false) {
  std::ofstream out(path, binary ? std::ios::binary : std::ios::out);
  if (!out) throw DataError("cannot write " + path.string());
  out.precision(17);
  return out;
}

}  // namespace

std::optional<MeshFormat> format_from_extension(const fs::path& path) {
  std::string ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (ext == ".off") return MeshFormat::Off;
  if (ext == ".obj") return MeshFormat::Obj;
  if (ext == ".ply") return MeshFormat::Ply;
  return std::nullopt;
}

LoadedMesh load_mesh_with_colors(const fs::path& path, std::optional<MeshFormat> format) {
  if (!format) format = format_from_extension(path);
  if (!format) throw UsageError("cannot infer mesh format of " + path.string());
  const std::string text = read_file(path);
  const std::string file = path.string();
  RawMesh raw;
  switch (*format) {
    case MeshFormat::Off: raw = parse_off(text, file); break;
    case MeshFormat::Obj: raw = parse_obj(text, file); break;
    case MeshFormat::Ply: raw = parse_ply(text, file); break;
  }
  LoadedMesh out{to_mesh(raw), std::nullopt};
  if (!raw.rgb.empty()) {
    const auto n = static_cast<Eigen::Index>(raw.rgb.size() / 3);
    out.colors = Eigen::Map<const Colors>(raw.rgb.data(), n, 3);
  }
  return out;
}

TriMesh load_mesh(const fs::path& path, std::optional<MeshFormat> format) {
  return load_mesh_with_colors(path, format).mesh;
}

void save_off(const TriMesh& mesh, const fs::path& path) {
  auto out = open_out(path);
  const auto& V = mesh.vertices();
  const auto& F = mesh.faces();
  out << "OFF\n" << V.rows() << ' ' << F.rows() << " 0\n";
  for (Eigen::Index i = 0; i < V.rows(); ++i) out << V(i, 0) << ' ' << V(i, 1) << ' ' << V(i, 2) << '\n';
  for (Eigen::Index t = 0; t < F.rows(); ++t) out << "3 " << F(t, 0) << ' ' << F(t, 1) << ' ' << F(t, 2) << '\n';
}

void save_obj(const TriMesh& mesh, const fs::path& path) {
  auto out = open_out(path);
  const auto& V = mesh.vertices();
  const auto& F = mesh.faces();
  for (Eigen::Index i = 0; i < V.rows(); ++i) out << "v " << V(i, 0) << ' ' << V(i, 1) << ' ' << V(i, 2) << '\n';
  for (Eigen::Index t = 0; t < F.rows(); ++t)
    out << "f " << F(t, 0) + 1 << ' ' << F(t, 1) + 1 << ' ' << F(t, 2) + 1 << '\n';
}

void save_ply(const TriMesh& mesh, const fs::path& path, PlyEncoding encoding, const Colors* colors) {
  const auto& V = mesh.vertices();
  const auto& F = mesh.faces();
  if (colors && colors->rows() != V.rows()) throw UsageError("color count does not match vertex count");
  const bool binary = encoding == PlyEncoding::BinaryLittleEndian;
  auto out = open_out(path, binary);
  out << "ply\nformat " << (binary ? "binary_little_endian" : "ascii") << " 1.0\n";
  out << "element vertex " << V.rows() << "\nproperty double x\nproperty double y\nproperty double z\n";
  if (colors) out << "property uchar red\nproperty uchar green\nproperty uchar blue\n";
  out << "element face " << F.rows() << "\nproperty list uchar int vertex_indices\nend_header\n";
  if (binary) {
    auto put = [&](const auto& v) { out.write(reinterpret_cast<const char*>(&v), sizeof(v)); };
    for (Eigen::Index i = 0; i < V.rows(); ++i) {
      put(V(i, 0));
      put(V(i, 1));
      put(V(i, 2));
      if (colors)
        for (int c = 0; c < 3; ++c) put((*colors)(i, c));
    }
    for (Eigen::Index t = 0; t < F.rows(); ++t) {
      put(static_cast<std::uint8_t>(3));
      for (int c = 0; c < 3; ++c) put(static_cast<std::int32_t>(F(t, c)));
    }
  } else {
    for (Eigen::Index i = 0; i < V.rows(); ++i) {
      out << V(i, 0) << ' ' << V(i, 1) << ' ' << V(i, 2);
      if (colors)
        for (int c = 0; c < 3; ++c) out << ' ' << static_cast<int>((*colors)(i, c));
      out << '\n';
    }
    for (Eigen::Index t = 0; t < F.rows(); ++t) out << "3 " << F(t, 0) << ' ' << F(t, 1) << ' ' << F(t, 2) << '\n';
  }
  if (!out) throw DataError("write failed for " + path.string());
}

void save_mesh(const TriMesh& mesh, const fs::path& path, std::optional<MeshFormat> format) {
  if (!format) format = format_from_extension(path);
  if (!format) throw UsageError("cannot infer mesh format of " + path.string());
  switch (*format) {
    case MeshFormat::Off: save_off(mesh, path); break;
    case MeshFormat::Obj: save_obj(mesh, path); break;
    case MeshFormat::Ply: save_ply(mesh, path); break;
  }
}

}  // namespace cyclemap
