#include "trikit/mesh.hpp"

#include <algorithm>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <tuple>
#include <unordered_map>

namespace trikit {

namespace {

constexpr double kSh0C0 = 0.2820947917738781;

int sign3(double v) { return v > 0.0 ? 1 : (v < 0.0 ? -1 : 0); }

struct VertexKey {
  int64_t qx, qy, qz;
  int8_t ox, oy, oz;
  bool operator==(const VertexKey& o) const {
    return qx == o.qx && qy == o.qy && qz == o.qz && ox == o.ox && oy == o.oy && oz == o.oz;
  }
};

struct VertexKeyHash {
  size_t operator()(const VertexKey& k) const {
    uint64_t h = 0xcbf29ce484222325ULL;
    auto mix = [&h](uint64_t v) {
      h ^= v;
      h *= 0x100000001b3ULL;
    };
    mix(static_cast<uint64_t>(k.qx));
    mix(static_cast<uint64_t>(k.qy));
    mix(static_cast<uint64_t>(k.qz));
    mix((static_cast<uint64_t>(static_cast<uint8_t>(k.ox)) << 16) |
        (static_cast<uint64_t>(static_cast<uint8_t>(k.oy)) << 8) |
        static_cast<uint64_t>(static_cast<uint8_t>(k.oz)));
    return static_cast<size_t>(h);
  }
};

}  // namespace

TriangleSet prune_triangles(const TriangleSet& tris, double threshold, double tau,
                            double exponent) {
  require(threshold > 0.0 && threshold < 1.0, "prune_triangles: threshold outside (0,1)");
  TriangleSet out;
  out.s_min = tris.s_min;
  out.s_max = tris.s_max;
  out.source_poses = tris.source_poses;
  for (size_t i = 0; i < tris.size(); ++i) {
    if (tris.flags[i] & kFlagDegenerate) continue;
    const double mapped = opacity_map(sigmoid(tris.density_logits[i]), exponent);
    if (temperature_sharpen(mapped, tau) < threshold) continue;
    out.centers.push_back(tris.centers[i]);
    out.scale_logits.push_back(tris.scale_logits[i]);
    out.quats.push_back(tris.quats[i]);
    out.sh0.push_back(tris.sh0[i]);
    out.density_logits.push_back(tris.density_logits[i]);
    out.blur_raws.push_back(tris.blur_raws[i]);
    out.source_pixels.push_back(tris.source_pixels[i]);
    out.flags.push_back(tris.flags[i]);
    out.scale_refs.push_back(tris.scale_refs[i]);
    out.ref_normals.push_back(tris.ref_normals[i]);
  }
  return out;
}

std::array<Vec3, 3> fix_winding(const std::array<Vec3, 3>& face, const Vec3& reference) {
  const Vec3 n = (face[1] - face[0]).cross(face[2] - face[0]);
  require(n.norm() > 0.0, "fix_winding: zero-area face");
  if (n.dot(reference) < 0.0) return {face[0], face[2], face[1]};
  return face;
}

Mesh dedup_vertices(std::span<const SoupFace> faces, double precision) {
  require(precision > 0.0, "dedup_vertices: precision must be positive");
  Mesh mesh;
  std::unordered_map<VertexKey, int32_t, VertexKeyHash> lookup;
  lookup.reserve(faces.size() * 3);

  for (const SoupFace& face : faces) {
    const Vec3 n = (face.vertices[1] - face.vertices[0]).cross(face.vertices[2] - face.vertices[0]);
    const int8_t ox = static_cast<int8_t>(sign3(n.x()));
    const int8_t oy = static_cast<int8_t>(sign3(n.y()));
    const int8_t oz = static_cast<int8_t>(sign3(n.z()));
    std::array<int32_t, 3> idx{};
    for (int k = 0; k < 3; ++k) {
      const Vec3& v = face.vertices[k];
      VertexKey key{static_cast<int64_t>(std::llround(v.x() / precision)),
                    static_cast<int64_t>(std::llround(v.y() / precision)),
                    static_cast<int64_t>(std::llround(v.z() / precision)),
                    ox, oy, oz};
      auto [it, inserted] = lookup.try_emplace(key, static_cast<int32_t>(mesh.vertices.size()));
      if (inserted) mesh.vertices.push_back(v);
      idx[k] = it->second;
    }
    if (idx[0] == idx[1] || idx[1] == idx[2] || idx[0] == idx[2]) continue;  // collapsed
    mesh.faces.push_back(idx);
    mesh.colors.push_back(face.color);
  }
  return mesh;
}

Vec3 sh0_to_color(const Vec3& sh0) {
  Vec3 c = sh0 * kSh0C0 + Vec3::Constant(0.5);
  return c.cwiseMax(0.0).cwiseMin(1.0);
}

ExportResult export_mesh(const TriangleSet& tris, std::span<const Vec3> reference_normals,
                         const ExportConfig& cfg) {
  require(reference_normals.size() == tris.size(),
          "export_mesh: one reference normal per primitive required");
  const CanonicalTemplate tmpl = CanonicalTemplate::standard();

  std::vector<SoupFace> soup;
  size_t kept = 0;
  for (size_t i = 0; i < tris.size(); ++i) {
    if (tris.flags[i] & kFlagDegenerate) continue;
    const double mapped = opacity_map(sigmoid(tris.density_logits[i]), cfg.prune_exponent);
    if (temperature_sharpen(mapped, cfg.prune_tau) < cfg.prune_threshold) continue;
    const BuiltTriangle built = build_vertices(tris, i, tmpl, cfg.degenerate_area_eps);
    if (built.degenerate) continue;
    ++kept;
    SoupFace face;
    face.vertices = fix_winding(built.vertices, reference_normals[i]);
    face.color = sh0_to_color(tris.sh0[i]);
    soup.push_back(face);
  }

  ExportResult result;
  result.kept_primitives = kept;
  result.empty_after_prune = soup.empty();
  result.mesh = dedup_vertices(soup, cfg.dedup_precision);
  return result;
}

ExportResult export_mesh(const TriangleSet& tris, const ExportConfig& cfg) {
  return export_mesh(tris, std::span<const Vec3>(tris.ref_normals), cfg);
}

namespace {

// Vertex color assignment for indexed output: per-face color is
// authoritative, so vertices shared by faces of conflicting colors are
// duplicated per color.
struct IndexedColored {
  std::vector<Vec3> vertices;
  std::vector<Vec3> vertex_colors;
  std::vector<std::array<int32_t, 3>> faces;
};

IndexedColored assign_vertex_colors(const Mesh& m) {
  IndexedColored out;
  out.vertices = m.vertices;
  out.vertex_colors.assign(m.vertices.size(), Vec3::Constant(0.5));
  std::vector<uint8_t> assigned(m.vertices.size(), 0);
  std::map<std::pair<int32_t, std::array<double, 3>>, int32_t> dup;

  out.faces.reserve(m.faces.size());
  for (size_t f = 0; f < m.faces.size(); ++f) {
    const Vec3 color = f < m.colors.size() ? m.colors[f] : Vec3::Constant(0.5);
    std::array<int32_t, 3> idx = m.faces[f];
    for (int k = 0; k < 3; ++k) {
      const int32_t v = idx[k];
      if (!assigned[v]) {
        assigned[v] = 1;
        out.vertex_colors[v] = color;
      } else if (out.vertex_colors[v] != color) {
        const std::pair<int32_t, std::array<double, 3>> key{v, {color.x(), color.y(), color.z()}};
        auto [it, inserted] = dup.try_emplace(key, static_cast<int32_t>(out.vertices.size()));
        if (inserted) {
          out.vertices.push_back(out.vertices[v]);
          out.vertex_colors.push_back(color);
        }
        idx[k] = it->second;
      }
    }
    out.faces.push_back(idx);
  }
  return out;
}

void write_obj(const Mesh& m, const std::filesystem::path& path) {
  const IndexedColored ic = assign_vertex_colors(m);
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_mesh: cannot open " + path.string());
  char line[256];
  for (size_t i = 0; i < ic.vertices.size(); ++i) {
    const Vec3& v = ic.vertices[i];
    const Vec3& c = ic.vertex_colors[i];
    std::snprintf(line, sizeof(line), "v %.9g %.9g %.9g %.9g %.9g %.9g\n", v.x(), v.y(), v.z(),
                  c.x(), c.y(), c.z());
    out << line;
  }
  for (const auto& f : ic.faces) {
    std::snprintf(line, sizeof(line), "f %d %d %d\n", f[0] + 1, f[1] + 1, f[2] + 1);
    out << line;
  }
  if (!out) throw std::runtime_error("write_mesh: write failed for " + path.string());
}

template <typename T>
void put_le(std::ostream& out, T v) {
  unsigned char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

void write_ply(const Mesh& m, const std::filesystem::path& path) {
  const IndexedColored ic = assign_vertex_colors(m);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("write_mesh: cannot open " + path.string());
  out << "ply\nformat binary_little_endian 1.0\n";
  out << "element vertex " << ic.vertices.size() << "\n";
  out << "property float x\nproperty float y\nproperty float z\n";
  out << "property uchar red\nproperty uchar green\nproperty uchar blue\n";
  out << "element face " << ic.faces.size() << "\n";
  out << "property list uchar int vertex_indices\n";
  out << "end_header\n";
  for (size_t i = 0; i < ic.vertices.size(); ++i) {
    put_le(out, static_cast<float>(ic.vertices[i].x()));
    put_le(out, static_cast<float>(ic.vertices[i].y()));
    put_le(out, static_cast<float>(ic.vertices[i].z()));
    for (int ch = 0; ch < 3; ++ch) {
      const double c = std::clamp(ic.vertex_colors[i][ch], 0.0, 1.0);
      put_le(out, static_cast<unsigned char>(std::lround(c * 255.0)));
    }
  }
  for (const auto& f : ic.faces) {
    put_le(out, static_cast<unsigned char>(3));
    for (int k = 0; k < 3; ++k) put_le(out, f[k]);
  }
  if (!out) throw std::runtime_error("write_mesh: write failed for " + path.string());
}

struct PlyProperty {
  std::string name;
  std::string type;
  bool is_list = false;
  std::string count_type;
};

size_t scalar_size(const std::string& type) {
  if (type == "char" || type == "uchar" || type == "int8" || type == "uint8") return 1;
  if (type == "short" || type == "ushort" || type == "int16" || type == "uint16") return 2;
  if (type == "int" || type == "uint" || type == "int32" || type == "uint32" || type == "float" ||
      type == "float32")
    return 4;
  if (type == "double" || type == "float64") return 8;
  throw std::runtime_error("read_mesh: unsupported PLY type " + type);
}

double read_scalar(std::istream& in, const std::string& type) {
  unsigned char buf[8];
  const size_t n = scalar_size(type);
  in.read(reinterpret_cast<char*>(buf), n);
  if (!in) throw std::runtime_error("read_mesh: truncated PLY payload");
  if (type == "float" || type == "float32") {
    float v;
    std::memcpy(&v, buf, 4);
    return v;
  }
  if (type == "double" || type == "float64") {
    double v;
    std::memcpy(&v, buf, 8);
    return v;
  }
  if (type == "uchar" || type == "uint8") return buf[0];
  if (type == "char" || type == "int8") return static_cast<int8_t>(buf[0]);
  if (type == "ushort" || type == "uint16") {
    uint16_t v;
    std::memcpy(&v, buf, 2);
    return v;
  }
  if (type == "short" || type == "int16") {
    int16_t v;
    std::memcpy(&v, buf, 2);
    return v;
  }
  if (type == "uint" || type == "uint32") {
    uint32_t v;
    std::memcpy(&v, buf, 4);
    return v;
  }
  int32_t v;
  std::memcpy(&v, buf, 4);
  return v;
}

Mesh read_ply(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("read_mesh: cannot open " + path.string());
  std::string line;
  std::getline(in, line);
  if (line != "ply") throw std::runtime_error("read_mesh: not a PLY file: " + path.string());

  struct Element {
    std::string name;
    size_t count = 0;
    std::vector<PlyProperty> props;
  };
  std::vector<Element> elements;
  bool binary_le = false;
  while (std::getline(in, line)) {
    std::istringstream ss(line);
    std::string tok;
    ss >> tok;
    if (tok == "comment") continue;
    if (tok == "format") {
      std::string fmt;
      ss >> fmt;
      binary_le = fmt == "binary_little_endian";
      if (!binary_le) throw std::runtime_error("read_mesh: only binary little-endian PLY supported");
    } else if (tok == "element") {
      Element e;
      ss >> e.name >> e.count;
      elements.push_back(e);
    } else if (tok == "property") {
      PlyProperty p;
      std::string t;
      ss >> t;
      if (t == "list") {
        p.is_list = true;
        ss >> p.count_type >> p.type >> p.name;
      } else {
        p.type = t;
        ss >> p.name;
      }
      if (elements.empty()) throw std::runtime_error("read_mesh: property before element");
      elements.back().props.push_back(p);
    } else if (tok == "end_header") {
      break;
    }
  }

  Mesh mesh;
  for (const Element& e : elements) {
    if (e.name == "vertex") {
      mesh.vertices.reserve(e.count);
      std::vector<Vec3> colors;
      bool has_color = false;
      for (const PlyProperty& p : e.props) {
        if (p.name == "red") has_color = true;
      }
      if (has_color) colors.reserve(e.count);
      for (size_t i = 0; i < e.count; ++i) {
        Vec3 v = Vec3::Zero();
        Vec3 c = Vec3::Constant(0.5);
        for (const PlyProperty& p : e.props) {
          if (p.is_list) {
            const size_t n = static_cast<size_t>(read_scalar(in, p.count_type));
            for (size_t k = 0; k < n; ++k) read_scalar(in, p.type);
            continue;
          }
          const double value = read_scalar(in, p.type);
          if (p.name == "x") v.x() = value;
          else if (p.name == "y") v.y() = value;
          else if (p.name == "z") v.z() = value;
          else if (p.name == "red") c.x() = value / 255.0;
          else if (p.name == "green") c.y() = value / 255.0;
          else if (p.name == "blue") c.z() = value / 255.0;
        }
        mesh.vertices.push_back(v);
        if (has_color) colors.push_back(c);
      }
      // Per-vertex colors become per-face colors below; stash them.
      if (has_color) mesh.colors = std::move(colors);
    } else if (e.name == "face") {
      std::vector<Vec3> vertex_colors = std::move(mesh.colors);
      mesh.colors.clear();
      mesh.faces.reserve(e.count);
      for (size_t i = 0; i < e.count; ++i) {
        for (const PlyProperty& p : e.props) {
          if (!p.is_list) {
            read_scalar(in, p.type);
            continue;
          }
          const size_t n = static_cast<size_t>(read_scalar(in, p.count_type));
          std::vector<int32_t> idx(n);
          for (size_t k = 0; k < n; ++k) idx[k] = static_cast<int32_t>(read_scalar(in, p.type));
          if (n == 3) {
            mesh.faces.push_back({idx[0], idx[1], idx[2]});
            const Vec3 c = !vertex_colors.empty() && idx[0] < static_cast<int32_t>(vertex_colors.size())
                               ? vertex_colors[idx[0]]
                               : Vec3::Constant(0.5);
            mesh.colors.push_back(c);
          }
        }
      }
      if (mesh.faces.empty()) mesh.colors.clear();
    } else {
      // Skip unknown fixed-size elements.
      for (size_t i = 0; i < e.count; ++i) {
        for (const PlyProperty& p : e.props) {
          if (p.is_list) {
            const size_t n = static_cast<size_t>(read_scalar(in, p.count_type));
            for (size_t k = 0; k < n; ++k) read_scalar(in, p.type);
          } else {
            read_scalar(in, p.type);
          }
        }
      }
    }
  }
  for (const auto& f : mesh.faces) {
    for (int32_t v : f) {
      if (v < 0 || v >= static_cast<int32_t>(mesh.vertices.size()))
        throw std::runtime_error("read_mesh: face index out of range");
    }
  }
  return mesh;
}

Mesh read_obj(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("read_mesh: cannot open " + path.string());
  Mesh mesh;
  std::vector<Vec3> vertex_colors;
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream ss(line);
    std::string tok;
    ss >> tok;
    if (tok == "v") {
      double x, y, z;
      if (!(ss >> x >> y >> z))
        throw std::runtime_error("read_mesh: malformed vertex at line " + std::to_string(line_no));
      double r, g, b;
      Vec3 c = Vec3::Constant(0.5);
      if (ss >> r >> g >> b) c = Vec3(r, g, b);
      mesh.vertices.push_back(Vec3(x, y, z));
      vertex_colors.push_back(c);
    } else if (tok == "f") {
      std::array<int32_t, 3> f{};
      for (int k = 0; k < 3; ++k) {
        std::string field;
        if (!(ss >> field))
          throw std::runtime_error("read_mesh: malformed face at line " + std::to_string(line_no));
        f[k] = static_cast<int32_t>(std::stol(field.substr(0, field.find('/')))) - 1;
        if (f[k] < 0 || f[k] >= static_cast<int32_t>(mesh.vertices.size()))
          throw std::runtime_error("read_mesh: face index out of range at line " +
                                   std::to_string(line_no));
      }
      mesh.faces.push_back(f);
      mesh.colors.push_back(vertex_colors[f[0]]);
    }
  }
  return mesh;
}

}  // namespace

void write_mesh(const Mesh& m, MeshFormat format, const std::filesystem::path& path) {
  for (const auto& f : m.faces) {
    require(f[0] != f[1] && f[1] != f[2] && f[0] != f[2], "write_mesh: degenerate face");
    for (int32_t v : f)
      require(v >= 0 && v < static_cast<int32_t>(m.vertices.size()),
              "write_mesh: face index out of range");
  }
  if (format == MeshFormat::kObj) {
    write_obj(m, path);
  } else {
    write_ply(m, path);
  }
}

Mesh read_mesh(const std::filesystem::path& path) {
  const std::string ext = path.extension().string();
  if (ext == ".obj" || ext == ".OBJ") return read_obj(path);
  return read_ply(path);
}

}  // namespace trikit
