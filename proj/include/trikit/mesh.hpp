#pragma once

#include <array>
#include <filesystem>
#include <span>
#include <string>

#include "trikit/triangles.hpp"

namespace trikit {

// Indexed triangle mesh with one color per face. A vertex-only mesh (no
// faces) represents a point cloud when read from PLY.
struct Mesh {
  std::vector<Vec3> vertices;
  std::vector<std::array<int32_t, 3>> faces;
  std::vector<Vec3> colors;  // per face, [0,1]

  bool empty() const { return faces.empty(); }
};

enum class MeshFormat { kObj, kPly };

struct ExportConfig {
  double prune_threshold = 0.10;
  double prune_tau = 5.0;
  double prune_exponent = 2.0;  // opacity-map exponent at export
  double dedup_precision = 1e-5;
  double degenerate_area_eps = 1e-12;
};

// Keeps primitives whose sharpened mapped opacity clears the threshold and
// that are not flagged degenerate.
TriangleSet prune_triangles(const TriangleSet& tris, double threshold = 0.10, double tau = 5.0,
                            double exponent = 2.0);

// Swaps v2/v3 when the face normal disagrees with the reference.
// Throws on zero-area faces.
std::array<Vec3, 3> fix_winding(const std::array<Vec3, 3>& face, const Vec3& reference);

struct SoupFace {
  std::array<Vec3, 3> vertices;
  Vec3 color = Vec3::Constant(0.5);
};

// Quantized position hashing with normal-octant keying: vertices merge only
// within matching octants of the owning face normal. First occurrence wins.
Mesh dedup_vertices(std::span<const SoupFace> faces, double precision = 1e-5);

// clamp(sh0 * C0 + 0.5, 0, 1) with C0 = 1/(2 sqrt(pi)).
Vec3 sh0_to_color(const Vec3& sh0);

struct ExportResult {
  Mesh mesh;
  bool empty_after_prune = false;
  size_t kept_primitives = 0;
};

// prune -> build -> winding fix against the per-primitive reference normal
// -> dedup -> color. Reference normals default to the set's stored ones.
ExportResult export_mesh(const TriangleSet& tris, std::span<const Vec3> reference_normals,
                         const ExportConfig& cfg = {});
ExportResult export_mesh(const TriangleSet& tris, const ExportConfig& cfg = {});

void write_mesh(const Mesh& m, MeshFormat format, const std::filesystem::path& path);
Mesh read_mesh(const std::filesystem::path& path);

}  // namespace trikit
