#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "trikit/triangles.hpp"

namespace trikit {

struct RasterConfig {
  int tile_size = 16;
  double kappa = 3.0;  // coverage band = kappa * blur sigma, pixels
  double near_plane = 1e-4;
  double transmittance_cutoff = 1e-4;
  double alpha_eps = 1e-6;
  Vec3 background = Vec3::Zero();
  int threads = 0;  // 0 = runtime default
};

// A primitive after projection: pixel-space vertices, per-vertex camera
// depth, flat compositing attributes, and the blur band in pixels.
struct ScreenTriangle {
  Vec2 v[3];
  double depth[3] = {0.0, 0.0, 0.0};
  double mean_depth = 0.0;
  Vec3 color = Vec3::Zero();
  double opacity = 0.0;
  double band = 0.0;
  Vec3 normal = Vec3::UnitZ();
  int32_t id = -1;
};

struct RenderOutput {
  ImageRGB rgb;
  DepthMap depth;
  NormalField normal;
  ScalarGrid alpha;
};

// Per-tile candidate lists, each in global (mean depth, id) order.
struct TileBins {
  int tile_size = 16;
  int tiles_x = 0;
  int tiles_y = 0;
  int width = 0;
  int height = 0;
  std::vector<std::vector<int32_t>> bins;

  const std::vector<int32_t>& bin(int ty, int tx) const {
    return bins[static_cast<size_t>(ty) * tiles_x + tx];
  }
};

// Upstream loss gradients per pixel.
struct PixelGradients {
  Vec3Grid d_rgb;
  ScalarGrid d_alpha;
};

// Per-primitive parameter gradients. Quaternion slots are filled only when
// rotations are optimized.
struct GradientSet {
  std::vector<Vec3> d_center;
  std::vector<Vec3> d_scale_logits;
  std::vector<Vec3> d_sh0;
  std::vector<double> d_density_logit;
  std::vector<double> d_blur_raw;
  std::vector<Vec4> d_quat;

  void resize(size_t n);
  void set_zero();
  void accumulate(const GradientSet& other, double scale = 1.0);
  void scale_all(double factor);
};

// Exact signed distance to the triangle boundary, positive inside.
double triangle_signed_distance(const Vec2 v[3], const Vec2& p);

struct SignedDistanceGrad {
  double d = 0.0;
  Vec2 grad[3] = {Vec2::Zero(), Vec2::Zero(), Vec2::Zero()};
};
SignedDistanceGrad triangle_signed_distance_grad(const Vec2 v[3], const Vec2& p);

// Smooth coverage window over the band and its derivative in d.
double coverage_window(double d, double band);
double coverage_window_ddist(double d, double band);
double coverage_window_dband(double d, double band);

// Eq.-level vertex construction composed with pinhole projection. Triangles
// with any vertex closer than the near plane are culled.
std::vector<ScreenTriangle> project_triangles(const TriangleSet& tris,
                                              const CanonicalTemplate& tmpl,
                                              const CameraPose& render_pose,
                                              const Intrinsics& intr, const ScheduleState& sched,
                                              const ScheduleConfig& sched_cfg,
                                              const RasterConfig& cfg);

TileBins bin_tiles(std::span<const ScreenTriangle> screen, int tile, int width, int height);

// Tile-parallel front-to-back compositing. Bit-identical for any tile size
// and thread count.
RenderOutput composite_forward(const TileBins& bins, std::span<const ScreenTriangle> screen,
                               const Vec3& background, const RasterConfig& cfg);

// Untiled serial reference: every pixel walks the full depth-sorted list.
RenderOutput composite_forward_reference(std::span<const ScreenTriangle> screen, int width,
                                         int height, const Vec3& background,
                                         const RasterConfig& cfg);

// Analytic adjoint of composite_forward chained through projection and the
// attribute pipelines back to primitive parameters.
GradientSet composite_backward(const TileBins& bins, std::span<const ScreenTriangle> screen,
                               const PixelGradients& upstream, const TriangleSet& tris,
                               const CanonicalTemplate& tmpl, const CameraPose& render_pose,
                               const Intrinsics& intr, const ScheduleState& sched,
                               const ScheduleConfig& sched_cfg, const RasterConfig& cfg,
                               bool with_quat_grads = false);

RenderOutput render(const TriangleSet& tris, const CameraPose& pose, const Intrinsics& intr,
                    const ScheduleState& sched, const ScheduleConfig& sched_cfg,
                    const RasterConfig& cfg);

GradientSet render_backward(const TriangleSet& tris, const CameraPose& pose,
                            const Intrinsics& intr, const ScheduleState& sched,
                            const ScheduleConfig& sched_cfg, const RasterConfig& cfg,
                            const PixelGradients& upstream, bool with_quat_grads = false);

// Per-pixel min |signed distance| over all candidates; used to mask
// boundary pixels in soft-vs-hard comparisons.
ScalarGrid min_boundary_distance(const TileBins& bins, std::span<const ScreenTriangle> screen);

struct Mesh;

// Hard rasterization of an indexed mesh under the same flat-depth ordering
// convention as the soft compositor: nearest covering face wins.
RenderOutput render_mesh_hard(const Mesh& mesh, const CameraPose& pose, const Intrinsics& intr,
                              const RasterConfig& cfg);

// Screen-space faces of a mesh (band 0, opacity 1); exposed for boundary
// masking in fidelity comparisons.
std::vector<ScreenTriangle> project_mesh(const Mesh& mesh, const CameraPose& pose,
                                         const Intrinsics& intr, const RasterConfig& cfg);

struct FdEntry {
  enum class Kind { kCenter, kScaleLogit, kSh0, kDensity, kBlur };
  Kind kind;
  int prim = 0;
  int axis = 0;
  double analytic = 0.0;
  double fd = 0.0;
  double rel_error = 0.0;
  bool excluded = false;  // band-edge exclusion zone
};

struct FdReport {
  std::vector<FdEntry> entries;
  double max_rel = 0.0;         // over included entries
  double p95_rel = 0.0;         // over included entries
  double color_max_rel = 0.0;   // sh0 entries
  double frac_below_1e3 = 0.0;  // included entries under 1e-3
  size_t excluded_count = 0;
};

struct FdSample {
  int color_prims = 40;    // primitives sampled for sh0 checks
  int vertex_prims = 40;   // primitives sampled for center/scale checks
  int opacity_prims = 40;  // primitives sampled for density/blur checks
  uint64_t seed = 0;
};

FdReport finite_difference_check(const TriangleSet& tris, const CameraPose& pose,
                                 const Intrinsics& intr, const ScheduleState& sched,
                                 const ScheduleConfig& sched_cfg, const RasterConfig& cfg,
                                 const FdSample& sample, double h);

}  // namespace trikit
