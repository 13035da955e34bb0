#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "trikit/normals.hpp"
#include "trikit/scene.hpp"
#include "trikit/util.hpp"

namespace trikit {

// Equilateral template, pre-scaled by 4, centroid at the origin.
struct CanonicalTemplate {
  std::array<Vec3, 3> vertices;

  static CanonicalTemplate standard() {
    CanonicalTemplate t;
    t.vertices = {Vec3(0.0, 0.577, 0.0), Vec3(-0.5, -0.289, 0.0), Vec3(0.5, -0.289, 0.0)};
    for (Vec3& v : t.vertices) v *= 4.0;
    return t;
  }
};

struct ScheduleConfig {
  double e_init = 1.0;
  double e_final = 2.0;
  int e_steps = 16000;
  double tau_init = 1.0;
  double tau_final = 5.0;
  int tau_steps = 16000;
  double beta_init = 1.0;
  double beta_final = 0.5;
  int beta_steps = 16000;
  BootstrapSchedule bootstrap;
  double blur_eps = 1e-4;
  double alpha_floor_value = 0.02;
  double coverage_threshold = 0.20;
  double coverage_gain = 1.0;
};

struct ScheduleState {
  int t = 0;
  double e = 1.0;
  double tau = 1.0;
  double beta = 1.0;
  double alpha = 1.0;
  bool floor_active = true;
};

struct SourcePixel {
  uint32_t view = 0;
  uint32_t row = 0;
  uint32_t col = 0;
};

enum PrimitiveFlags : uint8_t {
  kFlagDegenerate = 1u << 0,
  kFlagFrameQuat = 1u << 1,  // quaternion came from the tangent frame, not the raw prediction
};

// Per-primitive scene state, one primitive per unmasked source pixel.
// Quaternions are tangent-frame rotations in the source camera frame;
// world placement composes them with the stored source pose.
struct TriangleSet {
  std::vector<Vec3> centers;  // world
  std::vector<Vec3> scale_logits;
  std::vector<Quat> quats;
  std::vector<Vec3> sh0;
  std::vector<double> density_logits;
  std::vector<double> blur_raws;
  std::vector<SourcePixel> source_pixels;
  std::vector<uint8_t> flags;
  std::vector<Vec3> scale_refs;   // depth * pixel footprint frozen at assembly
  std::vector<Vec3> ref_normals;  // world-frame normals for winding correction
  std::vector<CameraPose> source_poses;
  double s_min = 0.5;
  double s_max = 18.0;

  size_t size() const { return centers.size(); }
  bool empty() const { return centers.empty(); }
  const CameraPose& pose_of(size_t i) const { return source_poses[source_pixels[i].view]; }
  // Unboosted world-space sizes.
  Vec3 world_scales(size_t i) const;
};

// Raw per-pixel attribute grids standing in for the prediction heads.
struct RawAttributes {
  Vec3Grid scale_logits;
  std::vector<Quat> quats;  // row-major fallback quaternions
  Vec3Grid sh0;
  ScalarGrid density_logits;
  ScalarGrid blur_raws;
};

ScheduleState schedule_state(int t, const ScheduleConfig& config);

// 1/2 (1 - (1-p)^e + p^e): identity at e = 1, boundary-preserving for all e.
double opacity_map(double p, double e);
double opacity_map_deriv(double p, double e);

// sigmoid(tau * logit(o)); boundaries pass through unchanged.
double temperature_sharpen(double o, double tau);
double temperature_sharpen_deriv(double o, double tau);

double alpha_floor(double o, bool active, double floor_value = 0.02);

// sigmoid(blur_raw) * beta + eps, strictly positive.
double blur_value(double blur_raw, double beta, double eps);

// Pixel-footprint scale conversion: the third axis uses the geometric mean
// of the x/y footprints.
Vec3 map_scales(const Vec3& scale_logits, double depth, const Intrinsics& intr, double s_min,
                double s_max);

Vec3 coverage_boost(const Vec3& scales, double opacity, double threshold, double gain);

// Full per-primitive opacity pipeline at a schedule state.
double composited_opacity(const TriangleSet& set, size_t i, const ScheduleState& sched,
                          const ScheduleConfig& cfg);

struct BuiltTriangle {
  std::array<Vec3, 3> vertices;
  bool degenerate = false;
};

BuiltTriangle build_vertices(const Quat& quat, const Vec3& scales, const Vec3& center,
                             const CanonicalTemplate& tmpl, const CameraPose& pose,
                             double degenerate_area_eps = 1e-12);

BuiltTriangle build_vertices(const TriangleSet& set, size_t i, const CanonicalTemplate& tmpl,
                             double degenerate_area_eps = 1e-12);

// One primitive per unmasked pixel (optionally strided), row-major order.
// Frame quaternions override raw predictions wherever the frame mask holds.
TriangleSet assemble_scene(const PointMap& pm, const TangentFrameField& frames,
                           const RawAttributes& raw_attrs, const CameraPose& pose,
                           const Intrinsics& intr, const ScheduleState& sched,
                           const ScheduleConfig& cfg, uint32_t view_index = 0, int stride = 1,
                           double s_min = 0.5, double s_max = 18.0);

// Concatenates per-view sets; source view ids and poses are renumbered.
TriangleSet merge_scenes(std::span<const TriangleSet> parts);

}  // namespace trikit
