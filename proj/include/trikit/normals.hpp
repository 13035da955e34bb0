#pragma once

#include <optional>

#include "trikit/scene.hpp"
#include "trikit/util.hpp"

namespace trikit {

// Per-pixel unit normals with a validity mask. `detached` marks fields whose
// gradients must not flow back into the point map.
struct NormalField {
  Vec3Grid normals;
  MaskGrid mask;
  bool detached = false;

  int rows() const { return normals.rows; }
  int cols() const { return normals.cols; }
};

// Orthonormal frames [t, b, n] by column plus the equivalent unit quaternion
// (scalar part non-negative). Mask excludes degenerate tangent projections.
struct TangentFrameField {
  std::vector<Mat3> frames;  // row-major over the grid
  std::vector<Quat> quats;
  MaskGrid mask;
  int rows = 0;
  int cols = 0;

  const Mat3& frame(int r, int c) const { return frames[static_cast<size_t>(r) * cols + c]; }
  const Quat& quat(int r, int c) const { return quats[static_cast<size_t>(r) * cols + c]; }
};

// Teacher takeover/release step counts for the cosine bootstrap schedule.
struct BootstrapSchedule {
  int t_tk = 6000;
  int t_bl = 20000;

  void validate() const { require(0 <= t_tk && t_tk < t_bl, "bootstrap schedule: need 0 <= t_tk < t_bl"); }
};

struct NormalConfig {
  int smooth_window = 3;       // average-pooling window for the point map, 1 disables
  int filter_window = 3;       // orientation-aware box filter window
  bool detach_points = false;  // stop normal-loss gradients at the point map
  double degenerate_eps = 1e-12;  // min |dx x dy| for a valid geometry normal
  double parallel_eps = 1e-8;     // tangent rejection threshold, relative to |dx|
};

// Central differences of the (optionally pre-smoothed) point map, crossed and
// flipped toward the camera. Border pixels are always masked.
NormalField geometry_normals(const PointMap& pm, int smooth_window, bool detach_flag,
                             double degenerate_eps = 1e-12);

// Renormalized box-filter mean over neighbors whose normals agree in sign
// with the center pixel. Depth-edge discontinuities survive.
NormalField orientation_aware_filter(const NormalField& nf, int window);

// normalize(n_sm + residual). The all-zero residual reproduces n_sm exactly.
NormalField refine_normals(const NormalField& n_geo, const NormalField& n_sm,
                           const Vec3Grid& residual);

// Cosine bootstrap coefficient: 1 during takeover, 0 after release.
double blend_coefficient(int t, const BootstrapSchedule& sched);

// normalize(alpha * n_tch + (1 - alpha) * n_ref) where both masks hold,
// n_ref elsewhere. Antipodal cancellation falls back to n_ref.
NormalField bootstrap_blend(const NormalField& n_ref, const NormalField& n_tch, double alpha);

// Pointwise frame construction: t from the projection of dx onto the plane
// of n, b = n x t, t re-derived as b x n. Empty when dx is parallel to n.
std::optional<Mat3> make_tangent_frame(const Vec3& n, const Vec3& dx, double parallel_eps = 1e-8);

// Quaternion for a rotation matrix, scalar part non-negative.
Quat quat_from_matrix(const Mat3& m);

TangentFrameField tangent_frames(const NormalField& n_fwd, const PointMap& pm,
                                 double parallel_eps = 1e-8);

struct CosineLoss {
  double value = 0.0;
  size_t valid_count = 0;
  bool empty = false;
};

// Mean of (1 - n_ref . n_tch) over jointly valid pixels.
CosineLoss normal_cosine_loss(const NormalField& n_ref, const NormalField& n_tch);

// Bilinear resize of a teacher field to the target shape, renormalized.
NormalField resize_normal_field(const NormalField& nf, int rows, int cols);

// Adjoint of the geometry -> smooth -> orientation-filter pipeline for the
// cosine loss against a teacher. Returns d(loss)/d(point) per pixel; zero
// when the config detaches the point map. Recomputes the forward internally.
Vec3Grid normal_pipeline_backward(const PointMap& pm, const NormalField& teacher,
                                  const NormalConfig& cfg);

// Forward counterpart used by the fit loop: n_ref for the current point map.
NormalField normal_pipeline_forward(const PointMap& pm, const NormalConfig& cfg);

}  // namespace trikit
