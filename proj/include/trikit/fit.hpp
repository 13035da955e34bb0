#pragma once

#include <limits>
#include <string>

#include "trikit/raster.hpp"

namespace trikit {

struct LossWeights {
  double lambda_photo = 1.0;
  double lambda_mse = 1.0;  // pixel term inside the photometric loss
  double lambda_cam = 0.0;
  double lambda_normal = 0.1;
  double omega_t = 1.0;
  double omega_r = 1.0;
  double huber_delta = 0.5;
};

struct FitView {
  ImageRGB image;
  CameraPose pose;
  Intrinsics intr;
  PointMap point_map;
  NormalField teacher;  // empty grid disables the normal term for this view
};

struct FitConfig {
  int steps = 2000;
  double lr_center = 1e-3;
  double lr_scale = 5e-3;
  double lr_sh0 = 1e-2;
  double lr_density = 1e-2;
  double lr_blur = 1e-2;
  double lr_quat = 1e-3;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  ScheduleConfig schedule;
  RasterConfig raster;
  NormalConfig normals;
  double filter_total = 0.2;
  double filter_mse = 0.06;
  double filter_pose = 1.0;
  int filter_activation_step = -1;  // -1: 10% of total steps
  double filter_factor = 1e-4;
  bool free_rotations = false;
  double frame_recompute_displacement = std::numeric_limits<double>::infinity();
};

struct LossRecord {
  int step = 0;
  double total = 0.0;
  double mse = 0.0;
  double normal = 0.0;
  double cam = 0.0;
  double filter_scale = 1.0;
};

double photometric_loss(const ImageRGB& rendered, const ImageRGB& target);

struct CameraPairLoss {
  double value = 0.0;
  bool empty = false;  // fewer than two views
};

// Ordered-pair relative pose loss: Huber on relative translations, geodesic
// angle on relative rotations. Invariant to a global rigid transform.
CameraPairLoss camera_pair_loss(std::span<const CameraPose> pred, std::span<const CameraPose> gt,
                                const LossWeights& w);

double total_loss(double photo, double cam, double normal, const LossWeights& w);

// 1.0 before activation; the negligible factor once any threshold trips.
double large_loss_filter(double total, double mse, double pose, int t, const FitConfig& cfg);

// Center parameterization used by the optimizer: (u, v, log z) in the
// primitive's source camera frame, mirroring the point unprojection.
Vec3 center_param_from_world(const Vec3& center, const CameraPose& src);
Vec3 center_world_from_param(const Vec3& param, const CameraPose& src);

struct ObjectiveEval {
  double total = 0.0;
  double photo = 0.0;   // weighted pixel term
  double mse = 0.0;     // raw mean-squared error (filter input)
  double normal = 0.0;  // raw cosine loss
  double cam = 0.0;
  GradientSet grads;                 // world-frame center gradients
  std::vector<Vec3> d_center_param;  // gradients in (u, v, log z)
};

// One evaluation of the fit objective and all parameter-group gradients at
// schedule step t. Views render in a fixed order.
ObjectiveEval evaluate_objective(const TriangleSet& scene, std::span<const FitView> views,
                                 const FitConfig& cfg, const LossWeights& w, int t);

struct FitResult {
  TriangleSet scene;
  std::vector<LossRecord> history;
  bool aborted = false;
  std::string abort_reason;
};

FitResult fit_scene(TriangleSet scene, std::span<const FitView> views, const FitConfig& cfg,
                    const LossWeights& w);

}  // namespace trikit
