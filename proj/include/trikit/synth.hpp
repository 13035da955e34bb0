#pragma once

#include "trikit/fit.hpp"
#include "trikit/mesh.hpp"

namespace trikit {

// Initial-scene construction shared by the CLI and the test harnesses.
struct AssembleParams {
  int stride = 1;
  double s_min = 0.5;
  double s_max = 18.0;
  double init_density_logit = 2.0;
  double init_blur_raw = 0.0;
  double init_scale_logit = 0.0;
  bool init_color_from_image = true;
  ScheduleConfig schedule;
  NormalConfig normals;
  int assembly_step = 0;  // schedule step used while assembling
};

// Runs the normal pipeline per view (geometry -> filter -> teacher blend ->
// frames) and instantiates one primitive per unmasked strided pixel.
TriangleSet assemble_from_views(std::span<const FitView> views, const AssembleParams& params);

// Bundled 64x64 scene with 200 soft triangles for gradient checking.
struct GradcheckScene {
  TriangleSet scene;
  CameraPose pose;
  Intrinsics intr;
  ScheduleState sched;
  ScheduleConfig sched_cfg;
  RasterConfig raster;
};
GradcheckScene make_gradcheck_scene(uint64_t seed = 0);

// Textured two-plane scene: analytic ray-cast targets, camera-frame point
// maps and teacher normals, plus the exact surface as a ground-truth mesh.
struct TwoPlaneScene {
  std::vector<FitView> train_views;
  FitView heldout;
  Mesh gt_mesh;
  double extent = 0.0;       // max bounding-box side of the surface
  double noise_sigma = 0.0;  // applied to train point maps
};
TwoPlaneScene make_two_plane_scene(int resolution = 128, int n_views = 6, uint64_t seed = 0,
                                   double noise_frac = 0.01);

double psnr(const ImageRGB& a, const ImageRGB& b);

}  // namespace trikit
