#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "trikit/fit.hpp"
#include "trikit/triangles.hpp"

namespace trikit {

// TSPG: little-endian float32 grid container.
// Layout: magic "TSPG" | u16 version | u32 H | u32 W | u16 C | u16 dtype(0=f32)
// followed by H*W*C little-endian floats, row-major, channel-interleaved.
struct TspgGrid {
  int rows = 0;
  int cols = 0;
  int channels = 0;
  std::vector<float> values;  // row-major, channel-interleaved

  float at(int r, int c, int ch) const {
    return values[(static_cast<size_t>(r) * cols + c) * channels + ch];
  }
  float& at(int r, int c, int ch) {
    return values[(static_cast<size_t>(r) * cols + c) * channels + ch];
  }
};

void write_tspg(const TspgGrid& grid, const std::filesystem::path& path);
TspgGrid read_tspg(const std::filesystem::path& path);

TspgGrid tspg_from_scalar(const ScalarGrid& g);
TspgGrid tspg_from_vec3(const Vec3Grid& g);
TspgGrid tspg_from_mask(const MaskGrid& g);
ScalarGrid scalar_from_tspg(const TspgGrid& g);
Vec3Grid vec3_from_tspg(const TspgGrid& g);
MaskGrid mask_from_tspg(const TspgGrid& g, float threshold = 0.5f);

// PPM (P6, 8-bit). Values clamp to [0,1] on write.
void write_ppm(const ImageRGB& image, const std::filesystem::path& path);
ImageRGB read_ppm(const std::filesystem::path& path);

// TSPT: versioned little-endian scene checkpoint. Header carries the scale
// range and per-view source poses; records are fixed-width per primitive.
void write_tspt(const TriangleSet& set, const std::filesystem::path& path);
TriangleSet read_tspt(const std::filesystem::path& path);

struct ManifestView {
  std::filesystem::path image;
  std::filesystem::path points;
  std::filesystem::path points_mask;      // optional
  std::filesystem::path teacher;          // optional
  std::filesystem::path teacher_mask;     // optional
  CameraPose pose;
  Intrinsics intr;
};

struct SceneManifest {
  std::vector<ManifestView> views;
  ScheduleConfig schedule;
  LossWeights weights;
  FitConfig fit;
  int assembly_stride = 1;
  double s_min = 0.5;
  double s_max = 18.0;
  double init_density_logit = 2.0;
  double init_blur_raw = 0.0;
  double init_scale_logit = 0.0;
  bool init_color_from_image = true;
  uint64_t seed = 0;
  std::vector<std::string> warnings;
};

// key = value manifest with one [view] section per view. Missing required
// keys are reported together; unknown keys produce warnings.
SceneManifest parse_config(const std::filesystem::path& path);

// Loads per-view inputs referenced by the manifest.
std::vector<FitView> load_views(const SceneManifest& manifest);

}  // namespace trikit
