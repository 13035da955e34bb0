#include "trikit/synth.hpp"

#include <cmath>

namespace trikit {

namespace {
constexpr double kSh0C0 = 0.2820947917738781;
}

TriangleSet assemble_from_views(std::span<const FitView> views, const AssembleParams& params) {
  const ScheduleState sched = schedule_state(params.assembly_step, params.schedule);
  std::vector<TriangleSet> parts;
  for (size_t v = 0; v < views.size(); ++v) {
    const FitView& view = views[v];
    const int rows = view.point_map.rows();
    const int cols = view.point_map.cols();

    NormalField ref = normal_pipeline_forward(view.point_map, params.normals);
    if (view.teacher.rows() > 0) {
      ref = bootstrap_blend(ref, view.teacher, sched.alpha);
    }
    const TangentFrameField frames = tangent_frames(ref, view.point_map,
                                                    params.normals.parallel_eps);

    RawAttributes attrs;
    attrs.scale_logits = Vec3Grid(rows, cols, Vec3::Constant(params.init_scale_logit));
    attrs.quats.assign(static_cast<size_t>(rows) * cols, Quat::Identity());
    attrs.sh0 = Vec3Grid(rows, cols, Vec3::Zero());
    attrs.density_logits = ScalarGrid(rows, cols, params.init_density_logit);
    attrs.blur_raws = ScalarGrid(rows, cols, params.init_blur_raw);
    if (params.init_color_from_image && view.image.rows() == rows) {
      for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < cols; ++c) {
          attrs.sh0(r, c) = (view.image.pixels(r, c) - Vec3::Constant(0.5)) / kSh0C0;
        }
      }
    }
    parts.push_back(assemble_scene(view.point_map, frames, attrs, view.pose, view.intr, sched,
                                   params.schedule, static_cast<uint32_t>(v), params.stride,
                                   params.s_min, params.s_max));
  }
  return merge_scenes(parts);
}

GradcheckScene make_gradcheck_scene(uint64_t seed) {
  GradcheckScene gs;
  gs.intr = Intrinsics{60.0, 60.0, 32.0, 32.0, 64, 64};
  gs.pose = CameraPose::identity();

  SplitRng rng = SplitRng(seed).split("gradcheck-scene");
  TriangleSet& set = gs.scene;
  set.source_poses = {CameraPose::identity()};
  set.s_min = 0.5;
  set.s_max = 18.0;
  const Vec3 footprint(1.0 / gs.intr.fx, 1.0 / gs.intr.fy,
                       1.0 / std::sqrt(gs.intr.fx * gs.intr.fy));
  const int n = 200;
  for (int i = 0; i < n; ++i) {
    const double z = rng.uniform(0.8, 2.0);
    const double x = rng.uniform(-0.45, 0.45) * z;
    const double y = rng.uniform(-0.45, 0.45) * z;
    set.centers.push_back(Vec3(x, y, z));
    set.scale_logits.push_back(
        Vec3(rng.uniform(-3.5, -1.5), rng.uniform(-3.5, -1.5), rng.uniform(-3.5, -1.5)));
    Quat q(rng.normal(), rng.normal(), rng.normal(), rng.normal());
    set.quats.push_back(q.normalized());
    set.sh0.push_back(Vec3(rng.uniform(-1.2, 1.2), rng.uniform(-1.2, 1.2),
                           rng.uniform(-1.2, 1.2)));
    set.density_logits.push_back(rng.uniform(-1.5, 1.5));
    set.blur_raws.push_back(rng.uniform(-1.0, 1.0));
    set.source_pixels.push_back({0, static_cast<uint32_t>(i / 16),
                                 static_cast<uint32_t>(i % 16)});
    set.flags.push_back(kFlagFrameQuat);
    set.scale_refs.push_back(z * footprint);
    set.ref_normals.push_back(set.quats.back().toRotationMatrix() * Vec3::UnitZ());
  }

  // Mid-curriculum schedule: soft edges, partial sharpening.
  gs.sched_cfg = ScheduleConfig{};
  gs.sched = schedule_state(4000, gs.sched_cfg);
  gs.raster = RasterConfig{};
  return gs;
}

namespace {

Vec3 wall_color(double x, double y) {
  return Vec3(0.55 + 0.35 * std::sin(2.3 * x + 0.7), 0.5 + 0.3 * std::sin(1.7 * y - 0.4),
              0.45 + 0.35 * std::sin(1.3 * x + 2.1 * y));
}

Vec3 floor_color(double x, double z) {
  return Vec3(0.5 + 0.3 * std::sin(3.1 * x - 1.0), 0.55 + 0.3 * std::cos(2.2 * z + 0.3),
              0.6 + 0.25 * std::sin(1.9 * x + 1.4 * z));
}

struct Hit {
  bool valid = false;
  double t = 0.0;
  Vec3 point = Vec3::Zero();
  Vec3 normal = Vec3::Zero();  // world
  Vec3 color = Vec3::Zero();
};

// Wall: z = 2.5, x in [-2, 2], y in [-2, 0.8].
// Floor: y = 0.8, x in [-2, 2], z in [0.4, 2.5]. +y points down.
Hit cast_ray(const Vec3& origin, const Vec3& dir) {
  Hit best;
  if (dir.z() > 1e-9) {
    const double t = (2.5 - origin.z()) / dir.z();
    if (t > 1e-6) {
      const Vec3 p = origin + t * dir;
      if (p.x() >= -2.0 && p.x() <= 2.0 && p.y() >= -2.0 && p.y() <= 0.8) {
        best = {true, t, p, Vec3(0, 0, -1), wall_color(p.x(), p.y())};
      }
    }
  }
  if (dir.y() > 1e-9) {
    const double t = (0.8 - origin.y()) / dir.y();
    if (t > 1e-6 && (!best.valid || t < best.t)) {
      const Vec3 p = origin + t * dir;
      if (p.x() >= -2.0 && p.x() <= 2.0 && p.z() >= 0.4 && p.z() <= 2.5) {
        best = {true, t, p, Vec3(0, -1, 0), floor_color(p.x(), p.z())};
      }
    }
  }
  return best;
}

CameraPose look_at(const Vec3& position, const Vec3& target) {
  CameraPose pose;
  const Vec3 forward = (target - position).normalized();
  Vec3 right = Vec3(0, 1, 0).cross(forward);
  if (right.norm() < 1e-9) right = Vec3(1, 0, 0);
  right.normalize();
  const Vec3 down = forward.cross(right);
  pose.rotation.col(0) = right;
  pose.rotation.col(1) = down;
  pose.rotation.col(2) = forward;
  pose.translation = position;
  return pose;
}

FitView render_view(const CameraPose& pose, const Intrinsics& intr) {
  FitView view;
  view.pose = pose;
  view.intr = intr;
  view.image.pixels = Vec3Grid(intr.height, intr.width, Vec3::Zero());
  view.point_map.points = Vec3Grid(intr.height, intr.width, Vec3::Zero());
  view.point_map.mask = MaskGrid(intr.height, intr.width, 0);
  view.teacher.normals = Vec3Grid(intr.height, intr.width, Vec3::Zero());
  view.teacher.mask = MaskGrid(intr.height, intr.width, 0);
  for (int r = 0; r < intr.height; ++r) {
    for (int c = 0; c < intr.width; ++c) {
      const Vec3 dir_cam((c + 0.5 - intr.cx) / intr.fx, (r + 0.5 - intr.cy) / intr.fy, 1.0);
      const Hit hit = cast_ray(pose.translation, pose.rotation * dir_cam);
      if (!hit.valid) continue;
      view.image.pixels(r, c) = hit.color;
      view.point_map.points(r, c) = hit.t * dir_cam;  // camera frame, depth = t
      view.point_map.mask(r, c) = 1;
      view.teacher.normals(r, c) = pose.rotation.transpose() * hit.normal;
      view.teacher.mask(r, c) = 1;
    }
  }
  return view;
}

}  // namespace

TwoPlaneScene make_two_plane_scene(int resolution, int n_views, uint64_t seed,
                                   double noise_frac) {
  TwoPlaneScene scene;
  const double f = 110.0 * resolution / 128.0;
  const Intrinsics intr{f, f, resolution / 2.0, resolution / 2.0, resolution, resolution};
  const Vec3 target(0.0, 0.2, 2.0);

  SplitRng rng = SplitRng(seed).split("two-plane-noise");
  for (int v = 0; v < n_views; ++v) {
    const double a = n_views > 1 ? static_cast<double>(v) / (n_views - 1) : 0.5;
    const Vec3 position(-0.5 + 1.0 * a, (v % 2 == 0 ? -0.12 : 0.12), -0.25 + 0.15 * a);
    scene.train_views.push_back(render_view(look_at(position, target), intr));
  }
  scene.heldout = render_view(look_at(Vec3(0.02, 0.0, -0.18), target), intr);

  // Surface bbox: x 4.0, y 2.8, z 2.1 -> extent 4.0.
  scene.extent = 4.0;
  scene.noise_sigma = noise_frac * scene.extent;
  for (FitView& view : scene.train_views) {
    for (int r = 0; r < view.point_map.rows(); ++r) {
      for (int c = 0; c < view.point_map.cols(); ++c) {
        if (!view.point_map.mask(r, c)) continue;
        view.point_map.points(r, c) +=
            scene.noise_sigma * Vec3(rng.normal(), rng.normal(), rng.normal());
        if (view.point_map.points(r, c).z() <= 0.0) view.point_map.mask(r, c) = 0;
      }
    }
  }

  // Exact surface as four triangles.
  const Vec3 w0(-2, -2, 2.5), w1(2, -2, 2.5), w2(2, 0.8, 2.5), w3(-2, 0.8, 2.5);
  const Vec3 f0(-2, 0.8, 2.5), f1(2, 0.8, 2.5), f2(2, 0.8, 0.4), f3(-2, 0.8, 0.4);
  scene.gt_mesh.vertices = {w0, w1, w2, w3, f0, f1, f2, f3};
  scene.gt_mesh.faces = {{0, 1, 2}, {0, 2, 3}, {4, 5, 6}, {4, 6, 7}};
  scene.gt_mesh.colors.assign(4, Vec3::Constant(0.5));
  return scene;
}

double psnr(const ImageRGB& a, const ImageRGB& b) {
  const double mse = photometric_loss(a, b);
  if (mse <= 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(1.0 / mse);
}

}  // namespace trikit
