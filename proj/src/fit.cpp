#include "trikit/fit.hpp"

#include <algorithm>
#include <cmath>
#include <map>

namespace trikit {

double photometric_loss(const ImageRGB& rendered, const ImageRGB& target) {
  require(rendered.pixels.same_shape(target.pixels), "photometric_loss: shape mismatch");
  std::vector<double> terms;
  terms.reserve(rendered.pixels.size());
  for (int r = 0; r < rendered.rows(); ++r) {
    for (int c = 0; c < rendered.cols(); ++c) {
      terms.push_back((rendered.pixels(r, c) - target.pixels(r, c)).squaredNorm() / 3.0);
    }
  }
  return pairwise_mean(terms);
}

namespace {

double huber(double r, double delta) {
  if (r <= delta) return 0.5 * r * r;
  return delta * (r - 0.5 * delta);
}

double rotation_angle(const Mat3& r) {
  const double c = std::clamp((r.trace() - 1.0) * 0.5, -1.0, 1.0);
  return std::acos(c);
}

}  // namespace

CameraPairLoss camera_pair_loss(std::span<const CameraPose> pred, std::span<const CameraPose> gt,
                                const LossWeights& w) {
  require(pred.size() == gt.size(), "camera_pair_loss: sequence length mismatch");
  CameraPairLoss out;
  if (pred.size() < 2) {
    out.empty = true;
    return out;
  }
  std::vector<double> terms;
  for (size_t i = 0; i < pred.size(); ++i) {
    for (size_t j = 0; j < pred.size(); ++j) {
      if (i == j) continue;
      const CameraPose rp = relative_pose(pred[i], pred[j]);
      const CameraPose rg = relative_pose(gt[i], gt[j]);
      const double t_err = (rp.translation - rg.translation).norm();
      const double r_err = rotation_angle(rp.rotation.transpose() * rg.rotation);
      terms.push_back(w.omega_t * huber(t_err, w.huber_delta) + w.omega_r * r_err);
    }
  }
  out.value = pairwise_sum(terms);
  return out;
}

double total_loss(double photo, double cam, double normal, const LossWeights& w) {
  require(std::isfinite(photo) && std::isfinite(cam) && std::isfinite(normal),
          "total_loss: non-finite part");
  return w.lambda_photo * photo + w.lambda_cam * cam + w.lambda_normal * normal;
}

double large_loss_filter(double total, double mse, double pose, int t, const FitConfig& cfg) {
  require(t >= 0, "large_loss_filter: negative step");
  const int activation =
      cfg.filter_activation_step >= 0 ? cfg.filter_activation_step : cfg.steps / 10;
  if (t < activation) return 1.0;
  if (total > cfg.filter_total || mse > cfg.filter_mse || pose > cfg.filter_pose)
    return cfg.filter_factor;
  return 1.0;
}

Vec3 center_param_from_world(const Vec3& center, const CameraPose& src) {
  const Vec3 cam = src.apply_inverse(center);
  const double z = std::max(cam.z(), 1e-9);
  return Vec3(cam.x() / z, cam.y() / z, std::log(z));
}

Vec3 center_world_from_param(const Vec3& param, const CameraPose& src) {
  const double z = std::exp(std::clamp(param.z(), -30.0, 30.0));
  return src.apply(Vec3(param.x() * z, param.y() * z, z));
}

namespace {

// Per-view compact grid over the primitives' source pixels. Cells without a
// primitive keep the original (fixed) point so finite differences stay
// meaningful next to holes.
struct ViewPrimGrid {
  std::vector<int> rows_ids, cols_ids;  // image coordinates of grid lines
  Grid<int32_t> prim;                   // -1 where no primitive
  int nr = 0, nc = 0;
};

std::vector<ViewPrimGrid> build_prim_grids(const TriangleSet& scene, size_t n_views) {
  std::vector<std::vector<int>> rows(n_views), cols(n_views);
  for (size_t i = 0; i < scene.size(); ++i) {
    const SourcePixel& sp = scene.source_pixels[i];
    rows[sp.view].push_back(static_cast<int>(sp.row));
    cols[sp.view].push_back(static_cast<int>(sp.col));
  }
  std::vector<ViewPrimGrid> grids(n_views);
  for (size_t v = 0; v < n_views; ++v) {
    auto uniq = [](std::vector<int>& xs) {
      std::sort(xs.begin(), xs.end());
      xs.erase(std::unique(xs.begin(), xs.end()), xs.end());
    };
    uniq(rows[v]);
    uniq(cols[v]);
    grids[v].rows_ids = rows[v];
    grids[v].cols_ids = cols[v];
    grids[v].nr = static_cast<int>(rows[v].size());
    grids[v].nc = static_cast<int>(cols[v].size());
    grids[v].prim = Grid<int32_t>(grids[v].nr, grids[v].nc, -1);
  }
  for (size_t i = 0; i < scene.size(); ++i) {
    const SourcePixel& sp = scene.source_pixels[i];
    ViewPrimGrid& g = grids[sp.view];
    const int ri = static_cast<int>(std::lower_bound(g.rows_ids.begin(), g.rows_ids.end(),
                                                     static_cast<int>(sp.row)) -
                                    g.rows_ids.begin());
    const int ci = static_cast<int>(std::lower_bound(g.cols_ids.begin(), g.cols_ids.end(),
                                                     static_cast<int>(sp.col)) -
                                    g.cols_ids.begin());
    g.prim(ri, ci) = static_cast<int32_t>(i);
  }
  return grids;
}

}  // namespace

ObjectiveEval evaluate_objective(const TriangleSet& scene, std::span<const FitView> views,
                                 const FitConfig& cfg, const LossWeights& w, int t) {
  require(!views.empty(), "evaluate_objective: at least one view required");
  const ScheduleState sched = schedule_state(t, cfg.schedule);
  const CanonicalTemplate tmpl = CanonicalTemplate::standard();
  const double n_views = static_cast<double>(views.size());

  ObjectiveEval eval;
  eval.grads.resize(scene.size());
  eval.d_center_param.assign(scene.size(), Vec3::Zero());

  std::vector<Vec3> g_center_cam(scene.size(), Vec3::Zero());

  // Photometric term, view by view in fixed order.
  std::vector<double> mse_terms;
  for (size_t v = 0; v < views.size(); ++v) {
    const FitView& view = views[v];
    const auto screen =
        project_triangles(scene, tmpl, view.pose, view.intr, sched, cfg.schedule, cfg.raster);
    const TileBins bins =
        bin_tiles(screen, cfg.raster.tile_size, view.intr.width, view.intr.height);
    const RenderOutput out = composite_forward(bins, screen, cfg.raster.background, cfg.raster);

    mse_terms.push_back(photometric_loss(out.rgb, view.image));

    PixelGradients upstream;
    upstream.d_rgb = Vec3Grid(view.intr.height, view.intr.width, Vec3::Zero());
    upstream.d_alpha = ScalarGrid(view.intr.height, view.intr.width, 0.0);
    const double pixel_count = static_cast<double>(view.intr.width) * view.intr.height;
    const double scale = w.lambda_photo * w.lambda_mse * 2.0 / (3.0 * pixel_count * n_views);
    for (int r = 0; r < view.intr.height; ++r) {
      for (int c = 0; c < view.intr.width; ++c) {
        upstream.d_rgb(r, c) = scale * (out.rgb.pixels(r, c) - view.image.pixels(r, c));
      }
    }
    const GradientSet gv =
        composite_backward(bins, screen, upstream, scene, tmpl, view.pose, view.intr, sched,
                           cfg.schedule, cfg.raster, cfg.free_rotations);
    eval.grads.accumulate(gv);
  }
  eval.mse = pairwise_mean(mse_terms);
  eval.photo = w.lambda_mse * eval.mse;

  // World-frame center gradients from rendering, rotated into each source
  // camera frame for the (u, v, log z) parameterization.
  for (size_t i = 0; i < scene.size(); ++i) {
    g_center_cam[i] = scene.pose_of(i).rotation.transpose() * eval.grads.d_center[i];
  }

  // Normal term over per-view primitive grids.
  bool any_teacher = false;
  std::vector<double> normal_terms;
  const auto grids = build_prim_grids(scene, scene.source_poses.size());
  for (size_t v = 0; v < views.size() && v < grids.size(); ++v) {
    const FitView& view = views[v];
    const ViewPrimGrid& g = grids[v];
    if (view.teacher.rows() == 0 || g.nr < 3 || g.nc < 3) {
      normal_terms.push_back(0.0);
      continue;
    }
    any_teacher = true;

    PointMap pm;
    pm.points = Vec3Grid(g.nr, g.nc, Vec3::Zero());
    pm.mask = MaskGrid(g.nr, g.nc, 0);
    NormalField teacher;
    teacher.normals = Vec3Grid(g.nr, g.nc, Vec3::Zero());
    teacher.mask = MaskGrid(g.nr, g.nc, 0);
    for (int ri = 0; ri < g.nr; ++ri) {
      for (int ci = 0; ci < g.nc; ++ci) {
        const int row = g.rows_ids[ri];
        const int col = g.cols_ids[ci];
        const int32_t p = g.prim(ri, ci);
        if (p >= 0) {
          pm.points(ri, ci) = view.pose.apply_inverse(scene.centers[p]);
          pm.mask(ri, ci) = 1;
        } else {
          pm.points(ri, ci) = view.point_map.points(row, col);
        }
        teacher.normals(ri, ci) = view.teacher.normals(row, col);
        teacher.mask(ri, ci) = view.teacher.mask(row, col);
      }
    }

    const NormalField ref = normal_pipeline_forward(pm, cfg.normals);
    normal_terms.push_back(normal_cosine_loss(ref, teacher).value);

    const Vec3Grid g_points = normal_pipeline_backward(pm, teacher, cfg.normals);
    const double term_scale = w.lambda_normal / n_views;
    for (int ri = 0; ri < g.nr; ++ri) {
      for (int ci = 0; ci < g.nc; ++ci) {
        const int32_t p = g.prim(ri, ci);
        if (p < 0) continue;
        g_center_cam[p] += term_scale * g_points(ri, ci);
        eval.grads.d_center[p] += term_scale * (view.pose.rotation * g_points(ri, ci));
      }
    }
  }
  eval.normal = any_teacher ? pairwise_mean(normal_terms) : 0.0;

  eval.cam = 0.0;  // poses are inputs here; the camera term activates only
                   // when poses are declared optimizable

  // Chain camera-frame center gradients to (u, v, log z).
  for (size_t i = 0; i < scene.size(); ++i) {
    const Vec3 cam = scene.pose_of(i).apply_inverse(scene.centers[i]);
    const double z = std::max(cam.z(), 1e-9);
    const Vec3& g = g_center_cam[i];
    eval.d_center_param[i] =
        Vec3(z * g.x(), z * g.y(), cam.x() * g.x() + cam.y() * g.y() + cam.z() * g.z());
  }

  eval.total = total_loss(eval.photo, eval.cam, eval.normal, w);
  return eval;
}

namespace {

struct AdamState {
  std::vector<double> m, v;
  void init(size_t n) {
    m.assign(n, 0.0);
    v.assign(n, 0.0);
  }
};

void adam_update(std::span<double> params, std::span<const double> grads, AdamState& state,
                 double lr, const FitConfig& cfg, int t) {
  const double b1 = cfg.adam_beta1;
  const double b2 = cfg.adam_beta2;
  const double c1 = 1.0 - std::pow(b1, t + 1);
  const double c2 = 1.0 - std::pow(b2, t + 1);
  for (size_t i = 0; i < params.size(); ++i) {
    state.m[i] = b1 * state.m[i] + (1.0 - b1) * grads[i];
    state.v[i] = b2 * state.v[i] + (1.0 - b2) * grads[i] * grads[i];
    params[i] -= lr * (state.m[i] / c1) / (std::sqrt(state.v[i] / c2) + cfg.adam_eps);
  }
}

}  // namespace

FitResult fit_scene(TriangleSet scene, std::span<const FitView> views, const FitConfig& cfg,
                    const LossWeights& w) {
  require(!views.empty(), "fit_scene: at least one target view required");
  require(views.size() >= scene.source_poses.size(),
          "fit_scene: a target view per source view is required");

  const size_t n = scene.size();
  FitResult result;

  // Optimized parameterization.
  std::vector<double> p_center(3 * n), p_scale(3 * n), p_sh0(3 * n), p_density(n), p_blur(n);
  std::vector<double> p_quat(cfg.free_rotations ? 4 * n : 0);
  for (size_t i = 0; i < n; ++i) {
    const Vec3 cp = center_param_from_world(scene.centers[i], scene.pose_of(i));
    for (int k = 0; k < 3; ++k) {
      p_center[3 * i + k] = cp[k];
      p_scale[3 * i + k] = scene.scale_logits[i][k];
      p_sh0[3 * i + k] = scene.sh0[i][k];
    }
    p_density[i] = scene.density_logits[i];
    p_blur[i] = scene.blur_raws[i];
    if (cfg.free_rotations) {
      for (int k = 0; k < 4; ++k) p_quat[4 * i + k] = scene.quats[i].coeffs()[k];
    }
  }

  AdamState s_center, s_scale, s_sh0, s_density, s_blur, s_quat;
  s_center.init(3 * n);
  s_scale.init(3 * n);
  s_sh0.init(3 * n);
  s_density.init(n);
  s_blur.init(n);
  if (cfg.free_rotations) s_quat.init(4 * n);

  auto materialize = [&]() {
    for (size_t i = 0; i < n; ++i) {
      scene.centers[i] = center_world_from_param(
          Vec3(p_center[3 * i], p_center[3 * i + 1], p_center[3 * i + 2]), scene.pose_of(i));
      scene.scale_logits[i] = Vec3(p_scale[3 * i], p_scale[3 * i + 1], p_scale[3 * i + 2]);
      scene.sh0[i] = Vec3(p_sh0[3 * i], p_sh0[3 * i + 1], p_sh0[3 * i + 2]);
      scene.density_logits[i] = p_density[i];
      scene.blur_raws[i] = p_blur[i];
      if (cfg.free_rotations) {
        Quat q(p_quat[4 * i + 3], p_quat[4 * i], p_quat[4 * i + 1], p_quat[4 * i + 2]);
        scene.quats[i] = q.normalized();
      }
    }
  };

  std::vector<Vec3> anchor_centers = scene.centers;

  for (int t = 0; t < cfg.steps; ++t) {
    materialize();

    // Re-anchor tangent frames when centers drift beyond the threshold.
    if (std::isfinite(cfg.frame_recompute_displacement)) {
      double max_disp = 0.0;
      for (size_t i = 0; i < n; ++i) {
        max_disp = std::max(max_disp, (scene.centers[i] - anchor_centers[i]).norm());
      }
      if (max_disp > cfg.frame_recompute_displacement) {
        const ScheduleState sched = schedule_state(t, cfg.schedule);
        for (size_t v = 0; v < scene.source_poses.size(); ++v) {
          // Rebuild a per-view point map holding current centers.
          PointMap pm = views[v].point_map;
          for (size_t i = 0; i < n; ++i) {
            if (scene.source_pixels[i].view != v) continue;
            pm.points(scene.source_pixels[i].row, scene.source_pixels[i].col) =
                views[v].pose.apply_inverse(scene.centers[i]);
          }
          NormalField ref = normal_pipeline_forward(pm, cfg.normals);
          if (views[v].teacher.rows() > 0) {
            ref = bootstrap_blend(ref, views[v].teacher, sched.alpha);
          }
          const TangentFrameField frames = tangent_frames(ref, pm, cfg.normals.parallel_eps);
          for (size_t i = 0; i < n; ++i) {
            const SourcePixel& sp = scene.source_pixels[i];
            if (sp.view != v || !frames.mask(sp.row, sp.col)) continue;
            scene.quats[i] = frames.quat(sp.row, sp.col);
            scene.ref_normals[i] =
                views[v].pose.rotation *
                (scene.quats[i].toRotationMatrix() * Vec3::UnitZ());
          }
        }
        anchor_centers = scene.centers;
      }
    }

    ObjectiveEval eval = evaluate_objective(scene, views, cfg, w, t);
    if (!std::isfinite(eval.total)) {
      result.aborted = true;
      result.abort_reason = "non-finite loss at step " + std::to_string(t);
      break;
    }

    const double scale = large_loss_filter(eval.total, eval.mse, eval.cam, t, cfg);
    result.history.push_back({t, eval.total, eval.mse, eval.normal, eval.cam, scale});

    // Flatten gradients per group, apply the filter scale.
    std::vector<double> g_center(3 * n), g_scale(3 * n), g_sh0(3 * n), g_density(n), g_blur(n);
    for (size_t i = 0; i < n; ++i) {
      for (int k = 0; k < 3; ++k) {
        g_center[3 * i + k] = scale * eval.d_center_param[i][k];
        g_scale[3 * i + k] = scale * eval.grads.d_scale_logits[i][k];
        g_sh0[3 * i + k] = scale * eval.grads.d_sh0[i][k];
      }
      g_density[i] = scale * eval.grads.d_density_logit[i];
      g_blur[i] = scale * eval.grads.d_blur_raw[i];
    }

    adam_update(p_center, g_center, s_center, cfg.lr_center, cfg, t);
    adam_update(p_scale, g_scale, s_scale, cfg.lr_scale, cfg, t);
    adam_update(p_sh0, g_sh0, s_sh0, cfg.lr_sh0, cfg, t);
    adam_update(p_density, g_density, s_density, cfg.lr_density, cfg, t);
    adam_update(p_blur, g_blur, s_blur, cfg.lr_blur, cfg, t);
    if (cfg.free_rotations) {
      std::vector<double> g_quat(4 * n);
      for (size_t i = 0; i < n; ++i) {
        // Project onto the tangent of the unit quaternion.
        Vec4 g = scale * eval.grads.d_quat[i];
        Vec4 q;
        for (int k = 0; k < 4; ++k) q[k] = p_quat[4 * i + k];
        const double qn = q.norm();
        if (qn > 1e-12) {
          const Vec4 qu = q / qn;
          g -= qu * qu.dot(g);
        }
        for (int k = 0; k < 4; ++k) g_quat[4 * i + k] = g[k];
      }
      adam_update(p_quat, g_quat, s_quat, cfg.lr_quat, cfg, t);
    }
  }

  materialize();
  result.scene = std::move(scene);
  return result;
}

}  // namespace trikit
