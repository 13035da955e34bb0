#include "trikit/raster.hpp"

#include <omp.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "trikit/mesh.hpp"

namespace trikit {

namespace {

inline double cross2(const Vec2& a, const Vec2& b) { return a.x() * b.y() - a.y() * b.x(); }

struct ClosestEdge {
  double dist2 = std::numeric_limits<double>::infinity();
  int edge = 0;
  double t = 0.0;
};

inline ClosestEdge closest_edge(const Vec2 v[3], const Vec2& p) {
  ClosestEdge best;
  for (int e = 0; e < 3; ++e) {
    const Vec2& a = v[e];
    const Vec2& b = v[(e + 1) % 3];
    const Vec2 ab = b - a;
    const double len2 = ab.squaredNorm();
    const double t = len2 > 0.0 ? std::clamp((p - a).dot(ab) / len2, 0.0, 1.0) : 0.0;
    const double d2 = (p - (a + t * ab)).squaredNorm();
    if (d2 < best.dist2) {
      best.dist2 = d2;
      best.edge = e;
      best.t = t;
    }
  }
  return best;
}

inline bool point_inside(const Vec2 v[3], const Vec2& p) {
  const double w = cross2(v[1] - v[0], v[2] - v[0]);
  if (w == 0.0) return false;
  const double s = w > 0.0 ? 1.0 : -1.0;
  return s * cross2(v[1] - v[0], p - v[0]) >= 0.0 && s * cross2(v[2] - v[1], p - v[1]) >= 0.0 &&
         s * cross2(v[0] - v[2], p - v[2]) >= 0.0;
}

struct PixelAccum {
  Vec3 rgb = Vec3::Zero();
  double alpha = 0.0;
  double depth = 0.0;
  Vec3 normal = Vec3::Zero();
};

// Front-to-back compositing of one pixel over candidates in depth order.
// Candidates whose coverage vanishes are exact no-ops, so any candidate
// list that is a depth-ordered superset of the contributing set yields
// bit-identical results.
inline PixelAccum composite_pixel(std::span<const int32_t> order,
                                  std::span<const ScreenTriangle> screen, const Vec2& pc,
                                  double cutoff, const Vec3& background) {
  PixelAccum acc;
  double transmittance = 1.0;
  for (int32_t idx : order) {
    if (transmittance < cutoff) break;
    const ScreenTriangle& tri = screen[idx];
    const double d = triangle_signed_distance(tri.v, pc);
    const double w = coverage_window(d, tri.band);
    if (w <= 0.0) continue;
    const double a = tri.opacity * w;
    if (a <= 0.0) continue;
    const double weight = a * transmittance;
    acc.rgb += tri.color * weight;
    acc.alpha += weight;
    acc.depth += tri.mean_depth * weight;
    acc.normal += tri.normal * weight;
    transmittance *= 1.0 - a;
  }
  acc.rgb += transmittance * background;
  return acc;
}

RenderOutput make_output(int width, int height) {
  RenderOutput out;
  out.rgb.pixels = Vec3Grid(height, width, Vec3::Zero());
  out.depth.depths = ScalarGrid(height, width, 0.0);
  out.normal.normals = Vec3Grid(height, width, Vec3::Zero());
  out.normal.mask = MaskGrid(height, width, 0);
  out.alpha = ScalarGrid(height, width, 0.0);
  return out;
}

inline void store_pixel(RenderOutput& out, int r, int c, const PixelAccum& acc,
                        const RasterConfig& cfg) {
  out.rgb.pixels(r, c) = acc.rgb;
  out.alpha(r, c) = acc.alpha;
  if (acc.alpha > cfg.alpha_eps) {
    out.depth.depths(r, c) = acc.depth / acc.alpha;
    const double len = acc.normal.norm();
    if (len > 1e-12) {
      out.normal.normals(r, c) = acc.normal / len;
      out.normal.mask(r, c) = 1;
    }
  }
}

int resolve_threads(const RasterConfig& cfg) {
  return cfg.threads > 0 ? cfg.threads : omp_get_max_threads();
}

constexpr double kSh0C0 = 0.2820947917738781;

// d(R(q) u)/dq as a 3x4 block [d/dw | d/dv] for unit q.
inline void rotate_jacobian(const Quat& q, const Vec3& u, Vec3& dw, Mat3& dv) {
  const Vec3 v = q.vec();
  dw = 2.0 * v.cross(u);
  Mat3 ux;
  ux << 0, -u.z(), u.y(), u.z(), 0, -u.x(), -u.y(), u.x(), 0;
  dv = 2.0 * (v * u.transpose() + v.dot(u) * Mat3::Identity() - 2.0 * u * v.transpose() -
              q.w() * ux);
}

struct ScreenGrad {
  Vec3 d_color = Vec3::Zero();
  double d_opacity = 0.0;
  double d_band = 0.0;
  Vec2 d_v[3] = {Vec2::Zero(), Vec2::Zero(), Vec2::Zero()};
};

struct Contrib {
  int pos;  // index into the bin
  double a;
  double w;
  double d;
  double transmittance;
};

}  // namespace

void GradientSet::resize(size_t n) {
  d_center.assign(n, Vec3::Zero());
  d_scale_logits.assign(n, Vec3::Zero());
  d_sh0.assign(n, Vec3::Zero());
  d_density_logit.assign(n, 0.0);
  d_blur_raw.assign(n, 0.0);
  d_quat.assign(n, Vec4::Zero());
}

void GradientSet::set_zero() {
  std::fill(d_center.begin(), d_center.end(), Vec3::Zero());
  std::fill(d_scale_logits.begin(), d_scale_logits.end(), Vec3::Zero());
  std::fill(d_sh0.begin(), d_sh0.end(), Vec3::Zero());
  std::fill(d_density_logit.begin(), d_density_logit.end(), 0.0);
  std::fill(d_blur_raw.begin(), d_blur_raw.end(), 0.0);
  std::fill(d_quat.begin(), d_quat.end(), Vec4::Zero());
}

void GradientSet::accumulate(const GradientSet& other, double scale) {
  for (size_t i = 0; i < d_center.size(); ++i) {
    d_center[i] += scale * other.d_center[i];
    d_scale_logits[i] += scale * other.d_scale_logits[i];
    d_sh0[i] += scale * other.d_sh0[i];
    d_density_logit[i] += scale * other.d_density_logit[i];
    d_blur_raw[i] += scale * other.d_blur_raw[i];
    d_quat[i] += scale * other.d_quat[i];
  }
}

void GradientSet::scale_all(double factor) {
  for (size_t i = 0; i < d_center.size(); ++i) {
    d_center[i] *= factor;
    d_scale_logits[i] *= factor;
    d_sh0[i] *= factor;
    d_density_logit[i] *= factor;
    d_blur_raw[i] *= factor;
    d_quat[i] *= factor;
  }
}

double triangle_signed_distance(const Vec2 v[3], const Vec2& p) {
  const ClosestEdge ce = closest_edge(v, p);
  const double dist = std::sqrt(ce.dist2);
  return point_inside(v, p) ? dist : -dist;
}

SignedDistanceGrad triangle_signed_distance_grad(const Vec2 v[3], const Vec2& p) {
  SignedDistanceGrad out;
  const ClosestEdge ce = closest_edge(v, p);
  const double dist = std::sqrt(ce.dist2);
  const double sign = point_inside(v, p) ? 1.0 : -1.0;
  out.d = sign * dist;
  if (dist < 1e-12) return out;  // on the boundary: subgradient zero
  const int i0 = ce.edge;
  const int i1 = (ce.edge + 1) % 3;
  const Vec2 q = v[i0] + ce.t * (v[i1] - v[i0]);
  const Vec2 unit = (p - q) / dist;
  // Envelope theorem: the clamped parameter is held fixed.
  out.grad[i0] = sign * -(1.0 - ce.t) * unit;
  out.grad[i1] = sign * -ce.t * unit;
  return out;
}

double coverage_window(double d, double band) {
  if (band <= 0.0) {
    if (d > 0.0) return 1.0;
    return d == 0.0 ? 0.5 : 0.0;
  }
  return smoothstep01((d + band) / (2.0 * band));
}

double coverage_window_ddist(double d, double band) {
  if (band <= 0.0) return 0.0;
  return smoothstep01_deriv((d + band) / (2.0 * band)) / (2.0 * band);
}

double coverage_window_dband(double d, double band) {
  if (band <= 0.0) return 0.0;
  const double u = (d + band) / (2.0 * band);
  return smoothstep01_deriv(u) * (-d / (2.0 * band * band));
}

std::vector<ScreenTriangle> project_triangles(const TriangleSet& tris,
                                              const CanonicalTemplate& tmpl,
                                              const CameraPose& render_pose,
                                              const Intrinsics& intr, const ScheduleState& sched,
                                              const ScheduleConfig& sched_cfg,
                                              const RasterConfig& cfg) {
  render_pose.validate();
  intr.validate();
  const size_t n = tris.size();
  std::vector<ScreenTriangle> candidates(n);
  std::vector<uint8_t> keep(n, 0);

  const int nthreads = resolve_threads(cfg);
#pragma omp parallel for schedule(static) num_threads(nthreads)
  for (long long ii = 0; ii < static_cast<long long>(n); ++ii) {
    const size_t i = static_cast<size_t>(ii);
    const double p = sigmoid(tris.density_logits[i]);
    const double mapped = opacity_map(p, sched.e);
    const Vec3 scales = coverage_boost(tris.world_scales(i), mapped, sched_cfg.coverage_threshold,
                                       sched_cfg.coverage_gain);
    const BuiltTriangle built =
        build_vertices(tris.quats[i], scales, tris.centers[i], tmpl, tris.pose_of(i));

    ScreenTriangle st;
    bool visible = true;
    double depth_sum = 0.0;
    for (int k = 0; k < 3; ++k) {
      const Vec3 pc = render_pose.apply_inverse(built.vertices[k]);
      if (pc.z() < cfg.near_plane) {
        visible = false;
        break;
      }
      st.v[k] = Vec2(intr.fx * pc.x() / pc.z() + intr.cx, intr.fy * pc.y() / pc.z() + intr.cy);
      st.depth[k] = pc.z();
      depth_sum += pc.z();
    }
    if (!visible) continue;
    st.mean_depth = depth_sum / 3.0;
    st.opacity =
        alpha_floor(temperature_sharpen(mapped, sched.tau), sched.floor_active,
                    sched_cfg.alpha_floor_value);
    st.band = cfg.kappa * blur_value(tris.blur_raws[i], sched.beta, sched_cfg.blur_eps);
    st.color = sh0_to_color(tris.sh0[i]);
    st.normal = tris.pose_of(i).rotation * (tris.quats[i].toRotationMatrix() * Vec3::UnitZ());
    st.id = static_cast<int32_t>(i);
    candidates[i] = st;
    keep[i] = 1;
  }

  std::vector<ScreenTriangle> out;
  out.reserve(n);
  for (size_t i = 0; i < n; ++i) {
    if (keep[i]) out.push_back(candidates[i]);
  }
  return out;
}

TileBins bin_tiles(std::span<const ScreenTriangle> screen, int tile, int width, int height) {
  require(tile >= 4, "bin_tiles: tile size must be >= 4");
  TileBins bins;
  bins.tile_size = tile;
  bins.width = width;
  bins.height = height;
  bins.tiles_x = (width + tile - 1) / tile;
  bins.tiles_y = (height + tile - 1) / tile;
  bins.bins.assign(static_cast<size_t>(bins.tiles_x) * bins.tiles_y, {});

  // Global front-to-back order; ids break depth ties.
  std::vector<int32_t> order(screen.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int32_t a, int32_t b) {
    if (screen[a].mean_depth != screen[b].mean_depth)
      return screen[a].mean_depth < screen[b].mean_depth;
    return screen[a].id < screen[b].id;
  });

  for (int32_t idx : order) {
    const ScreenTriangle& tri = screen[idx];
    double minx = tri.v[0].x(), maxx = tri.v[0].x();
    double miny = tri.v[0].y(), maxy = tri.v[0].y();
    for (int k = 1; k < 3; ++k) {
      minx = std::min(minx, tri.v[k].x());
      maxx = std::max(maxx, tri.v[k].x());
      miny = std::min(miny, tri.v[k].y());
      maxy = std::max(maxy, tri.v[k].y());
    }
    // Pixel centers sit at +0.5; outside the band-expanded box coverage is
    // exactly zero, so this range is lossless.
    const int c_lo = std::max(0, static_cast<int>(std::ceil(minx - tri.band - 0.5)));
    const int c_hi = std::min(width - 1, static_cast<int>(std::floor(maxx + tri.band - 0.5)));
    const int r_lo = std::max(0, static_cast<int>(std::ceil(miny - tri.band - 0.5)));
    const int r_hi = std::min(height - 1, static_cast<int>(std::floor(maxy + tri.band - 0.5)));
    if (c_lo > c_hi || r_lo > r_hi) continue;
    for (int ty = r_lo / tile; ty <= r_hi / tile; ++ty) {
      for (int tx = c_lo / tile; tx <= c_hi / tile; ++tx) {
        bins.bins[static_cast<size_t>(ty) * bins.tiles_x + tx].push_back(idx);
      }
    }
  }
  return bins;
}

RenderOutput composite_forward(const TileBins& bins, std::span<const ScreenTriangle> screen,
                               const Vec3& background, const RasterConfig& cfg) {
  RenderOutput out = make_output(bins.width, bins.height);
  const int tiles_total = bins.tiles_x * bins.tiles_y;
  const int nthreads = resolve_threads(cfg);

#pragma omp parallel for schedule(dynamic, 1) num_threads(nthreads)
  for (int tidx = 0; tidx < tiles_total; ++tidx) {
    const int ty = tidx / bins.tiles_x;
    const int tx = tidx % bins.tiles_x;
    const auto& bin = bins.bins[tidx];
    const int r0 = ty * bins.tile_size;
    const int r1 = std::min(r0 + bins.tile_size, bins.height);
    const int c0 = tx * bins.tile_size;
    const int c1 = std::min(c0 + bins.tile_size, bins.width);
    for (int r = r0; r < r1; ++r) {
      for (int c = c0; c < c1; ++c) {
        const Vec2 pc(c + 0.5, r + 0.5);
        const PixelAccum acc =
            composite_pixel(bin, screen, pc, cfg.transmittance_cutoff, background);
        store_pixel(out, r, c, acc, cfg);
      }
    }
  }
  return out;
}

RenderOutput composite_forward_reference(std::span<const ScreenTriangle> screen, int width,
                                         int height, const Vec3& background,
                                         const RasterConfig& cfg) {
  std::vector<int32_t> order(screen.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int32_t a, int32_t b) {
    if (screen[a].mean_depth != screen[b].mean_depth)
      return screen[a].mean_depth < screen[b].mean_depth;
    return screen[a].id < screen[b].id;
  });

  RenderOutput out = make_output(width, height);
  for (int r = 0; r < height; ++r) {
    for (int c = 0; c < width; ++c) {
      const Vec2 pc(c + 0.5, r + 0.5);
      const PixelAccum acc =
          composite_pixel(order, screen, pc, cfg.transmittance_cutoff, background);
      store_pixel(out, r, c, acc, cfg);
    }
  }
  return out;
}

GradientSet composite_backward(const TileBins& bins, std::span<const ScreenTriangle> screen,
                               const PixelGradients& upstream, const TriangleSet& tris,
                               const CanonicalTemplate& tmpl, const CameraPose& render_pose,
                               const Intrinsics& intr, const ScheduleState& sched,
                               const ScheduleConfig& sched_cfg, const RasterConfig& cfg,
                               bool with_quat_grads) {
  require(upstream.d_rgb.same_shape(bins.height, bins.width), "composite_backward: bad upstream");
  const int tiles_total = bins.tiles_x * bins.tiles_y;
  const int nthreads = resolve_threads(cfg);
  const bool has_alpha_grad = upstream.d_alpha.same_shape(bins.height, bins.width);

  // Phase 1: tile-local screen-space gradients, tiles in parallel.
  std::vector<std::vector<ScreenGrad>> tile_grads(tiles_total);
#pragma omp parallel num_threads(nthreads)
  {
    std::vector<Contrib> contribs;
#pragma omp for schedule(dynamic, 1)
    for (int tidx = 0; tidx < tiles_total; ++tidx) {
      const auto& bin = bins.bins[tidx];
      if (bin.empty()) continue;
      auto& local = tile_grads[tidx];
      local.assign(bin.size(), ScreenGrad{});
      const int ty = tidx / bins.tiles_x;
      const int tx = tidx % bins.tiles_x;
      const int r0 = ty * bins.tile_size;
      const int r1 = std::min(r0 + bins.tile_size, bins.height);
      const int c0 = tx * bins.tile_size;
      const int c1 = std::min(c0 + bins.tile_size, bins.width);
      for (int r = r0; r < r1; ++r) {
        for (int c = c0; c < c1; ++c) {
          const Vec2 pc(c + 0.5, r + 0.5);
          const Vec3 g_rgb = upstream.d_rgb(r, c);
          const double g_alpha = has_alpha_grad ? upstream.d_alpha(r, c) : 0.0;
          if (g_rgb.isZero(0.0) && g_alpha == 0.0) continue;

          // Forward replay.
          contribs.clear();
          double transmittance = 1.0;
          for (size_t pos = 0; pos < bin.size(); ++pos) {
            if (transmittance < cfg.transmittance_cutoff) break;
            const ScreenTriangle& tri = screen[bin[pos]];
            const double d = triangle_signed_distance(tri.v, pc);
            const double w = coverage_window(d, tri.band);
            if (w <= 0.0) continue;
            const double a = tri.opacity * w;
            if (a <= 0.0) continue;
            contribs.push_back({static_cast<int>(pos), a, w, d, transmittance});
            transmittance *= 1.0 - a;
          }

          // Reverse sweep with suffix accumulators: at contributor i,
          // suffix_rgb carries (sum_{j>i} c_j a_j T_j + bg T_end) / T_{i+1}
          // and suffix_alpha the matching alpha tail.
          Vec3 suffix_rgb = cfg.background;
          double suffix_alpha = 0.0;
          for (size_t k = contribs.size(); k-- > 0;) {
            const Contrib& ct = contribs[k];
            const ScreenTriangle& tri = screen[bin[ct.pos]];
            ScreenGrad& sg = local[ct.pos];

            const double weight = ct.a * ct.transmittance;
            sg.d_color += g_rgb * weight;

            double dL_da = g_rgb.dot(tri.color - suffix_rgb) * ct.transmittance;
            dL_da += g_alpha * (1.0 - suffix_alpha) * ct.transmittance;

            sg.d_opacity += dL_da * ct.w;
            const double dL_dw = dL_da * tri.opacity;
            sg.d_band += dL_dw * coverage_window_dband(ct.d, tri.band);
            const double dL_dd = dL_dw * coverage_window_ddist(ct.d, tri.band);
            if (dL_dd != 0.0) {
              const SignedDistanceGrad sd = triangle_signed_distance_grad(tri.v, pc);
              for (int k2 = 0; k2 < 3; ++k2) sg.d_v[k2] += dL_dd * sd.grad[k2];
            }

            suffix_rgb = tri.color * ct.a + (1.0 - ct.a) * suffix_rgb;
            suffix_alpha = ct.a + (1.0 - ct.a) * suffix_alpha;
          }
        }
      }
    }
  }

  // Phase 2: fixed-order combine into per-screen-triangle gradients.
  std::vector<ScreenGrad> screen_grads(screen.size());
  for (int tidx = 0; tidx < tiles_total; ++tidx) {
    const auto& bin = bins.bins[tidx];
    const auto& local = tile_grads[tidx];
    for (size_t pos = 0; pos < local.size(); ++pos) {
      ScreenGrad& dst = screen_grads[bin[pos]];
      const ScreenGrad& src = local[pos];
      dst.d_color += src.d_color;
      dst.d_opacity += src.d_opacity;
      dst.d_band += src.d_band;
      for (int k = 0; k < 3; ++k) dst.d_v[k] += src.d_v[k];
    }
  }

  // Phase 3: chain through projection and attribute pipelines. Each screen
  // triangle maps to a distinct primitive, so writes are disjoint.
  GradientSet out;
  out.resize(tris.size());

#pragma omp parallel for schedule(static) num_threads(nthreads)
  for (long long jj = 0; jj < static_cast<long long>(screen.size()); ++jj) {
    const size_t j = static_cast<size_t>(jj);
    const ScreenGrad& sg = screen_grads[j];
    const ScreenTriangle& st = screen[j];
    const size_t i = static_cast<size_t>(st.id);

    // sh0 through the clamp.
    const Vec3& sh = tris.sh0[i];
    for (int ch = 0; ch < 3; ++ch) {
      const double pre = sh[ch] * kSh0C0 + 0.5;
      if (pre > 0.0 && pre < 1.0) out.d_sh0[i][ch] = sg.d_color[ch] * kSh0C0;
    }

    // Opacity pipeline.
    const double p = sigmoid(tris.density_logits[i]);
    const double mapped = opacity_map(p, sched.e);
    const double sharpened = temperature_sharpen(mapped, sched.tau);
    double d_mapped = 0.0;
    if (!sched.floor_active || sharpened >= sched_cfg.alpha_floor_value) {
      d_mapped = sg.d_opacity * temperature_sharpen_deriv(mapped, sched.tau);
    }

    // Blur band.
    const double sig_b = sigmoid(tris.blur_raws[i]);
    out.d_blur_raw[i] = sg.d_band * cfg.kappa * sched.beta * sig_b * (1.0 - sig_b);

    // Vertices back to center, scales, and optionally the quaternion.
    const Vec3 s_world = tris.world_scales(i);
    const double boost_arg = mapped;
    const bool boosted = boost_arg < sched_cfg.coverage_threshold;
    const double boost =
        boosted ? 1.0 + sched_cfg.coverage_gain * (sched_cfg.coverage_threshold - boost_arg) /
                            sched_cfg.coverage_threshold
                : 1.0;
    const Vec3 s_eff = s_world * boost;
    const CameraPose& src_pose = tris.pose_of(i);
    const Mat3 M = src_pose.rotation * tris.quats[i].toRotationMatrix();
    const BuiltTriangle built =
        build_vertices(tris.quats[i], s_eff, tris.centers[i], tmpl, src_pose);

    Vec3 g_center = Vec3::Zero();
    Vec3 g_s_eff = Vec3::Zero();
    Vec4 g_quat = Vec4::Zero();
    for (int k = 0; k < 3; ++k) {
      const Vec2& gv = sg.d_v[k];
      if (gv.isZero(0.0)) continue;
      const Vec3 pcam = render_pose.apply_inverse(built.vertices[k]);
      const double iz = 1.0 / pcam.z();
      Vec3 g_pcam(intr.fx * iz * gv.x(), intr.fy * iz * gv.y(),
                  -(intr.fx * pcam.x() * iz * iz * gv.x() +
                    intr.fy * pcam.y() * iz * iz * gv.y()));
      const Vec3 g_world = render_pose.rotation * g_pcam;
      g_center += g_world;
      const Vec3 w_local = M.transpose() * g_world;
      for (int axis = 0; axis < 3; ++axis) {
        g_s_eff[axis] += tmpl.vertices[k][axis] * w_local[axis];
      }
      if (with_quat_grads) {
        const Vec3 g_rot = src_pose.rotation.transpose() * g_world;
        Vec3 dw;
        Mat3 dv;
        rotate_jacobian(tris.quats[i], tmpl.vertices[k].cwiseProduct(s_eff), dw, dv);
        g_quat[3] += dw.dot(g_rot);                 // w component (Eigen coeffs order x,y,z,w)
        g_quat.head<3>() += dv.transpose() * g_rot;
      }
    }
    out.d_center[i] = g_center;
    if (with_quat_grads) out.d_quat[i] = g_quat;

    // Scale logits plus the coverage-boost coupling into the density.
    const double span = tris.s_max - tris.s_min;
    const double d_boost =
        boosted ? -sched_cfg.coverage_gain / sched_cfg.coverage_threshold : 0.0;
    for (int axis = 0; axis < 3; ++axis) {
      const double sl = sigmoid(tris.scale_logits[i][axis]);
      out.d_scale_logits[i][axis] =
          g_s_eff[axis] * boost * tris.scale_refs[i][axis] * span * sl * (1.0 - sl);
      d_mapped += g_s_eff[axis] * s_world[axis] * d_boost;
    }
    out.d_density_logit[i] = d_mapped * opacity_map_deriv(p, sched.e) * p * (1.0 - p);
  }
  return out;
}

RenderOutput render(const TriangleSet& tris, const CameraPose& pose, const Intrinsics& intr,
                    const ScheduleState& sched, const ScheduleConfig& sched_cfg,
                    const RasterConfig& cfg) {
  const CanonicalTemplate tmpl = CanonicalTemplate::standard();
  const auto screen = project_triangles(tris, tmpl, pose, intr, sched, sched_cfg, cfg);
  const TileBins bins = bin_tiles(screen, cfg.tile_size, intr.width, intr.height);
  return composite_forward(bins, screen, cfg.background, cfg);
}

GradientSet render_backward(const TriangleSet& tris, const CameraPose& pose,
                            const Intrinsics& intr, const ScheduleState& sched,
                            const ScheduleConfig& sched_cfg, const RasterConfig& cfg,
                            const PixelGradients& upstream, bool with_quat_grads) {
  const CanonicalTemplate tmpl = CanonicalTemplate::standard();
  const auto screen = project_triangles(tris, tmpl, pose, intr, sched, sched_cfg, cfg);
  const TileBins bins = bin_tiles(screen, cfg.tile_size, intr.width, intr.height);
  return composite_backward(bins, screen, upstream, tris, tmpl, pose, intr, sched, sched_cfg,
                            cfg, with_quat_grads);
}

ScalarGrid min_boundary_distance(const TileBins& bins, std::span<const ScreenTriangle> screen) {
  ScalarGrid out(bins.height, bins.width, std::numeric_limits<double>::infinity());
  const int tiles_total = bins.tiles_x * bins.tiles_y;
#pragma omp parallel for schedule(dynamic, 1)
  for (int tidx = 0; tidx < tiles_total; ++tidx) {
    const auto& bin = bins.bins[tidx];
    const int ty = tidx / bins.tiles_x;
    const int tx = tidx % bins.tiles_x;
    const int r0 = ty * bins.tile_size;
    const int r1 = std::min(r0 + bins.tile_size, bins.height);
    const int c0 = tx * bins.tile_size;
    const int c1 = std::min(c0 + bins.tile_size, bins.width);
    for (int r = r0; r < r1; ++r) {
      for (int c = c0; c < c1; ++c) {
        const Vec2 pc(c + 0.5, r + 0.5);
        double best = std::numeric_limits<double>::infinity();
        for (int32_t idx : bin) {
          best = std::min(best, std::abs(triangle_signed_distance(screen[idx].v, pc)));
        }
        out(r, c) = best;
      }
    }
  }
  return out;
}

std::vector<ScreenTriangle> project_mesh(const Mesh& mesh, const CameraPose& pose,
                                         const Intrinsics& intr, const RasterConfig& cfg) {
  pose.validate();
  intr.validate();
  std::vector<ScreenTriangle> screen;
  screen.reserve(mesh.faces.size());
  for (size_t f = 0; f < mesh.faces.size(); ++f) {
    ScreenTriangle st;
    bool visible = true;
    double depth_sum = 0.0;
    for (int k = 0; k < 3; ++k) {
      const Vec3 pc = pose.apply_inverse(mesh.vertices[mesh.faces[f][k]]);
      if (pc.z() < cfg.near_plane) {
        visible = false;
        break;
      }
      st.v[k] = Vec2(intr.fx * pc.x() / pc.z() + intr.cx, intr.fy * pc.y() / pc.z() + intr.cy);
      st.depth[k] = pc.z();
      depth_sum += pc.z();
    }
    if (!visible) continue;
    st.mean_depth = depth_sum / 3.0;
    st.color = f < mesh.colors.size() ? mesh.colors[f] : Vec3::Constant(0.5);
    st.opacity = 1.0;
    st.band = 0.0;
    const Vec3 n =
        (mesh.vertices[mesh.faces[f][1]] - mesh.vertices[mesh.faces[f][0]])
            .cross(mesh.vertices[mesh.faces[f][2]] - mesh.vertices[mesh.faces[f][0]]);
    const double len = n.norm();
    st.normal = len > 1e-15 ? Vec3(n / len) : Vec3::UnitZ();
    st.id = static_cast<int32_t>(f);
    screen.push_back(st);
  }
  return screen;
}

RenderOutput render_mesh_hard(const Mesh& mesh, const CameraPose& pose, const Intrinsics& intr,
                              const RasterConfig& cfg) {
  const auto screen = project_mesh(mesh, pose, intr, cfg);
  const TileBins bins = bin_tiles(screen, cfg.tile_size, intr.width, intr.height);
  return composite_forward(bins, screen, cfg.background, cfg);
}

namespace {

double fd_loss(const TriangleSet& tris, const CameraPose& pose, const Intrinsics& intr,
               const ScheduleState& sched, const ScheduleConfig& sched_cfg,
               const RasterConfig& cfg, const PixelGradients& upstream) {
  const RenderOutput ro = render(tris, pose, intr, sched, sched_cfg, cfg);
  std::vector<double> terms;
  terms.reserve(static_cast<size_t>(intr.width) * intr.height);
  for (int r = 0; r < intr.height; ++r) {
    for (int c = 0; c < intr.width; ++c) {
      terms.push_back(upstream.d_rgb(r, c).dot(ro.rgb.pixels(r, c)) +
                      upstream.d_alpha(r, c) * ro.alpha(r, c));
    }
  }
  return pairwise_sum(terms);
}

double relative_error(double analytic, double fd) {
  const double denom = std::max(std::abs(analytic), std::abs(fd));
  if (denom < 1e-12) return 0.0;  // both vanish: agreement
  return std::abs(analytic - fd) / denom;
}

}  // namespace

FdReport finite_difference_check(const TriangleSet& tris, const CameraPose& pose,
                                 const Intrinsics& intr, const ScheduleState& sched,
                                 const ScheduleConfig& sched_cfg, const RasterConfig& cfg,
                                 const FdSample& sample, double h) {
  SplitRng rng(sample.seed);
  SplitRng rng_rgb = rng.split("fd-upstream-rgb");
  SplitRng rng_alpha = rng.split("fd-upstream-alpha");

  PixelGradients upstream;
  upstream.d_rgb = Vec3Grid(intr.height, intr.width, Vec3::Zero());
  upstream.d_alpha = ScalarGrid(intr.height, intr.width, 0.0);
  for (int r = 0; r < intr.height; ++r) {
    for (int c = 0; c < intr.width; ++c) {
      upstream.d_rgb(r, c) =
          Vec3(rng_rgb.uniform(-1, 1), rng_rgb.uniform(-1, 1), rng_rgb.uniform(-1, 1));
      upstream.d_alpha(r, c) = rng_alpha.uniform(-1, 1);
    }
  }

  const GradientSet analytic =
      render_backward(tris, pose, intr, sched, sched_cfg, cfg, upstream);

  // Band-edge exclusion: primitives with some pixel within the FD step of a
  // coverage clamp boundary get flagged for vertex-affecting parameters.
  const CanonicalTemplate tmpl = CanonicalTemplate::standard();
  const auto screen = project_triangles(tris, tmpl, pose, intr, sched, sched_cfg, cfg);
  std::vector<uint8_t> near_edge(tris.size(), 0);
  for (const ScreenTriangle& st : screen) {
    // Exclusion zone: a pixel with |d| inside [band - 2h, band + 2h] sits on
    // a coverage clamp seam the FD secant may cross.
    const double margin = 2.0 * h;
    double minx = st.v[0].x(), maxx = st.v[0].x(), miny = st.v[0].y(), maxy = st.v[0].y();
    for (int k = 1; k < 3; ++k) {
      minx = std::min(minx, st.v[k].x());
      maxx = std::max(maxx, st.v[k].x());
      miny = std::min(miny, st.v[k].y());
      maxy = std::max(maxy, st.v[k].y());
    }
    const int c_lo = std::max(0, static_cast<int>(std::floor(minx - st.band - 1)));
    const int c_hi = std::min(intr.width - 1, static_cast<int>(std::ceil(maxx + st.band + 1)));
    const int r_lo = std::max(0, static_cast<int>(std::floor(miny - st.band - 1)));
    const int r_hi = std::min(intr.height - 1, static_cast<int>(std::ceil(maxy + st.band + 1)));
    for (int r = r_lo; r <= r_hi && !near_edge[st.id]; ++r) {
      for (int c = c_lo; c <= c_hi; ++c) {
        const double d = triangle_signed_distance(st.v, Vec2(c + 0.5, r + 0.5));
        if (std::abs(std::abs(d) - st.band) <= margin) {
          near_edge[st.id] = 1;
          break;
        }
      }
    }
  }

  FdReport report;
  TriangleSet work = tris;
  double setter_h = h;
  auto run_fd = [&](auto&& setter, double base) {
    setter(base + setter_h);
    const double lp = fd_loss(work, pose, intr, sched, sched_cfg, cfg, upstream);
    setter(base - setter_h);
    const double lm = fd_loss(work, pose, intr, sched, sched_cfg, cfg, upstream);
    setter(base);
    return (lp - lm) / (2.0 * setter_h);
  };

  const size_t n = tris.size();
  SplitRng pick = rng.split("fd-param-picks");
  auto sample_prims = [&](int count) {
    std::vector<size_t> ids;
    for (int k = 0; k < count; ++k) ids.push_back(pick.uniform_index(n));
    return ids;
  };

  // Compositing is linear in color inside the clamp, so a large step keeps
  // the secant exact while drowning summation round-off.
  const double color_h = std::max(h, 1e-2);
  for (size_t i : sample_prims(sample.color_prims)) {
    for (int axis = 0; axis < 3; ++axis) {
      const double base = work.sh0[i][axis];
      setter_h = color_h;
      const double fd = run_fd([&](double v) { work.sh0[i][axis] = v; }, base);
      setter_h = h;
      FdEntry e{FdEntry::Kind::kSh0, static_cast<int>(i), axis, analytic.d_sh0[i][axis], fd,
                relative_error(analytic.d_sh0[i][axis], fd), false};
      report.entries.push_back(e);
    }
  }
  for (size_t i : sample_prims(sample.vertex_prims)) {
    for (int axis = 0; axis < 3; ++axis) {
      const double base = work.centers[i][axis];
      const double fd = run_fd([&](double v) { work.centers[i][axis] = v; }, base);
      FdEntry e{FdEntry::Kind::kCenter, static_cast<int>(i), axis, analytic.d_center[i][axis],
                fd, relative_error(analytic.d_center[i][axis], fd), near_edge[i] != 0};
      report.entries.push_back(e);
    }
    for (int axis = 0; axis < 3; ++axis) {
      const double base = work.scale_logits[i][axis];
      const double fd = run_fd([&](double v) { work.scale_logits[i][axis] = v; }, base);
      FdEntry e{FdEntry::Kind::kScaleLogit, static_cast<int>(i), axis,
                analytic.d_scale_logits[i][axis], fd,
                relative_error(analytic.d_scale_logits[i][axis], fd), near_edge[i] != 0};
      report.entries.push_back(e);
    }
  }
  for (size_t i : sample_prims(sample.opacity_prims)) {
    {
      const double base = work.density_logits[i];
      const double fd = run_fd([&](double v) { work.density_logits[i] = v; }, base);
      FdEntry e{FdEntry::Kind::kDensity, static_cast<int>(i), 0, analytic.d_density_logit[i],
                fd, relative_error(analytic.d_density_logit[i], fd), near_edge[i] != 0};
      report.entries.push_back(e);
    }
    {
      const double base = work.blur_raws[i];
      const double fd = run_fd([&](double v) { work.blur_raws[i] = v; }, base);
      FdEntry e{FdEntry::Kind::kBlur, static_cast<int>(i), 0, analytic.d_blur_raw[i], fd,
                relative_error(analytic.d_blur_raw[i], fd), near_edge[i] != 0};
      report.entries.push_back(e);
    }
  }

  std::vector<double> included;
  size_t below = 0;
  for (const FdEntry& e : report.entries) {
    if (e.kind == FdEntry::Kind::kSh0) {
      report.color_max_rel = std::max(report.color_max_rel, e.rel_error);
    }
    if (e.excluded) {
      ++report.excluded_count;
      continue;
    }
    included.push_back(e.rel_error);
    if (e.rel_error < 1e-3) ++below;
  }
  if (!included.empty()) {
    std::sort(included.begin(), included.end());
    report.max_rel = included.back();
    report.p95_rel = included[static_cast<size_t>(0.95 * (included.size() - 1))];
    report.frac_below_1e3 = static_cast<double>(below) / included.size();
  }
  return report;
}

}  // namespace trikit
