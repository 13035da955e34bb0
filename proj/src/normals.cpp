#include "trikit/normals.hpp"

#include <algorithm>
#include <cmath>

namespace trikit {

namespace {

// Truncated box mean of the point grid. Window 1 is a copy.
Vec3Grid average_pool(const Vec3Grid& pts, int window) {
  if (window <= 1) return pts;
  const int half = window / 2;
  Vec3Grid out(pts.rows, pts.cols, Vec3::Zero());
#pragma omp parallel for schedule(static)
  for (int r = 0; r < pts.rows; ++r) {
    for (int c = 0; c < pts.cols; ++c) {
      Vec3 acc = Vec3::Zero();
      int count = 0;
      for (int dr = -half; dr <= half; ++dr) {
        for (int dc = -half; dc <= half; ++dc) {
          const int rr = r + dr;
          const int cc = c + dc;
          if (rr < 0 || rr >= pts.rows || cc < 0 || cc >= pts.cols) continue;
          acc += pts(rr, cc);
          ++count;
        }
      }
      out(r, c) = acc / count;
    }
  }
  return out;
}

inline Vec3 dx_central(const Vec3Grid& g, int r, int c) {
  const int c0 = std::max(c - 1, 0);
  const int c1 = std::min(c + 1, g.cols - 1);
  return 0.5 * (g(r, c1) - g(r, c0));
}

inline Vec3 dy_central(const Vec3Grid& g, int r, int c) {
  const int r0 = std::max(r - 1, 0);
  const int r1 = std::min(r + 1, g.rows - 1);
  return 0.5 * (g(r1, c) - g(r0, c));
}

}  // namespace

NormalField geometry_normals(const PointMap& pm, int smooth_window, bool detach_flag,
                             double degenerate_eps) {
  require(pm.rows() >= 3 && pm.cols() >= 3, "geometry_normals: grid must be at least 3x3");
  require(smooth_window >= 1 && smooth_window % 2 == 1,
          "geometry_normals: smooth window must be odd");

  const Vec3Grid smoothed = average_pool(pm.points, smooth_window);
  NormalField out;
  out.normals = Vec3Grid(pm.rows(), pm.cols(), Vec3::Zero());
  out.mask = MaskGrid(pm.rows(), pm.cols(), 0);
  out.detached = detach_flag;

#pragma omp parallel for schedule(static)
  for (int r = 1; r < pm.rows() - 1; ++r) {
    for (int c = 1; c < pm.cols() - 1; ++c) {
      if (!pm.mask(r, c)) continue;
      const Vec3 cross = dx_central(smoothed, r, c).cross(dy_central(smoothed, r, c));
      const double len = cross.norm();
      if (len < degenerate_eps) continue;
      Vec3 n = cross / len;
      if (n.dot(pm.points(r, c)) > 0.0) n = -n;
      out.normals(r, c) = n;
      out.mask(r, c) = 1;
    }
  }
  return out;
}

NormalField orientation_aware_filter(const NormalField& nf, int window) {
  require(window >= 3 && window % 2 == 1, "orientation_aware_filter: window must be odd and >= 3");
  const int half = window / 2;
  NormalField out;
  out.normals = nf.normals;
  out.mask = nf.mask;
  out.detached = nf.detached;

#pragma omp parallel for schedule(static)
  for (int r = 0; r < nf.rows(); ++r) {
    for (int c = 0; c < nf.cols(); ++c) {
      if (!nf.mask(r, c)) continue;
      const Vec3 center = nf.normals(r, c);
      Vec3 acc = Vec3::Zero();
      for (int dr = -half; dr <= half; ++dr) {
        for (int dc = -half; dc <= half; ++dc) {
          const int rr = r + dr;
          const int cc = c + dc;
          if (rr < 0 || rr >= nf.rows() || cc < 0 || cc >= nf.cols()) continue;
          if (!nf.mask(rr, cc)) continue;
          const Vec3& nb = nf.normals(rr, cc);
          if (nb.dot(center) > 0.0) acc += nb;
        }
      }
      // The center always agrees with itself, so acc projects positively
      // onto it and cannot vanish.
      out.normals(r, c) = acc.normalized();
    }
  }
  return out;
}

NormalField refine_normals(const NormalField& n_geo, const NormalField& n_sm,
                           const Vec3Grid& residual) {
  require(n_geo.normals.same_shape(n_sm.normals) && n_sm.normals.same_shape(residual),
          "refine_normals: shape mismatch");
  NormalField out;
  out.normals = n_sm.normals;
  out.mask = n_sm.mask;
  out.detached = n_sm.detached;

#pragma omp parallel for schedule(static)
  for (int r = 0; r < n_sm.rows(); ++r) {
    for (int c = 0; c < n_sm.cols(); ++c) {
      if (!n_sm.mask(r, c)) continue;
      const Vec3& res = residual(r, c);
      if (res.isZero(0.0)) continue;  // zero residual keeps n_sm bit-exact
      const Vec3 sum = n_sm.normals(r, c) + res;
      const double len = sum.norm();
      if (len < 1e-12) {
        out.mask(r, c) = 0;
        out.normals(r, c) = Vec3::Zero();
      } else {
        out.normals(r, c) = sum / len;
      }
    }
  }
  return out;
}

double blend_coefficient(int t, const BootstrapSchedule& sched) {
  sched.validate();
  require(t >= 0, "blend_coefficient: negative step");
  if (t <= sched.t_tk) return 1.0;
  if (t >= sched.t_bl) return 0.0;
  const double phase = static_cast<double>(t - sched.t_tk) / (sched.t_bl - sched.t_tk);
  return 0.5 * (1.0 + std::cos(M_PI * phase));
}

NormalField bootstrap_blend(const NormalField& n_ref, const NormalField& n_tch, double alpha) {
  require(alpha >= 0.0 && alpha <= 1.0, "bootstrap_blend: alpha outside [0,1]");
  require(n_ref.normals.same_shape(n_tch.normals), "bootstrap_blend: shape mismatch");
  NormalField out;
  out.normals = n_ref.normals;
  out.mask = n_ref.mask;
  out.detached = n_ref.detached;

#pragma omp parallel for schedule(static)
  for (int r = 0; r < n_ref.rows(); ++r) {
    for (int c = 0; c < n_ref.cols(); ++c) {
      if (!n_ref.mask(r, c) || !n_tch.mask(r, c)) continue;
      const Vec3 mix = alpha * n_tch.normals(r, c) + (1.0 - alpha) * n_ref.normals(r, c);
      const double len = mix.norm();
      if (len < 1e-12) continue;  // antipodal cancellation: keep n_ref
      out.normals(r, c) = mix / len;
    }
  }
  return out;
}

std::optional<Mat3> make_tangent_frame(const Vec3& n, const Vec3& dx, double parallel_eps) {
  const double dx_len = dx.norm();
  if (dx_len < 1e-12) return std::nullopt;
  Vec3 t = dx - dx.dot(n) * n;
  const double rej = t.norm();
  if (rej <= parallel_eps * dx_len) return std::nullopt;
  t /= rej;
  const Vec3 b = n.cross(t);
  t = b.cross(n);
  Mat3 frame;
  frame.col(0) = t;
  frame.col(1) = b;
  frame.col(2) = n;
  return frame;
}

Quat quat_from_matrix(const Mat3& m) {
  Quat q(m);
  q.normalize();
  if (q.w() < 0.0 || (q.w() == 0.0 && (q.x() < 0.0 || (q.x() == 0.0 && (q.y() < 0.0 || (q.y() == 0.0 && q.z() < 0.0)))))) {
    q.coeffs() = -q.coeffs();
  }
  return q;
}

TangentFrameField tangent_frames(const NormalField& n_fwd, const PointMap& pm,
                                 double parallel_eps) {
  require(n_fwd.normals.same_shape(pm.points), "tangent_frames: shape mismatch");
  TangentFrameField out;
  out.rows = n_fwd.rows();
  out.cols = n_fwd.cols();
  out.frames.assign(static_cast<size_t>(out.rows) * out.cols, Mat3::Identity());
  out.quats.assign(static_cast<size_t>(out.rows) * out.cols, Quat::Identity());
  out.mask = MaskGrid(out.rows, out.cols, 0);

#pragma omp parallel for schedule(static)
  for (int r = 0; r < out.rows; ++r) {
    for (int c = 0; c < out.cols; ++c) {
      if (!n_fwd.mask(r, c)) continue;
      const Vec3 dx = dx_central(pm.points, r, c);
      const auto frame = make_tangent_frame(n_fwd.normals(r, c), dx, parallel_eps);
      if (!frame) continue;
      const size_t idx = static_cast<size_t>(r) * out.cols + c;
      out.frames[idx] = *frame;
      out.quats[idx] = quat_from_matrix(*frame);
      out.mask(r, c) = 1;
    }
  }
  return out;
}

CosineLoss normal_cosine_loss(const NormalField& n_ref, const NormalField& n_tch) {
  require(n_ref.normals.same_shape(n_tch.normals), "normal_cosine_loss: shape mismatch");
  std::vector<double> terms;
  terms.reserve(n_ref.normals.size());
  for (int r = 0; r < n_ref.rows(); ++r) {
    for (int c = 0; c < n_ref.cols(); ++c) {
      if (!n_ref.mask(r, c) || !n_tch.mask(r, c)) continue;
      terms.push_back(1.0 - n_ref.normals(r, c).dot(n_tch.normals(r, c)));
    }
  }
  CosineLoss loss;
  loss.valid_count = terms.size();
  loss.empty = terms.empty();
  loss.value = loss.empty ? 0.0 : pairwise_mean(terms);
  return loss;
}

NormalField resize_normal_field(const NormalField& nf, int rows, int cols) {
  require(rows > 0 && cols > 0, "resize_normal_field: bad target shape");
  if (nf.rows() == rows && nf.cols() == cols) return nf;
  NormalField out;
  out.normals = Vec3Grid(rows, cols, Vec3::Zero());
  out.mask = MaskGrid(rows, cols, 0);
  out.detached = nf.detached;

  const double sr = static_cast<double>(nf.rows()) / rows;
  const double sc = static_cast<double>(nf.cols()) / cols;
#pragma omp parallel for schedule(static)
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      const double fr = std::clamp((r + 0.5) * sr - 0.5, 0.0, nf.rows() - 1.0);
      const double fc = std::clamp((c + 0.5) * sc - 0.5, 0.0, nf.cols() - 1.0);
      const int r0 = static_cast<int>(fr);
      const int c0 = static_cast<int>(fc);
      const int r1 = std::min(r0 + 1, nf.rows() - 1);
      const int c1 = std::min(c0 + 1, nf.cols() - 1);
      const double wr = fr - r0;
      const double wc = fc - c0;
      if (!(nf.mask(r0, c0) && nf.mask(r0, c1) && nf.mask(r1, c0) && nf.mask(r1, c1))) continue;
      const Vec3 mix = (1 - wr) * ((1 - wc) * nf.normals(r0, c0) + wc * nf.normals(r0, c1)) +
                       wr * ((1 - wc) * nf.normals(r1, c0) + wc * nf.normals(r1, c1));
      const double len = mix.norm();
      if (len < 1e-12) continue;
      out.normals(r, c) = mix / len;
      out.mask(r, c) = 1;
    }
  }
  return out;
}

NormalField normal_pipeline_forward(const PointMap& pm, const NormalConfig& cfg) {
  NormalField geo = geometry_normals(pm, cfg.smooth_window, cfg.detach_points, cfg.degenerate_eps);
  return orientation_aware_filter(geo, cfg.filter_window);
}

Vec3Grid normal_pipeline_backward(const PointMap& pm, const NormalField& teacher,
                                  const NormalConfig& cfg) {
  Vec3Grid grad(pm.rows(), pm.cols(), Vec3::Zero());
  if (cfg.detach_points) return grad;

  // Recompute the forward with intermediates.
  const Vec3Grid smoothed = average_pool(pm.points, cfg.smooth_window);
  const NormalField geo =
      geometry_normals(pm, cfg.smooth_window, cfg.detach_points, cfg.degenerate_eps);
  const NormalField ref = orientation_aware_filter(geo, cfg.filter_window);

  size_t valid = 0;
  for (int r = 0; r < ref.rows(); ++r)
    for (int c = 0; c < ref.cols(); ++c)
      if (ref.mask(r, c) && teacher.mask(r, c)) ++valid;
  if (valid == 0) return grad;

  // d(loss)/d(n_ref), then through the renormalized agreeing-neighbor mean.
  Vec3Grid g_geo(pm.rows(), pm.cols(), Vec3::Zero());
  const int half = cfg.filter_window / 2;
  for (int r = 0; r < ref.rows(); ++r) {
    for (int c = 0; c < ref.cols(); ++c) {
      if (!ref.mask(r, c) || !teacher.mask(r, c)) continue;
      const Vec3 g_ref = -teacher.normals(r, c) / static_cast<double>(valid);

      const Vec3 center = geo.normals(r, c);
      Vec3 acc = Vec3::Zero();
      for (int dr = -half; dr <= half; ++dr)
        for (int dc = -half; dc <= half; ++dc) {
          const int rr = r + dr;
          const int cc = c + dc;
          if (rr < 0 || rr >= ref.rows() || cc < 0 || cc >= ref.cols()) continue;
          if (!geo.mask(rr, cc)) continue;
          if (geo.normals(rr, cc).dot(center) > 0.0) acc += geo.normals(rr, cc);
        }
      const double len = acc.norm();
      if (len < 1e-12) continue;
      const Vec3 n_sm = acc / len;
      const Vec3 gS = (g_ref - n_sm * n_sm.dot(g_ref)) / len;
      for (int dr = -half; dr <= half; ++dr)
        for (int dc = -half; dc <= half; ++dc) {
          const int rr = r + dr;
          const int cc = c + dc;
          if (rr < 0 || rr >= ref.rows() || cc < 0 || cc >= ref.cols()) continue;
          if (!geo.mask(rr, cc)) continue;
          if (geo.normals(rr, cc).dot(center) > 0.0) g_geo(rr, cc) += gS;
        }
    }
  }

  // Through normalize(flip(dx x dy)) into the smoothed point grid.
  Vec3Grid g_smoothed(pm.rows(), pm.cols(), Vec3::Zero());
  for (int r = 1; r < pm.rows() - 1; ++r) {
    for (int c = 1; c < pm.cols() - 1; ++c) {
      if (!geo.mask(r, c)) continue;
      const Vec3 g_n = g_geo(r, c);
      if (g_n.isZero(0.0)) continue;
      const Vec3 dx = dx_central(smoothed, r, c);
      const Vec3 dy = dy_central(smoothed, r, c);
      const Vec3 cross = dx.cross(dy);
      const double len = cross.norm();
      if (len < cfg.degenerate_eps) continue;
      const Vec3 n_unflipped = cross / len;
      const double sign = n_unflipped.dot(pm.points(r, c)) > 0.0 ? -1.0 : 1.0;
      const Vec3 n = sign * n_unflipped;
      const Vec3 g_cross = sign * (g_n - n * n.dot(g_n)) / len;
      const Vec3 g_dx = dy.cross(g_cross);
      const Vec3 g_dy = g_cross.cross(dx);
      g_smoothed(r, c + 1) += 0.5 * g_dx;
      g_smoothed(r, c - 1) -= 0.5 * g_dx;
      g_smoothed(r + 1, c) += 0.5 * g_dy;
      g_smoothed(r - 1, c) -= 0.5 * g_dy;
    }
  }

  // Average-pool transpose.
  if (cfg.smooth_window <= 1) return g_smoothed;
  const int shalf = cfg.smooth_window / 2;
  for (int r = 0; r < pm.rows(); ++r) {
    for (int c = 0; c < pm.cols(); ++c) {
      const Vec3 g = g_smoothed(r, c);
      if (g.isZero(0.0)) continue;
      int count = 0;
      for (int dr = -shalf; dr <= shalf; ++dr)
        for (int dc = -shalf; dc <= shalf; ++dc) {
          const int rr = r + dr;
          const int cc = c + dc;
          if (rr < 0 || rr >= pm.rows() || cc < 0 || cc >= pm.cols()) continue;
          ++count;
        }
      const Vec3 share = g / count;
      for (int dr = -shalf; dr <= shalf; ++dr)
        for (int dc = -shalf; dc <= shalf; ++dc) {
          const int rr = r + dr;
          const int cc = c + dc;
          if (rr < 0 || rr >= pm.rows() || cc < 0 || cc >= pm.cols()) continue;
          grad(rr, cc) += share;
        }
    }
  }
  return grad;
}

}  // namespace trikit
