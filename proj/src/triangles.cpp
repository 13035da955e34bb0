#include "trikit/triangles.hpp"

#include <algorithm>
#include <cmath>

namespace trikit {

namespace {

double linear_ramp(double v0, double v1, int t, int steps) {
  if (t >= steps || steps <= 0) return v1;
  return v0 + (v1 - v0) * static_cast<double>(t) / steps;
}

}  // namespace

Vec3 TriangleSet::world_scales(size_t i) const {
  const Vec3& l = scale_logits[i];
  const double span = s_max - s_min;
  return Vec3((s_min + sigmoid(l.x()) * span) * scale_refs[i].x(),
              (s_min + sigmoid(l.y()) * span) * scale_refs[i].y(),
              (s_min + sigmoid(l.z()) * span) * scale_refs[i].z());
}

ScheduleState schedule_state(int t, const ScheduleConfig& config) {
  require(t >= 0, "schedule_state: negative step");
  ScheduleState s;
  s.t = t;
  s.e = linear_ramp(config.e_init, config.e_final, t, config.e_steps);
  s.tau = linear_ramp(config.tau_init, config.tau_final, t, config.tau_steps);
  s.beta = linear_ramp(config.beta_init, config.beta_final, t, config.beta_steps);
  s.alpha = blend_coefficient(t, config.bootstrap);
  s.floor_active = t < config.e_steps;
  return s;
}

double opacity_map(double p, double e) {
  require(p >= 0.0 && p <= 1.0, "opacity_map: p outside [0,1]");
  require(e >= 1.0, "opacity_map: e must be >= 1");
  return 0.5 * (1.0 - std::pow(1.0 - p, e) + std::pow(p, e));
}

double opacity_map_deriv(double p, double e) {
  return 0.5 * e * (std::pow(1.0 - p, e - 1.0) + std::pow(p, e - 1.0));
}

double temperature_sharpen(double o, double tau) {
  if (o <= 0.0 || o >= 1.0) return o;
  // sigmoid(tau * logit(o)) = o^tau / (o^tau + (1-o)^tau), in log space
  const double a = tau * std::log(o);
  const double b = tau * std::log1p(-o);
  const double m = std::max(a, b);
  const double ea = std::exp(a - m);
  const double eb = std::exp(b - m);
  return ea / (ea + eb);
}

double temperature_sharpen_deriv(double o, double tau) {
  if (o <= 0.0 || o >= 1.0) return 0.0;
  const double s = temperature_sharpen(o, tau);
  return tau * s * (1.0 - s) / (o * (1.0 - o));
}

double alpha_floor(double o, bool active, double floor_value) {
  return active ? std::max(o, floor_value) : o;
}

double blur_value(double blur_raw, double beta, double eps) {
  require(beta > 0.0 && eps > 0.0, "blur_value: beta and eps must be positive");
  return sigmoid(blur_raw) * beta + eps;
}

Vec3 map_scales(const Vec3& scale_logits, double depth, const Intrinsics& intr, double s_min,
                double s_max) {
  require(depth > 0.0, "map_scales: depth must be positive");
  require(s_min < s_max, "map_scales: empty scale range");
  const Vec3 footprint(1.0 / intr.fx, 1.0 / intr.fy, 1.0 / std::sqrt(intr.fx * intr.fy));
  const double span = s_max - s_min;
  Vec3 out;
  for (int i = 0; i < 3; ++i) {
    out[i] = (s_min + sigmoid(scale_logits[i]) * span) * depth * footprint[i];
  }
  return out;
}

Vec3 coverage_boost(const Vec3& scales, double opacity, double threshold, double gain) {
  require(opacity >= 0.0 && opacity <= 1.0, "coverage_boost: opacity outside [0,1]");
  if (opacity >= threshold) return scales;
  return scales * (1.0 + gain * (threshold - opacity) / threshold);
}

double composited_opacity(const TriangleSet& set, size_t i, const ScheduleState& sched,
                          const ScheduleConfig& cfg) {
  const double p = sigmoid(set.density_logits[i]);
  const double mapped = opacity_map(p, sched.e);
  const double sharpened = temperature_sharpen(mapped, sched.tau);
  return alpha_floor(sharpened, sched.floor_active, cfg.alpha_floor_value);
}

BuiltTriangle build_vertices(const Quat& quat, const Vec3& scales, const Vec3& center,
                             const CanonicalTemplate& tmpl, const CameraPose& pose,
                             double degenerate_area_eps) {
  const Mat3 rot = pose.rotation * quat.toRotationMatrix();
  BuiltTriangle out;
  for (int k = 0; k < 3; ++k) {
    out.vertices[k] = rot * tmpl.vertices[k].cwiseProduct(scales) + center;
  }
  const Vec3 e1 = out.vertices[1] - out.vertices[0];
  const Vec3 e2 = out.vertices[2] - out.vertices[0];
  out.degenerate = 0.5 * e1.cross(e2).norm() < degenerate_area_eps;
  return out;
}

BuiltTriangle build_vertices(const TriangleSet& set, size_t i, const CanonicalTemplate& tmpl,
                             double degenerate_area_eps) {
  return build_vertices(set.quats[i], set.world_scales(i), set.centers[i], tmpl, set.pose_of(i),
                        degenerate_area_eps);
}

TriangleSet assemble_scene(const PointMap& pm, const TangentFrameField& frames,
                           const RawAttributes& raw_attrs, const CameraPose& pose,
                           const Intrinsics& intr, const ScheduleState& sched,
                           const ScheduleConfig& cfg, uint32_t view_index, int stride,
                           double s_min, double s_max) {
  require(stride >= 1, "assemble_scene: stride must be >= 1");
  const int rows = pm.rows();
  const int cols = pm.cols();
  require(frames.rows == rows && frames.cols == cols, "assemble_scene: frame shape mismatch");
  require(raw_attrs.scale_logits.same_shape(rows, cols) &&
              raw_attrs.sh0.same_shape(rows, cols) &&
              raw_attrs.density_logits.same_shape(rows, cols) &&
              raw_attrs.blur_raws.same_shape(rows, cols) &&
              raw_attrs.quats.size() == static_cast<size_t>(rows) * cols,
          "assemble_scene: attribute shape mismatch");
  pose.validate();
  intr.validate();

  const CanonicalTemplate tmpl = CanonicalTemplate::standard();
  const Vec3 footprint(1.0 / intr.fx, 1.0 / intr.fy, 1.0 / std::sqrt(intr.fx * intr.fy));

  TriangleSet set;
  set.source_poses = {pose};
  set.s_min = s_min;
  set.s_max = s_max;
  for (int r = 0; r < rows; r += stride) {
    for (int c = 0; c < cols; c += stride) {
      if (!pm.mask(r, c)) continue;
      const size_t idx = static_cast<size_t>(r) * cols + c;
      const Vec3& p_cam = pm.points(r, c);

      set.centers.push_back(pose.apply(p_cam));
      set.scale_logits.push_back(raw_attrs.scale_logits(r, c));
      set.sh0.push_back(raw_attrs.sh0(r, c));
      set.density_logits.push_back(raw_attrs.density_logits(r, c));
      set.blur_raws.push_back(raw_attrs.blur_raws(r, c));
      set.source_pixels.push_back(
          {view_index, static_cast<uint32_t>(r), static_cast<uint32_t>(c)});
      set.scale_refs.push_back(p_cam.z() * static_cast<double>(stride) * footprint);

      uint8_t flag = 0;
      Quat q;
      if (frames.mask(r, c)) {
        q = frames.quat(r, c);
        flag |= kFlagFrameQuat;
      } else {
        q = raw_attrs.quats[idx].normalized();
      }
      set.quats.push_back(q);
      set.ref_normals.push_back(pose.rotation * (q.toRotationMatrix() * Vec3::UnitZ()));

      // Degeneracy is judged on the schedule-boosted scales actually rendered.
      const size_t i = set.centers.size() - 1;
      const double mapped = opacity_map(sigmoid(set.density_logits[i]), sched.e);
      const Vec3 scales = coverage_boost(set.world_scales(i), mapped, cfg.coverage_threshold,
                                         cfg.coverage_gain);
      const BuiltTriangle built = build_vertices(q, scales, set.centers[i], tmpl, pose);
      if (built.degenerate) flag |= kFlagDegenerate;
      set.flags.push_back(flag);
    }
  }
  return set;
}

TriangleSet merge_scenes(std::span<const TriangleSet> parts) {
  TriangleSet out;
  if (parts.empty()) return out;
  out.s_min = parts.front().s_min;
  out.s_max = parts.front().s_max;
  uint32_t view_offset = 0;
  for (const TriangleSet& part : parts) {
    require(part.s_min == out.s_min && part.s_max == out.s_max,
            "merge_scenes: mismatched scale ranges");
    out.centers.insert(out.centers.end(), part.centers.begin(), part.centers.end());
    out.scale_logits.insert(out.scale_logits.end(), part.scale_logits.begin(),
                            part.scale_logits.end());
    out.quats.insert(out.quats.end(), part.quats.begin(), part.quats.end());
    out.sh0.insert(out.sh0.end(), part.sh0.begin(), part.sh0.end());
    out.density_logits.insert(out.density_logits.end(), part.density_logits.begin(),
                              part.density_logits.end());
    out.blur_raws.insert(out.blur_raws.end(), part.blur_raws.begin(), part.blur_raws.end());
    out.flags.insert(out.flags.end(), part.flags.begin(), part.flags.end());
    out.scale_refs.insert(out.scale_refs.end(), part.scale_refs.begin(), part.scale_refs.end());
    out.ref_normals.insert(out.ref_normals.end(), part.ref_normals.begin(),
                           part.ref_normals.end());
    for (const SourcePixel& sp : part.source_pixels) {
      out.source_pixels.push_back({sp.view + view_offset, sp.row, sp.col});
    }
    out.source_poses.insert(out.source_poses.end(), part.source_poses.begin(),
                            part.source_poses.end());
    view_offset += static_cast<uint32_t>(part.source_poses.size());
  }
  return out;
}

}  // namespace trikit
