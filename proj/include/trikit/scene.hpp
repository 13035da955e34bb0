#pragma once

#include <span>
#include <vector>

#include "trikit/util.hpp"

namespace trikit {

// Pinhole parameters, pixels. cx/cy measured from the top-left corner,
// +x right, +y down, +z forward in the camera frame.
struct Intrinsics {
  double fx = 0.0;
  double fy = 0.0;
  double cx = 0.0;
  double cy = 0.0;
  int width = 0;
  int height = 0;

  void validate() const;
};

// Camera-to-world rigid transform.
struct CameraPose {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  static CameraPose identity() { return CameraPose{}; }

  Vec3 apply(const Vec3& p) const { return rotation * p + translation; }
  Vec3 apply_inverse(const Vec3& p) const { return rotation.transpose() * (p - translation); }

  // rotation orthonormal and right-handed within tol
  bool is_valid(double tol = 1e-6) const;
  void validate() const;
};

// Dense per-pixel camera-frame geometry. Unmasked points have z > 0.
struct PointMap {
  Vec3Grid points;
  MaskGrid mask;

  int rows() const { return points.rows; }
  int cols() const { return points.cols; }
};

struct ImageRGB {
  Vec3Grid pixels;

  int rows() const { return pixels.rows; }
  int cols() const { return pixels.cols; }
};

struct DepthMap {
  ScalarGrid depths;
};

// Raw point-head triple (u, v, z') -> camera-frame point exp(z') * (u, v, 1).
// z' is clamped to [-30, 30] before exponentiation.
Vec3 unproject_point(const Vec3& raw);

// Nearest rotation in Frobenius norm: U diag(1, 1, det(U V^T)) V^T.
// Throws on non-finite input and when two singular values vanish.
Mat3 project_to_so3(const Mat3& m);

// Pose of b expressed in the frame of a.
CameraPose relative_pose(const CameraPose& a, const CameraPose& b);

std::vector<Vec3> transform_points(const CameraPose& pose, std::span<const Vec3> pts);

}  // namespace trikit
