#include "trikit/scene.hpp"

#include <Eigen/SVD>

namespace trikit {

namespace {
constexpr double kLogDepthClamp = 30.0;
}

void Intrinsics::validate() const {
  require(fx > 0.0 && fy > 0.0, "intrinsics: focal lengths must be positive");
  require(width > 0 && height > 0, "intrinsics: image size must be positive");
  require(cx >= 0.0 && cx < width, "intrinsics: cx out of range");
  require(cy >= 0.0 && cy < height, "intrinsics: cy out of range");
}

bool CameraPose::is_valid(double tol) const {
  if (!rotation.allFinite() || !translation.allFinite()) return false;
  const Mat3 err = rotation.transpose() * rotation - Mat3::Identity();
  if (err.cwiseAbs().maxCoeff() > tol) return false;
  return std::abs(rotation.determinant() - 1.0) <= tol;
}

void CameraPose::validate() const {
  require(is_valid(), "pose: rotation is not a proper rotation matrix");
}

Vec3 unproject_point(const Vec3& raw) {
  require(raw.allFinite(), "unproject_point: non-finite input");
  const double z = std::exp(std::clamp(raw.z(), -kLogDepthClamp, kLogDepthClamp));
  return Vec3(z * raw.x(), z * raw.y(), z);
}

Mat3 project_to_so3(const Mat3& m) {
  require(m.allFinite(), "project_to_so3: non-finite input");
  require(m.cwiseAbs().maxCoeff() > 0.0, "project_to_so3: all-zero input");
  Eigen::JacobiSVD<Mat3> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Vec3 s = svd.singularValues();
  require(s(1) > 1e-12 * std::max(1.0, s(0)),
          "project_to_so3: rank-deficient input (two vanishing singular values)");
  const Mat3 u = svd.matrixU();
  const Mat3 v = svd.matrixV();
  Vec3 fix(1.0, 1.0, (u * v.transpose()).determinant());
  return u * fix.asDiagonal() * v.transpose();
}

CameraPose relative_pose(const CameraPose& a, const CameraPose& b) {
  CameraPose rel;
  rel.rotation = a.rotation.transpose() * b.rotation;
  rel.translation = a.rotation.transpose() * (b.translation - a.translation);
  return rel;
}

std::vector<Vec3> transform_points(const CameraPose& pose, std::span<const Vec3> pts) {
  std::vector<Vec3> out;
  out.reserve(pts.size());
  for (const Vec3& p : pts) out.push_back(pose.apply(p));
  return out;
}

}  // namespace trikit
