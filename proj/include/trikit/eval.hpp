#pragma once

#include "trikit/mesh.hpp"
#include "trikit/util.hpp"

namespace trikit {

// k-d tree over a fixed point set. Axis-median splits on the widest axis,
// leaves of 16; nearest-neighbor answers match brute force exactly.
class KdTree {
 public:
  explicit KdTree(std::vector<Vec3> points, int leaf_size = 16);

  struct Result {
    int index = -1;
    double dist2 = 0.0;
  };

  Result nearest(const Vec3& query) const;
  size_t size() const { return points_.size(); }

 private:
  struct Node {
    int axis = -1;       // -1 for leaves
    double split = 0.0;  // splitting coordinate
    int32_t left = -1;
    int32_t right = -1;
    int32_t begin = 0;
    int32_t end = 0;
  };

  int32_t build(int32_t begin, int32_t end, int leaf_size);
  void search(int32_t node, const Vec3& query, Result& best) const;

  std::vector<Vec3> points_;  // reordered
  std::vector<int32_t> ids_;  // original indices
  std::vector<Node> nodes_;
  int32_t root_ = -1;
};

struct EvalCounts {
  size_t pred_sampled = 0;
  size_t pred_downsampled = 0;
  size_t gt_sampled = 0;
  size_t gt_downsampled = 0;
};

struct EvalReport {
  double cd = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  EvalCounts counts;
};

// Area-weighted uniform surface sampling, deterministic per seed.
std::vector<Vec3> sample_mesh(const Mesh& m, size_t n, uint64_t seed);

// One centroid per occupied voxel, output in voxel-key order. Boundary
// coordinates belong to the higher cell (floor keying).
std::vector<Vec3> voxel_downsample(std::span<const Vec3> pts, double voxel = 0.02);

struct OneSidedDistance {
  double mean = 0.0;
  std::vector<double> per_point;
};

// Mean exact nearest-neighbor distance from a to b.
OneSidedDistance one_sided_distance(std::span<const Vec3> a, std::span<const Vec3> b);

struct ChamferConfig {
  size_t samples = 100000;
  double delta = 0.05;   // inlier distance, inclusive
  double voxel = 0.02;
  uint64_t seed = 0;
};

// Sample (meshes) or pass through (point sets), voxel-downsample, then
// CD / Precision / Recall / F1 in the world frame.
EvalReport chamfer_report(const Mesh& pred, const Mesh& gt, const ChamferConfig& cfg = {});

}  // namespace trikit
