#include "trikit/eval.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <tuple>

namespace trikit {

KdTree::KdTree(std::vector<Vec3> points, int leaf_size) : points_(std::move(points)) {
  require(!points_.empty(), "KdTree: empty point set");
  require(leaf_size >= 1, "KdTree: bad leaf size");
  ids_.resize(points_.size());
  for (size_t i = 0; i < ids_.size(); ++i) ids_[i] = static_cast<int32_t>(i);
  nodes_.reserve(2 * points_.size() / leaf_size + 2);
  root_ = build(0, static_cast<int32_t>(points_.size()), leaf_size);
}

int32_t KdTree::build(int32_t begin, int32_t end, int leaf_size) {
  const int32_t node_id = static_cast<int32_t>(nodes_.size());
  nodes_.push_back({});
  Node& node = nodes_[node_id];
  node.begin = begin;
  node.end = end;
  if (end - begin <= leaf_size) return node_id;

  Vec3 lo = points_[begin], hi = points_[begin];
  for (int32_t i = begin + 1; i < end; ++i) {
    lo = lo.cwiseMin(points_[i]);
    hi = hi.cwiseMax(points_[i]);
  }
  const Vec3 extent = hi - lo;
  int axis = 0;
  if (extent.y() > extent[axis]) axis = 1;
  if (extent.z() > extent[axis]) axis = 2;
  if (extent[axis] <= 0.0) return node_id;  // all points coincide: stay a leaf

  const int32_t mid = begin + (end - begin) / 2;
  // nth_element over a parallel index/point permutation
  std::vector<int32_t> perm(end - begin);
  for (int32_t i = 0; i < end - begin; ++i) perm[i] = begin + i;
  std::nth_element(perm.begin(), perm.begin() + (mid - begin), perm.end(),
                   [&](int32_t a, int32_t b) { return points_[a][axis] < points_[b][axis]; });
  std::vector<Vec3> tmp_pts(end - begin);
  std::vector<int32_t> tmp_ids(end - begin);
  for (int32_t i = 0; i < end - begin; ++i) {
    tmp_pts[i] = points_[perm[i]];
    tmp_ids[i] = ids_[perm[i]];
  }
  std::copy(tmp_pts.begin(), tmp_pts.end(), points_.begin() + begin);
  std::copy(tmp_ids.begin(), tmp_ids.end(), ids_.begin() + begin);

  const double split = points_[mid][axis];
  const int32_t left = build(begin, mid, leaf_size);
  const int32_t right = build(mid, end, leaf_size);
  Node& n = nodes_[node_id];  // vector may have reallocated
  n.axis = axis;
  n.split = split;
  n.left = left;
  n.right = right;
  return node_id;
}

void KdTree::search(int32_t node_id, const Vec3& query, Result& best) const {
  const Node& node = nodes_[node_id];
  if (node.axis < 0) {
    for (int32_t i = node.begin; i < node.end; ++i) {
      const double d2 = (query - points_[i]).squaredNorm();
      if (d2 < best.dist2) {
        best.dist2 = d2;
        best.index = ids_[i];
      }
    }
    return;
  }
  const double delta = query[node.axis] - node.split;
  const int32_t near = delta < 0.0 ? node.left : node.right;
  const int32_t far = delta < 0.0 ? node.right : node.left;
  search(near, query, best);
  if (delta * delta <= best.dist2) search(far, query, best);
}

KdTree::Result KdTree::nearest(const Vec3& query) const {
  Result best;
  best.dist2 = std::numeric_limits<double>::infinity();
  search(root_, query, best);
  return best;
}

std::vector<Vec3> sample_mesh(const Mesh& m, size_t n, uint64_t seed) {
  require(n > 0, "sample_mesh: need a positive sample count");
  require(!m.faces.empty(), "sample_mesh: empty mesh");

  std::vector<double> cumulative(m.faces.size());
  double total = 0.0;
  for (size_t f = 0; f < m.faces.size(); ++f) {
    const Vec3& a = m.vertices[m.faces[f][0]];
    const Vec3& b = m.vertices[m.faces[f][1]];
    const Vec3& c = m.vertices[m.faces[f][2]];
    total += 0.5 * (b - a).cross(c - a).norm();
    cumulative[f] = total;
  }
  require(total > 0.0, "sample_mesh: zero total surface area");

  SplitRng rng = SplitRng(seed).split("mesh-sample");
  std::vector<Vec3> out;
  out.reserve(n);
  for (size_t i = 0; i < n; ++i) {
    const double pick = rng.uniform() * total;
    const size_t f = std::lower_bound(cumulative.begin(), cumulative.end(), pick) -
                     cumulative.begin();
    const size_t fi = std::min(f, m.faces.size() - 1);
    double u = rng.uniform();
    double v = rng.uniform();
    if (u + v > 1.0) {
      u = 1.0 - u;
      v = 1.0 - v;
    }
    const Vec3& a = m.vertices[m.faces[fi][0]];
    const Vec3& b = m.vertices[m.faces[fi][1]];
    const Vec3& c = m.vertices[m.faces[fi][2]];
    out.push_back(a + u * (b - a) + v * (c - a));
  }
  return out;
}

std::vector<Vec3> voxel_downsample(std::span<const Vec3> pts, double voxel) {
  require(voxel > 0.0, "voxel_downsample: voxel size must be positive");
  struct Cell {
    Vec3 sum = Vec3::Zero();
    size_t count = 0;
  };
  std::map<std::tuple<int64_t, int64_t, int64_t>, Cell> cells;
  for (const Vec3& p : pts) {
    const auto key = std::make_tuple(static_cast<int64_t>(std::floor(p.x() / voxel)),
                                     static_cast<int64_t>(std::floor(p.y() / voxel)),
                                     static_cast<int64_t>(std::floor(p.z() / voxel)));
    Cell& cell = cells[key];
    cell.sum += p;
    cell.count += 1;
  }
  std::vector<Vec3> out;
  out.reserve(cells.size());
  for (const auto& [key, cell] : cells) {  // std::map iterates in key order
    out.push_back(cell.sum / static_cast<double>(cell.count));
  }
  return out;
}

OneSidedDistance one_sided_distance(std::span<const Vec3> a, std::span<const Vec3> b) {
  require(!a.empty() && !b.empty(), "one_sided_distance: empty point set");
  KdTree tree(std::vector<Vec3>(b.begin(), b.end()));
  OneSidedDistance out;
  out.per_point.resize(a.size());
#pragma omp parallel for schedule(static)
  for (long long i = 0; i < static_cast<long long>(a.size()); ++i) {
    out.per_point[i] = std::sqrt(tree.nearest(a[i]).dist2);
  }
  out.mean = pairwise_mean(out.per_point);
  return out;
}

EvalReport chamfer_report(const Mesh& pred, const Mesh& gt, const ChamferConfig& cfg) {
  auto to_points = [&](const Mesh& m, std::string_view stream) -> std::vector<Vec3> {
    if (!m.faces.empty()) {
      const uint64_t seed = SplitRng(cfg.seed).split(stream).next_u64();
      return sample_mesh(m, cfg.samples, seed);
    }
    require(!m.vertices.empty(), "chamfer_report: empty input");
    return m.vertices;  // point clouds pass through
  };

  const std::vector<Vec3> pred_raw = to_points(pred, "pred");
  const std::vector<Vec3> gt_raw = to_points(gt, "gt");
  const std::vector<Vec3> pred_pts = voxel_downsample(pred_raw, cfg.voxel);
  const std::vector<Vec3> gt_pts = voxel_downsample(gt_raw, cfg.voxel);

  const OneSidedDistance d_pg = one_sided_distance(pred_pts, gt_pts);
  const OneSidedDistance d_gp = one_sided_distance(gt_pts, pred_pts);

  EvalReport report;
  report.cd = d_pg.mean + d_gp.mean;
  size_t pred_in = 0, gt_in = 0;
  for (double d : d_pg.per_point)
    if (d <= cfg.delta) ++pred_in;
  for (double d : d_gp.per_point)
    if (d <= cfg.delta) ++gt_in;
  report.precision = static_cast<double>(pred_in) / pred_pts.size();
  report.recall = static_cast<double>(gt_in) / gt_pts.size();
  report.f1 = (report.precision + report.recall) > 0.0
                  ? 2.0 * report.precision * report.recall / (report.precision + report.recall)
                  : 0.0;
  report.counts = {pred_raw.size(), pred_pts.size(), gt_raw.size(), gt_pts.size()};
  return report;
}

}  // namespace trikit
