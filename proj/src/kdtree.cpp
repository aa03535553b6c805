#include "hyperedit/kdtree.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace hyperedit {

namespace {

double sq_dist(const Point3& a, const Point3& b) {
  const double dx = a[0] - b[0], dy = a[1] - b[1], dz = a[2] - b[2];
  return dx * dx + dy * dy + dz * dz;
}

}  // namespace

KdTree::KdTree(std::vector<Point3> points) : points_(std::move(points)) {
  std::vector<int64_t> idx(points_.size());
  std::iota(idx.begin(), idx.end(), 0);
  nodes_.reserve(points_.size());
  root_ = build(idx, 0, idx.size(), 0);
}

int64_t KdTree::build(std::vector<int64_t>& idx, size_t begin, size_t end, int depth) {
  if (begin >= end) return -1;
  const int axis = depth % 3;
  const size_t mid = begin + (end - begin) / 2;
  std::nth_element(idx.begin() + begin, idx.begin() + mid, idx.begin() + end,
                   [&](int64_t a, int64_t b) { return points_[a][axis] < points_[b][axis]; });
  const int64_t id = static_cast<int64_t>(nodes_.size());
  nodes_.push_back({idx[mid], axis, -1, -1});
  const int64_t left = build(idx, begin, mid, depth + 1);
  const int64_t right = build(idx, mid + 1, end, depth + 1);
  nodes_[id].left = left;
  nodes_[id].right = right;
  return id;
}

void KdTree::search(int64_t node, const Point3& q, int64_t exclude, Hit& best,
                    double& best_sq) const {
  if (node < 0) return;
  const Node& n = nodes_[node];
  const Point3& p = points_[n.point];
  if (n.point != exclude) {
    const double d = sq_dist(p, q);
    // Ties resolve to the lower index so results match a linear scan.
    if (d < best_sq || (d == best_sq && n.point < best.index)) {
      best_sq = d;
      best.index = n.point;
    }
  }
  const double diff = q[n.axis] - p[n.axis];
  const int64_t near = diff < 0 ? n.left : n.right;
  const int64_t far = diff < 0 ? n.right : n.left;
  search(near, q, exclude, best, best_sq);
  if (diff * diff <= best_sq) search(far, q, exclude, best, best_sq);
}

KdTree::Hit KdTree::nearest(const Point3& q, int64_t exclude) const {
  Hit best;
  double best_sq = std::numeric_limits<double>::infinity();
  search(root_, q, exclude, best, best_sq);
  best.distance = best.index < 0 ? std::numeric_limits<double>::infinity() : std::sqrt(best_sq);
  return best;
}

}  // namespace hyperedit
