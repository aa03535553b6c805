#pragma once

#include <array>
#include <cstdint>
#include <vector>

namespace hyperedit {

using Point3 = std::array<double, 3>;

/// Static 3-d tree for exact nearest-neighbor queries.
class KdTree {
 public:
  explicit KdTree(std::vector<Point3> points);

  struct Hit {
    int64_t index = -1;
    double distance = 0.0;
  };

  /// Nearest stored point to q; `exclude` skips one stored index (self queries).
  Hit nearest(const Point3& q, int64_t exclude = -1) const;

  size_t size() const { return points_.size(); }
  const std::vector<Point3>& points() const { return points_; }

 private:
  struct Node {
    int64_t point = -1;
    int axis = 0;
    int64_t left = -1, right = -1;
  };
  int64_t build(std::vector<int64_t>& idx, size_t begin, size_t end, int depth);
  void search(int64_t node, const Point3& q, int64_t exclude, Hit& best, double& best_sq) const;

  std::vector<Point3> points_;
  std::vector<Node> nodes_;
  int64_t root_ = -1;
};

}  // namespace hyperedit
