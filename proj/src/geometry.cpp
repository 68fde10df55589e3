#include "voxelinst/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace voxelinst {

bool BBox3D::valid() const {
  for (int a = 0; a < 3; ++a) {
    if (!(size[a] > 0.0) || !std::isfinite(center[a]) || !std::isfinite(size[a])) return false;
  }
  return true;
}

BBox3D BBox3D::from_bounds(const Vec3& lo, const Vec3& hi) {
  BBox3D b;
  for (int a = 0; a < 3; ++a) {
    b.center[a] = 0.5 * (lo[a] + hi[a]);
    b.size[a] = hi[a] - lo[a];
  }
  return b;
}

double iou3d(const BBox3D& a, const BBox3D& b) {
  double inter = 1.0;
  for (int ax = 0; ax < 3; ++ax) {
    const double overlap = std::min(a.hi(ax), b.hi(ax)) - std::max(a.lo(ax), b.lo(ax));
    if (overlap <= 0.0) return 0.0;
    inter *= overlap;
  }
  const double uni = a.volume() + b.volume() - inter;
  if (uni <= 0.0) return 0.0;
  return std::clamp(inter / uni, 0.0, 1.0);
}

RegressionTarget encode_box(const BBox3D& gt, const BBox3D& anchor) {
  RegressionTarget t{};
  for (int a = 0; a < 3; ++a) {
    t[a] = (gt.center[a] - anchor.center[a]) / anchor.size[a];
    t[a + 3] = std::log(gt.size[a] / anchor.size[a]);
  }
  return t;
}

BBox3D decode_box(const RegressionTarget& t, const BBox3D& anchor) {
  BBox3D b;
  for (int a = 0; a < 3; ++a) {
    b.center[a] = anchor.center[a] + t[a] * anchor.size[a];
    b.size[a] = anchor.size[a] * std::exp(t[a + 3]);
  }
  b.object_class = anchor.object_class;
  b.score = anchor.score;
  return b;
}

AnchorSet generate_anchors(const GridShape& grid, const Vec3& stride,
                           const std::vector<Vec3>& templates) {
  if (grid.m < 1 || grid.n < 1 || grid.k < 1) {
    throw std::invalid_argument("anchor grid dimensions must be >= 1");
  }
  if (templates.empty()) throw std::invalid_argument("anchor templates must be nonempty");
  AnchorSet set;
  set.grid = grid;
  set.stride = stride;
  set.templates = templates;
  set.anchors.reserve(grid.cells() * templates.size());
  for (int i = 0; i < grid.m; ++i) {
    for (int j = 0; j < grid.n; ++j) {
      for (int l = 0; l < grid.k; ++l) {
        const Vec3 c{(i + 0.5) * stride[0], (j + 0.5) * stride[1], (l + 0.5) * stride[2]};
        for (const auto& tpl : templates) {
          BBox3D b;
          b.center = c;
          b.size = tpl;
          set.anchors.push_back(b);
        }
      }
    }
  }
  return set;
}

std::vector<std::size_t> nms3d(std::span<const BBox3D> boxes, double iou_thresh) {
  std::vector<std::size_t> order(boxes.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return boxes[a].score > boxes[b].score;
  });
  std::vector<std::size_t> kept;
  for (std::size_t idx : order) {
    bool suppressed = false;
    for (std::size_t k : kept) {
      if (iou3d(boxes[idx], boxes[k]) > iou_thresh) {
        suppressed = true;
        break;
      }
    }
    if (!suppressed) kept.push_back(idx);
  }
  return kept;
}

}  // namespace voxelinst
