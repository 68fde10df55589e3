#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <vector>

namespace voxelinst {

// Axis order is (z, y, x) everywhere.
using Vec3 = std::array<double, 3>;

// Axis-aligned box. Extent along axis a is [center[a] - size[a]/2, center[a] + size[a]/2].
// Voxel i occupies the continuous interval [i, i + 1).
struct BBox3D {
  Vec3 center{0.0, 0.0, 0.0};
  Vec3 size{1.0, 1.0, 1.0};  // (d, h, w)
  int object_class = 0;
  double score = 0.0;

  double lo(int axis) const { return center[axis] - 0.5 * size[axis]; }
  double hi(int axis) const { return center[axis] + 0.5 * size[axis]; }
  double volume() const { return size[0] * size[1] * size[2]; }
  bool valid() const;

  static BBox3D from_bounds(const Vec3& lo, const Vec3& hi);
  bool operator==(const BBox3D&) const = default;
};

// (t_z, t_y, t_x, t_d, t_h, t_w).
using RegressionTarget = std::array<double, 6>;

double iou3d(const BBox3D& a, const BBox3D& b);

// Offsets of gt relative to anchor: centers scaled by anchor size, sizes as log ratios.
RegressionTarget encode_box(const BBox3D& gt, const BBox3D& anchor);
BBox3D decode_box(const RegressionTarget& t, const BBox3D& anchor);

struct GridShape {
  int m = 1, n = 1, k = 1;
  std::size_t cells() const { return static_cast<std::size_t>(m) * n * k; }
  bool operator==(const GridShape&) const = default;
};

// Anchors flattened z-major, then y, x, then template index.
struct AnchorSet {
  GridShape grid;
  Vec3 stride{1.0, 1.0, 1.0};
  std::vector<Vec3> templates;
  std::vector<BBox3D> anchors;

  std::size_t per_cell() const { return templates.size(); }
  std::size_t size() const { return anchors.size(); }
};

AnchorSet generate_anchors(const GridShape& grid, const Vec3& stride,
                           const std::vector<Vec3>& templates);

// Greedy suppression in descending score; ties broken by lower index.
// Returns kept indices in descending score order.
std::vector<std::size_t> nms3d(std::span<const BBox3D> boxes, double iou_thresh);

}  // namespace voxelinst
