#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "voxelinst/geometry.hpp"
#include "voxelinst/volume.hpp"

namespace voxelinst {

// A segmented instance in stack coordinates. The mask covers the voxel block
// [origin, origin + extent), z-major.
struct Instance {
  int object_class = 1;
  double score = 1.0;
  BBox3D box;
  std::array<int, 3> origin{0, 0, 0};
  std::array<int, 3> extent{0, 0, 0};
  std::vector<std::uint8_t> mask;

  std::size_t voxel_count() const;
  std::size_t mask_index(int z, int y, int x) const {
    return (static_cast<std::size_t>(z - origin[0]) * extent[1] + (y - origin[1])) * extent[2] + (x - origin[2]);
  }
  bool contains(int z, int y, int x) const;
};

using InstanceSet = std::vector<Instance>;

// Paints instances with ids 1..n (set order). Higher scores win contested
// voxels; among equal scores the earlier instance wins.
LabelVolume rasterize_instances(const InstanceSet& set, const Shape3& shape);

// Rebuilds instances from a label volume and its annotation list; ids without
// voxels yield instances with an empty mask.
InstanceSet instances_from_labels(const LabelVolume& labels, std::span<const InstanceAnnotation> annos);

// Annotation list describing a rasterized instance set (ids 1..n).
std::vector<InstanceAnnotation> annotations_for(const InstanceSet& set);

}  // namespace voxelinst
