#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "voxelinst/instance.hpp"
#include "voxelinst/volume.hpp"

namespace voxelinst {

enum class VoxelClass : std::uint8_t { kBackground = 0, kForeground = 1, kBoundary = 2 };

// Per-voxel three-way output of a voxel classifier trained with a boundary class.
struct VoxelClassMap {
  Shape3 shape;
  std::vector<VoxelClass> labels;

  VoxelClassMap() = default;
  explicit VoxelClassMap(Shape3 s, VoxelClass fill = VoxelClass::kBackground)
      : shape(s), labels(s.voxels(), fill) {}

  VoxelClass& at(int z, int y, int x) {
    return labels[(static_cast<std::size_t>(z) * shape.height + y) * shape.width + x];
  }
  VoxelClass at(int z, int y, int x) const {
    return labels[(static_cast<std::size_t>(z) * shape.height + y) * shape.width + x];
  }

  // Label volume carrying 0/1/2; any other value is a ContractError.
  static VoxelClassMap from_labels(const LabelVolume& v);
};

enum class Connectivity { kFaces6 = 6, kFull26 = 26 };

struct BaselineConfig {
  Connectivity connectivity = Connectivity::kFaces6;
  std::size_t min_volume = 8;
};

// Connected components of foreground voxels; boundary voxels stay unassigned.
// Components are ordered by their first voxel in raster order.
InstanceSet voxel_to_instances(const VoxelClassMap& map, const BaselineConfig& cfg = {});

}  // namespace voxelinst
