#include "voxelinst/baseline.hpp"

#include <algorithm>
#include <array>
#include <string>

#include "voxelinst/errors.hpp"

namespace voxelinst {

VoxelClassMap VoxelClassMap::from_labels(const LabelVolume& v) {
  VoxelClassMap m(v.shape);
  for (std::size_t i = 0; i < v.labels.size(); ++i) {
    if (v.labels[i] > 2) {
      throw ContractError("voxel class map holds value " + std::to_string(v.labels[i]) +
                          " at voxel " + std::to_string(i) + "; expected 0, 1 or 2");
    }
    m.labels[i] = static_cast<VoxelClass>(v.labels[i]);
  }
  return m;
}

InstanceSet voxel_to_instances(const VoxelClassMap& map, const BaselineConfig& cfg) {
  const Shape3& s = map.shape;
  std::vector<std::array<int, 3>> offsets;
  for (int dz = -1; dz <= 1; ++dz) {
    for (int dy = -1; dy <= 1; ++dy) {
      for (int dx = -1; dx <= 1; ++dx) {
        const int manhattan = std::abs(dz) + std::abs(dy) + std::abs(dx);
        if (manhattan == 0) continue;
        if (cfg.connectivity == Connectivity::kFaces6 && manhattan != 1) continue;
        offsets.push_back({dz, dy, dx});
      }
    }
  }

  std::vector<int> component(s.voxels(), -1);
  std::vector<std::array<int, 3>> stack;
  std::vector<std::array<int, 3>> members;
  InstanceSet out;
  int next = 0;
  for (int z = 0; z < s.depth; ++z) {
    for (int y = 0; y < s.height; ++y) {
      for (int x = 0; x < s.width; ++x) {
        const std::size_t idx = (static_cast<std::size_t>(z) * s.height + y) * s.width + x;
        if (map.labels[idx] != VoxelClass::kForeground || component[idx] >= 0) continue;
        members.clear();
        stack.push_back({z, y, x});
        component[idx] = next;
        while (!stack.empty()) {
          const auto v = stack.back();
          stack.pop_back();
          members.push_back(v);
          for (const auto& o : offsets) {
            const int nz = v[0] + o[0], ny = v[1] + o[1], nx = v[2] + o[2];
            if (nz < 0 || ny < 0 || nx < 0 || nz >= s.depth || ny >= s.height || nx >= s.width) continue;
            const std::size_t nidx = (static_cast<std::size_t>(nz) * s.height + ny) * s.width + nx;
            if (map.labels[nidx] != VoxelClass::kForeground || component[nidx] >= 0) continue;
            component[nidx] = next;
            stack.push_back({nz, ny, nx});
          }
        }
        ++next;
        if (members.size() < cfg.min_volume) continue;

        std::array<int, 3> lo{s.depth, s.height, s.width}, hi{-1, -1, -1};
        for (const auto& m : members) {
          for (int a = 0; a < 3; ++a) {
            lo[a] = std::min(lo[a], m[a]);
            hi[a] = std::max(hi[a], m[a]);
          }
        }
        Instance inst;
        inst.object_class = 1;
        inst.score = 1.0;
        inst.box = voxel_range_box(lo, hi);
        inst.box.object_class = 1;
        inst.box.score = 1.0;
        inst.origin = lo;
        for (int a = 0; a < 3; ++a) inst.extent[a] = hi[a] - lo[a] + 1;
        inst.mask.assign(static_cast<std::size_t>(inst.extent[0]) * inst.extent[1] * inst.extent[2], 0);
        for (const auto& m : members) inst.mask[inst.mask_index(m[0], m[1], m[2])] = 1;
        out.push_back(std::move(inst));
      }
    }
  }
  return out;
}

}  // namespace voxelinst
