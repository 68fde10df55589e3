#include "voxelinst/instance.hpp"

#include <algorithm>
#include <numeric>
#include <unordered_map>

namespace voxelinst {

std::size_t Instance::voxel_count() const {
  return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), std::uint8_t{1}));
}

bool Instance::contains(int z, int y, int x) const {
  if (z < origin[0] || y < origin[1] || x < origin[2]) return false;
  if (z >= origin[0] + extent[0] || y >= origin[1] + extent[1] || x >= origin[2] + extent[2]) return false;
  return mask[mask_index(z, y, x)] != 0;
}

LabelVolume rasterize_instances(const InstanceSet& set, const Shape3& shape) {
  LabelVolume out(shape);
  std::vector<std::size_t> order(set.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return set[a].score > set[b].score; });
  for (std::size_t idx : order) {
    const auto& inst = set[idx];
    const auto id = static_cast<std::uint16_t>(idx + 1);
    for (int z = 0; z < inst.extent[0]; ++z) {
      for (int y = 0; y < inst.extent[1]; ++y) {
        for (int x = 0; x < inst.extent[2]; ++x) {
          const int gz = inst.origin[0] + z, gy = inst.origin[1] + y, gx = inst.origin[2] + x;
          if (gz < 0 || gy < 0 || gx < 0 || gz >= shape.depth || gy >= shape.height || gx >= shape.width) continue;
          if (!inst.mask[(static_cast<std::size_t>(z) * inst.extent[1] + y) * inst.extent[2] + x]) continue;
          auto& l = out.at(gz, gy, gx);
          if (l == 0) l = id;
        }
      }
    }
  }
  return out;
}

InstanceSet instances_from_labels(const LabelVolume& labels, std::span<const InstanceAnnotation> annos) {
  std::unordered_map<int, std::size_t> slot;
  InstanceSet set(annos.size());
  std::vector<std::array<int, 3>> lo(annos.size(), {INT32_MAX, INT32_MAX, INT32_MAX});
  std::vector<std::array<int, 3>> hi(annos.size(), {-1, -1, -1});
  for (std::size_t i = 0; i < annos.size(); ++i) {
    slot[annos[i].id] = i;
    set[i].object_class = annos[i].object_class;
    set[i].score = annos[i].box.score;
    set[i].box = annos[i].box;
  }
  const Shape3& s = labels.shape;
  for (int z = 0; z < s.depth; ++z) {
    for (int y = 0; y < s.height; ++y) {
      for (int x = 0; x < s.width; ++x) {
        const int id = labels.at(z, y, x);
        if (id == 0) continue;
        auto it = slot.find(id);
        if (it == slot.end()) continue;
        const std::array<int, 3> v{z, y, x};
        for (int a = 0; a < 3; ++a) {
          lo[it->second][a] = std::min(lo[it->second][a], v[a]);
          hi[it->second][a] = std::max(hi[it->second][a], v[a]);
        }
      }
    }
  }
  for (std::size_t i = 0; i < set.size(); ++i) {
    auto& inst = set[i];
    if (hi[i][0] < 0) continue;
    inst.origin = lo[i];
    for (int a = 0; a < 3; ++a) inst.extent[a] = hi[i][a] - lo[i][a] + 1;
    inst.mask.assign(static_cast<std::size_t>(inst.extent[0]) * inst.extent[1] * inst.extent[2], 0);
    for (int z = lo[i][0]; z <= hi[i][0]; ++z) {
      for (int y = lo[i][1]; y <= hi[i][1]; ++y) {
        for (int x = lo[i][2]; x <= hi[i][2]; ++x) {
          if (labels.at(z, y, x) == annos[i].id) inst.mask[inst.mask_index(z, y, x)] = 1;
        }
      }
    }
  }
  return set;
}

std::vector<InstanceAnnotation> annotations_for(const InstanceSet& set) {
  std::vector<InstanceAnnotation> annos;
  annos.reserve(set.size());
  for (std::size_t i = 0; i < set.size(); ++i) {
    InstanceAnnotation a;
    a.id = static_cast<int>(i + 1);
    a.object_class = set[i].object_class;
    a.box = set[i].box;
    a.box.object_class = a.object_class;
    a.box.score = set[i].score;
    a.has_mask = !set[i].mask.empty();
    annos.push_back(a);
  }
  return annos;
}

}  // namespace voxelinst
