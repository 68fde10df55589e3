#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "voxelinst/geometry.hpp"

namespace voxelinst {

struct Shape3 {
  int depth = 1, height = 1, width = 1;

  std::size_t voxels() const {
    return static_cast<std::size_t>(depth) * height * width;
  }
  int operator[](int axis) const { return axis == 0 ? depth : axis == 1 ? height : width; }
  bool operator==(const Shape3&) const = default;
};

// Dense scalar grid, data stored in (z, y, x, channel) order.
struct Volume3D {
  Shape3 shape;
  int channels = 1;
  Vec3 spacing{1.0, 1.0, 1.0};
  std::vector<float> data;

  Volume3D() = default;
  Volume3D(Shape3 s, int c = 1, float fill = 0.0f);

  std::size_t index(int z, int y, int x, int c = 0) const {
    return ((static_cast<std::size_t>(z) * shape.height + y) * shape.width + x) * channels + c;
  }
  float& at(int z, int y, int x, int c = 0) { return data[index(z, y, x, c)]; }
  float at(int z, int y, int x, int c = 0) const { return data[index(z, y, x, c)]; }
  bool operator==(const Volume3D&) const = default;
};

// Per-voxel instance ids; 0 is background.
struct LabelVolume {
  Shape3 shape;
  std::vector<std::uint16_t> labels;

  LabelVolume() = default;
  explicit LabelVolume(Shape3 s, std::uint16_t fill = 0);

  std::size_t index(int z, int y, int x) const {
    return (static_cast<std::size_t>(z) * shape.height + y) * shape.width + x;
  }
  std::uint16_t& at(int z, int y, int x) { return labels[index(z, y, x)]; }
  std::uint16_t at(int z, int y, int x) const { return labels[index(z, y, x)]; }
  bool operator==(const LabelVolume&) const = default;
};

// One ground-truth instance. When has_mask is set, its voxels are the entries
// of the paired LabelVolume equal to id.
struct InstanceAnnotation {
  int id = 1;
  int object_class = 1;
  BBox3D box;
  bool has_mask = true;
  bool operator==(const InstanceAnnotation&) const = default;
};

struct Stack {
  std::string name;
  Volume3D image;
  std::optional<LabelVolume> labels;
  std::vector<InstanceAnnotation> annotations;
};

struct Dataset {
  std::vector<Stack> stacks;
  int class_count = 2;

  // Throws ContractError when an annotation class is out of range or a label
  // volume does not match its image.
  void validate() const;
};

// Tight box of voxel index ranges [lo, hi] inclusive, in continuous coordinates.
BBox3D voxel_range_box(const std::array<int, 3>& lo, const std::array<int, 3>& hi);

// Integer voxel range [lo, hi) whose voxel centers fall inside the box, clipped to shape.
struct VoxelRange {
  std::array<int, 3> lo{0, 0, 0};
  std::array<int, 3> hi{0, 0, 0};
  bool empty() const { return hi[0] <= lo[0] || hi[1] <= lo[1] || hi[2] <= lo[2]; }
  std::size_t count() const;
};
VoxelRange box_voxels(const BBox3D& box, const Shape3& shape);

// --- raw file formats -------------------------------------------------------
// A volume named `stem` lives in `stem.f32` (or `stem.u16` for labels) plus a
// JSON sidecar `stem.json`.

void save_volume(const Volume3D& v, const std::filesystem::path& stem);
Volume3D load_volume(const std::filesystem::path& stem);

void save_labels(const LabelVolume& v, const std::filesystem::path& stem);
LabelVolume load_labels(const std::filesystem::path& stem);

void save_annotations(const std::vector<InstanceAnnotation>& annos, const std::filesystem::path& path);
std::vector<InstanceAnnotation> load_annotations(const std::filesystem::path& path);

// --- synthetic data ---------------------------------------------------------

struct SynthConfig {
  Shape3 shape{48, 48, 48};
  int min_count = 3;
  int max_count = 8;
  Vec3 radius_min{3.5, 3.5, 3.5};
  Vec3 radius_max{6.0, 6.0, 6.0};
  double min_separation = 11.0;
  double foreground_mean = 1.0;
  double background_mean = 0.2;
  double noise_sigma = 0.1;
  int class_count = 2;
  // Centers used verbatim for the first instances, skipping placement checks.
  std::vector<Vec3> fixed_centers;

  void validate() const;
};

struct SynthSample {
  Volume3D image;
  LabelVolume labels;
  std::vector<InstanceAnnotation> annotations;
};

SynthSample synth_generate(const SynthConfig& cfg, std::uint64_t seed);

// Keeps every box; exactly round(fraction * n) annotations keep their mask.
std::vector<InstanceAnnotation> subsample_masks(std::vector<InstanceAnnotation> annos,
                                                double fraction, std::uint64_t seed);

}  // namespace voxelinst
