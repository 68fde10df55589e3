#pragma once

#include <array>
#include <utility>
#include <vector>

#include "voxelinst/geometry.hpp"
#include "voxelinst/tensor.hpp"

namespace voxelinst {

// Feature maps are (C, D, H, W) tensors whose lattice points sit at integer
// coordinates. Sample points outside [0, dim - 1] are clamped to the border.

struct TrilinearStencil {
  std::array<std::size_t, 8> offset{};  // spatial offsets into a (D, H, W) slab
  std::array<double, 8> weight{};
};

TrilinearStencil trilinear_stencil(const std::vector<int>& f_shape, const Vec3& point);

std::vector<double> trilinear_sample(const Tensor& f, const Vec3& point);

// Output data has shape (p, s, s, s).
struct AlignedFeature {
  Tensor data;
  BBox3D source_box;
  int s = 0;
  int channels = 0;
};

// Sample point (i, j, l) of the s^3 partition, at the cell center.
Vec3 roi_cell_center(const BBox3D& box, int s, int i, int j, int l);

// box is given in feature-map coordinates.
AlignedFeature roialign3d(const Tensor& f, const BBox3D& box, int s);

// Adjoint of roialign3d: scatters upstream (p, s, s, s) into a zero tensor of f_shape.
Tensor roialign3d_backward(const std::vector<int>& f_shape, const BBox3D& box, int s,
                           const Tensor& upstream);

// Maps a stack-coordinate box into a level's frame by dividing by its stride.
BBox3D scale_box_to_level(const BBox3D& box, const Vec3& stride);

struct FeatureLevel {
  const Tensor& map;
  Vec3 stride{1.0, 1.0, 1.0};
};

// Aligns both levels at the same stack-coordinate box; f1's channels come first.
AlignedFeature align_concat(const FeatureLevel& f1, const FeatureLevel& f2, const BBox3D& box, int s);

std::pair<Tensor, Tensor> align_concat_backward(const std::vector<int>& f1_shape, const Vec3& stride1,
                                                const std::vector<int>& f2_shape, const Vec3& stride2,
                                                const BBox3D& box, int s, const Tensor& upstream);

}  // namespace voxelinst
