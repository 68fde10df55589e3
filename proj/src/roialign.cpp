#include "voxelinst/roialign.hpp"

#include <algorithm>
#include <cmath>

#include "voxelinst/errors.hpp"

namespace voxelinst {

namespace {

void require_feature_map(const std::vector<int>& shape) {
  if (shape.size() != 4) {
    throw ContractError("feature maps must be (C, D, H, W), got " + Tensor::shape_string(shape));
  }
}

}  // namespace

TrilinearStencil trilinear_stencil(const std::vector<int>& f_shape, const Vec3& point) {
  require_feature_map(f_shape);
  std::array<int, 3> i0{}, i1{};
  std::array<double, 3> frac{};
  for (int a = 0; a < 3; ++a) {
    const int dim = f_shape[static_cast<std::size_t>(a) + 1];
    const double c = std::clamp(point[a], 0.0, static_cast<double>(dim - 1));
    i0[a] = std::min(static_cast<int>(std::floor(c)), dim - 1);
    i1[a] = std::min(i0[a] + 1, dim - 1);
    frac[a] = c - i0[a];
  }
  const std::size_t h = static_cast<std::size_t>(f_shape[2]);
  const std::size_t w = static_cast<std::size_t>(f_shape[3]);
  TrilinearStencil st;
  int n = 0;
  for (int dz = 0; dz < 2; ++dz) {
    for (int dy = 0; dy < 2; ++dy) {
      for (int dx = 0; dx < 2; ++dx, ++n) {
        const std::size_t z = static_cast<std::size_t>(dz ? i1[0] : i0[0]);
        const std::size_t y = static_cast<std::size_t>(dy ? i1[1] : i0[1]);
        const std::size_t x = static_cast<std::size_t>(dx ? i1[2] : i0[2]);
        st.offset[n] = (z * h + y) * w + x;
        st.weight[n] = (dz ? frac[0] : 1.0 - frac[0]) * (dy ? frac[1] : 1.0 - frac[1]) *
                       (dx ? frac[2] : 1.0 - frac[2]);
      }
    }
  }
  return st;
}

std::vector<double> trilinear_sample(const Tensor& f, const Vec3& point) {
  const auto st = trilinear_stencil(f.shape(), point);
  const std::size_t channels = static_cast<std::size_t>(f.dim(0));
  const std::size_t slab = f.spatial();
  std::vector<double> out(channels, 0.0);
  for (std::size_t c = 0; c < channels; ++c) {
    const double* base = f.data() + c * slab;
    double v = 0.0;
    for (int n = 0; n < 8; ++n) v += st.weight[n] * base[st.offset[n]];
    out[c] = v;
  }
  return out;
}

Vec3 roi_cell_center(const BBox3D& box, int s, int i, int j, int l) {
  const std::array<int, 3> idx{i, j, l};
  Vec3 p;
  for (int a = 0; a < 3; ++a) p[a] = box.lo(a) + (idx[a] + 0.5) * box.size[a] / s;
  return p;
}

AlignedFeature roialign3d(const Tensor& f, const BBox3D& box, int s) {
  require_feature_map(f.shape());
  if (s < 1) throw ContractError("RoIAlign size must be >= 1");
  const int channels = f.dim(0);
  const std::size_t slab = f.spatial();
  const std::size_t cells = static_cast<std::size_t>(s) * s * s;
  AlignedFeature out;
  out.data = Tensor({channels, s, s, s});
  out.source_box = box;
  out.s = s;
  out.channels = channels;
  std::size_t cell = 0;
  for (int i = 0; i < s; ++i) {
    for (int j = 0; j < s; ++j) {
      for (int l = 0; l < s; ++l, ++cell) {
        const auto st = trilinear_stencil(f.shape(), roi_cell_center(box, s, i, j, l));
        for (int c = 0; c < channels; ++c) {
          const double* base = f.data() + static_cast<std::size_t>(c) * slab;
          double v = 0.0;
          for (int n = 0; n < 8; ++n) v += st.weight[n] * base[st.offset[n]];
          out.data[static_cast<std::size_t>(c) * cells + cell] = v;
        }
      }
    }
  }
  return out;
}

Tensor roialign3d_backward(const std::vector<int>& f_shape, const BBox3D& box, int s,
                           const Tensor& upstream) {
  require_feature_map(f_shape);
  const int channels = f_shape[0];
  if (upstream.shape() != std::vector<int>{channels, s, s, s}) {
    throw ContractError("RoIAlign upstream gradient has shape " +
                        Tensor::shape_string(upstream.shape()));
  }
  Tensor grad(f_shape);
  const std::size_t slab = grad.spatial();
  const std::size_t cells = static_cast<std::size_t>(s) * s * s;
  std::size_t cell = 0;
  for (int i = 0; i < s; ++i) {
    for (int j = 0; j < s; ++j) {
      for (int l = 0; l < s; ++l, ++cell) {
        const auto st = trilinear_stencil(f_shape, roi_cell_center(box, s, i, j, l));
        for (int c = 0; c < channels; ++c) {
          const double u = upstream[static_cast<std::size_t>(c) * cells + cell];
          double* base = grad.data() + static_cast<std::size_t>(c) * slab;
          for (int n = 0; n < 8; ++n) base[st.offset[n]] += st.weight[n] * u;
        }
      }
    }
  }
  return grad;
}

BBox3D scale_box_to_level(const BBox3D& box, const Vec3& stride) {
  BBox3D b = box;
  for (int a = 0; a < 3; ++a) {
    b.center[a] = box.center[a] / stride[a];
    b.size[a] = box.size[a] / stride[a];
  }
  return b;
}

AlignedFeature align_concat(const FeatureLevel& f1, const FeatureLevel& f2, const BBox3D& box, int s) {
  const auto a1 = roialign3d(f1.map, scale_box_to_level(box, f1.stride), s);
  const auto a2 = roialign3d(f2.map, scale_box_to_level(box, f2.stride), s);
  AlignedFeature out;
  out.s = s;
  out.channels = a1.channels + a2.channels;
  out.source_box = box;
  out.data = Tensor({out.channels, s, s, s});
  std::copy(a1.data.values().begin(), a1.data.values().end(), out.data.data());
  std::copy(a2.data.values().begin(), a2.data.values().end(), out.data.data() + a1.data.size());
  return out;
}

std::pair<Tensor, Tensor> align_concat_backward(const std::vector<int>& f1_shape, const Vec3& stride1,
                                                const std::vector<int>& f2_shape, const Vec3& stride2,
                                                const BBox3D& box, int s, const Tensor& upstream) {
  const int p1 = f1_shape.at(0);
  const int p2 = f2_shape.at(0);
  if (upstream.shape() != std::vector<int>{p1 + p2, s, s, s}) {
    throw ContractError("align_concat upstream gradient has shape " +
                        Tensor::shape_string(upstream.shape()));
  }
  Tensor u1({p1, s, s, s});
  Tensor u2({p2, s, s, s});
  std::copy(upstream.data(), upstream.data() + u1.size(), u1.data());
  std::copy(upstream.data() + u1.size(), upstream.data() + upstream.size(), u2.data());
  return {roialign3d_backward(f1_shape, scale_box_to_level(box, stride1), s, u1),
          roialign3d_backward(f2_shape, scale_box_to_level(box, stride2), s, u2)};
}

}  // namespace voxelinst
