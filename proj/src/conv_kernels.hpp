#pragma once

#include <cstddef>

namespace voxelinst::detail {

// Geometry of a strided 3D convolution from a "big" volume (channels x D x H x W)
// to a "small" one (OD x OH x OW). Transposed convolution uses the same
// geometry with the roles of input and output swapped.
struct ConvGeom {
  int channels = 1;
  int d = 1, h = 1, w = 1;
  int k = 1, stride = 1, pad = 0;
  int od = 1, oh = 1, ow = 1;

  std::size_t rows() const { return static_cast<std::size_t>(channels) * k * k * k; }
  std::size_t plane() const { return static_cast<std::size_t>(oh) * ow; }
  std::size_t big_slab() const { return static_cast<std::size_t>(d) * h * w; }
  std::size_t small_slab() const { return static_cast<std::size_t>(od) * oh * ow; }
};

// Small-side z slices processed per GEMM.
int chunk_slices(const ConvGeom& g);

// col is rows() x ((z1 - z0) * plane()), row-major.
void im2col(const double* big, const ConvGeom& g, int z0, int z1, double* col);
// Adjoint of im2col: accumulates col back into big.
void col2im(const double* col, const ConvGeom& g, int z0, int z1, double* big);

}  // namespace voxelinst::detail
