#include "conv_kernels.hpp"

#include <algorithm>

namespace voxelinst::detail {

int chunk_slices(const ConvGeom& g) {
  constexpr std::size_t kTargetCols = 4096;
  const auto per = std::max<std::size_t>(1, kTargetCols / std::max<std::size_t>(1, g.plane()));
  return static_cast<int>(std::min<std::size_t>(per, static_cast<std::size_t>(g.od)));
}

void im2col(const double* big, const ConvGeom& g, int z0, int z1, double* col) {
  const std::size_t cols = static_cast<std::size_t>(z1 - z0) * g.plane();
  std::size_t row = 0;
  for (int c = 0; c < g.channels; ++c) {
    const double* chan = big + static_cast<std::size_t>(c) * g.big_slab();
    for (int kz = 0; kz < g.k; ++kz) {
      for (int ky = 0; ky < g.k; ++ky) {
        for (int kx = 0; kx < g.k; ++kx, ++row) {
          double* dst = col + row * cols;
          for (int oz = z0; oz < z1; ++oz) {
            const int iz = oz * g.stride - g.pad + kz;
            if (iz < 0 || iz >= g.d) {
              std::fill(dst, dst + g.plane(), 0.0);
              dst += g.plane();
              continue;
            }
            for (int oy = 0; oy < g.oh; ++oy) {
              const int iy = oy * g.stride - g.pad + ky;
              if (iy < 0 || iy >= g.h) {
                std::fill(dst, dst + g.ow, 0.0);
                dst += g.ow;
                continue;
              }
              const double* src = chan + (static_cast<std::size_t>(iz) * g.h + iy) * g.w;
              if (g.stride == 1) {
                for (int ox = 0; ox < g.ow; ++ox) {
                  const int ix = ox - g.pad + kx;
                  dst[ox] = (ix >= 0 && ix < g.w) ? src[ix] : 0.0;
                }
              } else {
                for (int ox = 0; ox < g.ow; ++ox) {
                  const int ix = ox * g.stride - g.pad + kx;
                  dst[ox] = (ix >= 0 && ix < g.w) ? src[ix] : 0.0;
                }
              }
              dst += g.ow;
            }
          }
        }
      }
    }
  }
}

void col2im(const double* col, const ConvGeom& g, int z0, int z1, double* big) {
  const std::size_t cols = static_cast<std::size_t>(z1 - z0) * g.plane();
  std::size_t row = 0;
  for (int c = 0; c < g.channels; ++c) {
    double* chan = big + static_cast<std::size_t>(c) * g.big_slab();
    for (int kz = 0; kz < g.k; ++kz) {
      for (int ky = 0; ky < g.k; ++ky) {
        for (int kx = 0; kx < g.k; ++kx, ++row) {
          const double* src = col + row * cols;
          for (int oz = z0; oz < z1; ++oz) {
            const int iz = oz * g.stride - g.pad + kz;
            if (iz < 0 || iz >= g.d) {
              src += g.plane();
              continue;
            }
            for (int oy = 0; oy < g.oh; ++oy) {
              const int iy = oy * g.stride - g.pad + ky;
              if (iy < 0 || iy >= g.h) {
                src += g.ow;
                continue;
              }
              double* dst = chan + (static_cast<std::size_t>(iz) * g.h + iy) * g.w;
              for (int ox = 0; ox < g.ow; ++ox) {
                const int ix = ox * g.stride - g.pad + kx;
                if (ix >= 0 && ix < g.w) dst[ix] += src[ox];
              }
              src += g.ow;
            }
          }
        }
      }
    }
  }
}

}  // namespace voxelinst::detail
