#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "voxelinst/geometry.hpp"
#include "voxelinst/graph.hpp"
#include "voxelinst/roialign.hpp"
#include "voxelinst/volume.hpp"

namespace voxelinst {

// Backbone: stem conv -> [VoxRes x blocks] -> stride-2 conv -> [VoxRes x blocks]
// -> stride-2 conv -> [VoxRes x blocks]. RoIAlign taps the stride-2 and stride-4
// stages; the detection heads read the stride-4 stage.
struct NetworkConfig {
  int in_channels = 1;
  std::array<int, 3> widths{8, 16, 32};
  int blocks_per_stage = 2;
  int class_count = 2;  // background + object classes
  std::vector<Vec3> anchor_templates{{8.0, 8.0, 8.0}, {12.0, 12.0, 12.0}};
  int roi_size = 8;
  int mask_hidden = 16;
  std::uint64_t init_seed = 0;

  static constexpr int kTotalStride = 4;
  int anchors_per_cell() const { return static_cast<int>(anchor_templates.size()); }
  int mask_size() const { return roi_size * 4; }
  int aligned_channels() const { return widths[1] + widths[2]; }
  void validate() const;
};

class Model {
 public:
  explicit Model(NetworkConfig cfg);

  const NetworkConfig& config() const { return cfg_; }
  std::vector<Parameter>& parameters() { return params_; }
  const std::vector<Parameter>& parameters() const { return params_; }
  const Parameter& param(const std::string& name) const;
  Parameter& param(const std::string& name);
  std::size_t parameter_count() const;

  // Mask-head parameters carry the "mask." prefix.
  static bool is_mask_parameter(const Parameter& p);

 private:
  NetworkConfig cfg_;
  std::vector<Parameter> params_;
};

// Channel-last head outputs for an m x n x k grid:
//   class_scores[((i*n + j)*k + l)*c*r + t*c + cls]   (post-softmax)
//   box_offsets [((i*n + j)*k + l)*6*r + t*6 + comp]
struct DetectionOutput {
  GridShape grid;
  int classes = 0;
  int anchors_per_cell = 0;
  std::vector<double> class_scores;
  std::vector<double> box_offsets;

  std::size_t anchor_count() const { return grid.cells() * static_cast<std::size_t>(anchors_per_cell); }
  std::span<const double> scores_of(std::size_t anchor) const {
    return std::span<const double>(class_scores).subspan(anchor * classes, static_cast<std::size_t>(classes));
  }
  RegressionTarget offsets_of(std::size_t anchor) const;
};

struct DetectNodes {
  Graph::Node input = -1;
  Graph::Node class_probs = -1;  // (c*r, m, n, k)
  Graph::Node box_offsets = -1;  // (6*r, m, n, k)
  Graph::Node tap_stride2 = -1;
  Graph::Node tap_stride4 = -1;
  GridShape grid;
};

inline constexpr Vec3 kTapStride2{2.0, 2.0, 2.0};
inline constexpr Vec3 kTapStride4{4.0, 4.0, 4.0};

// Pre-activation residual block: x + conv(relu(norm(conv(relu(norm(x)))))).
Graph::Node voxres_block(Graph& g, Graph::Node x, const Model& model, const std::string& prefix);

// Zero-pads every spatial axis of a (C, D, H, W) tensor up to a multiple of `multiple`.
Tensor pad_to_multiple(const Tensor& t, int multiple);
Tensor volume_to_tensor(const Volume3D& v);

// `input` must already be padded to a multiple of the total stride.
DetectNodes forward_detect(Graph& g, const Model& model, const Tensor& input);
// Convenience wrapper: pads, runs the detector and converts to channel-last.
DetectionOutput forward_detect(const Model& model, const Volume3D& stack);

DetectionOutput to_detection_output(const Graph& g, const DetectNodes& nodes, const NetworkConfig& cfg);

// Aligned features (p, s, s, s) -> (1, 4s, 4s, 4s) probabilities.
Graph::Node forward_mask(Graph& g, const Model& model, Graph::Node aligned);

// Gradient of channel-last head values back to the (C, m, n, k) node layout.
Tensor channel_last_to_major(std::span<const double> values, int channels, const GridShape& grid);

// --- checkpoints --------------------------------------------------------------
// `stem.json` manifest (architecture + parameter names/shapes/offsets) plus
// `stem.f32` little-endian float payload in manifest order.
void save_checkpoint(const Model& model, const std::filesystem::path& stem);
Model load_checkpoint(const std::filesystem::path& stem);

// --- gradient verification ------------------------------------------------------

struct GradCheckResult {
  double max_relative = 0.0;
  double max_absolute = 0.0;
  std::size_t checked = 0;
};

// Compares analytic parameter gradients against central differences on a
// random subsample of entries. `loss` evaluates the scalar loss at the current
// parameter values; `analytic` returns gradients aligned with `params`.
GradCheckResult grad_check(std::span<Parameter* const> params, const std::function<double()>& loss,
                           const std::function<std::vector<Tensor>()>& analytic, double epsilon,
                           std::size_t samples, std::uint64_t seed, double denom_floor = 1e-6);

}  // namespace voxelinst
