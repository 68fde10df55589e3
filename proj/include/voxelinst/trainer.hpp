#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <vector>

#include "voxelinst/instance.hpp"
#include "voxelinst/losses.hpp"
#include "voxelinst/network.hpp"
#include "voxelinst/volume.hpp"

namespace voxelinst {

struct TrainConfig {
  NetworkConfig network;  // includes the anchor templates and RoIAlign size
  int batch_size = 1;
  int crop_size = 48;     // cubic crop edge; clipped to the stack
  double learning_rate = 0.02;
  double momentum = 0.9;
  int steps = 1000;
  double lambda = 1.0;
  double pos_thresh = 0.4;
  double nms_thresh = 0.3;
  double score_thresh = 0.5;
  double mask_thresh = 0.5;
  // Crop-truncated instances keeping less than this share of their box volume
  // are dropped from the crop's ground truth.
  double min_visible_fraction = 0.5;
  bool flips = true;
  // Rescales the batch gradient to this global L2 norm when it is larger; 0 disables.
  double grad_clip = 0.0;
  // From this step on the learning rate is scaled by lr_drop_factor; 0 disables.
  int lr_drop_step = 0;
  double lr_drop_factor = 0.1;
  std::uint64_t seed = 0;

  void validate() const;
};

// One training crop in its own coordinate frame.
struct TrainingSample {
  Tensor image;        // (C, D, H, W), padded to the total stride
  LabelVolume labels;  // spatial shape of image; all zero when the stack has none
  std::vector<InstanceAnnotation> instances;
};

struct CropSpec {
  std::array<int, 3> origin{0, 0, 0};
  std::array<int, 3> size{0, 0, 0};
  std::array<bool, 3> flip{false, false, false};
};

TrainingSample make_sample(const Stack& stack, const CropSpec& crop, double min_visible_fraction);
TrainingSample make_sample(const Stack& stack);

// Ground-truth mask grid of `size`^3 cells over box: 1 where the voxel under
// the cell center carries label id.
std::vector<double> mask_target(const LabelVolume& labels, const BBox3D& box, int id, int size);

struct SampleLoss {
  LossReport report;
  bool saturated = false;
  std::vector<Tensor> grads;  // aligned with model.parameters(); empty unless requested
};

// Detector loss over all anchors plus the gated mask loss at ground-truth boxes.
SampleLoss sample_loss(const Model& model, const TrainingSample& sample, const TrainConfig& cfg,
                       bool with_grads);

struct TrainResult {
  Model model;
  std::vector<LossReport> log;  // one per step, averaged over the batch
};

using StepCallback = std::function<void(std::size_t step, const LossReport&)>;

TrainResult train(const Dataset& data, const TrainConfig& cfg, const StepCallback& on_step = {});

// Detect, suppress, then segment every surviving box.
InstanceSet infer(const Volume3D& stack, const Model& model, const TrainConfig& cfg);

}  // namespace voxelinst
