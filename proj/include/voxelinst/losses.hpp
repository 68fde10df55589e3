#pragma once

#include <span>
#include <vector>

#include "voxelinst/matching.hpp"

namespace voxelinst {

inline constexpr double kProbabilityClamp = 1e-12;

struct LossReport {
  double l_cls = 0.0;
  double l_reg = 0.0;
  double l_mask = 0.0;
  double lambda = 1.0;
  double l_box = 0.0;  // l_cls + lambda * l_reg
  double total = 0.0;  // l_box + l_mask
};

LossReport total_loss(double l_cls, double l_reg, double l_mask, double lambda = 1.0);

// Values come with their gradient with respect to the loss input.
struct ClassLoss {
  double value = 0.0;
  bool saturated = false;     // some true-class probability hit the clamp
  std::vector<double> grad;   // d value / d probs, same layout as probs
};

// probs: anchor-major, `classes` probabilities per anchor. Mean over all
// anchors of -log p(true class); background is class 0.
ClassLoss loss_cls(std::span<const double> probs, int classes, const MatchResult& match);

double smooth_l1(double x);
double smooth_l1_grad(double x);

struct RegLoss {
  double value = 0.0;
  std::vector<double> grad;  // 6 per anchor
};

// Sum over positive anchors of elementwise smooth-L1 between predicted and
// target offsets, divided by the anchor count.
RegLoss loss_reg(std::span<const double> offsets, const MatchResult& match);

struct MaskInstance {
  int id = 0;
  std::span<const double> pred;  // probabilities
  std::span<const double> gt;    // 0/1 targets
  double weight = 0.0;           // 1 when the instance carries a voxel mask
};

struct MaskLoss {
  double value = 0.0;
  bool saturated = false;
  std::vector<std::vector<double>> grads;  // per instance; all zeros when weight is 0
};

// Mean over weighted instances of the voxel-averaged binary cross-entropy.
// Weight-0 instances are never read beyond their size.
MaskLoss loss_mask(std::span<const MaskInstance> instances);

}  // namespace voxelinst
