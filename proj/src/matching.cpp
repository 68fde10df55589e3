#include "voxelinst/matching.hpp"

#include <algorithm>
#include <stdexcept>

namespace voxelinst {

std::size_t MatchResult::positives() const {
  return static_cast<std::size_t>(
      std::count_if(labels.begin(), labels.end(), [](const AnchorLabel& l) { return l.positive; }));
}

MatchResult match_anchors(std::span<const BBox3D> anchors, std::span<const BBox3D> gts,
                          double pos_thresh) {
  if (!(pos_thresh > 0.0 && pos_thresh < 1.0)) {
    throw std::invalid_argument("pos_thresh must lie in (0, 1)");
  }
  MatchResult result;
  result.labels.resize(anchors.size());
  if (gts.empty() || anchors.empty()) return result;

  const std::size_t num_gt = gts.size();
  std::vector<double> iou(anchors.size() * num_gt);
  for (std::size_t a = 0; a < anchors.size(); ++a) {
    for (std::size_t g = 0; g < num_gt; ++g) iou[a * num_gt + g] = iou3d(anchors[a], gts[g]);
  }

  // Threshold rule.
  for (std::size_t a = 0; a < anchors.size(); ++a) {
    std::size_t best = 0;
    for (std::size_t g = 1; g < num_gt; ++g) {
      if (iou[a * num_gt + g] > iou[a * num_gt + best]) best = g;
    }
    if (iou[a * num_gt + best] >= pos_thresh) {
      result.labels[a].positive = true;
      result.labels[a].gt_index = static_cast<int>(best);
    }
  }

  // Per-GT argmax rule; overrides the threshold assignment of the chosen anchor.
  std::vector<int> forced_gt(anchors.size(), -1);
  for (std::size_t g = 0; g < num_gt; ++g) {
    std::size_t best = 0;
    for (std::size_t a = 1; a < anchors.size(); ++a) {
      if (iou[a * num_gt + g] > iou[best * num_gt + g]) best = a;
    }
    const double best_iou = iou[best * num_gt + g];
    if (best_iou <= 0.0) continue;
    const int prev = forced_gt[best];
    if (prev < 0 || best_iou > iou[best * num_gt + static_cast<std::size_t>(prev)]) {
      forced_gt[best] = static_cast<int>(g);
    }
  }
  for (std::size_t a = 0; a < anchors.size(); ++a) {
    if (forced_gt[a] >= 0) {
      result.labels[a].positive = true;
      result.labels[a].gt_index = forced_gt[a];
    }
  }

  for (std::size_t a = 0; a < anchors.size(); ++a) {
    auto& l = result.labels[a];
    if (!l.positive) continue;
    const auto& gt = gts[static_cast<std::size_t>(l.gt_index)];
    l.object_class = gt.object_class;
    l.target = encode_box(gt, anchors[a]);
  }
  return result;
}

}  // namespace voxelinst
