#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "voxelinst/geometry.hpp"

namespace voxelinst {

struct AnchorLabel {
  bool positive = false;
  int gt_index = -1;
  int object_class = 0;  // 0 (background) for negatives
  RegressionTarget target{};
};

struct MatchResult {
  std::vector<AnchorLabel> labels;  // one per anchor, in AnchorSet order

  std::size_t positives() const;
};

// Anchor labelling for detector training:
//  - each GT's highest-IoU anchor (lowest anchor index on ties) is positive for that GT,
//    provided the IoU is nonzero; when one anchor is the best for several GTs it goes
//    to the GT with the higher IoU (lower GT index on ties);
//  - every other anchor with IoU >= pos_thresh to some GT is positive for its
//    highest-IoU GT (lowest GT index on ties);
//  - everything else is negative.
MatchResult match_anchors(std::span<const BBox3D> anchors, std::span<const BBox3D> gts,
                          double pos_thresh = 0.4);

inline MatchResult match_anchors(const AnchorSet& anchors, std::span<const BBox3D> gts,
                                 double pos_thresh = 0.4) {
  return match_anchors(std::span<const BBox3D>(anchors.anchors), gts, pos_thresh);
}

}  // namespace voxelinst
