#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "voxelinst/geometry.hpp"
#include "voxelinst/instance.hpp"
#include "voxelinst/volume.hpp"

namespace voxelinst {

struct MetricReport {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;

  // 0/0 is taken as 0 throughout.
  static MetricReport from_counts(std::size_t tp, std::size_t fp, std::size_t fn);
  // Pools counts (micro average).
  MetricReport& operator+=(const MetricReport& other);
};

// Greedy one-to-one matching. Predictions are visited by descending score
// (lower index first on ties); each takes the unmatched GT with the highest
// IoU, provided that IoU is strictly above iou_thresh.
MetricReport detection_f1(std::span<const BBox3D> preds, std::span<const BBox3D> gts, double iou_thresh = 0.4);

// Voxel-IoU matching: (pred, gt) pairs sorted by descending IoU and accepted
// greedily while IoU >= voxel_iou_thresh. Every annotation counts as a GT
// instance, whether or not it was used for mask training.
MetricReport segmentation_f1(const InstanceSet& pred, const LabelVolume& gt_labels,
                             std::span<const InstanceAnnotation> gt_annos, double voxel_iou_thresh = 0.5);

// Greedy matching of box centers to point markers by ascending distance;
// matched iff distance <= dist_thresh.
MetricReport marker_f1(std::span<const BBox3D> preds, std::span<const Vec3> markers, double dist_thresh = 5.0);

// Annotation-time model: one voxel mask costs mask_to_box_ratio boxes.
struct CostModel {
  double box_unit_time = 1.0;  // hours per box
  double mask_to_box_ratio = 30.0;
  void validate() const;
};

double annotation_cost(std::size_t n_instances, double mask_fraction, bool boxes_annotated, const CostModel& cost);

}  // namespace voxelinst
