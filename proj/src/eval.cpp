#include "voxelinst/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <tuple>
#include <unordered_map>

#include "voxelinst/errors.hpp"

namespace voxelinst {

MetricReport MetricReport::from_counts(std::size_t tp, std::size_t fp, std::size_t fn) {
  MetricReport r;
  r.tp = tp;
  r.fp = fp;
  r.fn = fn;
  r.precision = tp + fp > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
  r.recall = tp + fn > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
  r.f1 = r.precision + r.recall > 0.0 ? 2.0 * r.precision * r.recall / (r.precision + r.recall) : 0.0;
  return r;
}

MetricReport& MetricReport::operator+=(const MetricReport& other) {
  *this = from_counts(tp + other.tp, fp + other.fp, fn + other.fn);
  return *this;
}

MetricReport detection_f1(std::span<const BBox3D> preds, std::span<const BBox3D> gts, double iou_thresh) {
  std::vector<std::size_t> order(preds.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return preds[a].score > preds[b].score; });
  std::vector<bool> gt_used(gts.size(), false);
  std::size_t tp = 0;
  for (std::size_t p : order) {
    double best_iou = iou_thresh;
    std::size_t best = gts.size();
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (gt_used[g]) continue;
      const double iou = iou3d(preds[p], gts[g]);
      if (iou > best_iou) {
        best_iou = iou;
        best = g;
      }
    }
    if (best < gts.size()) {
      gt_used[best] = true;
      ++tp;
    }
  }
  return MetricReport::from_counts(tp, preds.size() - tp, gts.size() - tp);
}

MetricReport segmentation_f1(const InstanceSet& pred, const LabelVolume& gt_labels,
                             std::span<const InstanceAnnotation> gt_annos, double voxel_iou_thresh) {
  std::unordered_map<int, std::size_t> gt_slot;
  for (std::size_t g = 0; g < gt_annos.size(); ++g) gt_slot[gt_annos[g].id] = g;
  std::vector<std::size_t> gt_size(gt_annos.size(), 0);
  for (auto l : gt_labels.labels) {
    if (l == 0) continue;
    auto it = gt_slot.find(l);
    if (it != gt_slot.end()) ++gt_size[it->second];
  }

  struct Pair {
    double iou;
    std::size_t p, g;
  };
  std::vector<Pair> pairs;
  const Shape3& s = gt_labels.shape;
  for (std::size_t p = 0; p < pred.size(); ++p) {
    const auto& inst = pred[p];
    std::unordered_map<std::size_t, std::size_t> inter;
    std::size_t size = 0;
    for (int z = 0; z < inst.extent[0]; ++z) {
      for (int y = 0; y < inst.extent[1]; ++y) {
        for (int x = 0; x < inst.extent[2]; ++x) {
          if (!inst.mask[(static_cast<std::size_t>(z) * inst.extent[1] + y) * inst.extent[2] + x]) continue;
          ++size;
          const int gz = inst.origin[0] + z, gy = inst.origin[1] + y, gx = inst.origin[2] + x;
          if (gz < 0 || gy < 0 || gx < 0 || gz >= s.depth || gy >= s.height || gx >= s.width) continue;
          const int l = gt_labels.at(gz, gy, gx);
          if (l == 0) continue;
          auto it = gt_slot.find(l);
          if (it != gt_slot.end()) ++inter[it->second];
        }
      }
    }
    for (const auto& [g, i] : inter) {
      const double uni = static_cast<double>(size + gt_size[g] - i);
      pairs.push_back({static_cast<double>(i) / uni, p, g});
    }
  }
  std::sort(pairs.begin(), pairs.end(), [](const Pair& a, const Pair& b) {
    return std::tie(b.iou, a.p, a.g) < std::tie(a.iou, b.p, b.g);
  });
  std::vector<bool> p_used(pred.size(), false), g_used(gt_annos.size(), false);
  std::size_t tp = 0;
  for (const auto& pr : pairs) {
    if (pr.iou < voxel_iou_thresh) break;
    if (p_used[pr.p] || g_used[pr.g]) continue;
    p_used[pr.p] = g_used[pr.g] = true;
    ++tp;
  }
  return MetricReport::from_counts(tp, pred.size() - tp, gt_annos.size() - tp);
}

MetricReport marker_f1(std::span<const BBox3D> preds, std::span<const Vec3> markers, double dist_thresh) {
  struct Pair {
    double dist;
    std::size_t p, m;
  };
  std::vector<Pair> pairs;
  for (std::size_t p = 0; p < preds.size(); ++p) {
    for (std::size_t m = 0; m < markers.size(); ++m) {
      double d2 = 0.0;
      for (int a = 0; a < 3; ++a) {
        const double d = preds[p].center[a] - markers[m][a];
        d2 += d * d;
      }
      const double d = std::sqrt(d2);
      if (d <= dist_thresh) pairs.push_back({d, p, m});
    }
  }
  std::sort(pairs.begin(), pairs.end(),
            [](const Pair& a, const Pair& b) { return std::tie(a.dist, a.p, a.m) < std::tie(b.dist, b.p, b.m); });
  std::vector<bool> p_used(preds.size(), false), m_used(markers.size(), false);
  std::size_t tp = 0;
  for (const auto& pr : pairs) {
    if (p_used[pr.p] || m_used[pr.m]) continue;
    p_used[pr.p] = m_used[pr.m] = true;
    ++tp;
  }
  return MetricReport::from_counts(tp, preds.size() - tp, markers.size() - tp);
}

void CostModel::validate() const {
  if (!(box_unit_time > 0.0)) throw ContractError("box_unit_time must be positive");
  if (!(mask_to_box_ratio > 0.0)) throw ContractError("mask_to_box_ratio must be positive");
}

double annotation_cost(std::size_t n_instances, double mask_fraction, bool boxes_annotated, const CostModel& cost) {
  cost.validate();
  if (!(mask_fraction >= 0.0 && mask_fraction <= 1.0)) throw ContractError("mask_fraction must lie in [0, 1]");
  const double n = static_cast<double>(n_instances);
  const double b = cost.box_unit_time;
  return n * b * (boxes_annotated ? 1.0 : 0.0) + n * mask_fraction * cost.mask_to_box_ratio * b;
}

}  // namespace voxelinst
