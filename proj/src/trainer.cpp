#include "voxelinst/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numeric>
#include <random>

#include "voxelinst/errors.hpp"
#include "voxelinst/matching.hpp"
#include "voxelinst/roialign.hpp"

namespace voxelinst {

void TrainConfig::validate() const {
  network.validate();
  if (batch_size < 1) throw ContractError("batch_size must be >= 1");
  if (crop_size < NetworkConfig::kTotalStride) throw ContractError("crop_size must be >= the total stride");
  if (!(learning_rate > 0.0)) throw ContractError("learning_rate must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ContractError("momentum must lie in [0, 1)");
  if (!(grad_clip >= 0.0)) throw ContractError("grad_clip must be >= 0");
  if (lr_drop_step < 0) throw ContractError("lr_drop_step must be >= 0");
  if (!(lr_drop_factor > 0.0 && lr_drop_factor <= 1.0)) throw ContractError("lr_drop_factor must lie in (0, 1]");
  if (steps < 1) throw ContractError("steps must be positive");
  if (!(lambda > 0.0)) throw ContractError("lambda must be positive");
  for (double t : {pos_thresh, nms_thresh, score_thresh, mask_thresh}) {
    if (!(t > 0.0 && t < 1.0)) throw ContractError("thresholds must lie in (0, 1)");
  }
  if (!(min_visible_fraction >= 0.0 && min_visible_fraction <= 1.0)) {
    throw ContractError("min_visible_fraction must lie in [0, 1]");
  }
}

namespace {

Tensor crop_image(const Volume3D& v, const CropSpec& crop) {
  Tensor t({v.channels, crop.size[0], crop.size[1], crop.size[2]});
  const std::size_t slab = t.spatial();
  std::size_t i = 0;
  for (int z = 0; z < crop.size[0]; ++z) {
    const int sz = crop.origin[0] + (crop.flip[0] ? crop.size[0] - 1 - z : z);
    for (int y = 0; y < crop.size[1]; ++y) {
      const int sy = crop.origin[1] + (crop.flip[1] ? crop.size[1] - 1 - y : y);
      for (int x = 0; x < crop.size[2]; ++x, ++i) {
        const int sx = crop.origin[2] + (crop.flip[2] ? crop.size[2] - 1 - x : x);
        for (int c = 0; c < v.channels; ++c) t[static_cast<std::size_t>(c) * slab + i] = v.at(sz, sy, sx, c);
      }
    }
  }
  return t;
}

LabelVolume crop_labels(const LabelVolume& v, const CropSpec& crop, const Shape3& padded) {
  LabelVolume out(padded);
  for (int z = 0; z < crop.size[0]; ++z) {
    const int sz = crop.origin[0] + (crop.flip[0] ? crop.size[0] - 1 - z : z);
    for (int y = 0; y < crop.size[1]; ++y) {
      const int sy = crop.origin[1] + (crop.flip[1] ? crop.size[1] - 1 - y : y);
      for (int x = 0; x < crop.size[2]; ++x) {
        const int sx = crop.origin[2] + (crop.flip[2] ? crop.size[2] - 1 - x : x);
        out.at(z, y, x) = v.at(sz, sy, sx);
      }
    }
  }
  return out;
}

std::vector<BBox3D> gt_boxes(const std::vector<InstanceAnnotation>& annos) {
  std::vector<BBox3D> boxes;
  boxes.reserve(annos.size());
  for (const auto& a : annos) {
    BBox3D b = a.box;
    b.object_class = a.object_class;
    boxes.push_back(b);
  }
  return boxes;
}

}  // namespace

TrainingSample make_sample(const Stack& stack, const CropSpec& crop, double min_visible_fraction) {
  const Shape3& s = stack.image.shape;
  for (int a = 0; a < 3; ++a) {
    if (crop.size[a] < 1 || crop.origin[a] < 0 || crop.origin[a] + crop.size[a] > s[a]) {
      throw ContractError("crop exceeds the stack bounds");
    }
  }
  TrainingSample sample;
  sample.image = pad_to_multiple(crop_image(stack.image, crop), NetworkConfig::kTotalStride);
  const Shape3 padded{sample.image.dim(1), sample.image.dim(2), sample.image.dim(3)};
  sample.labels = stack.labels ? crop_labels(*stack.labels, crop, padded) : LabelVolume(padded);

  for (const auto& a : stack.annotations) {
    Vec3 lo, hi;
    bool empty = false;
    for (int ax = 0; ax < 3; ++ax) {
      lo[ax] = std::max(a.box.lo(ax), static_cast<double>(crop.origin[ax]));
      hi[ax] = std::min(a.box.hi(ax), static_cast<double>(crop.origin[ax] + crop.size[ax]));
      if (hi[ax] <= lo[ax]) empty = true;
    }
    if (empty) continue;
    const double visible = (hi[0] - lo[0]) * (hi[1] - lo[1]) * (hi[2] - lo[2]) / a.box.volume();
    if (visible < min_visible_fraction) continue;
    for (int ax = 0; ax < 3; ++ax) {
      lo[ax] -= crop.origin[ax];
      hi[ax] -= crop.origin[ax];
      if (crop.flip[ax]) {
        const double l = crop.size[ax] - hi[ax];
        hi[ax] = crop.size[ax] - lo[ax];
        lo[ax] = l;
      }
    }
    InstanceAnnotation local = a;
    local.box = BBox3D::from_bounds(lo, hi);
    local.box.object_class = a.object_class;
    local.has_mask = a.has_mask && stack.labels.has_value();
    sample.instances.push_back(local);
  }
  return sample;
}

TrainingSample make_sample(const Stack& stack) {
  CropSpec full;
  full.size = {stack.image.shape.depth, stack.image.shape.height, stack.image.shape.width};
  return make_sample(stack, full, 0.0);
}

std::vector<double> mask_target(const LabelVolume& labels, const BBox3D& box, int id, int size) {
  std::vector<double> t(static_cast<std::size_t>(size) * size * size, 0.0);
  std::size_t idx = 0;
  for (int i = 0; i < size; ++i) {
    for (int j = 0; j < size; ++j) {
      for (int l = 0; l < size; ++l, ++idx) {
        const Vec3 p = roi_cell_center(box, size, i, j, l);
        std::array<int, 3> v{};
        bool inside = true;
        for (int a = 0; a < 3; ++a) {
          v[a] = static_cast<int>(std::floor(p[a]));
          if (v[a] < 0 || v[a] >= labels.shape[a]) inside = false;
        }
        if (inside && labels.at(v[0], v[1], v[2]) == id) t[idx] = 1.0;
      }
    }
  }
  return t;
}

SampleLoss sample_loss(const Model& model, const TrainingSample& sample, const TrainConfig& cfg,
                       bool with_grads) {
  const auto& net = model.config();
  Graph g;
  const auto nodes = forward_detect(g, model, sample.image);
  const auto det = to_detection_output(g, nodes, net);
  const auto anchors = generate_anchors(nodes.grid, kTapStride4, net.anchor_templates);
  const auto gts = gt_boxes(sample.instances);
  const auto match = match_anchors(anchors, gts, cfg.pos_thresh);
  const auto cls = loss_cls(det.class_scores, net.class_count, match);
  const auto reg = loss_reg(det.box_offsets, match);

  const int mask_size = net.mask_size();
  const std::size_t mask_voxels = static_cast<std::size_t>(mask_size) * mask_size * mask_size;
  std::vector<Graph::Node> mask_nodes;
  std::vector<std::vector<double>> targets;
  for (const auto& inst : sample.instances) {
    const auto aligned = g.roi_align_concat(nodes.tap_stride2, kTapStride2, nodes.tap_stride4, kTapStride4,
                                            inst.box, net.roi_size);
    mask_nodes.push_back(forward_mask(g, model, aligned));
    // Unmasked instances get a placeholder target that the weight gate never reads.
    targets.push_back(inst.has_mask ? mask_target(sample.labels, inst.box, inst.id, mask_size)
                                    : std::vector<double>(mask_voxels, 0.0));
  }
  std::vector<MaskInstance> mask_inputs;
  for (std::size_t i = 0; i < sample.instances.size(); ++i) {
    mask_inputs.push_back(MaskInstance{sample.instances[i].id, g.value(mask_nodes[i]).values(), targets[i],
                                       sample.instances[i].has_mask ? 1.0 : 0.0});
  }
  const auto mask = loss_mask(mask_inputs);

  SampleLoss out;
  out.report = total_loss(cls.value, reg.value, mask.value, cfg.lambda);
  out.saturated = cls.saturated || mask.saturated;
  if (!with_grads) return out;

  const int r = net.anchors_per_cell();
  g.grad(nodes.class_probs) += channel_last_to_major(cls.grad, net.class_count * r, nodes.grid);
  std::vector<double> reg_grad = reg.grad;
  for (auto& v : reg_grad) v *= cfg.lambda;
  g.grad(nodes.box_offsets) += channel_last_to_major(reg_grad, 6 * r, nodes.grid);
  for (std::size_t i = 0; i < mask_nodes.size(); ++i) {
    if (mask_inputs[i].weight == 0.0) continue;
    Tensor& mg = g.grad(mask_nodes[i]);
    std::copy(mask.grads[i].begin(), mask.grads[i].end(), mg.data());
  }
  g.backward();
  out.grads.reserve(model.parameters().size());
  for (const auto& p : model.parameters()) out.grads.push_back(g.param_grad(p));
  return out;
}

TrainResult train(const Dataset& data, const TrainConfig& cfg, const StepCallback& on_step) {
  data.validate();
  cfg.validate();
  if (data.stacks.empty()) throw ContractError("training requires at least one stack");
  if (cfg.network.class_count != data.class_count) {
    throw ContractError("network class_count " + std::to_string(cfg.network.class_count) +
                        " differs from dataset class_count " + std::to_string(data.class_count));
  }
  bool any_mask = false;
  for (const auto& st : data.stacks) {
    for (const auto& a : st.annotations) any_mask = any_mask || a.has_mask;
  }
  if (!any_mask) std::clog << "warning: no instance carries a voxel mask; the mask head will not train\n";

  TrainResult result{Model(cfg.network), {}};
  Model& model = result.model;
  auto& params = model.parameters();
  std::vector<Tensor> velocity;
  for (const auto& p : params) velocity.emplace_back(p.value.shape());

  std::mt19937_64 rng(cfg.seed);
  std::bernoulli_distribution coin(0.5);
  for (int step = 0; step < cfg.steps; ++step) {
    std::vector<Tensor> grads;
    for (const auto& p : params) grads.emplace_back(p.value.shape());
    LossReport mean;
    mean.lambda = cfg.lambda;
    for (int b = 0; b < cfg.batch_size; ++b) {
      const auto& stack =
          data.stacks[std::uniform_int_distribution<std::size_t>(0, data.stacks.size() - 1)(rng)];
      CropSpec crop;
      for (int a = 0; a < 3; ++a) {
        crop.size[a] = std::min(cfg.crop_size, stack.image.shape[a]);
        crop.origin[a] = std::uniform_int_distribution<int>(0, stack.image.shape[a] - crop.size[a])(rng);
        crop.flip[a] = cfg.flips && coin(rng);
      }
      const auto sample = make_sample(stack, crop, cfg.min_visible_fraction);
      const auto sl = sample_loss(model, sample, cfg, true);
      if (!std::isfinite(sl.report.total)) {
        throw DivergenceError(static_cast<std::size_t>(step),
                              "non-finite loss at step " + std::to_string(step));
      }
      for (std::size_t i = 0; i < grads.size(); ++i) grads[i] += sl.grads[i];
      mean.l_cls += sl.report.l_cls / cfg.batch_size;
      mean.l_reg += sl.report.l_reg / cfg.batch_size;
      mean.l_mask += sl.report.l_mask / cfg.batch_size;
    }
    double inv_batch = 1.0 / cfg.batch_size;
    if (cfg.grad_clip > 0.0) {
      double sq = 0.0;
      for (const auto& g : grads)
        for (double x : g.values()) sq += x * x;
      const double norm = std::sqrt(sq) * inv_batch;
      if (norm > cfg.grad_clip) inv_batch *= cfg.grad_clip / norm;
    }
    const double lr =
        cfg.lr_drop_step > 0 && step >= cfg.lr_drop_step ? cfg.learning_rate * cfg.lr_drop_factor : cfg.learning_rate;
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto& v = velocity[i];
      auto& w = params[i].value;
      for (std::size_t k = 0; k < w.size(); ++k) {
        v[k] = cfg.momentum * v[k] + grads[i][k] * inv_batch;
        w[k] -= lr * v[k];
      }
    }
    const auto report = total_loss(mean.l_cls, mean.l_reg, mean.l_mask, cfg.lambda);
    result.log.push_back(report);
    if (on_step) on_step(static_cast<std::size_t>(step), report);
  }
  return result;
}

namespace {

// Pastes a binary s'^3 grid onto the voxels of box by trilinear resampling.
Instance paste_mask(const std::vector<double>& grid, int size, const BBox3D& box, const Shape3& shape) {
  Instance inst;
  const auto range = box_voxels(box, shape);
  if (range.empty()) return inst;
  inst.origin = range.lo;
  for (int a = 0; a < 3; ++a) inst.extent[a] = range.hi[a] - range.lo[a];
  inst.mask.assign(range.count(), 0);
  Tensor t({1, size, size, size});
  std::copy(grid.begin(), grid.end(), t.data());
  std::size_t idx = 0;
  for (int z = range.lo[0]; z < range.hi[0]; ++z) {
    for (int y = range.lo[1]; y < range.hi[1]; ++y) {
      for (int x = range.lo[2]; x < range.hi[2]; ++x, ++idx) {
        const std::array<int, 3> v{z, y, x};
        Vec3 u;
        for (int a = 0; a < 3; ++a) u[a] = (v[a] + 0.5 - box.lo(a)) / box.size[a] * size - 0.5;
        if (trilinear_sample(t, u)[0] >= 0.5) inst.mask[idx] = 1;
      }
    }
  }
  return inst;
}

}  // namespace

InstanceSet infer(const Volume3D& stack, const Model& model, const TrainConfig& cfg) {
  const auto& net = model.config();
  Graph g;
  const auto nodes = forward_detect(g, model, pad_to_multiple(volume_to_tensor(stack), NetworkConfig::kTotalStride));
  const auto det = to_detection_output(g, nodes, net);
  const auto anchors = generate_anchors(nodes.grid, kTapStride4, net.anchor_templates);

  std::vector<BBox3D> candidates;
  for (std::size_t a = 0; a < anchors.size(); ++a) {
    const auto scores = det.scores_of(a);
    int best = 1;
    for (int c = 2; c < net.class_count; ++c) {
      if (scores[static_cast<std::size_t>(c)] > scores[static_cast<std::size_t>(best)]) best = c;
    }
    const double score = scores[static_cast<std::size_t>(best)];
    if (score < cfg.score_thresh) continue;
    const BBox3D box = decode_box(det.offsets_of(a), anchors.anchors[a]);
    if (!box.valid()) continue;
    // Clipping before suppression keeps the survivors' pairwise IoU within the threshold.
    Vec3 lo, hi;
    bool empty = false;
    for (int ax = 0; ax < 3; ++ax) {
      lo[ax] = std::max(box.lo(ax), 0.0);
      hi[ax] = std::min(box.hi(ax), static_cast<double>(stack.shape[ax]));
      if (hi[ax] <= lo[ax]) empty = true;
    }
    if (empty) continue;
    BBox3D clipped = BBox3D::from_bounds(lo, hi);
    clipped.object_class = best;
    clipped.score = score;
    candidates.push_back(clipped);
  }
  const auto kept = nms3d(candidates, cfg.nms_thresh);

  InstanceSet out;
  const int mask_size = net.mask_size();
  for (std::size_t k : kept) {
    const BBox3D& clipped = candidates[k];
    const auto aligned = g.roi_align_concat(nodes.tap_stride2, kTapStride2, nodes.tap_stride4, kTapStride4,
                                            clipped, net.roi_size);
    const auto probs = g.value(forward_mask(g, model, aligned));
    std::vector<double> binary(probs.size());
    for (std::size_t i = 0; i < probs.size(); ++i) binary[i] = probs[i] >= cfg.mask_thresh ? 1.0 : 0.0;
    Instance inst = paste_mask(binary, mask_size, clipped, stack.shape);
    if (inst.voxel_count() == 0) continue;
    inst.object_class = clipped.object_class;
    inst.score = clipped.score;
    inst.box = clipped;
    out.push_back(std::move(inst));
  }
  return out;
}

}  // namespace voxelinst
