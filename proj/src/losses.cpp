#include "voxelinst/losses.hpp"

#include <cmath>
#include <string>

#include "voxelinst/errors.hpp"

namespace voxelinst {

LossReport total_loss(double l_cls, double l_reg, double l_mask, double lambda) {
  LossReport r;
  r.l_cls = l_cls;
  r.l_reg = l_reg;
  r.l_mask = l_mask;
  r.lambda = lambda;
  r.l_box = l_cls + lambda * l_reg;
  r.total = r.l_box + l_mask;
  return r;
}

ClassLoss loss_cls(std::span<const double> probs, int classes, const MatchResult& match) {
  const std::size_t n = match.labels.size();
  if (classes < 2 || probs.size() != n * static_cast<std::size_t>(classes)) {
    throw ContractError("loss_cls: expected " + std::to_string(n) + " anchors x " +
                        std::to_string(classes) + " classes, got " + std::to_string(probs.size()) +
                        " values");
  }
  ClassLoss out;
  out.grad.assign(probs.size(), 0.0);
  if (n == 0) return out;
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t a = 0; a < n; ++a) {
    const auto& l = match.labels[a];
    const int truth = l.positive ? l.object_class : 0;
    if (truth < 0 || truth >= classes) throw ContractError("loss_cls: label class out of range");
    const std::size_t idx = a * static_cast<std::size_t>(classes) + static_cast<std::size_t>(truth);
    double p = probs[idx];
    if (p < kProbabilityClamp) {
      p = kProbabilityClamp;
      out.saturated = true;
    } else {
      out.grad[idx] = -inv_n / p;
    }
    out.value -= std::log(p);
  }
  out.value *= inv_n;
  return out;
}

double smooth_l1(double x) {
  const double ax = std::abs(x);
  return ax < 1.0 ? 0.5 * x * x : ax - 0.5;
}

double smooth_l1_grad(double x) {
  if (std::abs(x) < 1.0) return x;
  return x > 0.0 ? 1.0 : -1.0;
}

RegLoss loss_reg(std::span<const double> offsets, const MatchResult& match) {
  const std::size_t n = match.labels.size();
  if (offsets.size() != n * 6) {
    throw ContractError("loss_reg: expected " + std::to_string(n * 6) + " offsets, got " +
                        std::to_string(offsets.size()));
  }
  RegLoss out;
  out.grad.assign(offsets.size(), 0.0);
  if (n == 0) return out;
  const double inv_n = 1.0 / static_cast<double>(n);
  double sum = 0.0;
  for (std::size_t a = 0; a < n; ++a) {
    const auto& l = match.labels[a];
    if (!l.positive) continue;
    for (std::size_t k = 0; k < 6; ++k) {
      const double r = offsets[a * 6 + k] - l.target[k];
      sum += smooth_l1(r);
      out.grad[a * 6 + k] = inv_n * smooth_l1_grad(r);
    }
  }
  out.value = sum * inv_n;
  return out;
}

MaskLoss loss_mask(std::span<const MaskInstance> instances) {
  MaskLoss out;
  out.grads.resize(instances.size());
  double weight_sum = 0.0;
  for (const auto& inst : instances) {
    if (inst.weight != 0.0 && inst.weight != 1.0) {
      throw ContractError("loss_mask: instance " + std::to_string(inst.id) + " has weight outside {0, 1}");
    }
    if (inst.pred.size() != inst.gt.size() || inst.pred.empty()) {
      throw ContractError("loss_mask: instance " + std::to_string(inst.id) + " prediction has " +
                          std::to_string(inst.pred.size()) + " voxels but target has " +
                          std::to_string(inst.gt.size()));
    }
    weight_sum += inst.weight;
  }
  for (std::size_t i = 0; i < instances.size(); ++i) out.grads[i].assign(instances[i].pred.size(), 0.0);
  if (weight_sum == 0.0) return out;

  for (std::size_t i = 0; i < instances.size(); ++i) {
    const auto& inst = instances[i];
    if (inst.weight == 0.0) continue;
    const double scale = 1.0 / (weight_sum * static_cast<double>(inst.pred.size()));
    double bce = 0.0;
    auto& g = out.grads[i];
    for (std::size_t v = 0; v < inst.pred.size(); ++v) {
      const double t = inst.gt[v];
      double p = inst.pred[v];
      bool clamped = false;
      if (p < kProbabilityClamp) {
        p = kProbabilityClamp;
        clamped = true;
      } else if (p > 1.0 - kProbabilityClamp) {
        p = 1.0 - kProbabilityClamp;
        clamped = true;
      }
      out.saturated = out.saturated || clamped;
      bce -= t * std::log(p) + (1.0 - t) * std::log1p(-p);
      if (!clamped) g[v] = scale * (-t / p + (1.0 - t) / (1.0 - p));
    }
    out.value += bce * scale;
  }
  return out;
}

}  // namespace voxelinst
