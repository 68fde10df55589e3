#include "voxelinst/graph.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

#include <Eigen/Core>

#include "conv_kernels.hpp"
#include "voxelinst/errors.hpp"
#include "voxelinst/roialign.hpp"

namespace voxelinst {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;
using StridedMap = Eigen::Map<RowMat, 0, Eigen::OuterStride<>>;
using ConstStridedMap = Eigen::Map<const RowMat, 0, Eigen::OuterStride<>>;

void require(bool cond, const std::string& what) {
  if (!cond) throw ContractError(what);
}

void require_rank(const Tensor& t, std::size_t rank, const char* what) {
  require(t.rank() == rank, std::string(what) + " must have rank " + std::to_string(rank) +
                                ", got " + Tensor::shape_string(t.shape()));
}

}  // namespace

const char* op_name(OpKind kind) {
  switch (kind) {
    case OpKind::kInput: return "input";
    case OpKind::kConv3d: return "conv3d";
    case OpKind::kConvTranspose3d: return "conv_transpose3d";
    case OpKind::kAdd: return "add";
    case OpKind::kRelu: return "relu";
    case OpKind::kInstanceNorm: return "instance_norm";
    case OpKind::kGroupSoftmax: return "group_softmax";
    case OpKind::kSigmoid: return "sigmoid";
    case OpKind::kRoiAlign: return "roi_align";
  }
  return "unknown";
}

Graph::Node Graph::push(OpKind kind, Tensor value, std::function<void(Graph&, const Tensor&)> backward) {
  nodes_.push_back(NodeData{kind, std::move(value), Tensor(), std::move(backward)});
  return static_cast<Node>(nodes_.size() - 1);
}

Tensor& Graph::grad(Node n) {
  auto& node = nodes_.at(static_cast<std::size_t>(n));
  if (node.grad.empty() && !node.value.empty()) node.grad = Tensor(node.value.shape());
  return node.grad;
}

Tensor& Graph::accum(const Parameter& p) {
  auto it = param_grads_.find(&p);
  if (it == param_grads_.end()) it = param_grads_.emplace(&p, Tensor(p.value.shape())).first;
  return it->second;
}

Tensor Graph::param_grad(const Parameter& p) const {
  auto it = param_grads_.find(&p);
  if (it == param_grads_.end()) return Tensor(p.value.shape());
  return it->second;
}

void Graph::backward() {
  for (std::size_t i = nodes_.size(); i-- > 0;) {
    auto& node = nodes_[i];
    if (node.grad.empty() || !node.backward) continue;
    node.backward(*this, node.grad);
  }
}

Graph::Node Graph::input(Tensor value, bool requires_grad) {
  const Node n = push(OpKind::kInput, std::move(value), nullptr);
  nodes_.back().requires_grad = requires_grad;
  return n;
}

Graph::Node Graph::conv3d(Node xn, const Parameter& w, const Parameter& b, int stride, int pad) {
  const Tensor& x = value(xn);
  require_rank(x, 4, "conv3d input");
  require_rank(w.value, 5, "conv3d weight");
  const int cout = w.value.dim(0);
  const int k = w.value.dim(2);
  require(w.value.dim(1) == x.dim(0),
          "conv3d '" + w.name + "' expects " + std::to_string(w.value.dim(1)) +
              " input channels, got " + std::to_string(x.dim(0)));
  require(w.value.dim(3) == k && w.value.dim(4) == k, "conv3d kernels must be cubic");
  require(b.value.size() == static_cast<std::size_t>(cout), "conv3d bias size mismatch");
  require(stride >= 1 && pad >= 0, "conv3d stride/pad invalid");

  detail::ConvGeom g;
  g.channels = x.dim(0);
  g.d = x.dim(1), g.h = x.dim(2), g.w = x.dim(3);
  g.k = k, g.stride = stride, g.pad = pad;
  g.od = (g.d + 2 * pad - k) / stride + 1;
  g.oh = (g.h + 2 * pad - k) / stride + 1;
  g.ow = (g.w + 2 * pad - k) / stride + 1;
  require(g.od >= 1 && g.oh >= 1 && g.ow >= 1, "conv3d input smaller than kernel");

  Tensor y({cout, g.od, g.oh, g.ow});
  const int chunk = detail::chunk_slices(g);
  std::vector<double> col(g.rows() * static_cast<std::size_t>(chunk) * g.plane());
  ConstMatMap wm(w.value.data(), cout, static_cast<Eigen::Index>(g.rows()));
  for (int z0 = 0; z0 < g.od; z0 += chunk) {
    const int z1 = std::min(g.od, z0 + chunk);
    const auto ncols = static_cast<Eigen::Index>(static_cast<std::size_t>(z1 - z0) * g.plane());
    detail::im2col(x.data(), g, z0, z1, col.data());
    ConstMatMap cm(col.data(), static_cast<Eigen::Index>(g.rows()), ncols);
    StridedMap ym(y.data() + static_cast<std::size_t>(z0) * g.plane(), cout, ncols,
                  Eigen::OuterStride<>(static_cast<Eigen::Index>(g.small_slab())));
    ym.noalias() = wm * cm;
  }
  for (int c = 0; c < cout; ++c) {
    double* yc = y.data() + static_cast<std::size_t>(c) * g.small_slab();
    const double bias = b.value[static_cast<std::size_t>(c)];
    for (std::size_t i = 0; i < g.small_slab(); ++i) yc[i] += bias;
  }

  const bool input_needs_grad = nodes_[static_cast<std::size_t>(xn)].requires_grad;
  return push(OpKind::kConv3d, std::move(y),
              [xn, g, cout, chunk, input_needs_grad, wp = &w, bp = &b](Graph& G, const Tensor& dy) {
                const Tensor& x = G.value(xn);
                Tensor& dw = G.accum(*wp);
                Tensor& db = G.accum(*bp);
                Tensor* dx = input_needs_grad ? &G.grad(xn) : nullptr;
                std::vector<double> col(g.rows() * static_cast<std::size_t>(chunk) * g.plane());
                std::vector<double> dcol(input_needs_grad ? col.size() : 0);
                ConstMatMap wm(wp->value.data(), cout, static_cast<Eigen::Index>(g.rows()));
                MatMap dwm(dw.data(), cout, static_cast<Eigen::Index>(g.rows()));
                for (int z0 = 0; z0 < g.od; z0 += chunk) {
                  const int z1 = std::min(g.od, z0 + chunk);
                  const auto ncols =
                      static_cast<Eigen::Index>(static_cast<std::size_t>(z1 - z0) * g.plane());
                  detail::im2col(x.data(), g, z0, z1, col.data());
                  ConstMatMap cm(col.data(), static_cast<Eigen::Index>(g.rows()), ncols);
                  ConstStridedMap dym(dy.data() + static_cast<std::size_t>(z0) * g.plane(), cout, ncols,
                                      Eigen::OuterStride<>(static_cast<Eigen::Index>(g.small_slab())));
                  dwm.noalias() += dym * cm.transpose();
                  if (dx) {
                    MatMap dcm(dcol.data(), static_cast<Eigen::Index>(g.rows()), ncols);
                    dcm.noalias() = wm.transpose() * dym;
                    detail::col2im(dcol.data(), g, z0, z1, dx->data());
                  }
                }
                for (int c = 0; c < cout; ++c) {
                  const double* dyc = dy.data() + static_cast<std::size_t>(c) * g.small_slab();
                  double s = 0.0;
                  for (std::size_t i = 0; i < g.small_slab(); ++i) s += dyc[i];
                  db[static_cast<std::size_t>(c)] += s;
                }
              });
}

Graph::Node Graph::conv_transpose3d(Node xn, const Parameter& w, const Parameter& b, int stride) {
  const Tensor& x = value(xn);
  require_rank(x, 4, "conv_transpose3d input");
  require_rank(w.value, 5, "conv_transpose3d weight");
  const int cin = x.dim(0);
  require(w.value.dim(0) == cin,
          "conv_transpose3d '" + w.name + "' expects " + std::to_string(w.value.dim(0)) +
              " input channels, got " + std::to_string(cin));
  const int cout = w.value.dim(1);
  const int k = w.value.dim(2);
  require(w.value.dim(3) == k && w.value.dim(4) == k, "conv_transpose3d kernels must be cubic");
  require(b.value.size() == static_cast<std::size_t>(cout), "conv_transpose3d bias size mismatch");
  require(stride >= 1, "conv_transpose3d stride invalid");

  detail::ConvGeom g;
  g.channels = cout;
  g.od = x.dim(1), g.oh = x.dim(2), g.ow = x.dim(3);
  g.k = k, g.stride = stride, g.pad = 0;
  g.d = (g.od - 1) * stride + k;
  g.h = (g.oh - 1) * stride + k;
  g.w = (g.ow - 1) * stride + k;

  Tensor y({cout, g.d, g.h, g.w});
  const int chunk = detail::chunk_slices(g);
  std::vector<double> col(g.rows() * static_cast<std::size_t>(chunk) * g.plane());
  ConstMatMap wm(w.value.data(), cin, static_cast<Eigen::Index>(g.rows()));
  for (int z0 = 0; z0 < g.od; z0 += chunk) {
    const int z1 = std::min(g.od, z0 + chunk);
    const auto ncols = static_cast<Eigen::Index>(static_cast<std::size_t>(z1 - z0) * g.plane());
    ConstStridedMap xm(x.data() + static_cast<std::size_t>(z0) * g.plane(), cin, ncols,
                       Eigen::OuterStride<>(static_cast<Eigen::Index>(g.small_slab())));
    MatMap cm(col.data(), static_cast<Eigen::Index>(g.rows()), ncols);
    cm.noalias() = wm.transpose() * xm;
    detail::col2im(col.data(), g, z0, z1, y.data());
  }
  for (int c = 0; c < cout; ++c) {
    double* yc = y.data() + static_cast<std::size_t>(c) * g.big_slab();
    const double bias = b.value[static_cast<std::size_t>(c)];
    for (std::size_t i = 0; i < g.big_slab(); ++i) yc[i] += bias;
  }

  return push(OpKind::kConvTranspose3d, std::move(y),
              [xn, g, cin, cout, chunk, wp = &w, bp = &b](Graph& G, const Tensor& dy) {
                const Tensor& x = G.value(xn);
                Tensor& dw = G.accum(*wp);
                Tensor& db = G.accum(*bp);
                Tensor& dx = G.grad(xn);
                std::vector<double> dcol(g.rows() * static_cast<std::size_t>(chunk) * g.plane());
                ConstMatMap wm(wp->value.data(), cin, static_cast<Eigen::Index>(g.rows()));
                MatMap dwm(dw.data(), cin, static_cast<Eigen::Index>(g.rows()));
                for (int z0 = 0; z0 < g.od; z0 += chunk) {
                  const int z1 = std::min(g.od, z0 + chunk);
                  const auto ncols =
                      static_cast<Eigen::Index>(static_cast<std::size_t>(z1 - z0) * g.plane());
                  detail::im2col(dy.data(), g, z0, z1, dcol.data());
                  ConstMatMap dcm(dcol.data(), static_cast<Eigen::Index>(g.rows()), ncols);
                  ConstStridedMap xm(x.data() + static_cast<std::size_t>(z0) * g.plane(), cin, ncols,
                                     Eigen::OuterStride<>(static_cast<Eigen::Index>(g.small_slab())));
                  StridedMap dxm(dx.data() + static_cast<std::size_t>(z0) * g.plane(), cin, ncols,
                                 Eigen::OuterStride<>(static_cast<Eigen::Index>(g.small_slab())));
                  dxm.noalias() += wm * dcm;
                  dwm.noalias() += xm * dcm.transpose();
                }
                for (int c = 0; c < cout; ++c) {
                  const double* dyc = dy.data() + static_cast<std::size_t>(c) * g.big_slab();
                  double s = 0.0;
                  for (std::size_t i = 0; i < g.big_slab(); ++i) s += dyc[i];
                  db[static_cast<std::size_t>(c)] += s;
                }
              });
}

Graph::Node Graph::add(Node a, Node b) {
  const Tensor& va = value(a);
  const Tensor& vb = value(b);
  require(va.same_shape(vb), "add: shape mismatch " + Tensor::shape_string(va.shape()) + " vs " +
                                 Tensor::shape_string(vb.shape()));
  Tensor y = va;
  y += vb;
  return push(OpKind::kAdd, std::move(y), [a, b](Graph& G, const Tensor& dy) {
    G.grad(a) += dy;
    G.grad(b) += dy;
  });
}

Graph::Node Graph::relu(Node xn) {
  Tensor y = value(xn);
  for (auto& v : y.values()) v = v > 0.0 ? v : 0.0;
  return push(OpKind::kRelu, std::move(y), [xn](Graph& G, const Tensor& dy) {
    const Tensor& x = G.value(xn);
    Tensor& dx = G.grad(xn);
    for (std::size_t i = 0; i < dy.size(); ++i) {
      if (x[i] > 0.0) dx[i] += dy[i];
    }
  });
}

Graph::Node Graph::instance_norm(Node xn, const Parameter& gamma, const Parameter& beta, double eps) {
  const Tensor& x = value(xn);
  require_rank(x, 4, "instance_norm input");
  const int channels = x.dim(0);
  require(gamma.value.size() == static_cast<std::size_t>(channels) &&
              beta.value.size() == static_cast<std::size_t>(channels),
          "instance_norm '" + gamma.name + "' channel mismatch");
  const std::size_t n = x.spatial();
  auto xhat = std::make_shared<Tensor>(x.shape());
  auto inv_std = std::make_shared<std::vector<double>>(static_cast<std::size_t>(channels));
  Tensor y(x.shape());
  for (int c = 0; c < channels; ++c) {
    const double* xc = x.data() + static_cast<std::size_t>(c) * n;
    double mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) mean += xc[i];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t i = 0; i < n; ++i) var += (xc[i] - mean) * (xc[i] - mean);
    var /= static_cast<double>(n);
    const double inv = 1.0 / std::sqrt(var + eps);
    (*inv_std)[static_cast<std::size_t>(c)] = inv;
    double* hc = xhat->data() + static_cast<std::size_t>(c) * n;
    double* yc = y.data() + static_cast<std::size_t>(c) * n;
    const double g = gamma.value[static_cast<std::size_t>(c)];
    const double bb = beta.value[static_cast<std::size_t>(c)];
    for (std::size_t i = 0; i < n; ++i) {
      hc[i] = (xc[i] - mean) * inv;
      yc[i] = g * hc[i] + bb;
    }
  }
  return push(OpKind::kInstanceNorm, std::move(y),
              [xn, xhat, inv_std, channels, n, gp = &gamma, bp = &beta](Graph& G, const Tensor& dy) {
                Tensor& dx = G.grad(xn);
                Tensor& dg = G.accum(*gp);
                Tensor& db = G.accum(*bp);
                const double inv_n = 1.0 / static_cast<double>(n);
                for (int c = 0; c < channels; ++c) {
                  const std::size_t off = static_cast<std::size_t>(c) * n;
                  const double* dyc = dy.data() + off;
                  const double* hc = xhat->data() + off;
                  const double g = gp->value[static_cast<std::size_t>(c)];
                  double sum_dy = 0.0, sum_dy_h = 0.0;
                  for (std::size_t i = 0; i < n; ++i) {
                    sum_dy += dyc[i];
                    sum_dy_h += dyc[i] * hc[i];
                  }
                  dg[static_cast<std::size_t>(c)] += sum_dy_h;
                  db[static_cast<std::size_t>(c)] += sum_dy;
                  const double scale = g * (*inv_std)[static_cast<std::size_t>(c)];
                  double* dxc = dx.data() + off;
                  for (std::size_t i = 0; i < n; ++i) {
                    dxc[i] += scale * (dyc[i] - sum_dy * inv_n - hc[i] * sum_dy_h * inv_n);
                  }
                }
              });
}

Graph::Node Graph::group_softmax(Node xn, int group) {
  const Tensor& x = value(xn);
  require_rank(x, 4, "group_softmax input");
  require(group >= 1 && x.dim(0) % group == 0, "group_softmax: channels not divisible by group");
  const int groups = x.dim(0) / group;
  const std::size_t n = x.spatial();
  Tensor y(x.shape());
  for (int g = 0; g < groups; ++g) {
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t base = static_cast<std::size_t>(g) * group * n + i;
      double mx = x[base];
      for (int c = 1; c < group; ++c) mx = std::max(mx, x[base + static_cast<std::size_t>(c) * n]);
      double z = 0.0;
      for (int c = 0; c < group; ++c) {
        const double e = std::exp(x[base + static_cast<std::size_t>(c) * n] - mx);
        y[base + static_cast<std::size_t>(c) * n] = e;
        z += e;
      }
      for (int c = 0; c < group; ++c) y[base + static_cast<std::size_t>(c) * n] /= z;
    }
  }
  const Node self = static_cast<Node>(nodes_.size());
  return push(OpKind::kGroupSoftmax, std::move(y), [xn, self, group, groups, n](Graph& G, const Tensor& dy) {
    const Tensor& p = G.value(self);
    Tensor& dx = G.grad(xn);
    for (int g = 0; g < groups; ++g) {
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t base = static_cast<std::size_t>(g) * group * n + i;
        double dot = 0.0;
        for (int c = 0; c < group; ++c) {
          const std::size_t idx = base + static_cast<std::size_t>(c) * n;
          dot += dy[idx] * p[idx];
        }
        for (int c = 0; c < group; ++c) {
          const std::size_t idx = base + static_cast<std::size_t>(c) * n;
          dx[idx] += p[idx] * (dy[idx] - dot);
        }
      }
    }
  });
}

Graph::Node Graph::sigmoid(Node xn) {
  Tensor y = value(xn);
  for (auto& v : y.values()) v = 1.0 / (1.0 + std::exp(-v));
  const Node self = static_cast<Node>(nodes_.size());
  return push(OpKind::kSigmoid, std::move(y), [xn, self](Graph& G, const Tensor& dy) {
    const Tensor& s = G.value(self);
    Tensor& dx = G.grad(xn);
    for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i] * s[i] * (1.0 - s[i]);
  });
}

Graph::Node Graph::roi_align_concat(Node f1, const Vec3& stride1, Node f2, const Vec3& stride2,
                                    const BBox3D& box, int s) {
  auto aligned = align_concat({value(f1), stride1}, {value(f2), stride2}, box, s);
  return push(OpKind::kRoiAlign, std::move(aligned.data),
              [f1, f2, stride1, stride2, box, s](Graph& G, const Tensor& dy) {
                auto [g1, g2] = align_concat_backward(G.value(f1).shape(), stride1, G.value(f2).shape(),
                                                      stride2, box, s, dy);
                G.grad(f1) += g1;
                G.grad(f2) += g2;
              });
}

}  // namespace voxelinst
