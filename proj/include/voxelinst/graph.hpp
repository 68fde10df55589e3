#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "voxelinst/geometry.hpp"
#include "voxelinst/tensor.hpp"

namespace voxelinst {

struct Parameter {
  std::string name;
  Tensor value;
};

enum class OpKind {
  kInput,
  kConv3d,
  kConvTranspose3d,
  kAdd,
  kRelu,
  kInstanceNorm,
  kGroupSoftmax,
  kSigmoid,
  kRoiAlign,
};

const char* op_name(OpKind kind);

// Reverse-mode tape. Nodes are appended in topological order, so the tape is
// acyclic by construction and backward() walks it in reverse.
//
// Parameter gradients are accumulated inside the graph (see param_grad), which
// keeps Parameters read-only and lets several graphs share one model.
class Graph {
 public:
  using Node = int;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  // Inputs only receive gradients when requires_grad is set; convolutions skip
  // the input-gradient GEMM otherwise.
  Node input(Tensor value, bool requires_grad = false);

  // x: (Cin, D, H, W); w: (Cout, Cin, k, k, k); b: (Cout).
  Node conv3d(Node x, const Parameter& w, const Parameter& b, int stride, int pad);
  // x: (Cin, D, H, W); w: (Cin, Cout, k, k, k); output side (D - 1) * stride + k.
  Node conv_transpose3d(Node x, const Parameter& w, const Parameter& b, int stride);
  Node add(Node a, Node b);
  Node relu(Node x);
  // Per-channel normalization over the spatial extent, then affine (gamma, beta).
  Node instance_norm(Node x, const Parameter& gamma, const Parameter& beta, double eps = 1e-5);
  // Softmax over consecutive channel groups of size `group` at every voxel.
  Node group_softmax(Node x, int group);
  Node sigmoid(Node x);
  // Aligns f1 and f2 (given with their strides) at a stack-coordinate box and
  // concatenates channels; output (p1 + p2, s, s, s).
  Node roi_align_concat(Node f1, const Vec3& stride1, Node f2, const Vec3& stride2,
                        const BBox3D& box, int s);

  const Tensor& value(Node n) const { return nodes_.at(static_cast<std::size_t>(n)).value; }
  OpKind kind(Node n) const { return nodes_.at(static_cast<std::size_t>(n)).kind; }
  std::size_t size() const { return nodes_.size(); }

  // Gradient buffer of a node, zero-initialised on first access. Seed loss
  // gradients here before calling backward().
  Tensor& grad(Node n);
  bool has_grad(Node n) const { return !nodes_.at(static_cast<std::size_t>(n)).grad.empty(); }

  void backward();

  // Accumulated gradient for a parameter used in this graph; zeros otherwise.
  Tensor param_grad(const Parameter& p) const;
  const std::map<const Parameter*, Tensor>& param_grads() const { return param_grads_; }

 private:
  struct NodeData {
    OpKind kind;
    Tensor value;
    Tensor grad;
    std::function<void(Graph&, const Tensor&)> backward;
    bool requires_grad = true;
  };

  Node push(OpKind kind, Tensor value, std::function<void(Graph&, const Tensor&)> backward);
  Tensor& accum(const Parameter& p);

  std::vector<NodeData> nodes_;
  std::map<const Parameter*, Tensor> param_grads_;
};

}  // namespace voxelinst
