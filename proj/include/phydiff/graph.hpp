#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "phydiff/params.hpp"
#include "phydiff/tensor.hpp"

namespace phydiff {

using NodeId = std::size_t;

enum class OpKind {
  Input,
  Parameter,
  Conv2d,
  Dense,
  LayerNorm,
  Relu,
  ConcatChannels,
  SliceChannels,
  Upsample2x,
  PadSpatial,
  CropSpatial,
  BroadcastSpatial,
  Reshape,
  Mul,
  WeightedSum,
  MseLoss,
};

/// Tape of operation records. Nodes are appended in evaluation order, so the
/// node list is always a valid topological order and backward() can simply
/// walk it in reverse. A Graph is single-threaded; build one per sample.
class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, NodeId)>;

  NodeId input(Tensor value, bool requires_grad = false);
  // Leaf bound to a parameter; gradients accumulate straight into p.grad.
  NodeId parameter(Parameter& p);
  // Read-only leaf (inference); no gradient is tracked.
  NodeId parameter(const Parameter& p);

  [[nodiscard]] const Tensor& value(NodeId id) const;
  [[nodiscard]] const Tensor& grad(NodeId id) const;
  [[nodiscard]] OpKind kind(NodeId id) const { return nodes_.at(id).kind; }
  [[nodiscard]] const std::vector<NodeId>& inputs(NodeId id) const { return nodes_.at(id).inputs; }
  [[nodiscard]] bool needs_grad(NodeId id) const { return nodes_.at(id).needs_grad; }
  [[nodiscard]] std::size_t size() const noexcept { return nodes_.size(); }

  // Reverse pass from a scalar node. `seed` scales the incoming gradient
  // (1/B when summing per-sample graphs into a batch mean).
  void backward(NodeId loss, double seed = 1.0);

  // Used by op implementations.
  NodeId record(OpKind kind, std::vector<NodeId> inputs, Tensor value, BackwardFn fn);
  // Gradient buffer of a node, allocated on first use; nullptr when the node
  // does not need a gradient.
  Tensor* grad_buffer(NodeId id);

 private:
  struct Node {
    OpKind kind;
    std::vector<NodeId> inputs;
    Tensor value;
    Tensor grad;
    const Tensor* external_value = nullptr;
    Tensor* external_grad = nullptr;
    bool needs_grad = false;
    BackwardFn backward;
  };
  std::vector<Node> nodes_;
};

// Layer operations. All spatial tensors are H x W x C.

// kernels kh x kw x C x Q, bias Q. Zero "same" padding; stride 1 keeps H x W,
// stride 2 produces ceil(H/2) x ceil(W/2).
NodeId conv2d(Graph& g, NodeId input, NodeId kernels, NodeId bias, std::size_t stride = 1);
// input n, weights m x n, bias m.
NodeId dense(Graph& g, NodeId input, NodeId weights, NodeId bias);
// Normalizes the channel vector at each spatial position.
NodeId layer_norm(Graph& g, NodeId input, NodeId gain, NodeId shift, double eps = 1e-5);
NodeId relu(Graph& g, NodeId input);
NodeId concat_channels(Graph& g, std::span<const NodeId> parts);
NodeId slice_channels(Graph& g, NodeId input, std::size_t offset, std::size_t count);
NodeId upsample_nearest2x(Graph& g, NodeId input);
// Zero-pads at the bottom/right up to out_h x out_w.
NodeId pad_spatial(Graph& g, NodeId input, std::size_t out_h, std::size_t out_w);
// Keeps the top-left out_h x out_w block.
NodeId crop_spatial(Graph& g, NodeId input, std::size_t out_h, std::size_t out_w);
// Vector of length Q repeated at every position of an h x w grid.
NodeId broadcast_spatial(Graph& g, NodeId vec, std::size_t h, std::size_t w);
// Same data, new extents (element count must match).
NodeId reshape(Graph& g, NodeId input, Shape shape);
NodeId mul(Graph& g, NodeId a, NodeId b);
// Scalar sum(weights * input).
NodeId weighted_sum(Graph& g, NodeId input, const Tensor& weights);
// Scalar mean((pred - target)^2) over all elements.
NodeId mse_loss(Graph& g, NodeId pred, const Tensor& target);

// Channel offsets at which each part starts inside a concatenation.
std::vector<std::size_t> concat_offsets(std::span<const Tensor> parts);

}  // namespace phydiff
