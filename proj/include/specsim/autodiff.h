#ifndef SPECSIM_AUTODIFF_H_
#define SPECSIM_AUTODIFF_H_

#include <cstddef>
#include <vector>

#include "specsim/tensor.h"

namespace specsim {

// Handle to a node on a Tape.
struct Var {
  std::size_t id = 0;
};

enum class OpKind {
  kLeaf,
  kAdd,
  kMultiply,
  kScale,
  kMatmul,
  kConv2d,
  kRelu,
  kMaxPool2d,
  kFlatten,
  kAffine,
  kBilinear,
  kSoftmaxCrossEntropy,
};

const char* op_name(OpKind op);

// Reverse-mode tape. Nodes are appended in evaluation order, so every node's
// inputs precede it and a single reverse sweep is a valid topological
// traversal. A tape is rebuilt for every forward pass and is not thread-safe;
// use one tape per thread.
//
// Shape conventions: images and feature maps are {C, H, W}; conv kernels are
// {O, C, k, k} with odd k; affine weights are {out, in}.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Owned leaf.
  Var leaf(Tensor value, bool requires_grad = true);
  // Leaf that references external storage; `value` must outlive the tape.
  Var borrowed_leaf(const Tensor& value, bool requires_grad = true);

  Var add(Var a, Var b);
  Var multiply(Var a, Var b);
  Var scale(Var a, double factor);
  Var matmul(Var a, Var b);
  // Stride 1, zero "same" padding.
  Var conv2d(Var input, Var kernel, Var bias);
  Var relu(Var a);
  // 2x2 window, stride 2; odd trailing rows/cols are dropped.
  Var max_pool2d(Var a);
  Var flatten(Var a);
  Var affine(Var x, Var weight, Var bias);
  // Per channel: left * X * right^T with constant matrices; left is {H', H}
  // and right is {W', W}.
  Var bilinear(Var x, const Tensor& left, const Tensor& right);
  // Scalar cross-entropy of softmax(logits) against `label`.
  Var softmax_cross_entropy(Var logits, std::size_t label);

  // Seeds d(out)/d(out) = 1 on a single-element node and sweeps in reverse.
  void backward(Var out);

  const Tensor& value(Var v) const;
  // Gradient accumulated by the last backward(); zeros if none reached v.
  Tensor grad(Var v) const;
  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }
  OpKind op(Var v) const { return nodes_.at(v.id).op; }
  const std::vector<std::size_t>& inputs(Var v) const {
    return nodes_.at(v.id).inputs;
  }
  std::size_t size() const { return nodes_.size(); }

  // Order in which the last backward() visited nodes (node ids).
  const std::vector<std::size_t>& last_sweep() const { return sweep_; }

 private:
  struct Node {
    OpKind op = OpKind::kLeaf;
    std::vector<std::size_t> inputs;
    Tensor value;
    const Tensor* borrowed = nullptr;
    Tensor grad;
    bool requires_grad = false;
    bool has_grad = false;
    // Op-specific saved state.
    std::vector<std::size_t> indices;  // max-pool argmax positions
    Tensor saved;                      // softmax probabilities
    double saved_scalar = 0.0;         // softmax off-label mass, 1 - p[label]
    Tensor left, right;                // bilinear matrices
    double factor = 1.0;
    std::size_t label = 0;
  };

  Var push(Node node);
  const Node& node(Var v) const;
  Tensor& grad_buffer(std::size_t id);
  void backprop(std::size_t id);

  std::vector<Node> nodes_;
  std::vector<std::size_t> sweep_;
};

}  // namespace specsim

#endif  // SPECSIM_AUTODIFF_H_
