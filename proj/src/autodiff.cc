#include "specsim/autodiff.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace specsim {
namespace {

[[noreturn]] void shape_error(const char* op, const std::string& detail) {
  throw std::invalid_argument(std::string(op) + ": " + detail);
}

void require_same(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    shape_error(op, "shape mismatch " + shape_string(a.shape()) + " vs " +
                        shape_string(b.shape()));
  }
}

// out(m x n) = a(m x k) * b(k x n), accumulated.
void gemm_acc(const double* a, const double* b, double* out, std::size_t m,
              std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* o = out + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[i * k + p];
      if (av == 0.0) continue;
      const double* br = b + p * n;
      for (std::size_t j = 0; j < n; ++j) o[j] += av * br[j];
    }
  }
}

struct ConvRange {
  std::size_t lo, hi;  // output coordinates with an in-bounds source
};

ConvRange conv_range(std::ptrdiff_t offset, std::size_t extent) {
  const auto n = static_cast<std::ptrdiff_t>(extent);
  const std::ptrdiff_t lo = std::max<std::ptrdiff_t>(0, -offset);
  const std::ptrdiff_t hi = std::min<std::ptrdiff_t>(n, n - offset);
  if (hi <= lo) return {0, 0};
  return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi)};
}

}  // namespace

const char* op_name(OpKind op) {
  switch (op) {
    case OpKind::kLeaf: return "leaf";
    case OpKind::kAdd: return "add";
    case OpKind::kMultiply: return "multiply";
    case OpKind::kScale: return "scale";
    case OpKind::kMatmul: return "matmul";
    case OpKind::kConv2d: return "conv2d";
    case OpKind::kRelu: return "relu";
    case OpKind::kMaxPool2d: return "max_pool2d";
    case OpKind::kFlatten: return "flatten";
    case OpKind::kAffine: return "affine";
    case OpKind::kBilinear: return "bilinear";
    case OpKind::kSoftmaxCrossEntropy: return "softmax_cross_entropy";
  }
  return "unknown";
}

Var Tape::push(Node node) {
  if (node.op != OpKind::kLeaf) {
    node.requires_grad = false;
    for (std::size_t in : node.inputs) {
      node.requires_grad = node.requires_grad || nodes_[in].requires_grad;
    }
  }
  nodes_.push_back(std::move(node));
  return Var{nodes_.size() - 1};
}

const Tape::Node& Tape::node(Var v) const {
  if (v.id >= nodes_.size()) {
    throw std::out_of_range("tape: unknown variable " + std::to_string(v.id));
  }
  return nodes_[v.id];
}

const Tensor& Tape::value(Var v) const {
  const Node& n = node(v);
  return n.borrowed ? *n.borrowed : n.value;
}

Tensor Tape::grad(Var v) const {
  const Node& n = node(v);
  if (n.has_grad) return n.grad;
  return Tensor(value(v).shape());
}

Tensor& Tape::grad_buffer(std::size_t id) {
  Node& n = nodes_[id];
  if (!n.has_grad) {
    n.grad = Tensor(value(Var{id}).shape());
    n.has_grad = true;
  }
  return n.grad;
}

Var Tape::leaf(Tensor value, bool requires_grad) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  return push(std::move(n));
}

Var Tape::borrowed_leaf(const Tensor& value, bool requires_grad) {
  Node n;
  n.borrowed = &value;
  n.requires_grad = requires_grad;
  return push(std::move(n));
}

Var Tape::add(Var a, Var b) {
  const Tensor& x = value(a);
  const Tensor& y = value(b);
  require_same("add", x, y);
  Node n;
  n.op = OpKind::kAdd;
  n.inputs = {a.id, b.id};
  n.value = x;
  for (std::size_t i = 0; i < y.size(); ++i) n.value[i] += y[i];
  return push(std::move(n));
}

Var Tape::multiply(Var a, Var b) {
  const Tensor& x = value(a);
  const Tensor& y = value(b);
  require_same("multiply", x, y);
  Node n;
  n.op = OpKind::kMultiply;
  n.inputs = {a.id, b.id};
  n.value = x;
  for (std::size_t i = 0; i < y.size(); ++i) n.value[i] *= y[i];
  return push(std::move(n));
}

Var Tape::scale(Var a, double factor) {
  Node n;
  n.op = OpKind::kScale;
  n.inputs = {a.id};
  n.factor = factor;
  n.value = value(a);
  for (double& v : n.value.values()) v *= factor;
  return push(std::move(n));
}

Var Tape::matmul(Var a, Var b) {
  const Tensor& x = value(a);
  const Tensor& y = value(b);
  if (x.rank() != 2 || y.rank() != 2 || x.dim(1) != y.dim(0)) {
    shape_error("matmul", "cannot multiply " + shape_string(x.shape()) +
                              " by " + shape_string(y.shape()));
  }
  Node n;
  n.op = OpKind::kMatmul;
  n.inputs = {a.id, b.id};
  n.value = Tensor({x.dim(0), y.dim(1)});
  gemm_acc(x.data(), y.data(), n.value.data(), x.dim(0), x.dim(1), y.dim(1));
  return push(std::move(n));
}

Var Tape::conv2d(Var input, Var kernel, Var bias) {
  const Tensor& x = value(input);
  const Tensor& w = value(kernel);
  const Tensor& b = value(bias);
  if (x.rank() != 3 || w.rank() != 4 || b.rank() != 1 || w.dim(1) != x.dim(0) ||
      w.dim(2) != w.dim(3) || w.dim(2) % 2 == 0 || b.dim(0) != w.dim(0)) {
    shape_error("conv2d", "input " + shape_string(x.shape()) + ", kernel " +
                              shape_string(w.shape()) + ", bias " +
                              shape_string(b.shape()));
  }
  const std::size_t in_c = x.dim(0), h = x.dim(1), wd = x.dim(2);
  const std::size_t out_c = w.dim(0), k = w.dim(2);
  const auto pad = static_cast<std::ptrdiff_t>(k / 2);
  Node n;
  n.op = OpKind::kConv2d;
  n.inputs = {input.id, kernel.id, bias.id};
  n.value = Tensor({out_c, h, wd});
  for (std::size_t o = 0; o < out_c; ++o) {
    double* out = n.value.data() + o * h * wd;
    std::fill(out, out + h * wd, b[o]);
    for (std::size_t c = 0; c < in_c; ++c) {
      const double* in = x.data() + c * h * wd;
      for (std::size_t ky = 0; ky < k; ++ky) {
        const std::ptrdiff_t dy = static_cast<std::ptrdiff_t>(ky) - pad;
        const ConvRange ry = conv_range(dy, h);
        for (std::size_t kx = 0; kx < k; ++kx) {
          const std::ptrdiff_t dx = static_cast<std::ptrdiff_t>(kx) - pad;
          const ConvRange rx = conv_range(dx, wd);
          const double wv = w[((o * in_c + c) * k + ky) * k + kx];
          for (std::size_t y = ry.lo; y < ry.hi; ++y) {
            double* orow = out + y * wd;
            const double* irow = in + (y + dy) * wd + dx;
            for (std::size_t xx = rx.lo; xx < rx.hi; ++xx) {
              orow[xx] += wv * irow[xx];
            }
          }
        }
      }
    }
  }
  return push(std::move(n));
}

Var Tape::relu(Var a) {
  Node n;
  n.op = OpKind::kRelu;
  n.inputs = {a.id};
  n.value = value(a);
  for (double& v : n.value.values()) v = v > 0.0 ? v : 0.0;
  return push(std::move(n));
}

Var Tape::max_pool2d(Var a) {
  const Tensor& x = value(a);
  if (x.rank() != 3 || x.dim(1) < 2 || x.dim(2) < 2) {
    shape_error("max_pool2d", "expected {C, H>=2, W>=2}, got " +
                                  shape_string(x.shape()));
  }
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  const std::size_t oh = h / 2, ow = w / 2;
  Node n;
  n.op = OpKind::kMaxPool2d;
  n.inputs = {a.id};
  n.value = Tensor({c, oh, ow});
  n.indices.resize(c * oh * ow);
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t y = 0; y < oh; ++y) {
      for (std::size_t xx = 0; xx < ow; ++xx) {
        std::size_t best = (ch * h + 2 * y) * w + 2 * xx;
        for (std::size_t dy = 0; dy < 2; ++dy) {
          for (std::size_t dx = 0; dx < 2; ++dx) {
            const std::size_t idx = (ch * h + 2 * y + dy) * w + 2 * xx + dx;
            if (x[idx] > x[best]) best = idx;
          }
        }
        const std::size_t o = (ch * oh + y) * ow + xx;
        n.value[o] = x[best];
        n.indices[o] = best;
      }
    }
  }
  return push(std::move(n));
}

Var Tape::flatten(Var a) {
  Node n;
  n.op = OpKind::kFlatten;
  n.inputs = {a.id};
  const Tensor& x = value(a);
  n.value = x.reshaped({x.size()});
  return push(std::move(n));
}

Var Tape::affine(Var x, Var weight, Var bias) {
  const Tensor& v = value(x);
  const Tensor& w = value(weight);
  const Tensor& b = value(bias);
  if (v.rank() != 1 || w.rank() != 2 || b.rank() != 1 || w.dim(1) != v.dim(0) ||
      b.dim(0) != w.dim(0)) {
    shape_error("affine", "input " + shape_string(v.shape()) + ", weight " +
                              shape_string(w.shape()) + ", bias " +
                              shape_string(b.shape()));
  }
  const std::size_t out = w.dim(0), in = w.dim(1);
  Node n;
  n.op = OpKind::kAffine;
  n.inputs = {x.id, weight.id, bias.id};
  n.value = b;
  for (std::size_t o = 0; o < out; ++o) {
    const double* row = w.data() + o * in;
    double acc = 0.0;
    for (std::size_t i = 0; i < in; ++i) acc += row[i] * v[i];
    n.value[o] += acc;
  }
  return push(std::move(n));
}

Var Tape::bilinear(Var x, const Tensor& left, const Tensor& right) {
  const Tensor& v = value(x);
  if (v.rank() != 3 || left.rank() != 2 || right.rank() != 2 ||
      left.dim(1) != v.dim(1) || right.dim(1) != v.dim(2)) {
    shape_error("bilinear", "input " + shape_string(v.shape()) + ", left " +
                                shape_string(left.shape()) + ", right " +
                                shape_string(right.shape()));
  }
  const std::size_t c = v.dim(0), h = v.dim(1), w = v.dim(2);
  const std::size_t oh = left.dim(0), ow = right.dim(0);
  const Tensor right_t = [&] {
    Tensor t({w, ow});
    for (std::size_t i = 0; i < ow; ++i)
      for (std::size_t j = 0; j < w; ++j) t[j * ow + i] = right[i * w + j];
    return t;
  }();
  Node n;
  n.op = OpKind::kBilinear;
  n.inputs = {x.id};
  n.left = left;
  n.right = right;
  n.value = Tensor({c, oh, ow});
  std::vector<double> tmp(h * ow);
  for (std::size_t ch = 0; ch < c; ++ch) {
    std::fill(tmp.begin(), tmp.end(), 0.0);
    gemm_acc(v.data() + ch * h * w, right_t.data(), tmp.data(), h, w, ow);
    gemm_acc(left.data(), tmp.data(), n.value.data() + ch * oh * ow, oh, h, ow);
  }
  return push(std::move(n));
}

Var Tape::softmax_cross_entropy(Var logits, std::size_t label) {
  const Tensor& z = value(logits);
  if (z.rank() != 1 || z.size() == 0) {
    shape_error("softmax_cross_entropy",
                "logits must be a non-empty vector, got " +
                    shape_string(z.shape()));
  }
  if (label >= z.size()) {
    throw std::invalid_argument("softmax_cross_entropy: label " +
                                std::to_string(label) + " outside [0, " +
                                std::to_string(z.size()) + ")");
  }
  const double m = *std::max_element(z.values().begin(), z.values().end());
  double sum = 0.0;
  Tensor p(z.shape());
  for (std::size_t i = 0; i < z.size(); ++i) {
    p[i] = std::exp(z[i] - m);
    sum += p[i];
  }
  // Off-label mass, summed separately: for a confident prediction p[label] rounds
  // to 1, while 1 - p[label] and log(p[label]) must stay accurate.
  double others = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) others += i == label ? 0.0 : p[i];
  for (double& v : p.values()) v /= sum;
  Node n;
  n.op = OpKind::kSoftmaxCrossEntropy;
  n.inputs = {logits.id};
  n.label = label;
  n.saved = std::move(p);
  n.saved_scalar = others / sum;
  n.value = Tensor({1}, z[label] == m ? std::log1p(others)
                                      : std::log(sum) - (z[label] - m));
  return push(std::move(n));
}

void Tape::backward(Var out) {
  const Tensor& v = value(out);
  if (v.size() != 1) {
    shape_error("backward", "output must be a single element, got " +
                                shape_string(v.shape()));
  }
  for (Node& n : nodes_) {
    n.has_grad = false;
    n.grad = Tensor();
  }
  sweep_.clear();
  grad_buffer(out.id)[0] = 1.0;
  for (std::size_t id = out.id + 1; id-- > 0;) {
    if (!nodes_[id].has_grad || !nodes_[id].requires_grad) continue;
    sweep_.push_back(id);
    backprop(id);
  }
}

void Tape::backprop(std::size_t id) {
  // Copy what we need: grad_buffer() may grow other nodes' grads but never
  // reallocates nodes_, so references into nodes_[id] stay valid.
  Node& n = nodes_[id];
  const Tensor& g = n.grad;
  auto wants = [&](std::size_t input) {
    return nodes_[n.inputs[input]].requires_grad;
  };
  auto in_value = [&](std::size_t input) -> const Tensor& {
    return value(Var{n.inputs[input]});
  };

  switch (n.op) {
    case OpKind::kLeaf:
      break;
    case OpKind::kAdd:
      for (std::size_t i = 0; i < 2; ++i) {
        if (!wants(i)) continue;
        Tensor& ga = grad_buffer(n.inputs[i]);
        for (std::size_t j = 0; j < g.size(); ++j) ga[j] += g[j];
      }
      break;
    case OpKind::kMultiply:
      for (std::size_t i = 0; i < 2; ++i) {
        if (!wants(i)) continue;
        const Tensor& other = in_value(1 - i);
        Tensor& ga = grad_buffer(n.inputs[i]);
        for (std::size_t j = 0; j < g.size(); ++j) ga[j] += g[j] * other[j];
      }
      break;
    case OpKind::kScale:
      if (wants(0)) {
        Tensor& ga = grad_buffer(n.inputs[0]);
        for (std::size_t j = 0; j < g.size(); ++j) ga[j] += n.factor * g[j];
      }
      break;
    case OpKind::kMatmul: {
      const Tensor& a = in_value(0);
      const Tensor& b = in_value(1);
      const std::size_t m = a.dim(0), k = a.dim(1), cols = b.dim(1);
      if (wants(0)) {  // dA = G * B^T
        Tensor& ga = grad_buffer(n.inputs[0]);
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t p = 0; p < k; ++p) {
            double acc = 0.0;
            for (std::size_t j = 0; j < cols; ++j)
              acc += g[i * cols + j] * b[p * cols + j];
            ga[i * k + p] += acc;
          }
      }
      if (wants(1)) {  // dB = A^T * G
        Tensor& gb = grad_buffer(n.inputs[1]);
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t p = 0; p < k; ++p) {
            const double av = a[i * k + p];
            for (std::size_t j = 0; j < cols; ++j)
              gb[p * cols + j] += av * g[i * cols + j];
          }
      }
      break;
    }
    case OpKind::kConv2d: {
      const Tensor& x = in_value(0);
      const Tensor& w = in_value(1);
      const std::size_t in_c = x.dim(0), h = x.dim(1), wd = x.dim(2);
      const std::size_t out_c = w.dim(0), k = w.dim(2);
      const auto pad = static_cast<std::ptrdiff_t>(k / 2);
      const bool want_x = wants(0), want_w = wants(1), want_b = wants(2);
      Tensor* gx = want_x ? &grad_buffer(n.inputs[0]) : nullptr;
      Tensor* gw = want_w ? &grad_buffer(n.inputs[1]) : nullptr;
      if (want_b) {
        Tensor& gb = grad_buffer(n.inputs[2]);
        for (std::size_t o = 0; o < out_c; ++o) {
          const double* go = g.data() + o * h * wd;
          double acc = 0.0;
          for (std::size_t i = 0; i < h * wd; ++i) acc += go[i];
          gb[o] += acc;
        }
      }
      if (!want_x && !want_w) break;
      for (std::size_t o = 0; o < out_c; ++o) {
        const double* go = g.data() + o * h * wd;
        for (std::size_t c = 0; c < in_c; ++c) {
          const double* in = x.data() + c * h * wd;
          double* gin = want_x ? gx->data() + c * h * wd : nullptr;
          for (std::size_t ky = 0; ky < k; ++ky) {
            const std::ptrdiff_t dy = static_cast<std::ptrdiff_t>(ky) - pad;
            const ConvRange ry = conv_range(dy, h);
            for (std::size_t kx = 0; kx < k; ++kx) {
              const std::ptrdiff_t dx = static_cast<std::ptrdiff_t>(kx) - pad;
              const ConvRange rx = conv_range(dx, wd);
              const std::size_t widx = ((o * in_c + c) * k + ky) * k + kx;
              const double wv = w[widx];
              double acc = 0.0;
              for (std::size_t y = ry.lo; y < ry.hi; ++y) {
                const double* grow = go + y * wd;
                const std::size_t src = (y + dy) * wd + dx;
                if (want_x) {
                  double* girow = gin + src;
                  for (std::size_t xx = rx.lo; xx < rx.hi; ++xx)
                    girow[xx] += wv * grow[xx];
                }
                if (want_w) {
                  const double* irow = in + src;
                  for (std::size_t xx = rx.lo; xx < rx.hi; ++xx)
                    acc += grow[xx] * irow[xx];
                }
              }
              if (want_w) (*gw)[widx] += acc;
            }
          }
        }
      }
      break;
    }
    case OpKind::kRelu:
      if (wants(0)) {
        const Tensor& x = in_value(0);
        Tensor& ga = grad_buffer(n.inputs[0]);
        for (std::size_t j = 0; j < g.size(); ++j)
          if (x[j] > 0.0) ga[j] += g[j];
      }
      break;
    case OpKind::kMaxPool2d:
      if (wants(0)) {
        Tensor& ga = grad_buffer(n.inputs[0]);
        for (std::size_t j = 0; j < g.size(); ++j) ga[n.indices[j]] += g[j];
      }
      break;
    case OpKind::kFlatten:
      if (wants(0)) {
        Tensor& ga = grad_buffer(n.inputs[0]);
        for (std::size_t j = 0; j < g.size(); ++j) ga[j] += g[j];
      }
      break;
    case OpKind::kAffine: {
      const Tensor& v = in_value(0);
      const Tensor& w = in_value(1);
      const std::size_t out = w.dim(0), in = w.dim(1);
      if (wants(0)) {
        Tensor& gv = grad_buffer(n.inputs[0]);
        for (std::size_t o = 0; o < out; ++o) {
          const double go = g[o];
          if (go == 0.0) continue;
          const double* row = w.data() + o * in;
          for (std::size_t i = 0; i < in; ++i) gv[i] += go * row[i];
        }
      }
      if (wants(1)) {
        Tensor& gw = grad_buffer(n.inputs[1]);
        for (std::size_t o = 0; o < out; ++o) {
          const double go = g[o];
          double* row = gw.data() + o * in;
          for (std::size_t i = 0; i < in; ++i) row[i] += go * v[i];
        }
      }
      if (wants(2)) {
        Tensor& gb = grad_buffer(n.inputs[2]);
        for (std::size_t o = 0; o < out; ++o) gb[o] += g[o];
      }
      break;
    }
    case OpKind::kBilinear:
      if (wants(0)) {
        // dX_c = L^T G_c R
        const Tensor& x = in_value(0);
        const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
        const std::size_t oh = n.left.dim(0), ow = n.right.dim(0);
        Tensor left_t({h, oh});
        for (std::size_t i = 0; i < oh; ++i)
          for (std::size_t j = 0; j < h; ++j) left_t[j * oh + i] = n.left[i * h + j];
        Tensor& ga = grad_buffer(n.inputs[0]);
        std::vector<double> tmp(oh * w);
        for (std::size_t ch = 0; ch < c; ++ch) {
          std::fill(tmp.begin(), tmp.end(), 0.0);
          gemm_acc(g.data() + ch * oh * ow, n.right.data(), tmp.data(), oh, ow, w);
          gemm_acc(left_t.data(), tmp.data(), ga.data() + ch * h * w, h, oh, w);
        }
      }
      break;
    case OpKind::kSoftmaxCrossEntropy:
      if (wants(0)) {
        Tensor& ga = grad_buffer(n.inputs[0]);
        const double go = g[0];
        for (std::size_t j = 0; j < ga.size(); ++j) {
          ga[j] += go * (j == n.label ? -n.saved_scalar : n.saved[j]);
        }
      }
      break;
  }
}

}  // namespace specsim
