#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "kshield/tensor.hpp"

namespace kshield {

// Reverse-mode automatic differentiation over dense float32 tensors.
//
// A Tape is a define-by-run computation graph: every op computes its output
// eagerly at registration time and records enough to run the reverse sweep.
// Node ids are indices into the tape, so creation order is already a
// topological order and backward() is a single reverse walk. One tape per
// evaluation; tapes are cheap to build and are not reused across inputs.

enum class Op : uint8_t {
  kLeaf,
  kAdd,
  kSub,
  kScale,
  kSquare,
  kRelu,
  kConv2d,
  kAvgPool,
  kLinear,
  kFlatten,
  kSoftmaxXent,
  kCwMargin,
  kSum,
};

class Tape {
 public:
  struct Node {
    Op op = Op::kLeaf;
    int in0 = -1, in1 = -1, in2 = -1;
    int p0 = 0, p1 = 0, p2 = 0, p3 = 0;  // op-specific integer params
    float f0 = 0.0f;                     // op-specific scalar param
    Tensor value;
    Tensor grad;   // allocated on demand during backward
    Tensor aux;    // softmax cache for kSoftmaxXent
    bool needs_grad = false;
  };

  int leaf(Tensor v, bool needs_grad = false) {
    Node n;
    n.op = Op::kLeaf;
    n.value = std::move(v);
    n.needs_grad = needs_grad;
    return push(std::move(n));
  }

  int constant(Tensor v) { return leaf(std::move(v), false); }

  int add(int a, int b) {
    const Tensor& x = value(a);
    const Tensor& y = value(b);
    require(x.same_shape(y), "add: shape mismatch " + shape_str(x.shape) + " vs " + shape_str(y.shape));
    Tensor out = Tensor::zeros(x.shape);
    for (size_t i = 0; i < out.numel(); ++i) out[i] = x[i] + y[i];
    return push_op(Op::kAdd, a, b, std::move(out));
  }

  int sub(int a, int b) {
    const Tensor& x = value(a);
    const Tensor& y = value(b);
    require(x.same_shape(y), "sub: shape mismatch " + shape_str(x.shape) + " vs " + shape_str(y.shape));
    Tensor out = Tensor::zeros(x.shape);
    for (size_t i = 0; i < out.numel(); ++i) out[i] = x[i] - y[i];
    return push_op(Op::kSub, a, b, std::move(out));
  }

  int scale(int a, float c) {
    const Tensor& x = value(a);
    Tensor out = Tensor::zeros(x.shape);
    for (size_t i = 0; i < out.numel(); ++i) out[i] = c * x[i];
    Node n;
    n.op = Op::kScale;
    n.in0 = a;
    n.f0 = c;
    n.value = std::move(out);
    n.needs_grad = node(a).needs_grad;
    return push(std::move(n));
  }

  int square(int a) {
    const Tensor& x = value(a);
    Tensor out = Tensor::zeros(x.shape);
    for (size_t i = 0; i < out.numel(); ++i) out[i] = x[i] * x[i];
    return push_op(Op::kSquare, a, -1, std::move(out));
  }

  int relu(int a) {
    const Tensor& x = value(a);
    Tensor out = Tensor::zeros(x.shape);
    for (size_t i = 0; i < out.numel(); ++i) out[i] = x[i] > 0.0f ? x[i] : 0.0f;
    return push_op(Op::kRelu, a, -1, std::move(out));
  }

  // Cross-correlation, NCHW or CHW input, OIHW weight, zero padding.
  int conv2d(int input, int weight, int bias, int stride, int pad) {
    const Tensor& x = value(input);
    const Tensor& w = value(weight);
    const Tensor& b = value(bias);
    require(stride >= 1, "conv2d: stride must be >= 1");
    require(pad >= 0, "conv2d: pad must be >= 0");
    require(x.rank() == 3 || x.rank() == 4,
            "conv2d: input rank must be 3 or 4, got " + shape_str(x.shape));
    require(w.rank() == 4, "conv2d: weight rank must be 4, got " + shape_str(w.shape));
    const bool batched = x.rank() == 4;
    const int n = batched ? x.shape[0] : 1;
    const int ci = batched ? x.shape[1] : x.shape[0];
    const int h = batched ? x.shape[2] : x.shape[1];
    const int iw = batched ? x.shape[3] : x.shape[2];
    const int co = w.shape[0], wci = w.shape[1], kh = w.shape[2], kw = w.shape[3];
    require(wci == ci, "conv2d: input channels " + std::to_string(ci) + " do not match weight " +
                           shape_str(w.shape));
    require(b.rank() == 1 && b.shape[0] == co,
            "conv2d: bias " + shape_str(b.shape) + " does not match " + std::to_string(co) + " filters");
    const int oh = (h + 2 * pad - kh) / stride + 1;
    const int ow = (iw + 2 * pad - kw) / stride + 1;
    require(h + 2 * pad >= kh && iw + 2 * pad >= kw,
            "conv2d: kernel " + shape_str(w.shape) + " larger than padded input " + shape_str(x.shape));

    Shape oshape = batched ? Shape{n, co, oh, ow} : Shape{co, oh, ow};
    Tensor out = Tensor::zeros(oshape);
    const float* xd = x.data.data();
    const float* wd = w.data.data();
    float* od = out.data.data();
    for (int in = 0; in < n; ++in) {
      const float* xn = xd + static_cast<size_t>(in) * ci * h * iw;
      float* on = od + static_cast<size_t>(in) * co * oh * ow;
      for (int oc = 0; oc < co; ++oc) {
        const float bval = b[static_cast<size_t>(oc)];
        for (int oy = 0; oy < oh; ++oy) {
          for (int ox = 0; ox < ow; ++ox) {
            float acc = bval;
            const int iy0 = oy * stride - pad;
            const int ix0 = ox * stride - pad;
            for (int ic = 0; ic < ci; ++ic) {
              const float* xc = xn + static_cast<size_t>(ic) * h * iw;
              const float* wc = wd + ((static_cast<size_t>(oc) * ci + ic) * kh) * kw;
              for (int ky = 0; ky < kh; ++ky) {
                const int iy = iy0 + ky;
                if (iy < 0 || iy >= h) continue;
                const float* xrow = xc + static_cast<size_t>(iy) * iw;
                const float* wrow = wc + static_cast<size_t>(ky) * kw;
                for (int kx = 0; kx < kw; ++kx) {
                  const int ix = ix0 + kx;
                  if (ix < 0 || ix >= iw) continue;
                  acc += xrow[ix] * wrow[kx];
                }
              }
            }
            on[(static_cast<size_t>(oc) * oh + oy) * ow + ox] = acc;
          }
        }
      }
    }
    Node nd;
    nd.op = Op::kConv2d;
    nd.in0 = input;
    nd.in1 = weight;
    nd.in2 = bias;
    nd.p0 = stride;
    nd.p1 = pad;
    nd.value = std::move(out);
    nd.needs_grad = node(input).needs_grad || node(weight).needs_grad || node(bias).needs_grad;
    return push(std::move(nd));
  }

  // Mean over kh x kw windows of the trailing two dims; leading dims kept.
  int avg_pool(int input, int kh, int kw, int sh, int sw) {
    const Tensor& x = value(input);
    require(kh >= 1 && kw >= 1, "avg_pool: kernel must be >= 1");
    require(sh >= 1 && sw >= 1, "avg_pool: stride must be >= 1");
    require(x.rank() >= 2, "avg_pool: input rank must be >= 2, got " + shape_str(x.shape));
    const int h = x.shape[x.rank() - 2];
    const int w = x.shape[x.rank() - 1];
    require(h >= kh && w >= kw,
            "avg_pool: kernel " + std::to_string(kh) + "x" + std::to_string(kw) +
                " exceeds spatial extents of " + shape_str(x.shape));
    const int oh = (h - kh) / sh + 1;
    const int ow = (w - kw) / sw + 1;
    int lead = 1;
    Shape oshape(x.shape);
    for (int i = 0; i + 2 < x.rank(); ++i) lead *= x.shape[i];
    oshape[x.rank() - 2] = oh;
    oshape[x.rank() - 1] = ow;
    Tensor out = Tensor::zeros(oshape);
    const float inv = 1.0f / static_cast<float>(kh * kw);
    for (int l = 0; l < lead; ++l) {
      const float* xp = x.data.data() + static_cast<size_t>(l) * h * w;
      float* op = out.data.data() + static_cast<size_t>(l) * oh * ow;
      for (int oy = 0; oy < oh; ++oy) {
        for (int ox = 0; ox < ow; ++ox) {
          float acc = 0.0f;
          for (int ky = 0; ky < kh; ++ky) {
            const float* row = xp + static_cast<size_t>(oy * sh + ky) * w + ox * sw;
            for (int kx = 0; kx < kw; ++kx) acc += row[kx];
          }
          op[static_cast<size_t>(oy) * ow + ox] = acc * inv;
        }
      }
    }
    Node n;
    n.op = Op::kAvgPool;
    n.in0 = input;
    n.p0 = kh;
    n.p1 = kw;
    n.p2 = sh;
    n.p3 = sw;
    n.value = std::move(out);
    n.needs_grad = node(input).needs_grad;
    return push(std::move(n));
  }

  // y = W x + b with x rank-1.
  int linear(int input, int weight, int bias) {
    const Tensor& x = value(input);
    const Tensor& w = value(weight);
    const Tensor& b = value(bias);
    require(x.rank() == 1, "linear: input rank must be 1, got " + shape_str(x.shape));
    require(w.rank() == 2, "linear: weight rank must be 2, got " + shape_str(w.shape));
    const int out_dim = w.shape[0], in_dim = w.shape[1];
    require(in_dim == x.shape[0],
            "linear: weight " + shape_str(w.shape) + " does not match input " + shape_str(x.shape));
    require(b.rank() == 1 && b.shape[0] == out_dim,
            "linear: bias " + shape_str(b.shape) + " does not match output dim " + std::to_string(out_dim));
    Tensor out = Tensor::zeros({out_dim});
    for (int o = 0; o < out_dim; ++o) {
      float acc = b[static_cast<size_t>(o)];
      const float* wrow = w.data.data() + static_cast<size_t>(o) * in_dim;
      for (int i = 0; i < in_dim; ++i) acc += wrow[i] * x[static_cast<size_t>(i)];
      out[static_cast<size_t>(o)] = acc;
    }
    Node n;
    n.op = Op::kLinear;
    n.in0 = input;
    n.in1 = weight;
    n.in2 = bias;
    n.value = std::move(out);
    n.needs_grad = node(input).needs_grad || node(weight).needs_grad || node(bias).needs_grad;
    return push(std::move(n));
  }

  int flatten(int input) {
    const Tensor& x = value(input);
    Tensor out({static_cast<int>(x.numel())}, x.data);
    return push_op(Op::kFlatten, input, -1, std::move(out));
  }

  // -log softmax(logits)[label], stabilized by max subtraction.
  // The softmax byproduct is cached and retrievable via softmax_of().
  int softmax_xent(int logits, int label) {
    const Tensor& z = value(logits);
    require(z.rank() == 1, "softmax_xent: logits rank must be 1, got " + shape_str(z.shape));
    const int c = z.shape[0];
    require(c >= 2, "softmax_xent: need at least 2 classes, got " + std::to_string(c));
    require(label >= 0 && label < c,
            "softmax_xent: label " + std::to_string(label) + " out of range for " + std::to_string(c) +
                " classes");
    float m = z[0];
    for (int i = 1; i < c; ++i) m = std::max(m, z[static_cast<size_t>(i)]);
    double sum = 0.0;
    Tensor soft = Tensor::zeros({c});
    for (int i = 0; i < c; ++i) sum += std::exp(static_cast<double>(z[static_cast<size_t>(i)]) - m);
    for (int i = 0; i < c; ++i) {
      soft[static_cast<size_t>(i)] =
          static_cast<float>(std::exp(static_cast<double>(z[static_cast<size_t>(i)]) - m) / sum);
    }
    float loss = static_cast<float>(std::log(sum) - (static_cast<double>(z[static_cast<size_t>(label)]) - m));
    Node n;
    n.op = Op::kSoftmaxXent;
    n.in0 = logits;
    n.p0 = label;
    n.value = Tensor::scalar(loss);
    n.aux = std::move(soft);
    n.needs_grad = node(logits).needs_grad;
    return push(std::move(n));
  }

  // max(-kappa, z[orig] - max_{k != orig} z[k]): the margin term of the
  // joint distance+accuracy attack objective. Subgradient is zero on the
  // clamped branch; the runner-up uses lowest-index tie-breaking.
  int cw_margin(int logits, int orig_class, float kappa) {
    const Tensor& z = value(logits);
    require(z.rank() == 1 && z.shape[0] >= 2, "cw_margin: logits must be rank 1 with >= 2 classes");
    const int c = z.shape[0];
    require(orig_class >= 0 && orig_class < c, "cw_margin: class out of range");
    int runner = -1;
    for (int i = 0; i < c; ++i) {
      if (i == orig_class) continue;
      if (runner < 0 || z[static_cast<size_t>(i)] > z[static_cast<size_t>(runner)]) runner = i;
    }
    const float diff = z[static_cast<size_t>(orig_class)] - z[static_cast<size_t>(runner)];
    Node n;
    n.op = Op::kCwMargin;
    n.in0 = logits;
    n.p0 = orig_class;
    n.p1 = runner;
    n.f0 = kappa;
    n.value = Tensor::scalar(std::max(-kappa, diff));
    n.needs_grad = node(logits).needs_grad;
    return push(std::move(n));
  }

  int sum(int input) {
    const Tensor& x = value(input);
    double acc = 0.0;
    for (float v : x.data) acc += v;
    return push_op(Op::kSum, input, -1, Tensor::scalar(static_cast<float>(acc)));
  }

  const Tensor& value(int id) const { return node(id).value; }
  const Tensor& softmax_of(int id) const {
    const Node& n = node(id);
    require(n.op == Op::kSoftmaxXent, "softmax_of: node is not a softmax_xent node");
    return n.aux;
  }

  // Gradient of the last backward() root w.r.t. node `id`. Zero tensor if the
  // node did not participate in the root's computation.
  Tensor grad(int id) const {
    const Node& n = node(id);
    if (n.grad.numel() == 0) return Tensor::zeros(n.value.shape);
    return n.grad;
  }

  // Reverse accumulation from a scalar root into every node that requires
  // gradients, including non-parameter leaves such as the input image.
  void backward(int root) {
    Node& r = node_mut(root);
    require(r.value.numel() == 1, "backward: root must be scalar, got " + shape_str(r.value.shape));
    for (Node& n : nodes_) n.grad = Tensor();
    r.grad = Tensor::scalar(1.0f);
    for (int id = root; id >= 0; --id) {
      Node& n = node_mut(id);
      if (n.grad.numel() == 0 || n.op == Op::kLeaf || !n.needs_grad) continue;
      dispatch_backward(n);
    }
  }

  int size() const { return static_cast<int>(nodes_.size()); }

 private:
  static void require(bool ok, const std::string& msg) {
    if (!ok) throw std::invalid_argument(msg);
  }

  const Node& node(int id) const {
    require(id >= 0 && id < size(), "invalid node id " + std::to_string(id));
    return nodes_[static_cast<size_t>(id)];
  }

  Node& node_mut(int id) {
    require(id >= 0 && id < size(), "invalid node id " + std::to_string(id));
    return nodes_[static_cast<size_t>(id)];
  }

  int push(Node n) {
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
  }

  int push_op(Op op, int a, int b, Tensor out) {
    Node n;
    n.op = op;
    n.in0 = a;
    n.in1 = b;
    n.value = std::move(out);
    n.needs_grad = node(a).needs_grad || (b >= 0 && node(b).needs_grad);
    return push(std::move(n));
  }

  Tensor& grad_buf(int id) {
    Node& n = node_mut(id);
    if (n.grad.numel() == 0) n.grad = Tensor::zeros(n.value.shape);
    return n.grad;
  }

  bool wants(int id) const { return id >= 0 && node(id).needs_grad; }

  void dispatch_backward(Node& n) {
    const Tensor& g = n.grad;
    switch (n.op) {
      case Op::kAdd: {
        if (wants(n.in0)) {
          Tensor& d = grad_buf(n.in0);
          for (size_t i = 0; i < g.numel(); ++i) d[i] += g[i];
        }
        if (wants(n.in1)) {
          Tensor& d = grad_buf(n.in1);
          for (size_t i = 0; i < g.numel(); ++i) d[i] += g[i];
        }
        break;
      }
      case Op::kSub: {
        if (wants(n.in0)) {
          Tensor& d = grad_buf(n.in0);
          for (size_t i = 0; i < g.numel(); ++i) d[i] += g[i];
        }
        if (wants(n.in1)) {
          Tensor& d = grad_buf(n.in1);
          for (size_t i = 0; i < g.numel(); ++i) d[i] -= g[i];
        }
        break;
      }
      case Op::kScale: {
        if (wants(n.in0)) {
          Tensor& d = grad_buf(n.in0);
          for (size_t i = 0; i < g.numel(); ++i) d[i] += n.f0 * g[i];
        }
        break;
      }
      case Op::kSquare: {
        if (wants(n.in0)) {
          const Tensor& x = node(n.in0).value;
          Tensor& d = grad_buf(n.in0);
          for (size_t i = 0; i < g.numel(); ++i) d[i] += 2.0f * x[i] * g[i];
        }
        break;
      }
      case Op::kRelu: {
        if (wants(n.in0)) {
          const Tensor& x = node(n.in0).value;
          Tensor& d = grad_buf(n.in0);
          for (size_t i = 0; i < g.numel(); ++i) {
            if (x[i] > 0.0f) d[i] += g[i];
          }
        }
        break;
      }
      case Op::kConv2d:
        conv2d_backward(n);
        break;
      case Op::kAvgPool:
        avg_pool_backward(n);
        break;
      case Op::kLinear:
        linear_backward(n);
        break;
      case Op::kFlatten: {
        if (wants(n.in0)) {
          Tensor& d = grad_buf(n.in0);
          for (size_t i = 0; i < g.numel(); ++i) d[i] += g[i];
        }
        break;
      }
      case Op::kSoftmaxXent: {
        if (wants(n.in0)) {
          const Tensor& soft = n.aux;
          Tensor& d = grad_buf(n.in0);
          const float gs = g[0];
          for (size_t i = 0; i < soft.numel(); ++i) {
            float delta = (static_cast<int>(i) == n.p0) ? 1.0f : 0.0f;
            d[i] += gs * (soft[i] - delta);
          }
        }
        break;
      }
      case Op::kCwMargin: {
        if (wants(n.in0)) {
          const Tensor& z = node(n.in0).value;
          const float diff = z[static_cast<size_t>(n.p0)] - z[static_cast<size_t>(n.p1)];
          if (diff > -n.f0) {
            Tensor& d = grad_buf(n.in0);
            d[static_cast<size_t>(n.p0)] += g[0];
            d[static_cast<size_t>(n.p1)] -= g[0];
          }
        }
        break;
      }
      case Op::kSum: {
        if (wants(n.in0)) {
          Tensor& d = grad_buf(n.in0);
          const float gs = g[0];
          for (size_t i = 0; i < d.numel(); ++i) d[i] += gs;
        }
        break;
      }
      case Op::kLeaf:
        break;
    }
  }

  void conv2d_backward(Node& n) {
    const Tensor& x = node(n.in0).value;
    const Tensor& w = node(n.in1).value;
    const Tensor& g = n.grad;
    const int stride = n.p0, pad = n.p1;
    const bool batched = x.rank() == 4;
    const int bn = batched ? x.shape[0] : 1;
    const int ci = batched ? x.shape[1] : x.shape[0];
    const int h = batched ? x.shape[2] : x.shape[1];
    const int iw = batched ? x.shape[3] : x.shape[2];
    const int co = w.shape[0], kh = w.shape[2], kw = w.shape[3];
    const int oh = n.value.shape[n.value.rank() - 2];
    const int ow = n.value.shape[n.value.rank() - 1];

    float* dx = nullptr;
    float* dw = nullptr;
    float* db = nullptr;
    if (wants(n.in0)) dx = grad_buf(n.in0).data.data();
    if (wants(n.in1)) dw = grad_buf(n.in1).data.data();
    if (wants(n.in2)) db = grad_buf(n.in2).data.data();
    if (!dx && !dw && !db) return;

    const float* xd = x.data.data();
    const float* wd = w.data.data();
    const float* gd = g.data.data();
    for (int in = 0; in < bn; ++in) {
      const float* xn = xd + static_cast<size_t>(in) * ci * h * iw;
      const float* gn = gd + static_cast<size_t>(in) * co * oh * ow;
      float* dxn = dx ? dx + static_cast<size_t>(in) * ci * h * iw : nullptr;
      for (int oc = 0; oc < co; ++oc) {
        for (int oy = 0; oy < oh; ++oy) {
          for (int ox = 0; ox < ow; ++ox) {
            const float go = gn[(static_cast<size_t>(oc) * oh + oy) * ow + ox];
            if (go == 0.0f) continue;
            if (db) db[oc] += go;
            const int iy0 = oy * stride - pad;
            const int ix0 = ox * stride - pad;
            for (int ic = 0; ic < ci; ++ic) {
              const float* xc = xn + static_cast<size_t>(ic) * h * iw;
              const size_t wbase = ((static_cast<size_t>(oc) * ci + ic) * kh) * kw;
              for (int ky = 0; ky < kh; ++ky) {
                const int iy = iy0 + ky;
                if (iy < 0 || iy >= h) continue;
                for (int kx = 0; kx < kw; ++kx) {
                  const int ix = ix0 + kx;
                  if (ix < 0 || ix >= iw) continue;
                  const size_t xi = static_cast<size_t>(iy) * iw + ix;
                  if (dw) dw[wbase + static_cast<size_t>(ky) * kw + kx] += go * xc[xi];
                  if (dxn) dxn[static_cast<size_t>(ic) * h * iw + xi] += go * wd[wbase + static_cast<size_t>(ky) * kw + kx];
                }
              }
            }
          }
        }
      }
    }
  }

  void avg_pool_backward(Node& n) {
    if (!wants(n.in0)) return;
    const Tensor& x = node(n.in0).value;
    const Tensor& g = n.grad;
    const int kh = n.p0, kw = n.p1, sh = n.p2, sw = n.p3;
    const int h = x.shape[x.rank() - 2];
    const int w = x.shape[x.rank() - 1];
    const int oh = n.value.shape[n.value.rank() - 2];
    const int ow = n.value.shape[n.value.rank() - 1];
    int lead = 1;
    for (int i = 0; i + 2 < x.rank(); ++i) lead *= x.shape[i];
    Tensor& d = grad_buf(n.in0);
    const float inv = 1.0f / static_cast<float>(kh * kw);
    for (int l = 0; l < lead; ++l) {
      const float* gp = g.data.data() + static_cast<size_t>(l) * oh * ow;
      float* dp = d.data.data() + static_cast<size_t>(l) * h * w;
      for (int oy = 0; oy < oh; ++oy) {
        for (int ox = 0; ox < ow; ++ox) {
          const float go = gp[static_cast<size_t>(oy) * ow + ox] * inv;
          for (int ky = 0; ky < kh; ++ky) {
            float* row = dp + static_cast<size_t>(oy * sh + ky) * w + ox * sw;
            for (int kx = 0; kx < kw; ++kx) row[kx] += go;
          }
        }
      }
    }
  }

  void linear_backward(Node& n) {
    const Tensor& x = node(n.in0).value;
    const Tensor& w = node(n.in1).value;
    const Tensor& g = n.grad;
    const int out_dim = w.shape[0], in_dim = w.shape[1];
    if (wants(n.in0)) {
      Tensor& d = grad_buf(n.in0);
      for (int o = 0; o < out_dim; ++o) {
        const float go = g[static_cast<size_t>(o)];
        const float* wrow = w.data.data() + static_cast<size_t>(o) * in_dim;
        for (int i = 0; i < in_dim; ++i) d[static_cast<size_t>(i)] += go * wrow[i];
      }
    }
    if (wants(n.in1)) {
      Tensor& d = grad_buf(n.in1);
      for (int o = 0; o < out_dim; ++o) {
        const float go = g[static_cast<size_t>(o)];
        float* drow = d.data.data() + static_cast<size_t>(o) * in_dim;
        for (int i = 0; i < in_dim; ++i) drow[i] += go * x[static_cast<size_t>(i)];
      }
    }
    if (wants(n.in2)) {
      Tensor& d = grad_buf(n.in2);
      for (int o = 0; o < out_dim; ++o) d[static_cast<size_t>(o)] += g[static_cast<size_t>(o)];
    }
  }

  std::vector<Node> nodes_;
};

}  // namespace kshield
