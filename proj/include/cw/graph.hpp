// Licensed under the Apache License, Version 2.0 (the "License"); you may
// not use this file except in compliance with the License. You may obtain
// a copy of the License at http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or
// implied. See the License for the specific language governing permissions
// and limitations under the License.

#pragma once

#include <cmath>
#include <functional>
#include <span>
#include <string_view>
#include <vector>

#include "cw/kernels.hpp"
#include "cw/tensor.hpp"

namespace cw::ad {

// Define-by-run tape.  Nodes are appended in evaluation order, so input ids
// are always smaller than the consuming node's id.  Every backward rule is
// itself a composition of these primitives; on a higher-order graph the
// backward sweep therefore emits regular nodes and a second sweep
// differentiates through the first.
enum class Op : uint8_t {
  leaf,
  add,
  sub,
  mul,
  scale,
  leaky,
  sqrtv,
  recip,
  conv_nb,   // convolution, no bias
  conv_gi,   // adjoint of conv_nb w.r.t. its input
  conv_gk,   // adjoint of conv_nb w.r.t. its kernel
  dense_nb,
  dense_gi,
  dense_gw,
  bias_add,      // H x W x C plus per-channel vector
  spatial_sum,   // H x W x C -> C
  spatial_bcast, // C -> H x W x C
  channel_scale, // H x W x C times per-channel vector
  concat_c,
  slice_c,
  pool2,
  unpool2,
  rmean,
  rsum,
  bcast_full, // scalar -> arbitrary shape
  sumsq,
  reshape,
};

struct Aux {
  int i0 = 0, i1 = 0, i2 = 0, i3 = 0;
  double f = 0.0;
  Shape sh{};
};

template <typename T>
struct Node {
  Op op = Op::leaf;
  std::vector<int> in;
  Aux aux;
  Tensor<T> out;
};

template <typename T>
class Graph {
 public:
  enum class Mode { first_order, higher_order };

  explicit Graph(Mode mode = Mode::first_order) : mode_(mode) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Mode mode() const { return mode_; }
  size_t node_count() const { return nodes_.size(); }

  Tensor<T> leaf(const Tensor<T>& value) {
    require(value.defined(), "leaf: undefined tensor");
    return append(Op::leaf, {}, Aux{}, value.shape(), value.ptr());
  }

  Tensor<T> leaf(Shape shape, std::vector<T> values) {
    return leaf(Tensor<T>::constant(shape, std::move(values)));
  }

  // Gradient of a tracked scalar with respect to each tensor in wrt.
  // On a first-order graph the returned tensors are plain values; on a
  // higher-order graph they are live nodes of this graph.  Tensors in wrt
  // that the output does not reach get exact zeros.
  std::vector<Tensor<T>> backward(const Tensor<T>& output,
                                  std::span<const Tensor<T>> wrt);

  // Second-order helper: d/d(wrt2) of inner(d output / d wrt1).  Requires a
  // higher-order graph, since the first sweep's nodes must be recorded.
  std::vector<Tensor<T>> grad_of_grad(
      const Tensor<T>& output, std::span<const Tensor<T>> wrt1,
      const std::function<Tensor<T>(std::span<const Tensor<T>>)>& inner,
      std::span<const Tensor<T>> wrt2);

 private:
  template <typename U>
  friend Tensor<U> detail_finish(Op, std::initializer_list<Tensor<U>>, Aux,
                                 Shape, std::vector<U>&&);
  template <typename U>
  friend Tensor<U> detail_finish_shared(
      Op, std::initializer_list<Tensor<U>>, Aux, Shape,
      std::shared_ptr<const std::vector<U>>);

  Tensor<T> append(Op op, std::vector<int> in, Aux aux, Shape shape,
                   std::shared_ptr<const std::vector<T>> data) {
    Tensor<T> t(shape, std::move(data));
    t.graph_ = this;
    t.node_ = static_cast<int>(nodes_.size());
    nodes_.push_back(Node<T>{op, std::move(in), aux, t});
    return t;
  }

  int intern(const Tensor<T>& t) {
    if (t.tracked()) {
      require(t.graph() == this, "op inputs belong to different graphs");
      return t.node();
    }
    return leaf(t).node();
  }

  void vjp(const Node<T>& node, const Tensor<T>& g,
           const std::function<void(int, const Tensor<T>&)>& accumulate);

  Mode mode_;
  bool recording_ = true;
  std::vector<Node<T>> nodes_;
};

// ---- builders ------------------------------------------------------------
//
// Each builder validates shapes, evaluates the kernel, and records a node
// when an input is tracked on a recording graph.  With constant inputs the
// result is a plain constant, which is also how a first-order backward
// sweep evaluates its rules without growing the tape.

namespace detail {

template <typename T>
Graph<T>* common_graph(std::initializer_list<Tensor<T>> ins) {
  Graph<T>* g = nullptr;
  for (const auto& t : ins) {
    if (!t.tracked()) continue;
    if (g == nullptr) g = t.graph();
    else require(g == t.graph(), "op inputs belong to different graphs");
  }
  return g;
}

}  // namespace detail

template <typename T>
Tensor<T> detail_finish_shared(Op op, std::initializer_list<Tensor<T>> ins,
                               Aux aux, Shape shape,
                               std::shared_ptr<const std::vector<T>> data) {
  Graph<T>* g = detail::common_graph(ins);
  if (g == nullptr || !g->recording_) return Tensor<T>(shape, std::move(data));
  std::vector<int> ids;
  ids.reserve(ins.size());
  for (const auto& t : ins) ids.push_back(g->intern(t));
  return g->append(op, std::move(ids), aux, shape, std::move(data));
}

template <typename T>
Tensor<T> detail_finish(Op op, std::initializer_list<Tensor<T>> ins, Aux aux,
                        Shape shape, std::vector<T>&& values) {
  return detail_finish_shared(
      op, ins, aux, shape,
      std::make_shared<const std::vector<T>>(std::move(values)));
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require(a.shape() == b.shape(), "add: shape mismatch ", a.shape().str(),
          " vs ", b.shape().str());
  std::vector<T> v(a.values());
  const T* bp = b.data();
  for (size_t i = 0; i < v.size(); ++i) v[i] += bp[i];
  return detail_finish(Op::add, {a, b}, Aux{}, a.shape(), std::move(v));
}

template <typename T>
Tensor<T> subtract(const Tensor<T>& a, const Tensor<T>& b) {
  require(a.shape() == b.shape(), "subtract: shape mismatch ", a.shape().str(),
          " vs ", b.shape().str());
  std::vector<T> v(a.values());
  const T* bp = b.data();
  for (size_t i = 0; i < v.size(); ++i) v[i] -= bp[i];
  return detail_finish(Op::sub, {a, b}, Aux{}, a.shape(), std::move(v));
}

template <typename T>
Tensor<T> multiply(const Tensor<T>& a, const Tensor<T>& b) {
  require(a.shape() == b.shape(), "multiply: shape mismatch ", a.shape().str(),
          " vs ", b.shape().str());
  std::vector<T> v(a.values());
  const T* bp = b.data();
  for (size_t i = 0; i < v.size(); ++i) v[i] *= bp[i];
  return detail_finish(Op::mul, {a, b}, Aux{}, a.shape(), std::move(v));
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, double c) {
  std::vector<T> v(a.values());
  for (auto& x : v) x = static_cast<T>(x * c);
  Aux aux;
  aux.f = c;
  return detail_finish(Op::scale, {a}, aux, a.shape(), std::move(v));
}

template <typename T>
Tensor<T> leaky_relu(const Tensor<T>& a, double slope) {
  std::vector<T> v(a.values());
  for (auto& x : v)
    if (x < T(0)) x = static_cast<T>(x * slope);
  Aux aux;
  aux.f = slope;
  return detail_finish(Op::leaky, {a}, aux, a.shape(), std::move(v));
}

template <typename T>
Tensor<T> sqrt_elem(const Tensor<T>& a) {
  std::vector<T> v(a.values());
  for (auto& x : v) x = std::sqrt(x);
  return detail_finish(Op::sqrtv, {a}, Aux{}, a.shape(), std::move(v));
}

template <typename T>
Tensor<T> reciprocal(const Tensor<T>& a) {
  std::vector<T> v(a.values());
  for (auto& x : v) x = T(1) / x;
  return detail_finish(Op::recip, {a}, Aux{}, a.shape(), std::move(v));
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape target) {
  require(a.numel() == target.numel(), "reshape: cannot reshape ",
          a.shape().str(), " to ", target.str());
  Aux aux;
  aux.sh = a.shape();
  return detail_finish_shared(Op::reshape, {a}, aux, target, a.ptr());
}

template <typename T>
Tensor<T> conv_nobias(const Tensor<T>& x, const Tensor<T>& w, int stride = 1) {
  require(x.shape().rank == 3, "conv2d: input must be HxWxC, got ",
          x.shape().str());
  require(w.shape().rank == 4 && w.shape().d[0] == w.shape().d[1],
          "conv2d: kernel must be n x n x Ci x Co, got ", w.shape().str());
  const int n = w.shape().d[0];
  require(n == 1 || n == 3, "conv2d: kernel size ", n,
          " unsupported (expected 1 or 3)");
  require(stride >= 1, "conv2d: stride must be positive, got ", stride);
  const int H = x.shape().d[0], W = x.shape().d[1], Ci = x.shape().d[2];
  require(w.shape().d[2] == Ci, "conv2d: input channels ", Ci,
          " do not match kernel channels ", w.shape().d[2], " (kernel ",
          w.shape().str(), ", input ", x.shape().str(), ")");
  require(n == 1 || (H >= 2 && W >= 2),
          "conv2d: reflective padding needs spatial dims >= 2, got ",
          x.shape().str());
  const int Co = w.shape().d[3];
  const int Ho = kern::conv_out_dim(H, n, stride);
  const int Wo = kern::conv_out_dim(W, n, stride);
  require(Ho >= 1 && Wo >= 1, "conv2d: output would be empty for input ",
          x.shape().str(), " with kernel ", n, " stride ", stride);
  std::vector<T> v(static_cast<size_t>(Ho) * Wo * Co);
  kern::conv_nb(x.data(), H, W, Ci, w.data(), n, Co, stride, v.data());
  Aux aux;
  aux.i0 = n;
  aux.i1 = stride;
  aux.i2 = H;
  aux.i3 = W;
  return detail_finish(Op::conv_nb, {x, w}, aux, Shape::hwc(Ho, Wo, Co),
                       std::move(v));
}

template <typename T>
Tensor<T> conv_grad_input(const Tensor<T>& g, const Tensor<T>& w, Aux aux) {
  const int n = aux.i0, stride = aux.i1, H = aux.i2, W = aux.i3;
  const int Ci = w.shape().d[2], Co = w.shape().d[3];
  require(g.shape().rank == 3 && g.shape().d[2] == Co,
          "conv2d adjoint: gradient shape ", g.shape().str(),
          " does not match kernel ", w.shape().str());
  std::vector<T> v(static_cast<size_t>(H) * W * Ci);
  kern::conv_gi(g.data(), g.shape().d[0], g.shape().d[1], w.data(), n, Ci, Co,
                stride, H, W, v.data());
  return detail_finish(Op::conv_gi, {g, w}, aux, Shape::hwc(H, W, Ci),
                       std::move(v));
}

template <typename T>
Tensor<T> conv_grad_kernel(const Tensor<T>& x, const Tensor<T>& g, int n,
                           Aux aux) {
  const int Ci = x.shape().d[2], Co = g.shape().d[2];
  std::vector<T> v(static_cast<size_t>(n) * n * Ci * Co);
  kern::conv_gk(x.data(), x.shape().d[0], x.shape().d[1], Ci, g.data(),
                g.shape().d[0], g.shape().d[1], n, Co, aux.i1, v.data());
  return detail_finish(Op::conv_gk, {x, g}, aux, Shape::conv(n, n, Ci, Co),
                       std::move(v));
}

template <typename T>
Tensor<T> bias_add(const Tensor<T>& x, const Tensor<T>& b) {
  require(x.shape().rank == 3, "bias-add: input must be HxWxC, got ",
          x.shape().str());
  require(b.shape().rank == 1 && b.shape().d[0] == x.shape().d[2],
          "bias-add: bias ", b.shape().str(), " does not match channels of ",
          x.shape().str());
  const int C = x.shape().d[2];
  const int HW = x.shape().d[0] * x.shape().d[1];
  std::vector<T> v(x.values());
  const T* bp = b.data();
  for (int p = 0; p < HW; ++p) {
    T* row = v.data() + static_cast<size_t>(p) * C;
    for (int c = 0; c < C; ++c) row[c] += bp[c];
  }
  return detail_finish(Op::bias_add, {x, b}, Aux{}, x.shape(), std::move(v));
}

// Composite builders take arguments by value: they emit several nodes, and
// a caller-held reference into the node list could dangle across emissions.
template <typename T>
Tensor<T> conv2d(Tensor<T> x, Tensor<T> w, Tensor<T> b, int stride = 1) {
  Tensor<T> y = conv_nobias(x, w, stride);
  if (!b.defined()) return y;
  return bias_add(y, b);
}

template <typename T>
Tensor<T> dense_nobias(const Tensor<T>& x, const Tensor<T>& w) {
  require(w.shape().rank == 2, "dense: weight must be in x out, got ",
          w.shape().str());
  const int in = w.shape().d[0], out = w.shape().d[1];
  require(x.numel() == in, "dense: input with ", x.numel(),
          " elements does not match weight ", w.shape().str());
  std::vector<T> v(static_cast<size_t>(out));
  kern::dense_nb(x.data(), in, w.data(), out, v.data());
  Aux aux;
  aux.sh = x.shape();
  return detail_finish(Op::dense_nb, {x, w}, aux, Shape::vec(out),
                       std::move(v));
}

template <typename T>
Tensor<T> dense_grad_input(const Tensor<T>& g, const Tensor<T>& w,
                           Shape xshape) {
  const int in = w.shape().d[0], out = w.shape().d[1];
  require(g.numel() == out, "dense adjoint: gradient with ", g.numel(),
          " elements does not match weight ", w.shape().str());
  std::vector<T> v(static_cast<size_t>(in));
  kern::dense_gi(g.data(), out, w.data(), in, v.data());
  Aux aux;
  aux.sh = xshape;
  return detail_finish(Op::dense_gi, {g, w}, aux, xshape, std::move(v));
}

template <typename T>
Tensor<T> dense_grad_weight(const Tensor<T>& x, const Tensor<T>& g) {
  const int in = static_cast<int>(x.numel()), out = static_cast<int>(g.numel());
  std::vector<T> v(static_cast<size_t>(in) * out);
  kern::dense_gw(x.data(), in, g.data(), out, v.data());
  Aux aux;
  aux.sh = x.shape();
  return detail_finish(Op::dense_gw, {x, g}, aux, Shape::mat(in, out),
                       std::move(v));
}

template <typename T>
Tensor<T> dense(Tensor<T> x, Tensor<T> w, Tensor<T> b) {
  Tensor<T> y = dense_nobias(x, w);
  if (!b.defined()) return y;
  return add(y, b);
}

template <typename T>
Tensor<T> concat_channels(std::initializer_list<Tensor<T>> parts) {
  require(parts.size() >= 2, "concat-channels: need at least two inputs");
  const Tensor<T>& first = *parts.begin();
  require(first.shape().rank == 3, "concat-channels: inputs must be HxWxC");
  const int H = first.shape().d[0], W = first.shape().d[1];
  int C = 0;
  for (const auto& t : parts) {
    require(t.shape().rank == 3 && t.shape().d[0] == H && t.shape().d[1] == W,
            "concat-channels: spatial dims differ: ", first.shape().str(),
            " vs ", t.shape().str());
    C += t.shape().d[2];
  }
  std::vector<T> v(static_cast<size_t>(H) * W * C);
  int at = 0;
  for (const auto& t : parts) {
    const int c = t.shape().d[2];
    const T* src = t.data();
    for (int p = 0; p < H * W; ++p)
      for (int j = 0; j < c; ++j)
        v[static_cast<size_t>(p) * C + at + j] =
            src[static_cast<size_t>(p) * c + j];
    at += c;
  }
  return detail_finish(Op::concat_c, parts, Aux{}, Shape::hwc(H, W, C),
                       std::move(v));
}

template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  return concat_channels({a, b});
}

template <typename T>
Tensor<T> slice_channels(const Tensor<T>& x, int from, int to) {
  require(x.shape().rank == 3, "slice-channels: input must be HxWxC");
  const int H = x.shape().d[0], W = x.shape().d[1], C = x.shape().d[2];
  require(0 <= from && from < to && to <= C, "slice-channels: range [", from,
          ", ", to, ") invalid for ", C, " channels");
  const int c = to - from;
  std::vector<T> v(static_cast<size_t>(H) * W * c);
  const T* src = x.data();
  for (int p = 0; p < H * W; ++p)
    for (int j = 0; j < c; ++j)
      v[static_cast<size_t>(p) * c + j] =
          src[static_cast<size_t>(p) * C + from + j];
  Aux aux;
  aux.i0 = from;
  aux.i1 = to;
  return detail_finish(Op::slice_c, {x}, aux, Shape::hwc(H, W, c),
                       std::move(v));
}

template <typename T>
Tensor<T> avg_pool2(const Tensor<T>& x) {
  require(x.shape().rank == 3, "avg-pool: input must be HxWxC, got ",
          x.shape().str());
  const int H = x.shape().d[0], W = x.shape().d[1], C = x.shape().d[2];
  require(H % 2 == 0 && W % 2 == 0, "avg-pool: spatial dims ", H, "x", W,
          " not divisible by 2");
  std::vector<T> v(static_cast<size_t>(H / 2) * (W / 2) * C);
  kern::avg_pool2(x.data(), H, W, C, v.data());
  return detail_finish(Op::pool2, {x}, Aux{}, Shape::hwc(H / 2, W / 2, C),
                       std::move(v));
}

template <typename T>
Tensor<T> upsample2(const Tensor<T>& x) {
  require(x.shape().rank == 3, "nearest-upsample: input must be HxWxC, got ",
          x.shape().str());
  const int H = x.shape().d[0], W = x.shape().d[1], C = x.shape().d[2];
  std::vector<T> v(static_cast<size_t>(H * 2) * (W * 2) * C);
  kern::upsample2(x.data(), H, W, C, v.data());
  return detail_finish(Op::unpool2, {x}, Aux{}, Shape::hwc(H * 2, W * 2, C),
                       std::move(v));
}

template <typename T>
Tensor<T> spatial_sum(const Tensor<T>& x) {
  require(x.shape().rank == 3, "spatial-sum: input must be HxWxC, got ",
          x.shape().str());
  const int HW = x.shape().d[0] * x.shape().d[1], C = x.shape().d[2];
  std::vector<T> v(static_cast<size_t>(C), T(0));
  const T* src = x.data();
  for (int p = 0; p < HW; ++p)
    for (int c = 0; c < C; ++c) v[c] += src[static_cast<size_t>(p) * C + c];
  return detail_finish(Op::spatial_sum, {x}, Aux{}, Shape::vec(C),
                       std::move(v));
}

template <typename T>
Tensor<T> spatial_broadcast(const Tensor<T>& b, int H, int W) {
  require(b.shape().rank == 1, "spatial-broadcast: input must be a vector");
  const int C = b.shape().d[0];
  std::vector<T> v(static_cast<size_t>(H) * W * C);
  const T* src = b.data();
  for (int p = 0; p < H * W; ++p)
    for (int c = 0; c < C; ++c) v[static_cast<size_t>(p) * C + c] = src[c];
  Aux aux;
  aux.i0 = H;
  aux.i1 = W;
  return detail_finish(Op::spatial_bcast, {b}, aux, Shape::hwc(H, W, C),
                       std::move(v));
}

template <typename T>
Tensor<T> channel_scale(const Tensor<T>& x, const Tensor<T>& s) {
  require(x.shape().rank == 3, "channel-scale: input must be HxWxC");
  const int C = x.shape().d[2];
  require(s.shape().rank == 1 && s.shape().d[0] == C, "channel-scale: scale ",
          s.shape().str(), " does not match channels of ", x.shape().str());
  const int HW = x.shape().d[0] * x.shape().d[1];
  std::vector<T> v(x.values());
  const T* sp = s.data();
  for (int p = 0; p < HW; ++p) {
    T* row = v.data() + static_cast<size_t>(p) * C;
    for (int c = 0; c < C; ++c) row[c] *= sp[c];
  }
  return detail_finish(Op::channel_scale, {x, s}, Aux{}, x.shape(),
                       std::move(v));
}

template <typename T>
Tensor<T> reduce_mean(const Tensor<T>& x) {
  const int64_t n = x.numel();
  // Pairwise reduction keeps the result independent of any blocking and
  // stable for large tensors.
  std::function<T(const T*, int64_t)> psum = [&](const T* p, int64_t m) -> T {
    if (m <= 8) {
      T s = T(0);
      for (int64_t i = 0; i < m; ++i) s += p[i];
      return s;
    }
    const int64_t half = m / 2;
    return psum(p, half) + psum(p + half, m - half);
  };
  std::vector<T> v{static_cast<T>(psum(x.data(), n) / static_cast<T>(n))};
  return detail_finish(Op::rmean, {x}, Aux{}, Shape::scalar(), std::move(v));
}

template <typename T>
Tensor<T> reduce_sum(const Tensor<T>& x) {
  T s = T(0);
  for (int64_t i = 0; i < x.numel(); ++i) s += x.data()[i];
  std::vector<T> v{s};
  return detail_finish(Op::rsum, {x}, Aux{}, Shape::scalar(), std::move(v));
}

template <typename T>
Tensor<T> broadcast_full(const Tensor<T>& s, Shape target) {
  require(s.numel() == 1, "broadcast: input must be a scalar, got ",
          s.shape().str());
  std::vector<T> v(static_cast<size_t>(target.numel()), s.data()[0]);
  Aux aux;
  aux.sh = target;
  return detail_finish(Op::bcast_full, {s}, aux, target, std::move(v));
}

template <typename T>
Tensor<T> sum_squares(const Tensor<T>& x) {
  T s = T(0);
  for (int64_t i = 0; i < x.numel(); ++i) s += x.data()[i] * x.data()[i];
  std::vector<T> v{s};
  return detail_finish(Op::sumsq, {x}, Aux{}, Shape::scalar(), std::move(v));
}

// Mean over spatial positions per channel, H x W x C -> C.
template <typename T>
Tensor<T> channel_mean(Tensor<T> x) {
  require(x.shape().rank == 3, "channel-mean: input must be HxWxC, got ",
          x.shape().str());
  const double inv = 1.0 / (x.shape().d[0] * x.shape().d[1]);
  return scale(spatial_sum(x), inv);
}

// Per-channel standard deviation over spatial positions, stabilized as
// sqrt(variance + eps).
template <typename T>
Tensor<T> channel_std(Tensor<T> x, double eps = 1e-5) {
  require(x.shape().rank == 3, "channel-std: input must be HxWxC, got ",
          x.shape().str());
  const int H = x.shape().d[0], W = x.shape().d[1], C = x.shape().d[2];
  Tensor<T> mu = channel_mean(x);
  Tensor<T> centered = subtract(x, spatial_broadcast(mu, H, W));
  Tensor<T> var = channel_mean(multiply(centered, centered));
  return sqrt_elem(add(var, Tensor<T>::full(Shape::vec(C), static_cast<T>(eps))));
}

// Normalization over all elements of the tensor (no learnable affine).
template <typename T>
Tensor<T> layer_norm(Tensor<T> x, double eps = 1e-5) {
  Tensor<T> mu = reduce_mean(x);
  Tensor<T> centered = subtract(x, broadcast_full(mu, x.shape()));
  Tensor<T> var = scale(sum_squares(centered), 1.0 / x.numel());
  Tensor<T> sd = sqrt_elem(add(var, Tensor<T>::scalar(static_cast<T>(eps))));
  return multiply(centered, broadcast_full(reciprocal(sd), x.shape()));
}

// ---- backward ------------------------------------------------------------

template <typename T>
void Graph<T>::vjp(const Node<T>& node, const Tensor<T>& g,
                   const std::function<void(int, const Tensor<T>&)>& acc) {
  // Copies, not references: emitting a rule can append nodes and reallocate
  // nodes_, which would invalidate a reference held across the call.
  const auto in = [&](int k) -> Tensor<T> { return nodes_[node.in[k]].out; };
  switch (node.op) {
    case Op::leaf:
      break;
    case Op::add:
      acc(0, g);
      acc(1, g);
      break;
    case Op::sub:
      acc(0, g);
      acc(1, scale(g, -1.0));
      break;
    case Op::mul:
      acc(0, multiply(g, in(1)));
      acc(1, multiply(g, in(0)));
      break;
    case Op::scale:
      acc(0, scale(g, node.aux.f));
      break;
    case Op::leaky: {
      // The derivative mask is piecewise constant in the input, so it enters
      // as a plain constant and contributes no second-order term.
      std::vector<T> m(in(0).values());
      for (auto& x : m) x = x < T(0) ? static_cast<T>(node.aux.f) : T(1);
      acc(0, multiply(g, Tensor<T>::constant(in(0).shape(), std::move(m))));
      break;
    }
    case Op::sqrtv:
      acc(0, multiply(g, scale(reciprocal(node.out), 0.5)));
      break;
    case Op::recip:
      acc(0, scale(multiply(g, multiply(node.out, node.out)), -1.0));
      break;
    case Op::conv_nb:
      acc(0, conv_grad_input(g, in(1), node.aux));
      acc(1, conv_grad_kernel(in(0), g, node.aux.i0, node.aux));
      break;
    case Op::conv_gi:
      acc(0, conv_nobias(g, in(1), node.aux.i1));
      acc(1, conv_grad_kernel(g, in(0), node.aux.i0, node.aux));
      break;
    case Op::conv_gk:
      acc(0, conv_grad_input(in(1), g, node.aux));
      acc(1, conv_nobias(in(0), g, node.aux.i1));
      break;
    case Op::dense_nb:
      acc(0, dense_grad_input(g, in(1), in(0).shape()));
      acc(1, dense_grad_weight(in(0), g));
      break;
    case Op::dense_gi:
      acc(0, dense_nobias(g, in(1)));
      acc(1, dense_grad_weight(g, in(0)));
      break;
    case Op::dense_gw:
      acc(0, dense_grad_input(in(1), g, in(0).shape()));
      acc(1, dense_nobias(in(0), g));
      break;
    case Op::bias_add:
      acc(0, g);
      acc(1, spatial_sum(g));
      break;
    case Op::spatial_sum:
      acc(0, spatial_broadcast(g, in(0).shape().d[0], in(0).shape().d[1]));
      break;
    case Op::spatial_bcast:
      acc(0, spatial_sum(g));
      break;
    case Op::channel_scale:
      acc(0, channel_scale(g, in(1)));
      acc(1, spatial_sum(multiply(g, in(0))));
      break;
    case Op::concat_c: {
      int at = 0;
      for (size_t k = 0; k < node.in.size(); ++k) {
        const int c = in(static_cast<int>(k)).shape().d[2];
        acc(static_cast<int>(k), slice_channels(g, at, at + c));
        at += c;
      }
      break;
    }
    case Op::slice_c: {
      const Shape s = in(0).shape();
      const int H = s.d[0], W = s.d[1], C = s.d[2];
      const int from = node.aux.i0, to = node.aux.i1;
      if (from == 0 && to == C) {
        acc(0, g);
      } else if (from == 0) {
        acc(0, concat_channels(g, Tensor<T>::zeros(Shape::hwc(H, W, C - to))));
      } else if (to == C) {
        acc(0, concat_channels(Tensor<T>::zeros(Shape::hwc(H, W, from)), g));
      } else {
        acc(0, concat_channels({Tensor<T>::zeros(Shape::hwc(H, W, from)), g,
                                Tensor<T>::zeros(Shape::hwc(H, W, C - to))}));
      }
      break;
    }
    case Op::pool2:
      acc(0, scale(upsample2(g), 0.25));
      break;
    case Op::unpool2:
      acc(0, scale(avg_pool2(g), 4.0));
      break;
    case Op::rmean:
      acc(0, scale(broadcast_full(g, in(0).shape()),
                   1.0 / static_cast<double>(in(0).numel())));
      break;
    case Op::rsum:
      acc(0, broadcast_full(g, in(0).shape()));
      break;
    case Op::bcast_full:
      acc(0, reduce_sum(g));
      break;
    case Op::sumsq:
      acc(0, scale(multiply(broadcast_full(g, in(0).shape()), in(0)), 2.0));
      break;
    case Op::reshape:
      acc(0, reshape(g, node.aux.sh));
      break;
  }
}

template <typename T>
std::vector<Tensor<T>> Graph<T>::backward(const Tensor<T>& output,
                                          std::span<const Tensor<T>> wrt) {
  require(output.tracked() && output.graph() == this,
          "backward: output is not tracked on this graph");
  require(output.numel() == 1, "backward: output must be a scalar, got shape ",
          output.shape().str());
  for (const auto& t : wrt)
    require(t.tracked() && t.graph() == this,
            "backward: wrt tensor is not tracked on this graph");

  const int top = output.node();
  std::vector<Tensor<T>> adj(static_cast<size_t>(top) + 1);
  adj[top] = Tensor<T>::scalar(T(1));

  const bool record = mode_ == Mode::higher_order;
  const bool saved = recording_;
  recording_ = record;
  for (int i = top; i >= 0; --i) {
    if (!adj[i].defined()) continue;
    // The node list may grow (and reallocate) while rules are emitted, so
    // work from a copy of the node's metadata.
    const Node<T> node = nodes_[i];
    vjp(node, adj[i], [&](int k, const Tensor<T>& contrib) {
      const int j = node.in[k];
      adj[j] = adj[j].defined() ? add(adj[j], contrib) : contrib;
    });
  }
  recording_ = saved;

  std::vector<Tensor<T>> out;
  out.reserve(wrt.size());
  for (const auto& t : wrt) {
    if (t.node() <= top && adj[t.node()].defined())
      out.push_back(adj[t.node()]);
    else
      out.push_back(Tensor<T>::zeros(t.shape()));
  }
  return out;
}

template <typename T>
std::vector<Tensor<T>> Graph<T>::grad_of_grad(
    const Tensor<T>& output, std::span<const Tensor<T>> wrt1,
    const std::function<Tensor<T>(std::span<const Tensor<T>>)>& inner,
    std::span<const Tensor<T>> wrt2) {
  require(mode_ == Mode::higher_order,
          "grad_of_grad: graph was recorded in first-order mode; re-record "
          "the computation on a higher-order graph");
  std::vector<Tensor<T>> g1 = backward(output, wrt1);
  Tensor<T> s = inner(std::span<const Tensor<T>>(g1));
  require(s.numel() == 1, "grad_of_grad: inner functional must be scalar");
  if (!s.tracked()) {
    // The first gradient was constant, so second-order terms vanish.
    std::vector<Tensor<T>> zeros;
    zeros.reserve(wrt2.size());
    for (const auto& t : wrt2) zeros.push_back(Tensor<T>::zeros(t.shape()));
    return zeros;
  }
  return backward(s, wrt2);
}

// ---- generic entry points ------------------------------------------------

struct EvalAux {
  double f = 0.0;     // leaky-relu slope or scalar-scale factor
  double eps = 1e-5;  // channel-std / layer-norm stabilizer
  int stride = 1;     // conv2d stride
};

// String-tag dispatch over the public kernel set.  Constant inputs are
// interned on the given graph so the result is always a recorded node.
template <typename T>
Tensor<T> eval_primitive(Graph<T>& g, std::string_view tag,
                         std::vector<Tensor<T>> inputs,
                         const EvalAux& aux = {}) {
  std::vector<Tensor<T>> in;
  in.reserve(inputs.size());
  for (auto& t : inputs) in.push_back(t.tracked() ? t : g.leaf(t));
  const auto arity = [&](size_t lo, size_t hi) {
    require(in.size() >= lo && in.size() <= hi, "eval_primitive: tag '", tag,
            "' expects ", lo == hi ? std::to_string(lo)
                                   : std::to_string(lo) + " to " + std::to_string(hi),
            " inputs, got ", in.size());
  };
  if (tag == "conv2d") {
    arity(2, 3);
    return conv2d(in[0], in[1], in.size() == 3 ? in[2] : Tensor<T>{},
                  aux.stride);
  }
  if (tag == "dense") {
    arity(2, 3);
    return dense(in[0], in[1], in.size() == 3 ? in[2] : Tensor<T>{});
  }
  if (tag == "leaky-relu") {
    arity(1, 1);
    return leaky_relu(in[0], aux.f);
  }
  if (tag == "add") {
    arity(2, 2);
    return add(in[0], in[1]);
  }
  if (tag == "subtract") {
    arity(2, 2);
    return subtract(in[0], in[1]);
  }
  if (tag == "multiply") {
    arity(2, 2);
    return multiply(in[0], in[1]);
  }
  if (tag == "scalar-scale") {
    arity(1, 1);
    return scale(in[0], aux.f);
  }
  if (tag == "concat-channels") {
    arity(2, 2);
    return concat_channels(in[0], in[1]);
  }
  if (tag == "avg-pool") {
    arity(1, 1);
    return avg_pool2(in[0]);
  }
  if (tag == "nearest-upsample") {
    arity(1, 1);
    return upsample2(in[0]);
  }
  if (tag == "channel-mean") {
    arity(1, 1);
    return channel_mean(in[0]);
  }
  if (tag == "channel-std") {
    arity(1, 1);
    return channel_std(in[0], aux.eps);
  }
  if (tag == "layer-norm") {
    arity(1, 1);
    return layer_norm(in[0], aux.eps);
  }
  if (tag == "reduce-mean") {
    arity(1, 1);
    return reduce_mean(in[0]);
  }
  if (tag == "sum-of-squares") {
    arity(1, 1);
    return sum_squares(in[0]);
  }
  if (tag == "sqrt") {
    arity(1, 1);
    return sqrt_elem(in[0]);
  }
  fail("eval_primitive: unknown operation tag '", tag, "'");
}

// Compares the reverse-mode gradient of a scalar functional against central
// differences, coordinate by coordinate.  Returns the maximum relative
// deviation max |analytic - central| / (|analytic| + |central| + eps).
template <typename T>
double finite_difference_check(
    const std::function<Tensor<T>(Graph<T>&, const Tensor<T>&)>& f,
    const Tensor<T>& point, double step) {
  require(step > 0, "finite_difference_check: step must be positive");
  Graph<T> g;
  Tensor<T> x = g.leaf(point);
  Tensor<T> s = f(g, x);
  require(s.numel() == 1,
          "finite_difference_check: functional must return a scalar");
  const std::array<Tensor<T>, 1> wrt{x};
  std::vector<Tensor<T>> grad = g.backward(s, wrt);

  const auto value_at = [&](std::vector<T> v) -> double {
    Graph<T> ge;
    Tensor<T> xe = ge.leaf(point.shape(), std::move(v));
    return static_cast<double>(f(ge, xe).item());
  };

  double worst = 0.0;
  for (int64_t i = 0; i < point.numel(); ++i) {
    std::vector<T> plus(point.values()), minus(point.values());
    plus[i] = static_cast<T>(plus[i] + step);
    minus[i] = static_cast<T>(minus[i] - step);
    const double central = (value_at(std::move(plus)) - value_at(std::move(minus))) / (2.0 * step);
    const double analytic = static_cast<double>(grad[0].data()[i]);
    const double rel = std::abs(analytic - central) /
                       (std::abs(analytic) + std::abs(central) + 1e-30);
    if (rel > worst) worst = rel;
  }
  return worst;
}

}  // namespace cw::ad
