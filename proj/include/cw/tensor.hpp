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

#include <array>
#include <cstdint>
#include <memory>
#include <numeric>
#include <string>
#include <vector>

#include "cw/common.hpp"

namespace cw::ad {

// Dense tensor extents, rank 1 to 4.  Activations are laid out
// height x width x channels with channels contiguous; convolution kernels
// are ky x kx x in-channels x out-channels; scalars are rank-1 [1].
struct Shape {
  int rank = 0;
  std::array<int, 4> d{{0, 0, 0, 0}};

  static Shape vec(int n) { return Shape{1, {{n, 0, 0, 0}}}; }
  static Shape scalar() { return vec(1); }
  static Shape mat(int r, int c) { return Shape{2, {{r, c, 0, 0}}}; }
  static Shape hwc(int h, int w, int c) { return Shape{3, {{h, w, c, 0}}}; }
  static Shape conv(int ky, int kx, int ci, int co) {
    return Shape{4, {{ky, kx, ci, co}}};
  }

  int64_t numel() const {
    int64_t n = 1;
    for (int i = 0; i < rank; ++i) n *= d[i];
    return rank == 0 ? 0 : n;
  }

  bool operator==(const Shape& o) const { return rank == o.rank && d == o.d; }
  bool operator!=(const Shape& o) const { return !(*this == o); }

  std::string str() const {
    if (rank == 0) return "(empty)";
    std::string s = std::to_string(d[0]);
    for (int i = 1; i < rank; ++i) s += "x" + std::to_string(d[i]);
    return s;
  }
};

template <typename T>
class Graph;

// Handle to an immutable value, optionally tracked as a node of a Graph.
// Tracked tensors keep a non-owning pointer to their graph; the graph must
// outlive every handle into it.
template <typename T>
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::shared_ptr<const std::vector<T>> data)
      : shape_(shape), data_(std::move(data)) {
    require(data_ && static_cast<int64_t>(data_->size()) == shape_.numel(),
            "tensor: payload size does not match shape ", shape_.str());
  }

  static Tensor constant(Shape shape, std::vector<T> values) {
    return Tensor(shape, std::make_shared<const std::vector<T>>(std::move(values)));
  }

  static Tensor zeros(Shape shape) {
    return constant(shape, std::vector<T>(static_cast<size_t>(shape.numel()), T(0)));
  }

  static Tensor full(Shape shape, T v) {
    return constant(shape, std::vector<T>(static_cast<size_t>(shape.numel()), v));
  }

  static Tensor scalar(T v) { return constant(Shape::scalar(), {v}); }

  bool defined() const { return static_cast<bool>(data_); }
  const Shape& shape() const { return shape_; }
  int64_t numel() const { return shape_.numel(); }
  const std::vector<T>& values() const { return *data_; }
  const T* data() const { return data_->data(); }
  T item() const {
    require(shape_.numel() == 1, "item: tensor of shape ", shape_.str(),
            " is not a scalar");
    return (*data_)[0];
  }

  std::shared_ptr<const std::vector<T>> ptr() const { return data_; }

  // Same value without the graph handle; used to carry results past the
  // lifetime of the graph that produced them.
  Tensor detached() const {
    Tensor t;
    t.shape_ = shape_;
    t.data_ = data_;
    return t;
  }

  bool tracked() const { return node_ >= 0; }
  int node() const { return node_; }
  Graph<T>* graph() const { return graph_; }

 private:
  friend class Graph<T>;
  Shape shape_{};
  std::shared_ptr<const std::vector<T>> data_;
  Graph<T>* graph_ = nullptr;
  int node_ = -1;
};

}  // namespace cw::ad
