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

#include <cstdint>

namespace cw::ad::kern {

// Raw numeric kernels behind the graph primitives.  Activation layout is
// H x W x C with C contiguous; kernel weights are ky x kx x Ci x Co.
// Convolutions of size n > 1 use reflective padding of width 1 (the border
// row is not repeated); n == 1 uses no padding.  All kernels are
// deterministic sequential loops.

// out dims for a convolution: Ho = (H + 2p - n) / s + 1, p = (n > 1).
int conv_out_dim(int in, int n, int stride);

template <typename T>
void conv_nb(const T* x, int H, int W, int Ci, const T* w, int n, int Co,
             int stride, T* out);

// Adjoint of conv_nb with respect to its input; accumulates nothing, writes
// the folded result for the full input extent H x W x Ci.
template <typename T>
void conv_gi(const T* g, int Ho, int Wo, const T* w, int n, int Ci, int Co,
             int stride, int H, int W, T* gx);

// Adjoint with respect to the kernel.
template <typename T>
void conv_gk(const T* x, int H, int W, int Ci, const T* g, int Ho, int Wo,
             int n, int Co, int stride, T* gw);

template <typename T>
void dense_nb(const T* x, int in, const T* w, int out_w, T* out);

template <typename T>
void dense_gi(const T* g, int out_w, const T* w, int in, T* gx);

template <typename T>
void dense_gw(const T* x, int in, const T* g, int out_w, T* gw);

template <typename T>
void avg_pool2(const T* x, int H, int W, int C, T* out);

template <typename T>
void upsample2(const T* x, int H, int W, int C, T* out);

extern template void conv_nb<float>(const float*, int, int, int, const float*, int, int, int, float*);
extern template void conv_nb<double>(const double*, int, int, int, const double*, int, int, int, double*);
extern template void conv_gi<float>(const float*, int, int, const float*, int, int, int, int, int, int, float*);
extern template void conv_gi<double>(const double*, int, int, const double*, int, int, int, int, int, int, double*);
extern template void conv_gk<float>(const float*, int, int, int, const float*, int, int, int, int, int, float*);
extern template void conv_gk<double>(const double*, int, int, int, const double*, int, int, int, int, int, double*);
extern template void dense_nb<float>(const float*, int, const float*, int, float*);
extern template void dense_nb<double>(const double*, int, const double*, int, double*);
extern template void dense_gi<float>(const float*, int, const float*, int, float*);
extern template void dense_gi<double>(const double*, int, const double*, int, double*);
extern template void dense_gw<float>(const float*, int, const float*, int, float*);
extern template void dense_gw<double>(const double*, int, const double*, int, double*);
extern template void avg_pool2<float>(const float*, int, int, int, float*);
extern template void avg_pool2<double>(const double*, int, int, int, double*);
extern template void upsample2<float>(const float*, int, int, int, float*);
extern template void upsample2<double>(const double*, int, int, int, double*);

}  // namespace cw::ad::kern
