#pragma once

#include "vesselseg/tensor.hpp"

namespace vseg::nn {

// 3D convolution kernels on (C,D,H,W) tensors, weight layout
// (Cout,Cin,k,k,k). The OpenMP variants assign each output element to exactly
// one thread and keep the per-element accumulation order identical to the
// serial reference, so both produce bit-identical results.

Tensor conv3d_forward(const Tensor& in, const Tensor& weight, const Tensor& bias, int stride,
                      int pad);
Tensor conv3d_backward_input(const Tensor& grad_out, const Tensor& weight,
                             const std::vector<int>& in_shape, int stride, int pad);
Tensor conv3d_backward_weight(const Tensor& in, const Tensor& grad_out, int kernel, int stride,
                              int pad);
Tensor conv3d_backward_bias(const Tensor& grad_out);

Tensor avgpool2_forward(const Tensor& in);
Tensor avgpool2_backward(const Tensor& grad_out, const std::vector<int>& in_shape);

Tensor upsample_nearest2_forward(const Tensor& in);
Tensor upsample_nearest2_backward(const Tensor& grad_out, const std::vector<int>& in_shape);

namespace serial {
/// Reference implementations; compared against the parallel kernels in tests
/// and in the kernel benchmark.
Tensor conv3d_forward(const Tensor& in, const Tensor& weight, const Tensor& bias, int stride,
                      int pad);
Tensor conv3d_backward_input(const Tensor& grad_out, const Tensor& weight,
                             const std::vector<int>& in_shape, int stride, int pad);
Tensor conv3d_backward_weight(const Tensor& in, const Tensor& grad_out, int kernel, int stride,
                              int pad);
}  // namespace serial

}  // namespace vseg::nn
