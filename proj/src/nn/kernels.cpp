#include "vesselseg/nn/kernels.hpp"

#include <stdexcept>

namespace vseg::nn {

namespace {

inline int out_extent(int in, int k, int stride, int pad) {
    return (in + 2 * pad - k) / stride + 1;
}

void check_conv_args(const Tensor& in, const Tensor& weight, int stride, int pad) {
    if (in.rank() != 4 || weight.rank() != 5)
        throw std::invalid_argument("conv3d expects (C,D,H,W) input and (Co,Ci,k,k,k) weight");
    if (weight.extent(1) != in.extent(0))
        throw std::invalid_argument("conv3d channel mismatch");
    if (stride < 1 || pad < 0) throw std::invalid_argument("bad conv3d stride/pad");
}

// One output element; accumulation order fixed (ic, kz, ky, kx).
inline double conv_point(const Tensor& in, const Tensor& weight, int oc, int od, int oh, int ow,
                         int stride, int pad) {
    const int Ci = in.extent(0), D = in.extent(1), H = in.extent(2), W = in.extent(3);
    const int k = weight.extent(2);
    const std::size_t wbase = static_cast<std::size_t>(oc) * Ci * k * k * k;
    double acc = 0.0;
    for (int ic = 0; ic < Ci; ++ic) {
        const double* wplane = weight.data() + wbase + static_cast<std::size_t>(ic) * k * k * k;
        for (int kz = 0; kz < k; ++kz) {
            const int z = od * stride - pad + kz;
            if (z < 0 || z >= D) continue;
            for (int ky = 0; ky < k; ++ky) {
                const int y = oh * stride - pad + ky;
                if (y < 0 || y >= H) continue;
                const double* irow = &in.at(ic, z, y, 0);
                const double* wrow = wplane + (static_cast<std::size_t>(kz) * k + ky) * k;
                for (int kx = 0; kx < k; ++kx) {
                    const int x = ow * stride - pad + kx;
                    if (x < 0 || x >= W) continue;
                    acc += irow[x] * wrow[kx];
                }
            }
        }
    }
    return acc;
}

inline double conv_input_grad_point(const Tensor& grad_out, const Tensor& weight, int ic, int z,
                                    int y, int x, int stride, int pad) {
    const int Co = grad_out.extent(0), Do = grad_out.extent(1), Ho = grad_out.extent(2),
              Wo = grad_out.extent(3);
    const int k = weight.extent(2);
    const int Ci = weight.extent(1);
    double acc = 0.0;
    for (int oc = 0; oc < Co; ++oc) {
        const std::size_t wbase =
            (static_cast<std::size_t>(oc) * Ci + ic) * static_cast<std::size_t>(k) * k * k;
        for (int kz = 0; kz < k; ++kz) {
            const int num_z = z + pad - kz;
            if (num_z < 0 || num_z % stride != 0) continue;
            const int od = num_z / stride;
            if (od >= Do) continue;
            for (int ky = 0; ky < k; ++ky) {
                const int num_y = y + pad - ky;
                if (num_y < 0 || num_y % stride != 0) continue;
                const int oh = num_y / stride;
                if (oh >= Ho) continue;
                for (int kx = 0; kx < k; ++kx) {
                    const int num_x = x + pad - kx;
                    if (num_x < 0 || num_x % stride != 0) continue;
                    const int ow = num_x / stride;
                    if (ow >= Wo) continue;
                    acc += grad_out.at(oc, od, oh, ow) *
                           weight[wbase + (static_cast<std::size_t>(kz) * k + ky) * k + kx];
                }
            }
        }
    }
    return acc;
}

inline double conv_weight_grad_point(const Tensor& in, const Tensor& grad_out, int oc, int ic,
                                     int kz, int ky, int kx, int stride, int pad) {
    const int D = in.extent(1), H = in.extent(2), W = in.extent(3);
    const int Do = grad_out.extent(1), Ho = grad_out.extent(2), Wo = grad_out.extent(3);
    double acc = 0.0;
    for (int od = 0; od < Do; ++od) {
        const int z = od * stride - pad + kz;
        if (z < 0 || z >= D) continue;
        for (int oh = 0; oh < Ho; ++oh) {
            const int y = oh * stride - pad + ky;
            if (y < 0 || y >= H) continue;
            for (int ow = 0; ow < Wo; ++ow) {
                const int x = ow * stride - pad + kx;
                if (x < 0 || x >= W) continue;
                acc += grad_out.at(oc, od, oh, ow) * in.at(ic, z, y, x);
            }
        }
    }
    return acc;
}

}  // namespace

Tensor conv3d_forward(const Tensor& in, const Tensor& weight, const Tensor& bias, int stride,
                      int pad) {
    check_conv_args(in, weight, stride, pad);
    const int Co = weight.extent(0), k = weight.extent(2);
    const int Do = out_extent(in.extent(1), k, stride, pad);
    const int Ho = out_extent(in.extent(2), k, stride, pad);
    const int Wo = out_extent(in.extent(3), k, stride, pad);
    if (Do <= 0 || Ho <= 0 || Wo <= 0) throw std::invalid_argument("conv3d output would be empty");

    Tensor out({Co, Do, Ho, Wo});
#pragma omp parallel for collapse(2) schedule(static)
    for (int oc = 0; oc < Co; ++oc)
        for (int od = 0; od < Do; ++od)
            for (int oh = 0; oh < Ho; ++oh)
                for (int ow = 0; ow < Wo; ++ow)
                    out.at(oc, od, oh, ow) =
                        conv_point(in, weight, oc, od, oh, ow, stride, pad) +
                        (bias.empty() ? 0.0 : bias[static_cast<std::size_t>(oc)]);
    return out;
}

Tensor conv3d_backward_input(const Tensor& grad_out, const Tensor& weight,
                             const std::vector<int>& in_shape, int stride, int pad) {
    Tensor grad_in(in_shape);
    const int Ci = in_shape[0], D = in_shape[1], H = in_shape[2], W = in_shape[3];
#pragma omp parallel for collapse(2) schedule(static)
    for (int ic = 0; ic < Ci; ++ic)
        for (int z = 0; z < D; ++z)
            for (int y = 0; y < H; ++y)
                for (int x = 0; x < W; ++x)
                    grad_in.at(ic, z, y, x) =
                        conv_input_grad_point(grad_out, weight, ic, z, y, x, stride, pad);
    return grad_in;
}

Tensor conv3d_backward_weight(const Tensor& in, const Tensor& grad_out, int kernel, int stride,
                              int pad) {
    const int Co = grad_out.extent(0), Ci = in.extent(0);
    Tensor grad_w({Co, Ci, kernel, kernel, kernel});
#pragma omp parallel for schedule(static)
    for (int oc = 0; oc < Co; ++oc)
        for (int ic = 0; ic < Ci; ++ic)
            for (int kz = 0; kz < kernel; ++kz)
                for (int ky = 0; ky < kernel; ++ky)
                    for (int kx = 0; kx < kernel; ++kx)
                        grad_w[(((static_cast<std::size_t>(oc) * Ci + ic) * kernel + kz) * kernel +
                                ky) *
                                   kernel +
                               kx] =
                            conv_weight_grad_point(in, grad_out, oc, ic, kz, ky, kx, stride, pad);
    return grad_w;
}

Tensor conv3d_backward_bias(const Tensor& grad_out) {
    const int Co = grad_out.extent(0);
    const std::size_t spatial = grad_out.size() / static_cast<std::size_t>(Co);
    Tensor grad_b({Co});
    for (int oc = 0; oc < Co; ++oc) {
        const double* g = grad_out.data() + static_cast<std::size_t>(oc) * spatial;
        double acc = 0.0;
        for (std::size_t i = 0; i < spatial; ++i) acc += g[i];
        grad_b[static_cast<std::size_t>(oc)] = acc;
    }
    return grad_b;
}

Tensor avgpool2_forward(const Tensor& in) {
    const int C = in.extent(0), D = in.extent(1), H = in.extent(2), W = in.extent(3);
    if (D % 2 || H % 2 || W % 2) throw std::invalid_argument("avgpool2 needs even extents");
    Tensor out({C, D / 2, H / 2, W / 2});
#pragma omp parallel for schedule(static)
    for (int c = 0; c < C; ++c)
        for (int d = 0; d < D / 2; ++d)
            for (int h = 0; h < H / 2; ++h)
                for (int w = 0; w < W / 2; ++w) {
                    double acc = 0.0;
                    for (int dz = 0; dz < 2; ++dz)
                        for (int dy = 0; dy < 2; ++dy)
                            for (int dx = 0; dx < 2; ++dx)
                                acc += in.at(c, 2 * d + dz, 2 * h + dy, 2 * w + dx);
                    out.at(c, d, h, w) = acc * 0.125;
                }
    return out;
}

Tensor avgpool2_backward(const Tensor& grad_out, const std::vector<int>& in_shape) {
    Tensor grad_in(in_shape);
    const int C = in_shape[0], D = in_shape[1], H = in_shape[2], W = in_shape[3];
#pragma omp parallel for schedule(static)
    for (int c = 0; c < C; ++c)
        for (int z = 0; z < D; ++z)
            for (int y = 0; y < H; ++y)
                for (int x = 0; x < W; ++x)
                    grad_in.at(c, z, y, x) = grad_out.at(c, z / 2, y / 2, x / 2) * 0.125;
    return grad_in;
}

Tensor upsample_nearest2_forward(const Tensor& in) {
    const int C = in.extent(0), D = in.extent(1), H = in.extent(2), W = in.extent(3);
    Tensor out({C, D * 2, H * 2, W * 2});
#pragma omp parallel for schedule(static)
    for (int c = 0; c < C; ++c)
        for (int z = 0; z < D * 2; ++z)
            for (int y = 0; y < H * 2; ++y)
                for (int x = 0; x < W * 2; ++x)
                    out.at(c, z, y, x) = in.at(c, z / 2, y / 2, x / 2);
    return out;
}

Tensor upsample_nearest2_backward(const Tensor& grad_out, const std::vector<int>& in_shape) {
    Tensor grad_in(in_shape);
    const int C = in_shape[0], D = in_shape[1], H = in_shape[2], W = in_shape[3];
#pragma omp parallel for schedule(static)
    for (int c = 0; c < C; ++c)
        for (int z = 0; z < D; ++z)
            for (int y = 0; y < H; ++y)
                for (int x = 0; x < W; ++x) {
                    double acc = 0.0;
                    for (int dz = 0; dz < 2; ++dz)
                        for (int dy = 0; dy < 2; ++dy)
                            for (int dx = 0; dx < 2; ++dx)
                                acc += grad_out.at(c, 2 * z + dz, 2 * y + dy, 2 * x + dx);
                    grad_in.at(c, z, y, x) = acc;
                }
    return grad_in;
}

namespace serial {

Tensor conv3d_forward(const Tensor& in, const Tensor& weight, const Tensor& bias, int stride,
                      int pad) {
    check_conv_args(in, weight, stride, pad);
    const int Co = weight.extent(0), k = weight.extent(2);
    const int Do = out_extent(in.extent(1), k, stride, pad);
    const int Ho = out_extent(in.extent(2), k, stride, pad);
    const int Wo = out_extent(in.extent(3), k, stride, pad);
    Tensor out({Co, Do, Ho, Wo});
    for (int oc = 0; oc < Co; ++oc)
        for (int od = 0; od < Do; ++od)
            for (int oh = 0; oh < Ho; ++oh)
                for (int ow = 0; ow < Wo; ++ow)
                    out.at(oc, od, oh, ow) =
                        conv_point(in, weight, oc, od, oh, ow, stride, pad) +
                        (bias.empty() ? 0.0 : bias[static_cast<std::size_t>(oc)]);
    return out;
}

Tensor conv3d_backward_input(const Tensor& grad_out, const Tensor& weight,
                             const std::vector<int>& in_shape, int stride, int pad) {
    Tensor grad_in(in_shape);
    const int Ci = in_shape[0], D = in_shape[1], H = in_shape[2], W = in_shape[3];
    for (int ic = 0; ic < Ci; ++ic)
        for (int z = 0; z < D; ++z)
            for (int y = 0; y < H; ++y)
                for (int x = 0; x < W; ++x)
                    grad_in.at(ic, z, y, x) =
                        conv_input_grad_point(grad_out, weight, ic, z, y, x, stride, pad);
    return grad_in;
}

Tensor conv3d_backward_weight(const Tensor& in, const Tensor& grad_out, int kernel, int stride,
                              int pad) {
    const int Co = grad_out.extent(0), Ci = in.extent(0);
    Tensor grad_w({Co, Ci, kernel, kernel, kernel});
    for (int oc = 0; oc < Co; ++oc)
        for (int ic = 0; ic < Ci; ++ic)
            for (int kz = 0; kz < kernel; ++kz)
                for (int ky = 0; ky < kernel; ++ky)
                    for (int kx = 0; kx < kernel; ++kx)
                        grad_w[(((static_cast<std::size_t>(oc) * Ci + ic) * kernel + kz) * kernel +
                                ky) *
                                   kernel +
                               kx] =
                            conv_weight_grad_point(in, grad_out, oc, ic, kz, ky, kx, stride, pad);
    return grad_w;
}

}  // namespace serial

}  // namespace vseg::nn
