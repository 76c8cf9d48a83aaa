#pragma once

#include <string>
#include <vector>

#include "vesselseg/nn/kernels.hpp"
#include "vesselseg/rng.hpp"
#include "vesselseg/tensor.hpp"

namespace vseg::nn {

/// View over one learnable tensor and its gradient accumulator.
struct NamedParam {
    std::string name;
    Tensor* value;
    Tensor* grad;
};

class Conv3d {
public:
    Conv3d() = default;
    Conv3d(int cin, int cout, int kernel, int stride, int pad);
    void init(Rng& rng);
    Tensor forward(const Tensor& x, bool training);
    Tensor backward(const Tensor& grad_out);
    void collect(const std::string& prefix, std::vector<NamedParam>& out);

    Tensor weight, bias, gweight, gbias;
    int kernel = 3, stride = 1, pad = 1;

private:
    Tensor cached_input_;
    std::vector<int> in_shape_;
};

/// Per-channel normalization over the spatial extent with affine parameters.
class InstanceNorm {
public:
    InstanceNorm() = default;
    explicit InstanceNorm(int channels, double eps = 1e-5);
    Tensor forward(const Tensor& x, bool training);
    Tensor backward(const Tensor& grad_out);
    void collect(const std::string& prefix, std::vector<NamedParam>& out);

    Tensor gamma, beta, ggamma, gbeta;
    double eps = 1e-5;

private:
    Tensor xhat_;
    std::vector<double> inv_std_;
};

class ReLU {
public:
    Tensor forward(const Tensor& x, bool training);
    Tensor backward(const Tensor& grad_out);

private:
    std::vector<char> positive_;
};

/// Softmax over the channel axis of a (C,D,H,W) tensor.
class ChannelSoftmax {
public:
    Tensor forward(const Tensor& x, bool training);
    Tensor backward(const Tensor& grad_out);

private:
    Tensor cached_output_;
};

/// Row-wise affine map on a (T,in) matrix: y = x W + b, W is (in,out).
class Linear {
public:
    Linear() = default;
    Linear(int in_features, int out_features);
    void init(Rng& rng);
    Tensor forward(const Tensor& x, bool training);
    Tensor backward(const Tensor& grad_out);
    void collect(const std::string& prefix, std::vector<NamedParam>& out);

    Tensor weight, bias, gweight, gbias;

private:
    Tensor cached_input_;
};

/// Row-wise normalization of a (T,C) matrix with affine parameters.
class LayerNorm {
public:
    LayerNorm() = default;
    explicit LayerNorm(int features, double eps = 1e-5);
    Tensor forward(const Tensor& x, bool training);
    Tensor backward(const Tensor& grad_out);
    void collect(const std::string& prefix, std::vector<NamedParam>& out);

    Tensor gamma, beta, ggamma, gbeta;
    double eps = 1e-5;

private:
    Tensor xhat_;
    std::vector<double> inv_std_;
};

/// Multi-head self-attention over non-overlapping cubic windows of a
/// (C,D,H,W) field. Every spatial extent must be divisible by the window.
class WindowAttention {
public:
    WindowAttention() = default;
    WindowAttention(int channels, int heads, int window);
    void init(Rng& rng);
    Tensor forward(const Tensor& x, bool training);
    Tensor backward(const Tensor& grad_out);
    void collect(const std::string& prefix, std::vector<NamedParam>& out);

    Linear qkv, proj;
    int channels = 0, heads = 1, window = 4;

private:
    struct WindowCache {
        Tensor x;     // (T,C) window tokens
        Tensor q, k, v;  // (T,C) each
        Tensor attn;  // (heads,T,T) softmax rows
        Tensor ctx;   // (T,C) attention output before proj
    };
    std::vector<WindowCache> caches_;
    std::vector<int> in_shape_;
};

// ---- helpers shared by the network classes ----------------------------------

Tensor concat_channels(const Tensor& a, const Tensor& b);
void split_channels(const Tensor& g, int c_first, Tensor& ga, Tensor& gb);

/// (C,D,H,W) -> (D*H*W, C) token matrix and back.
Tensor to_tokens(const Tensor& x);
Tensor from_tokens(const Tensor& t, const std::vector<int>& chw_shape);

}  // namespace vseg::nn
