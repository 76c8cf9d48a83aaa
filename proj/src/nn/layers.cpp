#include "vesselseg/nn/layers.hpp"

#include <cmath>
#include <stdexcept>

namespace vseg::nn {

// ---- Conv3d ------------------------------------------------------------------

Conv3d::Conv3d(int cin, int cout, int kernel_, int stride_, int pad_)
    : weight({cout, cin, kernel_, kernel_, kernel_}),
      bias({cout}),
      gweight({cout, cin, kernel_, kernel_, kernel_}),
      gbias({cout}),
      kernel(kernel_),
      stride(stride_),
      pad(pad_) {}

void Conv3d::init(Rng& rng) {
    const int fan_in = weight.extent(1) * kernel * kernel * kernel;
    const double std = std::sqrt(2.0 / fan_in);
    for (std::size_t i = 0; i < weight.size(); ++i) weight[i] = rng.normal(0.0, std);
    bias.fill(0.0);
}

Tensor Conv3d::forward(const Tensor& x, bool training) {
    if (training) {
        cached_input_ = x;
        in_shape_ = x.shape();
    }
    return conv3d_forward(x, weight, bias, stride, pad);
}

Tensor Conv3d::backward(const Tensor& grad_out) {
    Tensor gw = conv3d_backward_weight(cached_input_, grad_out, kernel, stride, pad);
    for (std::size_t i = 0; i < gw.size(); ++i) gweight[i] += gw[i];
    Tensor gb = conv3d_backward_bias(grad_out);
    for (std::size_t i = 0; i < gb.size(); ++i) gbias[i] += gb[i];
    return conv3d_backward_input(grad_out, weight, in_shape_, stride, pad);
}

void Conv3d::collect(const std::string& prefix, std::vector<NamedParam>& out) {
    out.push_back({prefix + ".weight", &weight, &gweight});
    out.push_back({prefix + ".bias", &bias, &gbias});
}

// ---- InstanceNorm --------------------------------------------------------------

InstanceNorm::InstanceNorm(int channels, double eps_)
    : gamma({channels}, 1.0), beta({channels}), ggamma({channels}), gbeta({channels}), eps(eps_) {}

Tensor InstanceNorm::forward(const Tensor& x, bool training) {
    const int C = x.extent(0);
    const std::size_t n = x.size() / static_cast<std::size_t>(C);
    Tensor out(x.shape());
    Tensor xhat(x.shape());
    std::vector<double> inv_std(static_cast<std::size_t>(C));
#pragma omp parallel for schedule(static)
    for (int c = 0; c < C; ++c) {
        const double* xc = x.data() + static_cast<std::size_t>(c) * n;
        double mean = 0.0;
        for (std::size_t i = 0; i < n; ++i) mean += xc[i];
        mean /= static_cast<double>(n);
        double var = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double d = xc[i] - mean;
            var += d * d;
        }
        var /= static_cast<double>(n);
        const double istd = 1.0 / std::sqrt(var + eps);
        inv_std[static_cast<std::size_t>(c)] = istd;
        const double g = gamma[static_cast<std::size_t>(c)], b = beta[static_cast<std::size_t>(c)];
        double* oc = out.data() + static_cast<std::size_t>(c) * n;
        double* hc = xhat.data() + static_cast<std::size_t>(c) * n;
        for (std::size_t i = 0; i < n; ++i) {
            hc[i] = (xc[i] - mean) * istd;
            oc[i] = g * hc[i] + b;
        }
    }
    if (training) {
        xhat_ = std::move(xhat);
        inv_std_ = std::move(inv_std);
    }
    return out;
}

Tensor InstanceNorm::backward(const Tensor& grad_out) {
    const int C = grad_out.extent(0);
    const std::size_t n = grad_out.size() / static_cast<std::size_t>(C);
    Tensor grad_in(grad_out.shape());
#pragma omp parallel for schedule(static)
    for (int c = 0; c < C; ++c) {
        const double* gy = grad_out.data() + static_cast<std::size_t>(c) * n;
        const double* xh = xhat_.data() + static_cast<std::size_t>(c) * n;
        double sum_gy = 0.0, sum_gy_xh = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            sum_gy += gy[i];
            sum_gy_xh += gy[i] * xh[i];
        }
        gbeta[static_cast<std::size_t>(c)] += sum_gy;
        ggamma[static_cast<std::size_t>(c)] += sum_gy_xh;

        const double g = gamma[static_cast<std::size_t>(c)];
        const double istd = inv_std_[static_cast<std::size_t>(c)];
        const double mean_gy = sum_gy / static_cast<double>(n);
        const double mean_gy_xh = sum_gy_xh / static_cast<double>(n);
        double* gx = grad_in.data() + static_cast<std::size_t>(c) * n;
        for (std::size_t i = 0; i < n; ++i)
            gx[i] = g * istd * (gy[i] - mean_gy - xh[i] * mean_gy_xh);
    }
    return grad_in;
}

void InstanceNorm::collect(const std::string& prefix, std::vector<NamedParam>& out) {
    out.push_back({prefix + ".gamma", &gamma, &ggamma});
    out.push_back({prefix + ".beta", &beta, &gbeta});
}

// ---- ReLU ----------------------------------------------------------------------

Tensor ReLU::forward(const Tensor& x, bool training) {
    Tensor out(x.shape());
    if (training) positive_.assign(x.size(), 0);
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (x[i] > 0.0) {
            out[i] = x[i];
            if (training) positive_[i] = 1;
        }
    }
    return out;
}

Tensor ReLU::backward(const Tensor& grad_out) {
    Tensor grad_in(grad_out.shape());
    for (std::size_t i = 0; i < grad_out.size(); ++i)
        if (positive_[i]) grad_in[i] = grad_out[i];
    return grad_in;
}

// ---- ChannelSoftmax --------------------------------------------------------------

Tensor ChannelSoftmax::forward(const Tensor& x, bool training) {
    const int C = x.extent(0);
    const std::size_t n = x.size() / static_cast<std::size_t>(C);
    Tensor out(x.shape());
    for (std::size_t v = 0; v < n; ++v) {
        double mx = x[v];
        for (int c = 1; c < C; ++c) mx = std::max(mx, x[static_cast<std::size_t>(c) * n + v]);
        double denom = 0.0;
        for (int c = 0; c < C; ++c) {
            const double e = std::exp(x[static_cast<std::size_t>(c) * n + v] - mx);
            out[static_cast<std::size_t>(c) * n + v] = e;
            denom += e;
        }
        for (int c = 0; c < C; ++c) out[static_cast<std::size_t>(c) * n + v] /= denom;
    }
    if (training) cached_output_ = out;
    return out;
}

Tensor ChannelSoftmax::backward(const Tensor& grad_out) {
    const int C = grad_out.extent(0);
    const std::size_t n = grad_out.size() / static_cast<std::size_t>(C);
    Tensor grad_in(grad_out.shape());
    for (std::size_t v = 0; v < n; ++v) {
        double dot = 0.0;
        for (int c = 0; c < C; ++c)
            dot += cached_output_[static_cast<std::size_t>(c) * n + v] *
                   grad_out[static_cast<std::size_t>(c) * n + v];
        for (int c = 0; c < C; ++c) {
            const std::size_t i = static_cast<std::size_t>(c) * n + v;
            grad_in[i] = cached_output_[i] * (grad_out[i] - dot);
        }
    }
    return grad_in;
}

// ---- Linear ----------------------------------------------------------------------

Linear::Linear(int in_features, int out_features)
    : weight({in_features, out_features}),
      bias({out_features}),
      gweight({in_features, out_features}),
      gbias({out_features}) {}

void Linear::init(Rng& rng) {
    const int fan_in = weight.extent(0);
    const double std = std::sqrt(1.0 / fan_in);
    for (std::size_t i = 0; i < weight.size(); ++i) weight[i] = rng.normal(0.0, std);
    bias.fill(0.0);
}

Tensor Linear::forward(const Tensor& x, bool training) {
    const int T = x.extent(0), in = x.extent(1), out_f = weight.extent(1);
    if (in != weight.extent(0)) throw std::invalid_argument("linear feature mismatch");
    if (training) cached_input_ = x;
    Tensor y({T, out_f});
#pragma omp parallel for schedule(static)
    for (int t = 0; t < T; ++t) {
        const double* xr = x.data() + static_cast<std::size_t>(t) * in;
        double* yr = y.data() + static_cast<std::size_t>(t) * out_f;
        for (int o = 0; o < out_f; ++o) yr[o] = bias[static_cast<std::size_t>(o)];
        for (int i = 0; i < in; ++i) {
            const double xi = xr[i];
            const double* wr = weight.data() + static_cast<std::size_t>(i) * out_f;
            for (int o = 0; o < out_f; ++o) yr[o] += xi * wr[o];
        }
    }
    return y;
}

Tensor Linear::backward(const Tensor& grad_out) {
    const int T = grad_out.extent(0), out_f = weight.extent(1), in = weight.extent(0);
    // dW = x^T gy, each thread owns one input-feature row.
#pragma omp parallel for schedule(static)
    for (int i = 0; i < in; ++i) {
        double* gw = gweight.data() + static_cast<std::size_t>(i) * out_f;
        for (int t = 0; t < T; ++t) {
            const double xi = cached_input_[static_cast<std::size_t>(t) * in + i];
            const double* gy = grad_out.data() + static_cast<std::size_t>(t) * out_f;
            for (int o = 0; o < out_f; ++o) gw[o] += xi * gy[o];
        }
    }
    for (int t = 0; t < T; ++t) {
        const double* gy = grad_out.data() + static_cast<std::size_t>(t) * out_f;
        for (int o = 0; o < out_f; ++o) gbias[static_cast<std::size_t>(o)] += gy[o];
    }
    Tensor grad_in({T, in});
#pragma omp parallel for schedule(static)
    for (int t = 0; t < T; ++t) {
        const double* gy = grad_out.data() + static_cast<std::size_t>(t) * out_f;
        double* gx = grad_in.data() + static_cast<std::size_t>(t) * in;
        for (int i = 0; i < in; ++i) {
            const double* wr = weight.data() + static_cast<std::size_t>(i) * out_f;
            double acc = 0.0;
            for (int o = 0; o < out_f; ++o) acc += gy[o] * wr[o];
            gx[i] = acc;
        }
    }
    return grad_in;
}

void Linear::collect(const std::string& prefix, std::vector<NamedParam>& out) {
    out.push_back({prefix + ".weight", &weight, &gweight});
    out.push_back({prefix + ".bias", &bias, &gbias});
}

// ---- LayerNorm --------------------------------------------------------------------

LayerNorm::LayerNorm(int features, double eps_)
    : gamma({features}, 1.0), beta({features}), ggamma({features}), gbeta({features}), eps(eps_) {}

Tensor LayerNorm::forward(const Tensor& x, bool training) {
    const int T = x.extent(0), C = x.extent(1);
    Tensor out(x.shape());
    Tensor xhat(x.shape());
    std::vector<double> inv_std(static_cast<std::size_t>(T));
#pragma omp parallel for schedule(static)
    for (int t = 0; t < T; ++t) {
        const double* xr = x.data() + static_cast<std::size_t>(t) * C;
        double mean = 0.0;
        for (int c = 0; c < C; ++c) mean += xr[c];
        mean /= C;
        double var = 0.0;
        for (int c = 0; c < C; ++c) {
            const double d = xr[c] - mean;
            var += d * d;
        }
        var /= C;
        const double istd = 1.0 / std::sqrt(var + eps);
        inv_std[static_cast<std::size_t>(t)] = istd;
        double* hr = xhat.data() + static_cast<std::size_t>(t) * C;
        double* orow = out.data() + static_cast<std::size_t>(t) * C;
        for (int c = 0; c < C; ++c) {
            hr[c] = (xr[c] - mean) * istd;
            orow[c] = gamma[static_cast<std::size_t>(c)] * hr[c] + beta[static_cast<std::size_t>(c)];
        }
    }
    if (training) {
        xhat_ = std::move(xhat);
        inv_std_ = std::move(inv_std);
    }
    return out;
}

Tensor LayerNorm::backward(const Tensor& grad_out) {
    const int T = grad_out.extent(0), C = grad_out.extent(1);
    Tensor grad_in(grad_out.shape());
    // Parameter grads accumulate across rows; keep that loop serial so the
    // result does not depend on the thread count.
    for (int t = 0; t < T; ++t) {
        const double* gy = grad_out.data() + static_cast<std::size_t>(t) * C;
        const double* xh = xhat_.data() + static_cast<std::size_t>(t) * C;
        for (int c = 0; c < C; ++c) {
            gbeta[static_cast<std::size_t>(c)] += gy[c];
            ggamma[static_cast<std::size_t>(c)] += gy[c] * xh[c];
        }
    }
#pragma omp parallel for schedule(static)
    for (int t = 0; t < T; ++t) {
        const double* gy = grad_out.data() + static_cast<std::size_t>(t) * C;
        const double* xh = xhat_.data() + static_cast<std::size_t>(t) * C;
        double sum_g = 0.0, sum_g_xh = 0.0;
        for (int c = 0; c < C; ++c) {
            const double gg = gy[c] * gamma[static_cast<std::size_t>(c)];
            sum_g += gg;
            sum_g_xh += gg * xh[c];
        }
        const double istd = inv_std_[static_cast<std::size_t>(t)];
        double* gx = grad_in.data() + static_cast<std::size_t>(t) * C;
        for (int c = 0; c < C; ++c) {
            const double gg = gy[c] * gamma[static_cast<std::size_t>(c)];
            gx[c] = istd * (gg - sum_g / C - xh[c] * sum_g_xh / C);
        }
    }
    return grad_in;
}

void LayerNorm::collect(const std::string& prefix, std::vector<NamedParam>& out) {
    out.push_back({prefix + ".gamma", &gamma, &ggamma});
    out.push_back({prefix + ".beta", &beta, &gbeta});
}

// ---- WindowAttention ------------------------------------------------------------

WindowAttention::WindowAttention(int channels_, int heads_, int window_)
    : qkv(channels_, 3 * channels_),
      proj(channels_, channels_),
      channels(channels_),
      heads(heads_),
      window(window_) {
    if (channels_ % heads_ != 0)
        throw std::invalid_argument("attention channels must be divisible by heads");
}

void WindowAttention::init(Rng& rng) {
    qkv.init(rng);
    proj.init(rng);
}

namespace {

// Gathers one w^3 window into a (T,C) token matrix.
void gather_window(const Tensor& x, int wd, int wh, int ww, int window, Tensor& tokens) {
    const int C = x.extent(0);
    int t = 0;
    for (int dz = 0; dz < window; ++dz)
        for (int dy = 0; dy < window; ++dy)
            for (int dx = 0; dx < window; ++dx, ++t)
                for (int c = 0; c < C; ++c)
                    tokens[static_cast<std::size_t>(t) * C + c] =
                        x.at(c, wd * window + dz, wh * window + dy, ww * window + dx);
}

void scatter_window(Tensor& x, int wd, int wh, int ww, int window, const Tensor& tokens) {
    const int C = x.extent(0);
    int t = 0;
    for (int dz = 0; dz < window; ++dz)
        for (int dy = 0; dy < window; ++dy)
            for (int dx = 0; dx < window; ++dx, ++t)
                for (int c = 0; c < C; ++c)
                    x.at(c, wd * window + dz, wh * window + dy, ww * window + dx) =
                        tokens[static_cast<std::size_t>(t) * C + c];
}

// y = a * b^T scaled, a (T,dh), b (T,dh) -> (T,T)
void matmul_qk(const double* q, const double* k, int T, int dh, double scale, double* s) {
    for (int i = 0; i < T; ++i)
        for (int j = 0; j < T; ++j) {
            double acc = 0.0;
            for (int d = 0; d < dh; ++d) acc += q[i * dh + d] * k[j * dh + d];
            s[i * T + j] = acc * scale;
        }
}

void softmax_rows(double* s, int T) {
    for (int i = 0; i < T; ++i) {
        double* row = s + i * T;
        double mx = row[0];
        for (int j = 1; j < T; ++j) mx = std::max(mx, row[j]);
        double denom = 0.0;
        for (int j = 0; j < T; ++j) {
            row[j] = std::exp(row[j] - mx);
            denom += row[j];
        }
        for (int j = 0; j < T; ++j) row[j] /= denom;
    }
}

}  // namespace

Tensor WindowAttention::forward(const Tensor& x, bool training) {
    const int C = x.extent(0), D = x.extent(1), H = x.extent(2), W = x.extent(3);
    if (D % window || H % window || W % window)
        throw std::invalid_argument("spatial extents must be divisible by the attention window");
    const int nd = D / window, nh = H / window, nw = W / window;
    const int n_windows = nd * nh * nw;
    const int T = window * window * window;
    const int dh = channels / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

    if (training) {
        caches_.assign(static_cast<std::size_t>(n_windows), {});
        in_shape_ = x.shape();
    }

    Tensor out(x.shape());
#pragma omp parallel for schedule(static)
    for (int wi = 0; wi < n_windows; ++wi) {
        const int wd = wi / (nh * nw);
        const int wh = (wi / nw) % nh;
        const int ww = wi % nw;

        Tensor tokens({T, C});
        gather_window(x, wd, wh, ww, window, tokens);

        // qkv projection inlined; Linear::forward caches state and is not
        // safe to share across windows.
        Tensor q({T, C}), k({T, C}), v({T, C});
        for (int t = 0; t < T; ++t) {
            const double* xr = tokens.data() + static_cast<std::size_t>(t) * C;
            double* qr = q.data() + static_cast<std::size_t>(t) * C;
            double* kr = k.data() + static_cast<std::size_t>(t) * C;
            double* vr = v.data() + static_cast<std::size_t>(t) * C;
            for (int o = 0; o < C; ++o) {
                qr[o] = qkv.bias[static_cast<std::size_t>(o)];
                kr[o] = qkv.bias[static_cast<std::size_t>(C + o)];
                vr[o] = qkv.bias[static_cast<std::size_t>(2 * C + o)];
            }
            for (int i = 0; i < C; ++i) {
                const double xi = xr[i];
                const double* wr = qkv.weight.data() + static_cast<std::size_t>(i) * 3 * C;
                for (int o = 0; o < C; ++o) {
                    qr[o] += xi * wr[o];
                    kr[o] += xi * wr[C + o];
                    vr[o] += xi * wr[2 * C + o];
                }
            }
        }

        Tensor attn({heads, T, T});
        Tensor ctx({T, C});
        for (int h = 0; h < heads; ++h) {
            std::vector<double> qh(static_cast<std::size_t>(T) * dh), kh(qh.size()), vh(qh.size());
            for (int t = 0; t < T; ++t)
                for (int d = 0; d < dh; ++d) {
                    qh[static_cast<std::size_t>(t) * dh + d] = q[static_cast<std::size_t>(t) * C + h * dh + d];
                    kh[static_cast<std::size_t>(t) * dh + d] = k[static_cast<std::size_t>(t) * C + h * dh + d];
                    vh[static_cast<std::size_t>(t) * dh + d] = v[static_cast<std::size_t>(t) * C + h * dh + d];
                }
            double* s = attn.data() + static_cast<std::size_t>(h) * T * T;
            matmul_qk(qh.data(), kh.data(), T, dh, scale, s);
            softmax_rows(s, T);
            for (int i = 0; i < T; ++i)
                for (int d = 0; d < dh; ++d) {
                    double acc = 0.0;
                    for (int j = 0; j < T; ++j) acc += s[i * T + j] * vh[static_cast<std::size_t>(j) * dh + d];
                    ctx[static_cast<std::size_t>(i) * C + h * dh + d] = acc;
                }
        }

        // Output projection.
        Tensor y({T, C});
        for (int t = 0; t < T; ++t) {
            const double* cr = ctx.data() + static_cast<std::size_t>(t) * C;
            double* yr = y.data() + static_cast<std::size_t>(t) * C;
            for (int o = 0; o < C; ++o) yr[o] = proj.bias[static_cast<std::size_t>(o)];
            for (int i = 0; i < C; ++i) {
                const double ci = cr[i];
                const double* wr = proj.weight.data() + static_cast<std::size_t>(i) * C;
                for (int o = 0; o < C; ++o) yr[o] += ci * wr[o];
            }
        }
        scatter_window(out, wd, wh, ww, window, y);

        if (training) {
            WindowCache& cache = caches_[static_cast<std::size_t>(wi)];
            cache.x = std::move(tokens);
            cache.q = std::move(q);
            cache.k = std::move(k);
            cache.v = std::move(v);
            cache.attn = std::move(attn);
            cache.ctx = std::move(ctx);
        }
    }
    return out;
}

Tensor WindowAttention::backward(const Tensor& grad_out) {
    const int C = in_shape_[0], D = in_shape_[1], H = in_shape_[2], W = in_shape_[3];
    const int nd = D / window, nh = H / window, nw = W / window;
    const int n_windows = nd * nh * nw;
    const int T = window * window * window;
    const int dh = channels / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

    Tensor grad_in(in_shape_);
    // Per-window parameter-gradient buffers, reduced serially afterwards so the
    // result is independent of the thread count.
    std::vector<Tensor> gw_qkv(static_cast<std::size_t>(n_windows));
    std::vector<Tensor> gb_qkv(static_cast<std::size_t>(n_windows));
    std::vector<Tensor> gw_proj(static_cast<std::size_t>(n_windows));
    std::vector<Tensor> gb_proj(static_cast<std::size_t>(n_windows));

#pragma omp parallel for schedule(static)
    for (int wi = 0; wi < n_windows; ++wi) {
        const int wd = wi / (nh * nw);
        const int wh = (wi / nw) % nh;
        const int ww = wi % nw;
        const WindowCache& cache = caches_[static_cast<std::size_t>(wi)];

        Tensor gy({T, C});
        gather_window(grad_out, wd, wh, ww, window, gy);

        Tensor& gwp = gw_proj[static_cast<std::size_t>(wi)];
        Tensor& gbp = gb_proj[static_cast<std::size_t>(wi)];
        gwp = Tensor({C, C});
        gbp = Tensor({C});
        Tensor gctx({T, C});
        for (int t = 0; t < T; ++t) {
            const double* gyr = gy.data() + static_cast<std::size_t>(t) * C;
            const double* cr = cache.ctx.data() + static_cast<std::size_t>(t) * C;
            for (int o = 0; o < C; ++o) gbp[static_cast<std::size_t>(o)] += gyr[o];
            for (int i = 0; i < C; ++i) {
                double acc = 0.0;
                const double* wr = proj.weight.data() + static_cast<std::size_t>(i) * C;
                for (int o = 0; o < C; ++o) {
                    gwp[static_cast<std::size_t>(i) * C + o] += cr[i] * gyr[o];
                    acc += gyr[o] * wr[o];
                }
                gctx[static_cast<std::size_t>(t) * C + i] = acc;
            }
        }

        Tensor gq({T, C}), gk({T, C}), gv({T, C});
        for (int h = 0; h < heads; ++h) {
            const double* attn = cache.attn.data() + static_cast<std::size_t>(h) * T * T;
            // dV = attn^T * gctx_h ; dAttn = gctx_h * V^T
            std::vector<double> dattn(static_cast<std::size_t>(T) * T, 0.0);
            for (int i = 0; i < T; ++i)
                for (int j = 0; j < T; ++j) {
                    double acc = 0.0;
                    for (int d = 0; d < dh; ++d)
                        acc += gctx[static_cast<std::size_t>(i) * C + h * dh + d] *
                               cache.v[static_cast<std::size_t>(j) * C + h * dh + d];
                    dattn[static_cast<std::size_t>(i) * T + j] = acc;
                }
            for (int j = 0; j < T; ++j)
                for (int d = 0; d < dh; ++d) {
                    double acc = 0.0;
                    for (int i = 0; i < T; ++i)
                        acc += attn[i * T + j] * gctx[static_cast<std::size_t>(i) * C + h * dh + d];
                    gv[static_cast<std::size_t>(j) * C + h * dh + d] = acc;
                }
            // softmax rows backward
            std::vector<double> dscore(static_cast<std::size_t>(T) * T, 0.0);
            for (int i = 0; i < T; ++i) {
                double dot = 0.0;
                for (int j = 0; j < T; ++j)
                    dot += attn[i * T + j] * dattn[static_cast<std::size_t>(i) * T + j];
                for (int j = 0; j < T; ++j)
                    dscore[static_cast<std::size_t>(i) * T + j] =
                        attn[i * T + j] * (dattn[static_cast<std::size_t>(i) * T + j] - dot);
            }
            // dQ = dscore * K * scale; dK = dscore^T * Q * scale
            for (int i = 0; i < T; ++i)
                for (int d = 0; d < dh; ++d) {
                    double accq = 0.0;
                    for (int j = 0; j < T; ++j)
                        accq += dscore[static_cast<std::size_t>(i) * T + j] *
                                cache.k[static_cast<std::size_t>(j) * C + h * dh + d];
                    gq[static_cast<std::size_t>(i) * C + h * dh + d] = accq * scale;
                }
            for (int j = 0; j < T; ++j)
                for (int d = 0; d < dh; ++d) {
                    double acck = 0.0;
                    for (int i = 0; i < T; ++i)
                        acck += dscore[static_cast<std::size_t>(i) * T + j] *
                                cache.q[static_cast<std::size_t>(i) * C + h * dh + d];
                    gk[static_cast<std::size_t>(j) * C + h * dh + d] = acck * scale;
                }
        }

        // Back through the fused qkv projection.
        Tensor& gwq = gw_qkv[static_cast<std::size_t>(wi)];
        Tensor& gbq = gb_qkv[static_cast<std::size_t>(wi)];
        gwq = Tensor({C, 3 * C});
        gbq = Tensor({3 * C});
        Tensor gx({T, C});
        for (int t = 0; t < T; ++t) {
            const double* xr = cache.x.data() + static_cast<std::size_t>(t) * C;
            const double* gqr = gq.data() + static_cast<std::size_t>(t) * C;
            const double* gkr = gk.data() + static_cast<std::size_t>(t) * C;
            const double* gvr = gv.data() + static_cast<std::size_t>(t) * C;
            for (int o = 0; o < C; ++o) {
                gbq[static_cast<std::size_t>(o)] += gqr[o];
                gbq[static_cast<std::size_t>(C + o)] += gkr[o];
                gbq[static_cast<std::size_t>(2 * C + o)] += gvr[o];
            }
            for (int i = 0; i < C; ++i) {
                double* gwr = gwq.data() + static_cast<std::size_t>(i) * 3 * C;
                const double* wr = qkv.weight.data() + static_cast<std::size_t>(i) * 3 * C;
                double acc = 0.0;
                for (int o = 0; o < C; ++o) {
                    gwr[o] += xr[i] * gqr[o];
                    gwr[C + o] += xr[i] * gkr[o];
                    gwr[2 * C + o] += xr[i] * gvr[o];
                    acc += gqr[o] * wr[o] + gkr[o] * wr[C + o] + gvr[o] * wr[2 * C + o];
                }
                gx[static_cast<std::size_t>(t) * C + i] = acc;
            }
        }
        scatter_window(grad_in, wd, wh, ww, window, gx);
    }

    for (int wi = 0; wi < n_windows; ++wi) {
        const Tensor& gwq = gw_qkv[static_cast<std::size_t>(wi)];
        const Tensor& gbq = gb_qkv[static_cast<std::size_t>(wi)];
        const Tensor& gwp = gw_proj[static_cast<std::size_t>(wi)];
        const Tensor& gbp = gb_proj[static_cast<std::size_t>(wi)];
        for (std::size_t i = 0; i < gwq.size(); ++i) qkv.gweight[i] += gwq[i];
        for (std::size_t i = 0; i < gbq.size(); ++i) qkv.gbias[i] += gbq[i];
        for (std::size_t i = 0; i < gwp.size(); ++i) proj.gweight[i] += gwp[i];
        for (std::size_t i = 0; i < gbp.size(); ++i) proj.gbias[i] += gbp[i];
    }
    return grad_in;
}

void WindowAttention::collect(const std::string& prefix, std::vector<NamedParam>& out) {
    qkv.collect(prefix + ".qkv", out);
    proj.collect(prefix + ".proj", out);
}

// ---- helpers ----------------------------------------------------------------------

Tensor concat_channels(const Tensor& a, const Tensor& b) {
    const int Ca = a.extent(0), Cb = b.extent(0);
    Tensor out({Ca + Cb, a.extent(1), a.extent(2), a.extent(3)});
    const std::size_t na = a.size(), nb = b.size();
    std::copy(a.data(), a.data() + na, out.data());
    std::copy(b.data(), b.data() + nb, out.data() + na);
    return out;
}

void split_channels(const Tensor& g, int c_first, Tensor& ga, Tensor& gb) {
    const int C = g.extent(0);
    ga = Tensor({c_first, g.extent(1), g.extent(2), g.extent(3)});
    gb = Tensor({C - c_first, g.extent(1), g.extent(2), g.extent(3)});
    std::copy(g.data(), g.data() + ga.size(), ga.data());
    std::copy(g.data() + ga.size(), g.data() + g.size(), gb.data());
}

Tensor to_tokens(const Tensor& x) {
    const int C = x.extent(0);
    const std::size_t n = x.size() / static_cast<std::size_t>(C);
    Tensor t({static_cast<int>(n), C});
    for (std::size_t v = 0; v < n; ++v)
        for (int c = 0; c < C; ++c)
            t[v * static_cast<std::size_t>(C) + c] = x[static_cast<std::size_t>(c) * n + v];
    return t;
}

Tensor from_tokens(const Tensor& t, const std::vector<int>& chw_shape) {
    Tensor x(chw_shape);
    const int C = chw_shape[0];
    const std::size_t n = x.size() / static_cast<std::size_t>(C);
    for (std::size_t v = 0; v < n; ++v)
        for (int c = 0; c < C; ++c)
            x[static_cast<std::size_t>(c) * n + v] = t[v * static_cast<std::size_t>(C) + c];
    return x;
}

}  // namespace vseg::nn
