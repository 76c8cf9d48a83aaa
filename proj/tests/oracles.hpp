// Independent test oracles. Everything here is deliberately naive (direct
// definitions, O(N^2) transforms, exhaustive scans) and must stay decoupled
// from the library implementation paths it checks.
#pragma once

#include <cmath>
#include <complex>
#include <vector>

#include "vesselseg/prediction.hpp"
#include "vesselseg/rng.hpp"
#include "vesselseg/tensor.hpp"

namespace oracle {

using vseg::Prediction;
using vseg::Rng;
using vseg::Tensor;

// ---- direct O(N^2) 3D DFT --------------------------------------------------

inline std::vector<std::complex<double>> dft3(const Tensor& x) {
    const int D = x.extent(0), H = x.extent(1), W = x.extent(2);
    std::vector<std::complex<double>> out(x.size());
    for (int kd = 0; kd < D; ++kd)
        for (int kh = 0; kh < H; ++kh)
            for (int kw = 0; kw < W; ++kw) {
                std::complex<double> acc(0.0, 0.0);
                for (int d = 0; d < D; ++d)
                    for (int h = 0; h < H; ++h)
                        for (int w = 0; w < W; ++w) {
                            const double phase =
                                -2.0 * M_PI *
                                (static_cast<double>(kd) * d / D + static_cast<double>(kh) * h / H +
                                 static_cast<double>(kw) * w / W);
                            acc += x.at(d, h, w) * std::complex<double>(std::cos(phase),
                                                                        std::sin(phase));
                        }
                out[(static_cast<std::size_t>(kd) * H + kh) * W + kw] = acc;
            }
    return out;
}

/// Re(IDFT(DFT(x) .* mask)) by direct summation.
inline Tensor high_frequency_direct(const Tensor& x, const Tensor& mask) {
    const int D = x.extent(0), H = x.extent(1), W = x.extent(2);
    auto spec = dft3(x);
    for (std::size_t i = 0; i < spec.size(); ++i) spec[i] *= mask[i];

    Tensor out(x.shape());
    const double norm = 1.0 / static_cast<double>(x.size());
    for (int d = 0; d < D; ++d)
        for (int h = 0; h < H; ++h)
            for (int w = 0; w < W; ++w) {
                std::complex<double> acc(0.0, 0.0);
                for (int kd = 0; kd < D; ++kd)
                    for (int kh = 0; kh < H; ++kh)
                        for (int kw = 0; kw < W; ++kw) {
                            const double phase =
                                2.0 * M_PI *
                                (static_cast<double>(kd) * d / D + static_cast<double>(kh) * h / H +
                                 static_cast<double>(kw) * w / W);
                            acc += spec[(static_cast<std::size_t>(kd) * H + kh) * W + kw] *
                                   std::complex<double>(std::cos(phase), std::sin(phase));
                        }
                out.at(d, h, w) = acc.real() * norm;
            }
    return out;
}

// ---- scalar-loop loss definitions -------------------------------------------

inline double cross_entropy_scalar(const Prediction& pred, const Tensor& target) {
    const std::size_t n = pred.voxels();
    double acc = 0.0;
    for (std::size_t v = 0; v < n; ++v) {
        const double pt =
            target[v] != 0.0 ? pred.probabilities[n + v] : pred.probabilities[v];
        const double clipped = std::min(std::max(pt, 1e-7), 1.0 - 1e-7);
        acc += -std::log(clipped);
    }
    return acc / static_cast<double>(n);
}

inline double dice_scalar(const Prediction& pred, const Tensor& target, double eps) {
    const std::size_t n = pred.voxels();
    double spy = 0.0, sp = 0.0, sy = 0.0;
    for (std::size_t v = 0; v < n; ++v) {
        spy += pred.probabilities[n + v] * target[v];
        sp += pred.probabilities[n + v];
        sy += target[v];
    }
    return 1.0 - (2.0 * spy + eps) / (sp + sy + eps);
}

inline double boundary_scalar(const Prediction& pred, const Tensor& target, const Tensor& mask) {
    const std::size_t n = pred.voxels();
    Tensor p1(target.shape());
    for (std::size_t v = 0; v < n; ++v) p1[v] = pred.probabilities[n + v];
    Tensor hp = high_frequency_direct(p1, mask);
    Tensor hy = high_frequency_direct(target, mask);
    double acc = 0.0;
    for (std::size_t v = 0; v < n; ++v) acc += (hp[v] - hy[v]) * (hp[v] - hy[v]);
    return acc / static_cast<double>(n);
}

inline double mse_scalar(const Prediction& a, const Prediction& b) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.probabilities.size(); ++i) {
        const double r = a.probabilities[i] - b.probabilities[i];
        acc += r * r;
    }
    return acc / static_cast<double>(a.probabilities.size());
}

inline double cosine_scalar(const Prediction& a, const Prediction& b, int form) {
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.probabilities.size(); ++i) {
        dot += a.probabilities[i] * b.probabilities[i];
        na += a.probabilities[i] * a.probabilities[i];
        nb += b.probabilities[i] * b.probabilities[i];
    }
    const double c = dot / ((std::sqrt(na) + 1e-12) * (std::sqrt(nb) + 1e-12));
    if (form == 0) return std::exp(-c);
    if (form == 1) return std::exp(c);
    return -c;
}

// ---- random fixtures -----------------------------------------------------------

/// Random valid prediction: channel-1 probabilities uniform in (lo, hi),
/// channel 0 the complement.
inline Prediction random_prediction(int p, Rng& rng, double lo = 0.05, double hi = 0.95) {
    Tensor t({2, p, p, p});
    const std::size_t n = t.size() / 2;
    for (std::size_t v = 0; v < n; ++v) {
        const double p1 = rng.uniform(lo, hi);
        t[n + v] = p1;
        t[v] = 1.0 - p1;
    }
    return Prediction(t);
}

inline Tensor random_mask3(int p, Rng& rng, double fg_prob = 0.3) {
    Tensor t({p, p, p});
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform() < fg_prob ? 1.0 : 0.0;
    return t;
}

}  // namespace oracle
