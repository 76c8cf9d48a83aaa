#include "vesselseg/fourier.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <mutex>
#include <stdexcept>

namespace vseg {

namespace {

std::vector<char> axis_band(int n, double rho, MaskConvention convention) {
    std::vector<char> keep(static_cast<std::size_t>(n), 0);
    if (convention == MaskConvention::unshifted) {
        // Ones on [t, n-t]; width n-2t+1 tracks rho*n within one index.
        int t = static_cast<int>(std::llround((n * (1.0 - rho) + 1.0) / 2.0));
        t = std::clamp(t, 1, n / 2);
        for (int i = t; i <= n - t; ++i) keep[static_cast<std::size_t>(i)] = 1;
    } else {
        // Low-pass reading: ones on the 2u+1 indices nearest DC.
        int u = static_cast<int>(std::llround((rho * n - 1.0) / 2.0));
        u = std::clamp(u, 0, (n - 1) / 2);
        for (int i = 0; i < n; ++i)
            if (std::min(i, n - i) <= u) keep[static_cast<std::size_t>(i)] = 1;
    }
    return keep;
}

}  // namespace

SpectralMask make_spectral_mask(const std::vector<int>& shape, double rho,
                                MaskConvention convention) {
    if (shape.size() != 3) throw std::invalid_argument("spectral mask must be rank 3");
    if (!(rho > 0.0) || !(rho < 1.0)) throw std::invalid_argument("rho must lie in (0,1)");

    const int D = shape[0], H = shape[1], W = shape[2];
    auto bd = axis_band(D, rho, convention);
    auto bh = axis_band(H, rho, convention);
    auto bw = axis_band(W, rho, convention);

    SpectralMask out;
    out.rho = rho;
    out.mask = Tensor({D, H, W});
    for (int d = 0; d < D; ++d)
        for (int h = 0; h < H; ++h)
            for (int w = 0; w < W; ++w)
                out.mask.at(d, h, w) = (bd[static_cast<std::size_t>(d)] &&
                                        bh[static_cast<std::size_t>(h)] &&
                                        bw[static_cast<std::size_t>(w)])
                                           ? 1.0
                                           : 0.0;
    return out;
}

namespace {

// FFTW plan creation is not thread-safe; execution is.
std::mutex& fftw_mutex() {
    static std::mutex m;
    return m;
}

}  // namespace

Tensor high_frequency_component(const Tensor& x, const Tensor& mask) {
    if (x.rank() != 3) throw std::invalid_argument("high_frequency_component expects rank 3");
    if (!x.same_shape(mask)) throw std::invalid_argument("field and mask shapes must match");

    const int D = x.extent(0), H = x.extent(1), W = x.extent(2);
    const std::size_t n = x.size();

    fftw_complex* buf = fftw_alloc_complex(n);
    fftw_complex* spec = fftw_alloc_complex(n);
    for (std::size_t i = 0; i < n; ++i) {
        buf[i][0] = x[i];
        buf[i][1] = 0.0;
    }

    fftw_plan fwd, bwd;
    {
        std::lock_guard<std::mutex> lock(fftw_mutex());
        fwd = fftw_plan_dft_3d(D, H, W, buf, spec, FFTW_FORWARD, FFTW_ESTIMATE);
        bwd = fftw_plan_dft_3d(D, H, W, spec, buf, FFTW_BACKWARD, FFTW_ESTIMATE);
    }
    fftw_execute(fwd);
    for (std::size_t i = 0; i < n; ++i) {
        spec[i][0] *= mask[i];
        spec[i][1] *= mask[i];
    }
    fftw_execute(bwd);

    Tensor out(x.shape());
    const double scale = 1.0 / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = buf[i][0] * scale;  // real part

    {
        std::lock_guard<std::mutex> lock(fftw_mutex());
        fftw_destroy_plan(fwd);
        fftw_destroy_plan(bwd);
    }
    fftw_free(buf);
    fftw_free(spec);
    return out;
}

}  // namespace vseg
