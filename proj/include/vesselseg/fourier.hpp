#pragma once

#include <vector>

#include "vesselseg/tensor.hpp"

namespace vseg {

enum class MaskConvention {
    unshifted,  // band centred on the Nyquist indices = high-pass (default)
    shifted,    // band centred on DC = low-pass reading, for comparison
};

/// Binary frequency-domain indicator with the same shape as a patch.
///
/// Default (unshifted) convention: per axis of length n, ones occupy the
/// contiguous index band [t, n-t] around the Nyquist index, with t chosen so
/// the band width tracks rho*n to within one index. The band is symmetric
/// under i -> (n-i) mod n on every axis, so the filtered field is real, and
/// the DC bin (0,0,0) is always excluded.
struct SpectralMask {
    Tensor mask;  // {0,1}, rank 3
    double rho = 0.5;
};

SpectralMask make_spectral_mask(const std::vector<int>& shape, double rho,
                                MaskConvention convention = MaskConvention::unshifted);

/// Re(IDFT(DFT(x) .* mask)) for a real field x. The operator is self-adjoint
/// for any real mask, which the boundary-loss gradient relies on.
Tensor high_frequency_component(const Tensor& x, const Tensor& mask);

}  // namespace vseg
