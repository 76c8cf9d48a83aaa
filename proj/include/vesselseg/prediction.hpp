#pragma once

#include <stdexcept>

#include "vesselseg/tensor.hpp"

namespace vseg {

/// Per-voxel 2-class probabilities, shape (2,p,p,p). Channel 0 is background,
/// channel 1 is vessel. Channels sum to 1 per voxel (within 1e-5).
struct Prediction {
    Tensor probabilities;

    Prediction() = default;
    explicit Prediction(Tensor p) : probabilities(std::move(p)) {
        if (probabilities.rank() != 4 || probabilities.extent(0) != 2)
            throw std::invalid_argument("prediction must have shape (2,p,p,p)");
    }

    std::size_t voxels() const { return probabilities.size() / 2; }

    /// Checks nonnegativity and per-voxel channel sums (1e-5).
    bool valid() const {
        const std::size_t n = voxels();
        for (std::size_t v = 0; v < n; ++v) {
            const double p0 = probabilities[v];
            const double p1 = probabilities[n + v];
            if (p0 < 0.0 || p1 < 0.0) return false;
            if (std::abs(p0 + p1 - 1.0) > 1e-5) return false;
        }
        return true;
    }
};

}  // namespace vseg
