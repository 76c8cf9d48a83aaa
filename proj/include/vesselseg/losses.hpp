#pragma once

#include "vesselseg/fourier.hpp"
#include "vesselseg/prediction.hpp"
#include "vesselseg/tensor.hpp"

namespace vseg {

enum class CosineForm {
    exp_negative_cos,     // exp(-cos(u,v)); minimization increases similarity (default)
    paper_exact_exp_cos,  // exp(+cos(u,v)) taken literally
    negative_cos,         // -cos(u,v)
};

struct LossConfig {
    double sup_weight = 4.0;
    double semi_weight = 1.0;
    double dice_epsilon = 1e-5;
    double boundary_mask_fraction = 0.5;  // rho
    CosineForm cosine_form = CosineForm::exp_negative_cos;
    MaskConvention mask_convention = MaskConvention::unshifted;

    void validate() const;
};

/// Scalar loss together with its gradient w.r.t. the prediction probabilities
/// (same shape as the prediction, (2,p,p,p)).
struct LossValueGrad {
    double value = 0.0;
    Tensor grad;
};

// ---- supervised terms -------------------------------------------------------

/// Mean over voxels of -log p(true class), probabilities clipped to
/// [1e-7, 1-1e-7].
double cross_entropy_loss(const Prediction& pred, const Tensor& target);
LossValueGrad cross_entropy_loss_grad(const Prediction& pred, const Tensor& target);

/// Soft Dice on the vessel channel: 1 - (2*sum(p1*y)+eps)/(sum(p1)+sum(y)+eps).
double dice_loss(const Prediction& pred, const Tensor& target, double epsilon = 1e-5);
LossValueGrad dice_loss_grad(const Prediction& pred, const Tensor& target, double epsilon = 1e-5);

/// Mean squared difference of the high-frequency components of the vessel
/// probability and the target, both filtered through the spectral mask.
double fourier_boundary_loss(const Prediction& pred, const Tensor& target, const SpectralMask& mask);
LossValueGrad fourier_boundary_loss_grad(const Prediction& pred, const Tensor& target,
                                         const SpectralMask& mask);

// ---- consistency terms ------------------------------------------------------

/// Mean squared difference over all channels and voxels. A single flipped
/// voxel out of N (both channels disagreeing by 1) scores 1/N.
double consistency_mse(const Prediction& teacher, const Prediction& student);
/// Gradient w.r.t. the first (teacher) argument.
LossValueGrad consistency_mse_grad(const Prediction& teacher, const Prediction& student);

/// Cosine-similarity consistency on flattened predictions. Value range for the
/// default form is [exp(-1), exp(1)].
double consistency_cosine_loss(const Prediction& teacher, const Prediction& student,
                               CosineForm form);
LossValueGrad consistency_cosine_loss_grad(const Prediction& teacher, const Prediction& student,
                                           CosineForm form);

// ---- combination ------------------------------------------------------------

struct SupervisedLossReport {
    double ce = 0.0;
    double dice = 0.0;
    double boundary = 0.0;
    double total() const { return ce + dice + boundary; }
};

/// Unweighted sum CE + Dice + boundary; per-term values retrievable.
SupervisedLossReport total_supervised_loss(const Prediction& pred, const Tensor& target,
                                           const SpectralMask& mask, const LossConfig& cfg);

/// Normalized convex combination: (sup_w*sup + semi_w*semi)/(sup_w+semi_w).
/// Defaults (4:1) give 0.8*sup + 0.2*semi.
double total_loss(double sup, double semi, const LossConfig& cfg);

}  // namespace vseg
