#include "vesselseg/losses.hpp"

#include <cmath>
#include <stdexcept>

namespace vseg {

namespace {

constexpr double kProbClip = 1e-7;
constexpr double kNormGuard = 1e-12;

void check_pair(const Prediction& pred, const Tensor& target) {
    if (pred.probabilities.rank() != 4 || pred.probabilities.extent(0) != 2)
        throw std::invalid_argument("prediction must have shape (2,p,p,p)");
    if (target.rank() != 3 || target.extent(0) != pred.probabilities.extent(1) ||
        target.extent(1) != pred.probabilities.extent(2) ||
        target.extent(2) != pred.probabilities.extent(3))
        throw std::invalid_argument("target shape must match prediction spatial shape");
}

void check_same(const Prediction& a, const Prediction& b) {
    if (!a.probabilities.same_shape(b.probabilities))
        throw std::invalid_argument("prediction shapes must match");
}

}  // namespace

void LossConfig::validate() const {
    if (sup_weight < 0.0 || semi_weight < 0.0)
        throw std::invalid_argument("loss weights must be nonnegative");
    if (sup_weight + semi_weight <= 0.0)
        throw std::invalid_argument("at least one loss weight must be positive");
    if (!(boundary_mask_fraction > 0.0) || !(boundary_mask_fraction < 1.0))
        throw std::invalid_argument("boundary mask fraction must lie in (0,1)");
    if (!(dice_epsilon > 0.0)) throw std::invalid_argument("dice epsilon must be positive");
}

// ---- cross entropy ----------------------------------------------------------

double cross_entropy_loss(const Prediction& pred, const Tensor& target) {
    check_pair(pred, target);
    const std::size_t n = pred.voxels();
    const double* p = pred.probabilities.data();
    double acc = 0.0;
    for (std::size_t v = 0; v < n; ++v) {
        const double pt = target[v] != 0.0 ? p[n + v] : p[v];
        acc -= std::log(std::clamp(pt, kProbClip, 1.0 - kProbClip));
    }
    return acc / static_cast<double>(n);
}

LossValueGrad cross_entropy_loss_grad(const Prediction& pred, const Tensor& target) {
    check_pair(pred, target);
    const std::size_t n = pred.voxels();
    const double* p = pred.probabilities.data();
    LossValueGrad out;
    out.grad = Tensor(pred.probabilities.shape());
    double acc = 0.0;
    const double inv_n = 1.0 / static_cast<double>(n);
    for (std::size_t v = 0; v < n; ++v) {
        const bool fg = target[v] != 0.0;
        const std::size_t idx = fg ? n + v : v;
        const double pt = p[idx];
        const double clipped = std::clamp(pt, kProbClip, 1.0 - kProbClip);
        acc -= std::log(clipped);
        if (pt > kProbClip && pt < 1.0 - kProbClip) out.grad[idx] = -inv_n / pt;
    }
    out.value = acc * inv_n;
    return out;
}

// ---- dice -------------------------------------------------------------------

double dice_loss(const Prediction& pred, const Tensor& target, double epsilon) {
    check_pair(pred, target);
    const std::size_t n = pred.voxels();
    const double* p1 = pred.probabilities.data() + n;
    double s_py = 0.0, s_p = 0.0, s_y = 0.0;
    for (std::size_t v = 0; v < n; ++v) {
        s_py += p1[v] * target[v];
        s_p += p1[v];
        s_y += target[v];
    }
    return 1.0 - (2.0 * s_py + epsilon) / (s_p + s_y + epsilon);
}

LossValueGrad dice_loss_grad(const Prediction& pred, const Tensor& target, double epsilon) {
    check_pair(pred, target);
    const std::size_t n = pred.voxels();
    const double* p1 = pred.probabilities.data() + n;
    double s_py = 0.0, s_p = 0.0, s_y = 0.0;
    for (std::size_t v = 0; v < n; ++v) {
        s_py += p1[v] * target[v];
        s_p += p1[v];
        s_y += target[v];
    }
    const double den = s_p + s_y + epsilon;
    const double num = 2.0 * s_py + epsilon;

    LossValueGrad out;
    out.value = 1.0 - num / den;
    out.grad = Tensor(pred.probabilities.shape());
    double* g1 = out.grad.data() + n;
    for (std::size_t v = 0; v < n; ++v)
        g1[v] = -(2.0 * target[v] * den - num) / (den * den);
    return out;
}

// ---- Fourier boundary -------------------------------------------------------

double fourier_boundary_loss(const Prediction& pred, const Tensor& target,
                             const SpectralMask& mask) {
    check_pair(pred, target);
    const std::size_t n = pred.voxels();
    Tensor p1({target.extent(0), target.extent(1), target.extent(2)});
    for (std::size_t v = 0; v < n; ++v) p1[v] = pred.probabilities[n + v];

    Tensor hp = high_frequency_component(p1, mask.mask);
    Tensor hy = high_frequency_component(target, mask.mask);
    double acc = 0.0;
    for (std::size_t v = 0; v < n; ++v) {
        const double r = hp[v] - hy[v];
        acc += r * r;
    }
    return acc / static_cast<double>(n);
}

LossValueGrad fourier_boundary_loss_grad(const Prediction& pred, const Tensor& target,
                                         const SpectralMask& mask) {
    check_pair(pred, target);
    const std::size_t n = pred.voxels();
    Tensor p1({target.extent(0), target.extent(1), target.extent(2)});
    for (std::size_t v = 0; v < n; ++v) p1[v] = pred.probabilities[n + v];

    Tensor hp = high_frequency_component(p1, mask.mask);
    Tensor hy = high_frequency_component(target, mask.mask);
    Tensor residual(p1.shape());
    double acc = 0.0;
    for (std::size_t v = 0; v < n; ++v) {
        const double r = hp[v] - hy[v];
        residual[v] = r;
        acc += r * r;
    }

    // d/dp1 mean((H p1 - H y)^2) = (2/n) H(residual); H is self-adjoint.
    Tensor hr = high_frequency_component(residual, mask.mask);
    LossValueGrad out;
    out.value = acc / static_cast<double>(n);
    out.grad = Tensor(pred.probabilities.shape());
    const double scale = 2.0 / static_cast<double>(n);
    double* g1 = out.grad.data() + n;
    for (std::size_t v = 0; v < n; ++v) g1[v] = scale * hr[v];
    return out;
}

// ---- consistency ------------------------------------------------------------

double consistency_mse(const Prediction& teacher, const Prediction& student) {
    check_same(teacher, student);
    const std::size_t m = teacher.probabilities.size();
    const double* a = teacher.probabilities.data();
    const double* b = student.probabilities.data();
    double acc = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
        const double r = a[i] - b[i];
        acc += r * r;
    }
    return acc / static_cast<double>(m);
}

LossValueGrad consistency_mse_grad(const Prediction& teacher, const Prediction& student) {
    check_same(teacher, student);
    const std::size_t m = teacher.probabilities.size();
    const double* a = teacher.probabilities.data();
    const double* b = student.probabilities.data();
    LossValueGrad out;
    out.grad = Tensor(teacher.probabilities.shape());
    double acc = 0.0;
    const double scale = 2.0 / static_cast<double>(m);
    for (std::size_t i = 0; i < m; ++i) {
        const double r = a[i] - b[i];
        acc += r * r;
        out.grad[i] = scale * r;
    }
    out.value = acc / static_cast<double>(m);
    return out;
}

namespace {

double cosine_of(const Prediction& teacher, const Prediction& student, double& nu, double& nv,
                 double& dot) {
    const std::size_t m = teacher.probabilities.size();
    const double* u = teacher.probabilities.data();
    const double* v = student.probabilities.data();
    dot = 0.0;
    double uu = 0.0, vv = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
        dot += u[i] * v[i];
        uu += u[i] * u[i];
        vv += v[i] * v[i];
    }
    nu = std::sqrt(uu) + kNormGuard;
    nv = std::sqrt(vv) + kNormGuard;
    return dot / (nu * nv);
}

}  // namespace

double consistency_cosine_loss(const Prediction& teacher, const Prediction& student,
                               CosineForm form) {
    check_same(teacher, student);
    double nu, nv, dot;
    const double c = cosine_of(teacher, student, nu, nv, dot);
    switch (form) {
        case CosineForm::exp_negative_cos: return std::exp(-c);
        case CosineForm::paper_exact_exp_cos: return std::exp(c);
        case CosineForm::negative_cos: return -c;
    }
    throw std::logic_error("unknown cosine form");
}

LossValueGrad consistency_cosine_loss_grad(const Prediction& teacher, const Prediction& student,
                                           CosineForm form) {
    check_same(teacher, student);
    double nu, nv, dot;
    const double c = cosine_of(teacher, student, nu, nv, dot);

    double value, dvalue_dc;
    switch (form) {
        case CosineForm::exp_negative_cos:
            value = std::exp(-c);
            dvalue_dc = -value;
            break;
        case CosineForm::paper_exact_exp_cos:
            value = std::exp(c);
            dvalue_dc = value;
            break;
        case CosineForm::negative_cos:
            value = -c;
            dvalue_dc = -1.0;
            break;
        default: throw std::logic_error("unknown cosine form");
    }

    const std::size_t m = teacher.probabilities.size();
    const double* u = teacher.probabilities.data();
    const double* v = student.probabilities.data();
    LossValueGrad out;
    out.value = value;
    out.grad = Tensor(teacher.probabilities.shape());
    const double inv_nunv = 1.0 / (nu * nv);
    const double c_over_uu = c / (nu * nu);
    for (std::size_t i = 0; i < m; ++i)
        out.grad[i] = dvalue_dc * (v[i] * inv_nunv - c_over_uu * u[i]);
    return out;
}

// ---- combination ------------------------------------------------------------

SupervisedLossReport total_supervised_loss(const Prediction& pred, const Tensor& target,
                                           const SpectralMask& mask, const LossConfig& cfg) {
    SupervisedLossReport r;
    r.ce = cross_entropy_loss(pred, target);
    r.dice = dice_loss(pred, target, cfg.dice_epsilon);
    r.boundary = fourier_boundary_loss(pred, target, mask);
    return r;
}

double total_loss(double sup, double semi, const LossConfig& cfg) {
    cfg.validate();
    return (cfg.sup_weight * sup + cfg.semi_weight * semi) / (cfg.sup_weight + cfg.semi_weight);
}

}  // namespace vseg
