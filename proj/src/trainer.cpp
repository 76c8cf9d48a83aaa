#include "vesselseg/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "vesselseg/log.hpp"

namespace vseg {

void TrainerConfig::validate() const {
    if (epochs < 1 || batch_size < 1 || patch_size < 2)
        throw std::invalid_argument("trainer config values must be positive");
    if (!(learning_rate > 0.0)) throw std::invalid_argument("learning rate must be positive");
    if (lr_step_epochs < 1) throw std::invalid_argument("lr step epochs must be positive");
    if (!(lr_factor > 0.0) || !(lr_factor < 1.0))
        throw std::invalid_argument("lr factor must lie in (0,1)");
    if (!(ema_base_decay > 0.0) || !(ema_base_decay < 1.0))
        throw std::invalid_argument("ema base decay must lie in (0,1)");
    loss.validate();
    network.validate();
    if (network.patch_size != patch_size)
        throw std::invalid_argument("network patch size must match trainer patch size");
}

double learning_rate_at(const TrainerConfig& cfg, int epoch) {
    const int drops = epoch / cfg.lr_step_epochs;
    return cfg.learning_rate * std::pow(cfg.lr_factor, drops);
}

double ema_decay(std::int64_t iteration, double base_decay) {
    if (iteration < 0) throw std::invalid_argument("iteration must be nonnegative");
    // Algebraically 1 - 1/(10i+1); this form keeps e.g. decay(10) == 100/101
    // bit-exact.
    const double x = 10.0 * static_cast<double>(iteration);
    return std::min(base_decay, x / (x + 1.0));
}

TeacherStudentState::TeacherStudentState(const nn::NetworkConfig& cfg)
    : teacher(cfg), student(cfg) {}

void ema_update(TeacherStudentState& state, double base_decay) {
    const double d = ema_decay(state.iteration, base_decay);
    auto tp = state.teacher.parameters();
    auto sp = state.student.parameters();
    if (tp.size() != sp.size())
        throw std::invalid_argument("teacher/student parameter sets differ");
    for (std::size_t i = 0; i < tp.size(); ++i) {
        if (tp[i].name != sp[i].name || !tp[i].value->same_shape(*sp[i].value))
            throw std::invalid_argument("teacher/student parameter mismatch: " + tp[i].name);
        double* s = sp[i].value->data();
        const double* t = tp[i].value->data();
        const std::size_t n = sp[i].value->size();
        for (std::size_t j = 0; j < n; ++j) s[j] = d * s[j] + (1.0 - d) * t[j];
    }
}

void adam_step(TeacherStudentState& state, double lr) {
    AdamState& a = state.adam;
    ++a.t;
    const double bc1 = 1.0 - std::pow(a.beta1, static_cast<double>(a.t));
    const double bc2 = 1.0 - std::pow(a.beta2, static_cast<double>(a.t));
    for (auto& p : state.teacher.parameters()) {
        Tensor& m = a.m.try_emplace(p.name, Tensor(p.value->shape())).first->second;
        Tensor& v = a.v.try_emplace(p.name, Tensor(p.value->shape())).first->second;
        double* w = p.value->data();
        const double* g = p.grad->data();
        const std::size_t n = p.value->size();
        for (std::size_t i = 0; i < n; ++i) {
            m[i] = a.beta1 * m[i] + (1.0 - a.beta1) * g[i];
            v[i] = a.beta2 * v[i] + (1.0 - a.beta2) * g[i] * g[i];
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            w[i] -= lr * mhat / (std::sqrt(vhat) + a.eps);
        }
    }
}

// ---- augmentation -------------------------------------------------------------

namespace {

Tensor flip_axis3(const Tensor& t, int axis) {
    const int D = t.extent(0), H = t.extent(1), W = t.extent(2);
    Tensor out(t.shape());
    for (int d = 0; d < D; ++d)
        for (int h = 0; h < H; ++h)
            for (int w = 0; w < W; ++w) {
                const int sd = axis == 0 ? D - 1 - d : d;
                const int sh = axis == 1 ? H - 1 - h : h;
                const int sw = axis == 2 ? W - 1 - w : w;
                out.at(d, h, w) = t.at(sd, sh, sw);
            }
    return out;
}

// One 90-degree rotation in the (a,b) plane of a cubic tensor:
// index_a' = index_b, index_b' = N-1-index_a.
Tensor rot90_plane(const Tensor& t, int a, int b) {
    const int N = t.extent(0);
    Tensor out(t.shape());
    int idx[3];
    for (idx[0] = 0; idx[0] < N; ++idx[0])
        for (idx[1] = 0; idx[1] < N; ++idx[1])
            for (idx[2] = 0; idx[2] < N; ++idx[2]) {
                int src[3] = {idx[0], idx[1], idx[2]};
                src[a] = idx[b];
                src[b] = N - 1 - idx[a];
                out.at(idx[0], idx[1], idx[2]) = t.at(src[0], src[1], src[2]);
            }
    return out;
}

Tensor apply_augment_tensor(const Tensor& t, const AugmentDraw& d) {
    Tensor out = t;
    for (int a = 0; a < 3; ++a)
        if (d.flip[a]) out = flip_axis3(out, a);
    constexpr int planes[3][2] = {{0, 1}, {0, 2}, {1, 2}};
    for (int p = 0; p < 3; ++p)
        for (int k = 0; k < d.rot[p]; ++k) out = rot90_plane(out, planes[p][0], planes[p][1]);
    return out;
}

}  // namespace

AugmentDraw draw_augment(Rng& rng) {
    AugmentDraw d;
    for (bool& f : d.flip) f = rng.coin();
    for (int& r : d.rot) r = static_cast<int>(rng.uniform_int(0, 3));
    return d;
}

Patch apply_augment(const Patch& patch, const AugmentDraw& d) {
    Patch out;
    out.grid_origin = patch.grid_origin;
    out.group = patch.group;
    out.image = apply_augment_tensor(patch.image, d);
    out.vessel_like = apply_augment_tensor(patch.vessel_like, d);
    if (patch.mask) out.mask = apply_augment_tensor(*patch.mask, d);
    return out;
}

Patch augment(const Patch& patch, Rng& rng) { return apply_augment(patch, draw_augment(rng)); }

// ---- train step ----------------------------------------------------------------

namespace {

const SpectralMask& shared_spectral_mask(const std::vector<int>& shape, double rho,
                                         MaskConvention conv) {
    static std::map<std::tuple<int, int, int, double, int>, SpectralMask> cache;
    static std::mutex mtx;
    std::lock_guard<std::mutex> lock(mtx);
    auto key = std::make_tuple(shape[0], shape[1], shape[2], rho, static_cast<int>(conv));
    auto it = cache.find(key);
    if (it == cache.end()) it = cache.emplace(key, make_spectral_mask(shape, rho, conv)).first;
    return it->second;
}

const Tensor& teacher_view(const Patch& p, TeacherInput mode) {
    return mode == TeacherInput::raw ? p.image : p.vessel_like;
}

void add_scaled(Tensor& dst, const Tensor& src, double s) {
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += s * src[i];
}

}  // namespace

StepReport train_step(TeacherStudentState& state, const std::vector<Patch>& labeled_batch,
                      const std::vector<Patch>& unlabeled_batch, const TrainerConfig& cfg,
                      double lr) {
    if (labeled_batch.empty()) throw std::invalid_argument("labeled batch must be nonempty");
    for (const auto& p : labeled_batch)
        if (!p.mask) throw std::invalid_argument("labeled patch without mask");

    const bool semi_on = cfg.with_semi_loss && !unlabeled_batch.empty();
    const double weight_sum = cfg.loss.sup_weight + cfg.loss.semi_weight;
    const double sup_scale = cfg.with_semi_loss ? cfg.loss.sup_weight / weight_sum : 1.0;
    const double semi_scale = cfg.with_semi_loss ? cfg.loss.semi_weight / weight_sum : 0.0;

    const auto& mask = shared_spectral_mask(labeled_batch[0].image.shape(),
                                            cfg.loss.boundary_mask_fraction,
                                            cfg.loss.mask_convention);

    state.teacher.zero_grads();
    StepReport r;
    const double inv_nl = 1.0 / static_cast<double>(labeled_batch.size());

    for (const Patch& p : labeled_batch) {
        Prediction student_pred;
        if (semi_on) student_pred = state.student.forward(p.vessel_like);

        Prediction teacher_pred = state.teacher.forward_training(teacher_view(p, cfg.teacher_input));

        auto ce = cross_entropy_loss_grad(teacher_pred, *p.mask);
        auto dc = dice_loss_grad(teacher_pred, *p.mask, cfg.loss.dice_epsilon);
        r.ce += ce.value * inv_nl;
        r.dice += dc.value * inv_nl;

        Tensor grad(teacher_pred.probabilities.shape());
        add_scaled(grad, ce.grad, sup_scale * inv_nl);
        add_scaled(grad, dc.grad, sup_scale * inv_nl);

        if (cfg.with_boundary_loss) {
            auto bd = fourier_boundary_loss_grad(teacher_pred, *p.mask, mask);
            r.boundary += bd.value * inv_nl;
            add_scaled(grad, bd.grad, sup_scale * inv_nl);
        }

        if (semi_on) {
            auto mse = consistency_mse_grad(teacher_pred, student_pred);
            auto cos = consistency_cosine_loss_grad(teacher_pred, student_pred,
                                                    cfg.loss.cosine_form);
            r.mse += mse.value * inv_nl;
            r.cosine += cos.value * inv_nl;
            add_scaled(grad, mse.grad, semi_scale * inv_nl);
            add_scaled(grad, cos.grad, semi_scale * inv_nl);
        }
        state.teacher.backward(grad);
    }

    if (semi_on) {
        const double inv_nu = 1.0 / static_cast<double>(unlabeled_batch.size());
        for (const Patch& p : unlabeled_batch) {
            Prediction student_pred = state.student.forward(p.vessel_like);
            Prediction teacher_pred =
                state.teacher.forward_training(teacher_view(p, cfg.teacher_input));

            auto mse = consistency_mse_grad(teacher_pred, student_pred);
            auto cos =
                consistency_cosine_loss_grad(teacher_pred, student_pred, cfg.loss.cosine_form);
            r.mse += mse.value * inv_nu;
            r.cosine += cos.value * inv_nu;

            Tensor grad(teacher_pred.probabilities.shape());
            add_scaled(grad, mse.grad, semi_scale * inv_nu);
            add_scaled(grad, cos.grad, semi_scale * inv_nu);
            state.teacher.backward(grad);
        }
    }

    r.sup = r.ce + r.dice + r.boundary;
    r.semi = r.mse + r.cosine;
    r.total = cfg.with_semi_loss ? total_loss(r.sup, r.semi, cfg.loss) : r.sup;

    adam_step(state, lr);
    // EMA uses the pre-increment iteration count, so the first step copies the
    // freshly updated teacher into the student (decay(0) = 0).
    ema_update(state, cfg.ema_base_decay);
    ++state.iteration;
    return r;
}

// ---- fit -------------------------------------------------------------------------

namespace {

struct PatchRef {
    int case_idx;
    Index3 origin;
};

std::string case_dir_of(const CaseRecord& c) {
    return std::filesystem::path(c.volume_path).parent_path().string();
}

double patch_dsc(const Prediction& pred, const Tensor& mask) {
    const std::size_t n = pred.voxels();
    const double* p1 = pred.probabilities.data() + n;
    std::int64_t tp = 0, fp = 0, fn = 0;
    for (std::size_t v = 0; v < n; ++v) {
        const bool fg = p1[v] > 0.5;
        const bool gt = mask[v] != 0.0;
        tp += fg && gt;
        fp += fg && !gt;
        fn += !fg && gt;
    }
    if (tp + fp + fn == 0) return 1.0;  // empty prediction and empty target
    return 2.0 * static_cast<double>(tp) / static_cast<double>(2 * tp + fp + fn);
}

}  // namespace

FitResult fit(TeacherStudentState& state, const DatasetManifest& cache_manifest,
              const TrainerConfig& cfg, const std::string& run_dir, bool resume) {
    namespace fs = std::filesystem;
    cfg.validate();
    fs::create_directories(run_dir);

    auto train_records = cache_manifest.split_cases("train");
    auto val_records = cache_manifest.split_cases("val");
    if (train_records.empty()) throw std::runtime_error("manifest has no train split");

    std::vector<CachedCase> train_cases, val_cases;
    for (const auto* c : train_records) train_cases.push_back(load_cached_case(case_dir_of(*c)));
    for (const auto* c : val_records) val_cases.push_back(load_cached_case(case_dir_of(*c)));

    std::vector<PatchRef> labeled, unlabeled;
    for (std::size_t i = 0; i < train_cases.size(); ++i) {
        for (const auto& o : train_cases[i].labeled_origins)
            labeled.push_back({static_cast<int>(i), o});
        for (const auto& o : train_cases[i].unlabeled_origins)
            unlabeled.push_back({static_cast<int>(i), o});
    }
    if (labeled.empty()) throw std::runtime_error("no labeled patches in the training split");
    if (train_cases[0].patch_size != cfg.patch_size)
        throw std::runtime_error("cache patch size does not match trainer config");

    const std::string last_path = (fs::path(run_dir) / "last.ckpt").string();
    const std::string best_path = (fs::path(run_dir) / "best.ckpt").string();
    const std::string meta_path = (fs::path(run_dir) / "last.json").string();
    const std::string log_path = (fs::path(run_dir) / "train_log.jsonl").string();

    int start_epoch = 0;
    double best_val = -1.0;
    if (resume && fs::exists(last_path) && fs::exists(meta_path)) {
        state = load_state(last_path);
        nlohmann::json meta;
        std::ifstream mf(meta_path);
        mf >> meta;
        start_epoch = meta.at("epochs_done").get<int>();
        best_val = meta.at("best_val_dsc").get<double>();
        info("resuming at epoch " + std::to_string(start_epoch));
    }

    FitResult result;
    result.best_checkpoint = best_path;
    result.last_checkpoint = last_path;
    result.best_val_dsc = best_val;

    std::ofstream log(log_path, start_epoch > 0 ? std::ios::app : std::ios::trunc);

    for (int epoch = start_epoch; epoch < cfg.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        const double lr = learning_rate_at(cfg, epoch);

        Rng order_rng = Rng::fork(cfg.seed, "epoch_order_" + std::to_string(epoch));
        std::vector<std::size_t> lorder(labeled.size());
        for (std::size_t i = 0; i < lorder.size(); ++i) lorder[i] = i;
        std::shuffle(lorder.begin(), lorder.end(), order_rng.engine());
        std::vector<std::size_t> uorder(unlabeled.size());
        for (std::size_t i = 0; i < uorder.size(); ++i) uorder[i] = i;
        std::shuffle(uorder.begin(), uorder.end(), order_rng.engine());

        Rng aug_rng = Rng::fork(cfg.seed, "augment_" + std::to_string(epoch));

        std::size_t n_steps = (lorder.size() + cfg.batch_size - 1) / cfg.batch_size;
        if (cfg.steps_per_epoch > 0)
            n_steps = std::min<std::size_t>(n_steps, static_cast<std::size_t>(cfg.steps_per_epoch));

        StepReport epoch_mean;
        std::size_t li = 0, ui = 0;
        for (std::size_t s = 0; s < n_steps; ++s) {
            std::vector<Patch> lb, ub;
            for (int b = 0; b < cfg.batch_size && li < lorder.size(); ++b, ++li) {
                const PatchRef& ref = labeled[lorder[li]];
                Patch p = cut_patch(train_cases[static_cast<std::size_t>(ref.case_idx)], ref.origin,
                                    PatchGroup::labeled);
                lb.push_back(cfg.augment_enabled ? augment(p, aug_rng) : std::move(p));
            }
            if (lb.empty()) break;
            if (cfg.with_semi_loss && !unlabeled.empty()) {
                for (int b = 0; b < cfg.batch_size; ++b, ++ui) {
                    const PatchRef& ref = unlabeled[uorder[ui % uorder.size()]];
                    Patch p = cut_patch(train_cases[static_cast<std::size_t>(ref.case_idx)],
                                        ref.origin, PatchGroup::unlabeled);
                    ub.push_back(cfg.augment_enabled ? augment(p, aug_rng) : std::move(p));
                }
            }
            StepReport r = train_step(state, lb, ub, cfg, lr);
            epoch_mean.ce += r.ce;
            epoch_mean.dice += r.dice;
            epoch_mean.boundary += r.boundary;
            epoch_mean.sup += r.sup;
            epoch_mean.mse += r.mse;
            epoch_mean.cosine += r.cosine;
            epoch_mean.semi += r.semi;
            epoch_mean.total += r.total;
        }
        const double inv_steps = n_steps > 0 ? 1.0 / static_cast<double>(n_steps) : 0.0;
        epoch_mean.ce *= inv_steps;
        epoch_mean.dice *= inv_steps;
        epoch_mean.boundary *= inv_steps;
        epoch_mean.sup *= inv_steps;
        epoch_mean.mse *= inv_steps;
        epoch_mean.cosine *= inv_steps;
        epoch_mean.semi *= inv_steps;
        epoch_mean.total *= inv_steps;

        // Validation DSC on labeled patches of the val cases (student network,
        // vessel-like input).
        double val_dsc = 0.0;
        std::size_t val_n = 0;
        for (const auto& c : val_cases)
            for (const auto& o : c.labeled_origins) {
                Patch p = cut_patch(c, o, PatchGroup::labeled);
                Prediction pred = state.student.forward(p.vessel_like);
                val_dsc += patch_dsc(pred, *p.mask);
                ++val_n;
            }
        const bool has_val = val_n > 0;
        if (has_val) val_dsc /= static_cast<double>(val_n);

        const double seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

        EpochRecord rec{epoch, lr, epoch_mean, val_dsc, seconds};
        result.log.push_back(rec);

        nlohmann::json jl{{"epoch", epoch},
                          {"lr", lr},
                          {"ce", epoch_mean.ce},
                          {"dice", epoch_mean.dice},
                          {"boundary", epoch_mean.boundary},
                          {"sup", epoch_mean.sup},
                          {"mse", epoch_mean.mse},
                          {"cosine", epoch_mean.cosine},
                          {"semi", epoch_mean.semi},
                          {"total", epoch_mean.total},
                          {"val_dsc", val_dsc},
                          {"seconds", seconds}};
        log << jl.dump() << "\n";
        log.flush();

        save_state(state, last_path);
        if (!has_val || val_dsc >= result.best_val_dsc) {
            result.best_val_dsc = has_val ? val_dsc : 0.0;
            save_state(state, best_path);
        }
        nlohmann::json meta{{"epochs_done", epoch + 1}, {"best_val_dsc", result.best_val_dsc}};
        std::ofstream mf(meta_path);
        mf << meta.dump(2) << "\n";
    }
    return result;
}

// ---- inference ---------------------------------------------------------------------

namespace {

std::vector<int> window_positions(int dim, int patch, int stride) {
    std::vector<int> out;
    for (int p = 0; p + patch <= dim; p += stride) out.push_back(p);
    if (out.empty() || out.back() != dim - patch) out.push_back(dim - patch);
    return out;
}

}  // namespace

VolumePrediction predict_volume(nn::SegmentationNetwork& net, const Volume& vol, int patch_size,
                                int stride, bool use_vessel_like, const AhaParams& aha) {
    if (stride <= 0 || stride > patch_size)
        throw std::invalid_argument("stride must lie in [1, patch_size]");
    for (int a = 0; a < 3; ++a)
        if (vol.dim(a) < patch_size)
            throw std::invalid_argument("volume smaller than the patch in at least one axis");

    const Volume input = use_vessel_like ? adaptive_histogram_attention(vol, aha) : vol;

    const auto pz = window_positions(vol.dim(0), patch_size, stride);
    const auto py = window_positions(vol.dim(1), patch_size, stride);
    const auto px = window_positions(vol.dim(2), patch_size, stride);

    Tensor prob_sum(vol.data.shape());
    Tensor count(vol.data.shape());
    Tensor window({patch_size, patch_size, patch_size});

    for (int z0 : pz)
        for (int y0 : py)
            for (int x0 : px) {
                for (int d = 0; d < patch_size; ++d)
                    for (int h = 0; h < patch_size; ++h)
                        for (int w = 0; w < patch_size; ++w)
                            window.at(d, h, w) = input.data.at(z0 + d, y0 + h, x0 + w);
                Prediction pred = net.forward(window);
                const std::size_t n = pred.voxels();
                const double* p1 = pred.probabilities.data() + n;
                for (int d = 0; d < patch_size; ++d)
                    for (int h = 0; h < patch_size; ++h)
                        for (int w = 0; w < patch_size; ++w) {
                            prob_sum.at(z0 + d, y0 + h, x0 + w) +=
                                p1[(static_cast<std::size_t>(d) * patch_size + h) * patch_size + w];
                            count.at(z0 + d, y0 + h, x0 + w) += 1.0;
                        }
            }

    Tensor prob(vol.data.shape());
    Tensor mask(vol.data.shape());
    for (std::size_t i = 0; i < prob.size(); ++i) {
        prob[i] = prob_sum[i] / count[i];
        mask[i] = prob[i] > 0.5 ? 1.0 : 0.0;
    }
    VolumePrediction out;
    out.probability = Volume(std::move(prob), vol.spacing, vol.origin);
    out.mask = LabelMask(std::move(mask), vol.spacing, vol.origin);
    return out;
}

// ---- state io ------------------------------------------------------------------------

void save_state(const TeacherStudentState& state, const std::string& path) {
    auto& mutable_state = const_cast<TeacherStudentState&>(state);
    std::map<std::string, Tensor> tensors;
    for (const auto& [name, t] : mutable_state.teacher.snapshot_parameters())
        tensors["teacher/" + name] = t;
    for (const auto& [name, t] : mutable_state.student.snapshot_parameters())
        tensors["student/" + name] = t;
    for (const auto& [name, t] : state.adam.m) tensors["adam_m/" + name] = t;
    for (const auto& [name, t] : state.adam.v) tensors["adam_v/" + name] = t;
    Tensor meta({3});
    meta[0] = static_cast<double>(state.iteration);
    meta[1] = static_cast<double>(state.adam.t);
    meta[2] = 0.0;
    tensors["meta/counters"] = meta;
    nn::save_tensors(path, mutable_state.teacher.config(), tensors);
}

TeacherStudentState load_state(const std::string& path) {
    nn::LoadedCheckpoint ck = nn::load_tensors(path);
    TeacherStudentState state(ck.config);

    std::map<std::string, Tensor> teacher, student;
    for (const auto& [name, t] : ck.tensors) {
        if (name.rfind("teacher/", 0) == 0) teacher[name.substr(8)] = t;
        else if (name.rfind("student/", 0) == 0) student[name.substr(8)] = t;
        else if (name.rfind("adam_m/", 0) == 0) state.adam.m[name.substr(7)] = t;
        else if (name.rfind("adam_v/", 0) == 0) state.adam.v[name.substr(7)] = t;
    }
    state.teacher.load_parameters(teacher);
    state.student.load_parameters(student);
    const auto it = ck.tensors.find("meta/counters");
    if (it != ck.tensors.end()) {
        state.iteration = static_cast<std::int64_t>(it->second[0]);
        state.adam.t = static_cast<std::int64_t>(it->second[1]);
    }
    return state;
}

}  // namespace vseg
