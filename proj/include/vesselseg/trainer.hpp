#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "vesselseg/losses.hpp"
#include "vesselseg/manifest.hpp"
#include "vesselseg/nn/network.hpp"
#include "vesselseg/preprocess.hpp"
#include "vesselseg/rng.hpp"

namespace vseg {

enum class TeacherInput { raw, vessel_like };

struct TrainerConfig {
    int epochs = 100;
    int batch_size = 1;
    int patch_size = 32;
    double learning_rate = 1e-3;
    int lr_step_epochs = 10;
    double lr_factor = 0.1;
    double ema_base_decay = 0.999;
    std::uint64_t seed = 0;
    LossConfig loss;
    TeacherInput teacher_input = TeacherInput::raw;
    bool with_boundary_loss = true;
    bool with_semi_loss = true;
    bool augment_enabled = true;
    int steps_per_epoch = 0;  // 0 = one step per labeled training patch
    nn::NetworkConfig network;

    void validate() const;
};

/// Learning rate after the step decay: lr * factor^(epoch / step_epochs).
double learning_rate_at(const TrainerConfig& cfg, int epoch);

/// Eq-style decay schedule: min(1 - 1/(iteration*10 + 1), base_decay),
/// computed as (10i)/(10i+1) so small-iteration values are exact rationals.
double ema_decay(std::int64_t iteration, double base_decay);

struct AdamState {
    std::map<std::string, Tensor> m, v;
    std::int64_t t = 0;
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
};

struct TeacherStudentState {
    nn::SegmentationNetwork teacher;
    nn::SegmentationNetwork student;
    std::int64_t iteration = 0;
    AdamState adam;

    explicit TeacherStudentState(const nn::NetworkConfig& cfg);
};

/// Student <- d*student + (1-d)*teacher elementwise, d = ema_decay(iteration).
/// Pure parameter arithmetic; no gradients flow through this update.
void ema_update(TeacherStudentState& state, double base_decay);

/// One Adam step on the teacher parameters using the accumulated gradients.
void adam_step(TeacherStudentState& state, double lr);

/// Composition of axis flips and 90-degree rotations in the three
/// axis-aligned planes. No interpolation; a pure voxel permutation.
struct AugmentDraw {
    bool flip[3] = {false, false, false};
    int rot[3] = {0, 0, 0};  // quarter turns in planes (0,1), (0,2), (1,2)
};

AugmentDraw draw_augment(Rng& rng);
Patch apply_augment(const Patch& patch, const AugmentDraw& draw);

/// Random draw applied identically to image, vessel_like and mask.
Patch augment(const Patch& patch, Rng& rng);

struct StepReport {
    double ce = 0.0, dice = 0.0, boundary = 0.0;
    double sup = 0.0;
    double mse = 0.0, cosine = 0.0, semi = 0.0;
    double total = 0.0;
};

/// One teacher-gradient / student-EMA training step.
/// Teacher consumes raw patches (or vessel-like, per cfg.teacher_input);
/// the student always consumes the vessel-like twins and its outputs are
/// constants for gradient purposes. The unlabeled batch may be empty, in
/// which case the consistency terms are skipped and reported as zero.
StepReport train_step(TeacherStudentState& state, const std::vector<Patch>& labeled_batch,
                      const std::vector<Patch>& unlabeled_batch, const TrainerConfig& cfg,
                      double lr);

struct EpochRecord {
    int epoch = 0;
    double lr = 0.0;
    StepReport mean_losses;
    double val_dsc = 0.0;
    double seconds = 0.0;
};

struct FitResult {
    std::vector<EpochRecord> log;
    std::string best_checkpoint;
    std::string last_checkpoint;
    double best_val_dsc = 0.0;
};

/// Full training loop over a preprocessed cache manifest (train/val splits).
/// Writes last.ckpt every epoch, best.ckpt on validation improvement, and a
/// JSON-lines log to run_dir/train_log.jsonl. Resumes from last.ckpt when
/// `resume` is set and the file exists.
FitResult fit(TeacherStudentState& state, const DatasetManifest& cache_manifest,
              const TrainerConfig& cfg, const std::string& run_dir, bool resume = false);

/// Sliding-window full-volume inference with uniform overlap averaging; edge
/// windows are shifted inward so coverage is complete. Returns the vessel
/// probability volume and the argmax mask.
struct VolumePrediction {
    Volume probability;  // vessel-channel probability
    LabelMask mask;
};

VolumePrediction predict_volume(nn::SegmentationNetwork& net, const Volume& vol, int patch_size,
                                int stride, bool use_vessel_like,
                                const AhaParams& aha = AhaParams{});

/// Checkpoint helpers for teacher+student+optimizer (+iteration).
void save_state(const TeacherStudentState& state, const std::string& path);
TeacherStudentState load_state(const std::string& path);

}  // namespace vseg
