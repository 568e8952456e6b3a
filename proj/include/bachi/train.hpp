// Masked-element training: mask sampling, the joint boundary+element loss,
// 12-key augmentation, the step loop, and the synthetic ground-truth corpus
// generator used for desk-scale verification.
#pragma once

#include <functional>
#include <string>
#include <vector>

#include "bachi/model.hpp"

namespace bachi {

struct TrainConfig {
    long warmup_steps = 400;
    double lr_min = 1e-5;
    double lr_max = 1e-4;
    double max_grad_norm = 2.0;
    long total_steps = 2000;
    int batch_pieces = 8;
    long max_tokens = 256;  // per-batch token budget
    long seed = 0;
    double mask_rate = 0.5;
    double w_boundary = 1.0;
    double w_root = 1.0;
    double w_quality = 1.0;
    double w_bass = 1.0;
    double weight_decay = 0.01;
    bool augment = true;
    bool teacher_force_boundaries = false;
    long checkpoint_every = 1000;

    KVMap to_kv() const;
    static TrainConfig from_kv(const KVMap& kv);
};

// Each slot is masked independently with probability mask_rate; tokens that
// draw zero masked slots are redrawn, so at rate 0.5 the per-slot marginal
// is 4/7 (uniform over the 7 non-empty outcomes).
std::vector<TokenSlots> sample_mask(Rng& rng, size_t tokens, double mask_rate);

struct LossBreakdown {
    Var total;
    double boundary = 0.0;
    double root = 0.0;
    double quality = 0.0;
    double bass = 0.0;
};

// boundary BCE over all tokens + per-element CE over masked slots only;
// unmasked slots contribute exactly zero element loss
LossBreakdown compute_loss(const ForwardOutput& out, const FrameTargets& targets,
                           const std::vector<TokenSlots>& mask,
                           const TrainConfig& cfg);

struct TrainPiece {
    PianoRoll roll;
    FrameTargets targets;
    std::string id;
};

// class indices shifted mod 12 (N fixed); boundaries unchanged
FrameTargets transpose_targets(const FrameTargets& targets, int semitones);

// consistent roll + label transposition by `semitones`
TrainPiece augment_piece(const TrainPiece& piece, int semitones);

struct StepRecord {
    long step = 0;
    double lr = 0.0;
    double loss = 0.0;
    double loss_boundary = 0.0;
    double loss_root = 0.0;
    double loss_quality = 0.0;
    double loss_bass = 0.0;
};

struct TrainResult {
    std::vector<StepRecord> log;
    std::string final_checkpoint;
};

// Steps through batches of whole pieces: fresh mask, forward, loss, backward,
// clip to max_grad_norm, AdamW at the scheduled rate. All randomness is
// derived from (seed, step), so resuming from a checkpoint is bitwise
// reproducible. Writes ndjson metrics and periodic checkpoints to out_dir;
// empty out_dir disables file output.
TrainResult train_loop(const std::vector<TrainPiece>& pieces, Model& model,
                       OptimizerState& opt, const TrainConfig& cfg,
                       const std::string& out_dir, long start_step = 0,
                       const std::string& config_stamp = "");

// ---------------------------------------------------------------------------
// synthetic corpus

struct CorpusPaths {
    std::string manifest;
    std::string train_split;
    std::string test_split;
};

// Random progressions over the quality vocabulary with random inversions and
// durations in {1,2,4} beats, rendered as block chords with the bass tone
// lowest; emits MIDI + label files, a manifest, and a seeded 9:1 piece split.
CorpusPaths make_synthetic_corpus(const std::string& out_dir, int n_pieces,
                                  int beats_per_piece, std::uint64_t seed,
                                  const std::string& config_stamp = "");

std::vector<TrainPiece> load_pieces(
    const std::vector<std::pair<std::string, std::string>>& manifest);

}  // namespace bachi
