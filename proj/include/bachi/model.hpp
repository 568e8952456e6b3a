// The BACHI network: patch embedding, transformer encoder, boundary head,
// FiLM conditioning, local context assembly, and the masked chord-element
// decoder with per-element classification heads.
#pragma once

#include <array>
#include <vector>

#include "bachi/config.hpp"
#include "bachi/labels.hpp"
#include "bachi/optim.hpp"
#include "bachi/piano_roll.hpp"

namespace bachi {

inline constexpr int kNumSlots = 3;  // root, quality, bass
enum Slot { kSlotRoot = 0, kSlotQuality = 1, kSlotBass = 2 };

struct ModelConfig {
    int d_model = 64;
    int encoder_layers = 2;
    int heads = 4;
    int ffn_mult = 4;
    int context_radius = 2;
    int patch_size = kPatchSize;
    int frames_per_beat = kFramesPerBeat;
    int n_roots = kNumRoots;
    int n_qualities = kNumQualities;
    int n_basses = kNumBasses;
    double dropout = 0.1;
    bool use_boundary = true;   // feed boundary probabilities into FiLM
    bool use_iterative = true;  // confidence-ordered decoding at inference

    KVMap to_kv() const;
    static ModelConfig from_kv(const KVMap& kv);
    void validate() const;
};

// masked/committed state of one token's three element slots
struct TokenSlots {
    std::array<bool, kNumSlots> masked = {true, true, true};
    std::array<int, kNumSlots> committed = {0, 0, 0};  // class index when not masked

    static TokenSlots all_masked() { return {}; }
};

struct SlotLogits {
    Var root;     // [1, n_roots]
    Var quality;  // [1, n_qualities]
    Var bass;     // [1, n_basses]

    const Var& operator[](int s) const {
        return s == kSlotRoot ? root : s == kSlotQuality ? quality : bass;
    }
};

struct ForwardOutput {
    Var boundary_logits;            // [L, 1]
    std::vector<SlotLogits> logits;  // one triple per token
};

// Encoder-side state reused across decoder iterations at inference.
struct EncodeState {
    Var H;  // [L, d_model]
    Var Z;  // [L, d_model]
    Var boundary_logits;  // [L, 1]
    long num_tokens = 0;
};

class Model {
  public:
    Model(ModelConfig cfg, Rng& init_rng);
    Model(ModelConfig cfg, const ParamStore& loaded);  // from checkpoint

    const ModelConfig& config() const { return cfg_; }
    ParamStore& params() { return params_; }
    const ParamStore& params() const { return params_; }

    // conv1d patch embedding + GLU + sinusoidal positions: [T,88] -> [L,d]
    Var patch_embed(const PianoRoll& roll, Rng& rng, bool training) const;

    // pre-LN self-attention encoder stack
    Var encode(const Var& tokens, Rng& rng, bool training) const;

    // 2-layer MLP, one logit per token: [L,d] -> [L,1]
    Var predict_boundaries(const Var& H) const;

    // FiLM conditioning on the boundary feature; Z = LN(H) (1+gamma) + beta.
    // With use_boundary=false the boundary feature is bypassed and Z = LN(H).
    Var film_condition(const Var& H, const Var& boundary_prob) const;

    // rows [Z_t, H_{t-2..t+2}]; out-of-range neighbors are zero rows
    Var assemble_context(const Var& Z, const Var& H, long t) const;

    // one decoder block over the 3 slot rows + per-element heads
    SlotLogits decode_step(const TokenSlots& slots, const Var& context, Rng& rng,
                           bool training) const;

    // full pipeline for training; optional teacher-forced boundaries replace
    // the sigmoid probabilities fed to FiLM (the head is still trained)
    ForwardOutput forward_full(const PianoRoll& roll,
                               const std::vector<TokenSlots>& slots, Rng& rng,
                               bool training,
                               const std::vector<int>* forced_boundaries = nullptr) const;

    // encoder-side pass shared by all decode iterations of a piece
    EncodeState prepare(const PianoRoll& roll) const;

    Var decoder_input(const TokenSlots& slots) const;

  private:
    void register_params(Rng& rng);

    ModelConfig cfg_;
    ParamStore params_;
};

// sinusoidal absolute positional encoding, [length, d]
Mat positional_encoding(long length, int d);

}  // namespace bachi
