// Confidence-ordered masked iterative decoding and the one-shot ablation.
#pragma once

#include <array>
#include <string>
#include <vector>

#include "bachi/model.hpp"

namespace bachi {

struct IterRecord {
    int committed_slot = -1;   // -1 in one-shot mode (all slots at once)
    int committed_class = -1;
    double confidence = 0.0;   // max softmax of the committed slot
    // raw logits per slot at this iteration; empty for already-filled slots
    std::array<std::vector<double>, kNumSlots> logits;
};

struct TokenTrace {
    std::vector<IterRecord> iters;
    std::array<int, kNumSlots> commit_order = {-1, -1, -1};  // slot per iteration
    ChordLabel final_label;
};

struct DecodeTrace {
    bool one_shot = false;
    std::vector<TokenTrace> tokens;
};

struct PiecePrediction {
    FrameTargets targets;               // boundaries binarized from labels
    std::vector<double> boundary_prob;  // sigmoid of the boundary head
    DecodeTrace trace;
};

// Per token, independently: start all-masked, run one decode step, commit
// the argmax class of the highest-confidence unfilled slot (ties broken by
// slot order root < quality < bass), repeat until filled — exactly three
// decode steps per token.
PiecePrediction iterative_decode(const Model& model, const PianoRoll& roll);

// single decode step with all slots masked; all three argmaxes committed
PiecePrediction one_shot_decode(const Model& model, const PianoRoll& roll);

// dispatches on the model's use_iterative flag
PiecePrediction decode(const Model& model, const PianoRoll& roll);

std::string trace_to_json(const DecodeTrace& trace, const std::string& config_stamp);

}  // namespace bachi
