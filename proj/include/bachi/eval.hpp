// Token-level accuracy metrics, quality confusion matrix, boundary P/R/F1,
// decoding-order statistics, and the training-free rule-based baseline.
#pragma once

#include <map>
#include <string>
#include <vector>

#include "bachi/decode.hpp"

namespace bachi {

struct PieceScore {
    std::string id;
    double root = 0, quality = 0, bass = 0, full = 0;
    long tokens = 0;
};

struct OrderStats {
    std::map<std::string, double> chain_pct;  // e.g. "quality->root->bass"
    std::map<std::string, double> first_pct;  // first committed element
    long tokens = 0;
};

struct EvalReport {
    std::vector<PieceScore> pieces;
    double macro_root = 0, macro_quality = 0, macro_bass = 0, macro_full = 0;
    // quality confusion: rows = reference class, cols = predicted class
    std::vector<std::vector<long>> quality_confusion;
    double boundary_precision = 0, boundary_recall = 0, boundary_f1 = 0;
    OrderStats order;
    long total_tokens = 0;
};

// Per piece, token-level accuracy per element; full-chord correct iff all
// three elements match; macro scores are unweighted means over pieces.
// boundary_probs (when given) are thresholded at 0.5; otherwise the
// predictions' boundary flags are used.
EvalReport evaluate(const std::vector<FrameTargets>& predictions,
                    const std::vector<FrameTargets>& references,
                    const std::vector<std::string>& piece_ids,
                    const std::vector<std::vector<double>>* boundary_probs = nullptr);

// frequency of each commit-order permutation and first-committed element,
// as percentages over all tokens of iterative traces
OrderStats order_statistics(const std::vector<DecodeTrace>& traces);

// Aggregates sounding pitch classes per token window (optionally widened to
// the beat), scores every (root, quality) template, and picks the best:
// score = matched_weight - 0.3*missing_template_tones - 0.5*non_chord_weight.
// Bass is the pitch class of the lowest sounding note; empty windows give N.
FrameTargets rule_based_baseline(const PianoRoll& roll, bool widen_to_beat = false);

std::string format_report(const EvalReport& report);
std::string report_to_json(const EvalReport& report, const std::string& config_stamp);
std::string confusion_to_csv(const EvalReport& report);

}  // namespace bachi
