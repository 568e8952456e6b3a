#include "bachi/decode.hpp"

#include <json.hpp>

namespace bachi {

namespace {

std::vector<double> row_to_vec(const Mat& m) {
    return std::vector<double>(m.data(), m.data() + m.size());
}

double max_softmax(const Mat& logits) {
    Mat p = softmax_rows_value(logits);
    return p.maxCoeff();
}

int argmax(const Mat& logits) {
    Eigen::Index idx;
    logits.row(0).maxCoeff(&idx);
    return (int)idx;
}

// The heads expose the no-chord class per element, but a partial no-chord
// triple is not a chord; canonicalize so downstream symbols stay printable.
void finalize_token(TokenTrace& tt, const TokenSlots& slots) {
    ChordLabel l = {slots.committed[kSlotRoot], slots.committed[kSlotQuality],
                    slots.committed[kSlotBass]};
    if (l.root == kNoPitchClass || l.quality == kQualityN)
        l = ChordLabel::no_chord();
    else if (l.bass == kNoPitchClass)
        l.bass = l.root;
    tt.final_label = l;
}

FrameTargets to_targets(const DecodeTrace& trace) {
    std::vector<ChordLabel> labels;
    labels.reserve(trace.tokens.size());
    for (const auto& tt : trace.tokens) labels.push_back(tt.final_label);
    FrameTargets out;
    for (const auto& l : labels) {
        out.roots.push_back(l.root);
        out.qualities.push_back(l.quality);
        out.basses.push_back(l.bass);
    }
    out.boundaries = binarize_boundaries(labels);
    return out;
}

}  // namespace

PiecePrediction iterative_decode(const Model& model, const PianoRoll& roll) {
    EncodeState st = model.prepare(roll);
    Rng rng(0);  // inference: dropout off, no randomness consumed

    DecodeTrace trace;
    for (long t = 0; t < st.num_tokens; ++t) {
        Var context = model.assemble_context(st.Z, st.H, t);
        TokenSlots slots = TokenSlots::all_masked();
        TokenTrace tt;
        for (int iter = 0; iter < kNumSlots; ++iter) {
            SlotLogits logits = model.decode_step(slots, context, rng, false);
            IterRecord rec;
            int best_slot = -1;
            double best_conf = -1.0;
            for (int s = 0; s < kNumSlots; ++s) {
                if (!slots.masked[s]) continue;
                rec.logits[(size_t)s] = row_to_vec(logits[s]->value);
                double conf = max_softmax(logits[s]->value);
                if (conf > best_conf) {  // ties keep the lower slot index
                    best_conf = conf;
                    best_slot = s;
                }
            }
            slots.masked[(size_t)best_slot] = false;
            slots.committed[(size_t)best_slot] = argmax(logits[best_slot]->value);
            rec.committed_slot = best_slot;
            rec.committed_class = slots.committed[(size_t)best_slot];
            rec.confidence = best_conf;
            tt.commit_order[(size_t)iter] = best_slot;
            tt.iters.push_back(std::move(rec));
        }
        finalize_token(tt, slots);
        trace.tokens.push_back(std::move(tt));
    }

    PiecePrediction out;
    out.targets = to_targets(trace);
    Mat probs = (1.0 / (1.0 + (-st.boundary_logits->value.array()).exp())).matrix();
    out.boundary_prob = std::vector<double>(probs.data(), probs.data() + probs.size());
    out.trace = std::move(trace);
    return out;
}

PiecePrediction one_shot_decode(const Model& model, const PianoRoll& roll) {
    EncodeState st = model.prepare(roll);
    Rng rng(0);

    DecodeTrace trace;
    trace.one_shot = true;
    for (long t = 0; t < st.num_tokens; ++t) {
        Var context = model.assemble_context(st.Z, st.H, t);
        TokenSlots slots = TokenSlots::all_masked();
        SlotLogits logits = model.decode_step(slots, context, rng, false);
        TokenTrace tt;
        IterRecord rec;
        double conf_min = 1.0;
        for (int s = 0; s < kNumSlots; ++s) {
            rec.logits[(size_t)s] = row_to_vec(logits[s]->value);
            slots.masked[(size_t)s] = false;
            slots.committed[(size_t)s] = argmax(logits[s]->value);
            conf_min = std::min(conf_min, max_softmax(logits[s]->value));
        }
        rec.confidence = conf_min;
        tt.iters.push_back(std::move(rec));
        finalize_token(tt, slots);
        trace.tokens.push_back(std::move(tt));
    }

    PiecePrediction out;
    out.targets = to_targets(trace);
    Mat probs = (1.0 / (1.0 + (-st.boundary_logits->value.array()).exp())).matrix();
    out.boundary_prob = std::vector<double>(probs.data(), probs.data() + probs.size());
    out.trace = std::move(trace);
    return out;
}

PiecePrediction decode(const Model& model, const PianoRoll& roll) {
    return model.config().use_iterative ? iterative_decode(model, roll)
                                        : one_shot_decode(model, roll);
}

std::string trace_to_json(const DecodeTrace& trace, const std::string& config_stamp) {
    static const char* slot_names[kNumSlots] = {"root", "quality", "bass"};
    nlohmann::json j;
    j["mode"] = trace.one_shot ? "one_shot" : "iterative";
    j["config"] = config_stamp;
    auto& toks = j["tokens"] = nlohmann::json::array();
    for (const auto& tt : trace.tokens) {
        nlohmann::json tj;
        tj["label"] = format_chord_symbol(tt.final_label);
        if (!trace.one_shot) {
            auto& order = tj["commit_order"] = nlohmann::json::array();
            for (int s : tt.commit_order) order.push_back(slot_names[s]);
        }
        auto& iters = tj["iterations"] = nlohmann::json::array();
        for (const auto& rec : tt.iters) {
            nlohmann::json rj;
            if (rec.committed_slot >= 0) rj["slot"] = slot_names[rec.committed_slot];
            rj["class"] = rec.committed_class;
            rj["confidence"] = rec.confidence;
            iters.push_back(rj);
        }
        toks.push_back(tj);
    }
    return j.dump(2);
}

}  // namespace bachi
