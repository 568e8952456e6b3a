#include "bachi/eval.hpp"

#include <json.hpp>

#include <cmath>
#include <sstream>

namespace bachi {

EvalReport evaluate(const std::vector<FrameTargets>& predictions,
                    const std::vector<FrameTargets>& references,
                    const std::vector<std::string>& piece_ids,
                    const std::vector<std::vector<double>>* boundary_probs) {
    require(predictions.size() == references.size() &&
                predictions.size() == piece_ids.size(),
            "evaluate: piece count mismatch");
    require(!predictions.empty(), "evaluate: no pieces");

    EvalReport rep;
    rep.quality_confusion.assign(kNumQualities, std::vector<long>(kNumQualities, 0));
    long b_tp = 0, b_fp = 0, b_fn = 0;

    for (size_t p = 0; p < predictions.size(); ++p) {
        const auto& pred = predictions[p];
        const auto& ref = references[p];
        require(pred.size() == ref.size(),
                "evaluate: token count mismatch in piece " + piece_ids[p]);
        PieceScore ps;
        ps.id = piece_ids[p];
        ps.tokens = (long)ref.size();
        for (size_t t = 0; t < ref.size(); ++t) {
            bool r = pred.roots[t] == ref.roots[t];
            bool q = pred.qualities[t] == ref.qualities[t];
            bool b = pred.basses[t] == ref.basses[t];
            ps.root += r;
            ps.quality += q;
            ps.bass += b;
            ps.full += r && q && b;
            rep.quality_confusion[(size_t)ref.qualities[t]][(size_t)pred.qualities[t]]++;

            int pred_boundary =
                boundary_probs ? ((*boundary_probs)[p][t] > 0.5 ? 1 : 0)
                               : pred.boundaries[t];
            if (pred_boundary && ref.boundaries[t]) ++b_tp;
            if (pred_boundary && !ref.boundaries[t]) ++b_fp;
            if (!pred_boundary && ref.boundaries[t]) ++b_fn;
        }
        ps.root /= ps.tokens;
        ps.quality /= ps.tokens;
        ps.bass /= ps.tokens;
        ps.full /= ps.tokens;
        rep.total_tokens += ps.tokens;
        rep.pieces.push_back(ps);
    }

    for (const auto& ps : rep.pieces) {
        rep.macro_root += ps.root;
        rep.macro_quality += ps.quality;
        rep.macro_bass += ps.bass;
        rep.macro_full += ps.full;
    }
    const double n = (double)rep.pieces.size();
    rep.macro_root /= n;
    rep.macro_quality /= n;
    rep.macro_bass /= n;
    rep.macro_full /= n;

    rep.boundary_precision = b_tp + b_fp > 0 ? (double)b_tp / (b_tp + b_fp) : 0.0;
    rep.boundary_recall = b_tp + b_fn > 0 ? (double)b_tp / (b_tp + b_fn) : 0.0;
    rep.boundary_f1 = rep.boundary_precision + rep.boundary_recall > 0
                          ? 2 * rep.boundary_precision * rep.boundary_recall /
                                (rep.boundary_precision + rep.boundary_recall)
                          : 0.0;
    return rep;
}

OrderStats order_statistics(const std::vector<DecodeTrace>& traces) {
    require(!traces.empty(), "order_statistics: no traces");
    static const char* slot_names[kNumSlots] = {"root", "quality", "bass"};
    OrderStats st;
    std::map<std::string, long> chains;
    std::map<std::string, long> firsts;
    for (const auto& trace : traces) {
        if (trace.one_shot) continue;
        for (const auto& tt : trace.tokens) {
            std::string chain = std::string(slot_names[tt.commit_order[0]]) + "->" +
                                slot_names[tt.commit_order[1]] + "->" +
                                slot_names[tt.commit_order[2]];
            chains[chain]++;
            firsts[slot_names[tt.commit_order[0]]]++;
            st.tokens++;
        }
    }
    for (const auto& [chain, count] : chains)
        st.chain_pct[chain] = 100.0 * count / st.tokens;
    for (const auto& [first, count] : firsts)
        st.first_pct[first] = 100.0 * count / st.tokens;
    return st;
}

FrameTargets rule_based_baseline(const PianoRoll& roll, bool widen_to_beat) {
    const long n_tokens = roll.num_tokens();
    const int window = widen_to_beat ? kFramesPerBeat : kPatchSize;
    std::vector<ChordLabel> labels;

    for (long t = 0; t < n_tokens; ++t) {
        long start = widen_to_beat ? (t * kPatchSize / window) * window : t * kPatchSize;
        long end = std::min(start + window, roll.num_frames());

        double pc_weight[12] = {};
        int lowest_pitch = -1;
        for (long f = start; f < end; ++f)
            for (long p = 0; p < kNumPitches; ++p)
                if (roll.frames(f, p) > 0.5) {
                    pc_weight[(p + kLowestPitch) % 12] += 1.0;
                    if (lowest_pitch < 0 || p < lowest_pitch) lowest_pitch = (int)p;
                }

        if (lowest_pitch < 0) {
            labels.push_back(ChordLabel::no_chord());
            continue;
        }

        ChordLabel best;
        double best_score = -1e300;
        for (int root = 0; root < 12; ++root)
            for (int q = 0; q < kNumQualities - 1; ++q) {
                const auto& tpl = quality_templates()[(size_t)q];
                bool in_template[12] = {};
                double matched = 0;
                int missing = 0;
                for (int interval : tpl) {
                    int pc = (root + interval) % 12;
                    in_template[pc] = true;
                    if (pc_weight[pc] > 0)
                        matched += pc_weight[pc];
                    else
                        ++missing;
                }
                double non_chord = 0;
                for (int pc = 0; pc < 12; ++pc)
                    if (!in_template[pc]) non_chord += pc_weight[pc];
                double score = matched - 0.3 * missing - 0.5 * non_chord;
                // ties broken by lower root, then earlier quality index
                if (score > best_score + 1e-12) {
                    best_score = score;
                    best = {root, q, (lowest_pitch + kLowestPitch) % 12};
                }
            }
        labels.push_back(best);
    }

    FrameTargets out;
    for (const auto& l : labels) {
        out.roots.push_back(l.root);
        out.qualities.push_back(l.quality);
        out.basses.push_back(l.bass);
    }
    out.boundaries = binarize_boundaries(labels);
    return out;
}

std::string format_report(const EvalReport& rep) {
    std::ostringstream out;
    char buf[256];
    std::snprintf(buf, sizeof buf,
                  "macro accuracy over %zu pieces (%ld tokens)\n"
                  "  root: %.2f%%  quality: %.2f%%  bass: %.2f%%  full: %.2f%%\n"
                  "boundary P/R/F1 @0.5: %.3f / %.3f / %.3f\n",
                  rep.pieces.size(), rep.total_tokens, 100 * rep.macro_root,
                  100 * rep.macro_quality, 100 * rep.macro_bass, 100 * rep.macro_full,
                  rep.boundary_precision, rep.boundary_recall, rep.boundary_f1);
    out << buf;
    if (rep.order.tokens > 0) {
        out << "decoding-order chains (% of " << rep.order.tokens << " tokens):\n";
        for (const auto& [chain, pct] : rep.order.chain_pct) {
            std::snprintf(buf, sizeof buf, "  %-24s %.2f%%\n", chain.c_str(), pct);
            out << buf;
        }
        out << "first committed element:\n";
        for (const auto& [first, pct] : rep.order.first_pct) {
            std::snprintf(buf, sizeof buf, "  %-24s %.2f%%\n", first.c_str(), pct);
            out << buf;
        }
    }
    return out.str();
}

std::string report_to_json(const EvalReport& rep, const std::string& config_stamp) {
    nlohmann::json j;
    j["config"] = config_stamp;
    j["macro"] = {{"root", rep.macro_root},
                  {"quality", rep.macro_quality},
                  {"bass", rep.macro_bass},
                  {"full", rep.macro_full}};
    j["boundary"] = {{"precision", rep.boundary_precision},
                     {"recall", rep.boundary_recall},
                     {"f1", rep.boundary_f1}};
    j["total_tokens"] = rep.total_tokens;
    auto& pieces = j["pieces"] = nlohmann::json::array();
    for (const auto& ps : rep.pieces)
        pieces.push_back({{"id", ps.id},
                          {"root", ps.root},
                          {"quality", ps.quality},
                          {"bass", ps.bass},
                          {"full", ps.full},
                          {"tokens", ps.tokens}});
    if (rep.order.tokens > 0) {
        j["order_chains"] = rep.order.chain_pct;
        j["order_first"] = rep.order.first_pct;
    }
    return j.dump(2);
}

std::string confusion_to_csv(const EvalReport& rep) {
    std::ostringstream out;
    out << "ref\\pred";
    for (const auto& name : quality_names()) out << "," << name;
    out << "\n";
    for (int r = 0; r < kNumQualities; ++r) {
        out << quality_names()[(size_t)r];
        for (int c = 0; c < kNumQualities; ++c)
            out << "," << rep.quality_confusion[(size_t)r][(size_t)c];
        out << "\n";
    }
    return out.str();
}

}  // namespace bachi
