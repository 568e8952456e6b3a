#include <doctest.h>

#include <json.hpp>

#include "bachi/decode.hpp"
#include "bachi/eval.hpp"
#include "grad_check.hpp"

using namespace bachi;
using bachi::testing::random_mat;

namespace {

ModelConfig tiny_config() {
    ModelConfig cfg;
    cfg.d_model = 8;
    cfg.encoder_layers = 1;
    cfg.heads = 2;
    cfg.ffn_mult = 2;
    cfg.dropout = 0.0;
    return cfg;
}

PianoRoll random_roll(long frames, Rng& rng) {
    PianoRoll r;
    r.frames = Mat::Zero(frames, kNumPitches);
    std::uniform_int_distribution<int> pitch(20, 60);
    for (long t = 0; t < frames; ++t)
        for (int k = 0; k < 4; ++k) r.frames(t, pitch(rng)) = 1.0;
    return r;
}

double max_softmax_of(const std::vector<double>& logits) {
    double mx = *std::max_element(logits.begin(), logits.end());
    double denom = 0;
    for (double v : logits) denom += std::exp(v - mx);
    return 1.0 / denom;
}

int argmax_of(const std::vector<double>& logits) {
    return (int)(std::max_element(logits.begin(), logits.end()) - logits.begin());
}

FrameTargets make_targets(const std::vector<std::string>& symbols) {
    std::vector<ChordLabel> labels;
    for (const auto& s : symbols) labels.push_back(parse_chord_symbol(s));
    FrameTargets t;
    for (const auto& l : labels) {
        t.roots.push_back(l.root);
        t.qualities.push_back(l.quality);
        t.basses.push_back(l.bass);
    }
    t.boundaries = binarize_boundaries(labels);
    return t;
}

}  // namespace

TEST_CASE("iterative decoding contract") {
    Rng rng(19);
    Model m(tiny_config(), rng);
    PianoRoll roll = random_roll(30, rng);
    PiecePrediction pred = iterative_decode(m, roll);

    REQUIRE(pred.trace.tokens.size() == 5);
    CHECK(!pred.trace.one_shot);
    CHECK(pred.boundary_prob.size() == 5);
    for (double p : pred.boundary_prob) {
        CHECK(p > 0.0);
        CHECK(p < 1.0);
    }

    for (const auto& tt : pred.trace.tokens) {
        // exactly three iterations, each committing a distinct slot
        REQUIRE(tt.iters.size() == 3);
        std::array<int, 3> sorted = tt.commit_order;
        std::sort(sorted.begin(), sorted.end());
        CHECK(sorted == std::array<int, 3>{0, 1, 2});

        std::array<bool, 3> filled = {false, false, false};
        for (size_t it = 0; it < 3; ++it) {
            const IterRecord& rec = tt.iters[it];
            CHECK(rec.committed_slot == tt.commit_order[it]);
            CHECK(!filled[(size_t)rec.committed_slot]);  // never re-committed

            // logits recorded for unfilled slots only, and the commit is the
            // highest-confidence unfilled slot with ties to the lower index
            int best = -1;
            double best_conf = -1;
            for (int s = 0; s < kNumSlots; ++s) {
                if (filled[(size_t)s]) {
                    CHECK(rec.logits[(size_t)s].empty());
                    continue;
                }
                REQUIRE(!rec.logits[(size_t)s].empty());
                double conf = max_softmax_of(rec.logits[(size_t)s]);
                if (conf > best_conf) {
                    best_conf = conf;
                    best = s;
                }
            }
            CHECK(rec.committed_slot == best);
            CHECK(rec.confidence == doctest::Approx(best_conf));
            CHECK(rec.committed_class ==
                  argmax_of(rec.logits[(size_t)rec.committed_slot]));
            filled[(size_t)rec.committed_slot] = true;
        }
    }

    // class dimensions per slot
    const auto& first = pred.trace.tokens[0].iters[0];
    CHECK(first.logits[kSlotRoot].size() == 13);
    CHECK(first.logits[kSlotQuality].size() == 15);
    CHECK(first.logits[kSlotBass].size() == 13);

    // deterministic replay
    PiecePrediction again = iterative_decode(m, roll);
    for (size_t t = 0; t < 5; ++t)
        CHECK(again.trace.tokens[t].final_label == pred.trace.tokens[t].final_label);

    // targets mirror the trace labels, boundaries binarized
    for (size_t t = 0; t < 5; ++t)
        CHECK(pred.targets.label_at(t) == pred.trace.tokens[t].final_label);
    CHECK(pred.targets.boundaries[0] == 1);
}

TEST_CASE("replay oracle: committed state drives later iterations") {
    // recompute each iteration with the model given the trace's committed
    // prefix; logits must match the recorded ones exactly
    Rng rng(23);
    Model m(tiny_config(), rng);
    PianoRoll roll = random_roll(12, rng);
    PiecePrediction pred = iterative_decode(m, roll);
    EncodeState st = m.prepare(roll);
    Rng r2(0);

    for (long t = 0; t < st.num_tokens; ++t) {
        const TokenTrace& tt = pred.trace.tokens[(size_t)t];
        Var context = m.assemble_context(st.Z, st.H, t);
        TokenSlots slots = TokenSlots::all_masked();
        for (size_t it = 0; it < 3; ++it) {
            SlotLogits logits = m.decode_step(slots, context, r2, false);
            const IterRecord& rec = tt.iters[it];
            for (int s = 0; s < kNumSlots; ++s) {
                if (rec.logits[(size_t)s].empty()) continue;
                for (size_t j = 0; j < rec.logits[(size_t)s].size(); ++j)
                    CHECK(logits[s]->value(0, (long)j) ==
                          doctest::Approx(rec.logits[(size_t)s][j]).epsilon(1e-12));
            }
            slots.masked[(size_t)rec.committed_slot] = false;
            slots.committed[(size_t)rec.committed_slot] = rec.committed_class;
        }
    }
}

TEST_CASE("one-shot decoding") {
    Rng rng(29);
    Model m(tiny_config(), rng);
    PianoRoll roll = random_roll(18, rng);
    PiecePrediction one = one_shot_decode(m, roll);

    CHECK(one.trace.one_shot);
    for (const auto& tt : one.trace.tokens) {
        REQUIRE(tt.iters.size() == 1);
        CHECK(tt.iters[0].committed_slot == -1);
        for (int s = 0; s < kNumSlots; ++s)
            CHECK(!tt.iters[0].logits[(size_t)s].empty());
    }

    // the first iterative pass sees the same all-masked input, so one-shot
    // labels equal the argmaxes of the iterative first-iteration logits
    PiecePrediction iter = iterative_decode(m, roll);
    for (size_t t = 0; t < one.trace.tokens.size(); ++t) {
        const auto& rec = iter.trace.tokens[t].iters[0];
        ChordLabel expect{argmax_of(rec.logits[kSlotRoot]),
                          argmax_of(rec.logits[kSlotQuality]),
                          argmax_of(rec.logits[kSlotBass])};
        // same canonicalization of partial no-chord triples as the decoder
        if (expect.root == kNoPitchClass || expect.quality == kQualityN)
            expect = ChordLabel::no_chord();
        else if (expect.bass == kNoPitchClass)
            expect.bass = expect.root;
        CHECK(one.trace.tokens[t].final_label == expect);
    }

    // decode() dispatches on the config flag
    CHECK(!decode(m, roll).trace.one_shot);
    ModelConfig cfg2 = tiny_config();
    cfg2.use_iterative = false;
    Model m2(cfg2, m.params());
    CHECK(decode(m2, roll).trace.one_shot);
}

TEST_CASE("iterative commits can overturn one-shot argmaxes") {
    // search small random models for a roll where conditioning on committed
    // slots flips a later argmax
    bool found = false;
    for (int seed = 0; seed < 200 && !found; ++seed) {
        Rng rng((unsigned)seed);
        Model m(tiny_config(), rng);
        PianoRoll roll = random_roll(24, rng);
        PiecePrediction one = one_shot_decode(m, roll);
        PiecePrediction iter = iterative_decode(m, roll);
        for (size_t t = 0; t < one.trace.tokens.size(); ++t)
            if (!(one.trace.tokens[t].final_label ==
                  iter.trace.tokens[t].final_label))
                found = true;
    }
    CHECK(found);
}

TEST_CASE("evaluate") {
    SUBCASE("perfect predictions") {
        FrameTargets ref = make_targets({"C:maj", "C:maj", "G:7", "N"});
        EvalReport rep = evaluate({ref}, {ref}, {"p"});
        CHECK(rep.macro_root == 1.0);
        CHECK(rep.macro_quality == 1.0);
        CHECK(rep.macro_bass == 1.0);
        CHECK(rep.macro_full == 1.0);
        CHECK(rep.boundary_precision == 1.0);
        CHECK(rep.boundary_recall == 1.0);
        CHECK(rep.boundary_f1 == 1.0);
        CHECK(rep.total_tokens == 4);
        // confusion diagonal: 2x maj, 1x dom7, 1x N
        CHECK(rep.quality_confusion[(size_t)quality_index("maj")]
                                   [(size_t)quality_index("maj")] == 2);
        CHECK(rep.quality_confusion[(size_t)kQualityN][(size_t)kQualityN] == 1);
    }

    SUBCASE("hand-computed macro over two pieces") {
        FrameTargets ref1 = make_targets({"C:maj", "G:maj", "A:min", "F:maj"});
        FrameTargets pred1 = make_targets({"C:maj", "G:maj", "A:maj", "D:maj"});
        // piece 1: root 3/4, quality 3/4 (A:maj quality wrong; D root wrong,
        // quality maj matches F:maj), bass 3/4, full 2/4
        FrameTargets ref2 = make_targets({"C:maj", "C:maj"});
        FrameTargets pred2 = make_targets({"C:maj", "C:maj/E"});
        // piece 2: root 1, quality 1, bass 1/2, full 1/2
        EvalReport rep = evaluate({pred1, pred2}, {ref1, ref2}, {"a", "b"});
        CHECK(rep.macro_root == doctest::Approx((0.75 + 1.0) / 2));
        CHECK(rep.macro_quality == doctest::Approx((0.75 + 1.0) / 2));
        CHECK(rep.macro_bass == doctest::Approx((0.75 + 0.5) / 2));
        CHECK(rep.macro_full == doctest::Approx((0.5 + 0.5) / 2));
        CHECK(rep.pieces[0].full == doctest::Approx(0.5));
        CHECK(rep.pieces[1].full == doctest::Approx(0.5));
    }

    SUBCASE("full accuracy never exceeds any element accuracy") {
        Rng rng(31);
        std::uniform_int_distribution<int> root(0, 12), quality(0, 14);
        auto random_targets = [&](size_t n) {
            FrameTargets t;
            std::vector<ChordLabel> labels;
            for (size_t i = 0; i < n; ++i)
                labels.push_back({root(rng), quality(rng), root(rng)});
            for (const auto& l : labels) {
                t.roots.push_back(l.root);
                t.qualities.push_back(l.quality);
                t.basses.push_back(l.bass);
            }
            t.boundaries = binarize_boundaries(labels);
            return t;
        };
        for (int trial = 0; trial < 20; ++trial) {
            EvalReport rep =
                evaluate({random_targets(30)}, {random_targets(30)}, {"x"});
            const PieceScore& ps = rep.pieces[0];
            CHECK(ps.full <= std::min({ps.root, ps.quality, ps.bass}) + 1e-12);
        }
    }

    SUBCASE("boundary probabilities threshold at 0.5") {
        FrameTargets ref = make_targets({"C:maj", "G:maj", "G:maj", "G:maj"});
        std::vector<std::vector<double>> probs = {{0.9, 0.6, 0.4, 0.2}};
        // ref boundaries 1,1,0,0; predicted flags 1,1,0,0
        EvalReport rep = evaluate({ref}, {ref}, {"p"}, &probs);
        CHECK(rep.boundary_precision == 1.0);
        CHECK(rep.boundary_recall == 1.0);

        std::vector<std::vector<double>> miss = {{0.9, 0.2, 0.8, 0.2}};
        // predicted flags 1,0,1,0: tp=1, fp=1, fn=1
        EvalReport rep2 = evaluate({ref}, {ref}, {"p"}, &miss);
        CHECK(rep2.boundary_precision == doctest::Approx(0.5));
        CHECK(rep2.boundary_recall == doctest::Approx(0.5));
        CHECK(rep2.boundary_f1 == doctest::Approx(0.5));
    }

    SUBCASE("errors") {
        FrameTargets a = make_targets({"C:maj"});
        FrameTargets b = make_targets({"C:maj", "G:maj"});
        CHECK_THROWS_WITH_AS(evaluate({a}, {b}, {"pieceX"}),
                             doctest::Contains("pieceX"), std::runtime_error);
        CHECK_THROWS(evaluate({}, {}, {}));
    }
}

TEST_CASE("order statistics") {
    auto make_trace = [](const std::vector<std::array<int, 3>>& orders) {
        DecodeTrace trace;
        for (const auto& o : orders) {
            TokenTrace tt;
            tt.commit_order = o;
            tt.iters.resize(3);
            trace.tokens.push_back(tt);
        }
        return trace;
    };
    // 3 tokens root-first, 1 quality-first
    DecodeTrace t1 = make_trace({{0, 1, 2}, {0, 1, 2}, {0, 2, 1}});
    DecodeTrace t2 = make_trace({{1, 0, 2}});
    DecodeTrace ignored;
    ignored.one_shot = true;
    ignored.tokens.resize(5);

    OrderStats st = order_statistics({t1, t2, ignored});
    CHECK(st.tokens == 4);
    CHECK(st.chain_pct["root->quality->bass"] == doctest::Approx(50.0));
    CHECK(st.chain_pct["root->bass->quality"] == doctest::Approx(25.0));
    CHECK(st.chain_pct["quality->root->bass"] == doctest::Approx(25.0));
    CHECK(st.first_pct["root"] == doctest::Approx(75.0));
    CHECK(st.first_pct["quality"] == doctest::Approx(25.0));

    double chain_sum = 0, first_sum = 0;
    for (const auto& [k, v] : st.chain_pct) chain_sum += v;
    for (const auto& [k, v] : st.first_pct) first_sum += v;
    CHECK(chain_sum == doctest::Approx(100.0));
    CHECK(first_sum == doctest::Approx(100.0));

    CHECK_THROWS(order_statistics({}));
}

TEST_CASE("rule-based baseline") {
    auto roll_of = [](std::vector<int> pitches, double beats) {
        std::vector<NoteEvent> notes;
        for (int p : pitches) notes.push_back({p, 0.0, beats, 80});
        return build_piano_roll(notes, beats);
    };

    // C-E-G block chord
    FrameTargets cmaj = rule_based_baseline(roll_of({60, 64, 67}, 1.0));
    for (size_t t = 0; t < cmaj.size(); ++t)
        CHECK(cmaj.label_at(t) == parse_chord_symbol("C:maj"));

    // inversion: low E makes the bass E
    FrameTargets inv = rule_based_baseline(roll_of({52, 60, 67}, 1.0));
    CHECK(inv.label_at(0) == parse_chord_symbol("C:maj/E"));

    // added seventh
    FrameTargets maj7 = rule_based_baseline(roll_of({60, 64, 67, 71}, 1.0));
    CHECK(maj7.label_at(0) == parse_chord_symbol("C:maj7"));

    // silence is N
    FrameTargets none = rule_based_baseline(build_piano_roll({}, 1.0));
    for (size_t t = 0; t < none.size(); ++t)
        CHECK(none.label_at(t) == ChordLabel::no_chord());

    // enumeration over all roots for set-unambiguous qualities
    for (int root = 0; root < 12; ++root)
        for (const char* q : {"maj", "min", "dim", "7", "maj7"}) {
            ChordLabel expect{root, quality_index(q), root};
            const auto& tpl = quality_templates()[(size_t)expect.quality];
            std::vector<int> pitches;
            for (int interval : tpl) pitches.push_back(60 + root + interval);
            FrameTargets out = rule_based_baseline(roll_of(pitches, 0.5));
            INFO("root ", root, " quality ", q);
            CHECK(out.roots[0] == expect.root);
            CHECK(out.qualities[0] == expect.quality);
        }

    // half-beat tokens see different chords; widening to the beat merges them
    std::vector<NoteEvent> split = {{60, 0.0, 0.5, 80}, {64, 0.0, 0.5, 80},
                                    {67, 0.0, 0.5, 80}, {55, 0.5, 0.5, 80},
                                    {59, 0.5, 0.5, 80}, {62, 0.5, 0.5, 80}};
    FrameTargets narrow = rule_based_baseline(build_piano_roll(split, 1.0));
    CHECK(narrow.label_at(0) == parse_chord_symbol("C:maj"));
    CHECK(narrow.label_at(1) == parse_chord_symbol("G:maj/G"));
    FrameTargets wide = rule_based_baseline(build_piano_roll(split, 1.0), true);
    CHECK(wide.label_at(0) == wide.label_at(1));
}

TEST_CASE("trace json") {
    Rng rng(37);
    Model m(tiny_config(), rng);
    PianoRoll roll = random_roll(12, rng);
    PiecePrediction pred = iterative_decode(m, roll);

    auto j = nlohmann::json::parse(trace_to_json(pred.trace, "hash=abc"));
    CHECK(j["mode"] == "iterative");
    CHECK(j["config"] == "hash=abc");
    REQUIRE(j["tokens"].size() == 2);
    for (size_t t = 0; t < 2; ++t) {
        const auto& tok = j["tokens"][t];
        CHECK(tok["iterations"].size() == 3);
        CHECK(tok["commit_order"].size() == 3);
        CHECK(parse_chord_symbol(tok["label"].get<std::string>()) ==
              pred.trace.tokens[t].final_label);
    }

    PiecePrediction one = one_shot_decode(m, roll);
    auto jo = nlohmann::json::parse(trace_to_json(one.trace, ""));
    CHECK(jo["mode"] == "one_shot");
    CHECK(jo["tokens"][0]["iterations"].size() == 1);
}

TEST_CASE("report formatting") {
    FrameTargets ref = make_targets({"C:maj", "G:7"});
    EvalReport rep = evaluate({ref}, {ref}, {"p"});
    std::string text = format_report(rep);
    CHECK(text.find("100.00%") != std::string::npos);

    auto j = nlohmann::json::parse(report_to_json(rep, "stamp"));
    CHECK(j["macro"]["full"] == 1.0);
    CHECK(j["pieces"].size() == 1);

    std::string csv = confusion_to_csv(rep);
    CHECK(csv.find("ref\\pred") != std::string::npos);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == kNumQualities + 1);
}
