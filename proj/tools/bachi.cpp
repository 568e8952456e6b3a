// bachi: corpus generation, training, inference, and evaluation in one tool.
//
// Exit codes: 0 success, 2 usage/input error, 3 checkpoint/config error,
// 4 data-set mismatch.
#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>

#include "bachi/checkpoint.hpp"
#include "bachi/decode.hpp"
#include "bachi/eval.hpp"
#include "bachi/train.hpp"

namespace fs = std::filesystem;
using namespace bachi;

namespace {

struct CheckpointError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct DataMismatchError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

std::string config_stamp(const KVMap& kv) {
    std::string text = format_kv(kv);
    return "config_hash=" + std::to_string(fnv1a(text));
}

FrameTargets targets_from_segments(const std::vector<Segment>& segments,
                                   double total_beats) {
    LabeledPiece piece;
    piece.roll = build_piano_roll({}, total_beats);
    piece.segments = segments;
    if (!piece.segments.empty() &&
        piece.segments.back().end_beat < piece.roll.total_beats())
        piece.segments.back().end_beat = piece.roll.total_beats();
    return labels_to_frame_targets(piece);
}

Model load_model(const std::string& ckpt_path, Checkpoint& ck,
                 bool one_shot_override = false, bool no_boundary_override = false) {
    try {
        ck = load_checkpoint(ckpt_path);
    } catch (const std::exception& e) {
        throw CheckpointError(e.what());
    }
    try {
        ModelConfig mc = ModelConfig::from_kv(parse_kv_text(ck.config_text));
        if (one_shot_override) mc.use_iterative = false;
        if (no_boundary_override) mc.use_boundary = false;
        return Model(mc, ck.params);
    } catch (const std::exception& e) {
        throw CheckpointError(e.what());
    }
}

double token_accuracy(const Model& model, const std::vector<TrainPiece>& pieces) {
    if (pieces.empty()) return 0.0;
    long correct = 0, total = 0;
    for (const auto& p : pieces) {
        PiecePrediction pred = decode(model, p.roll);
        for (size_t t = 0; t < p.targets.size(); ++t) {
            correct += pred.targets.label_at(t) == p.targets.label_at(t);
            ++total;
        }
    }
    return (double)correct / (double)total;
}

int cmd_gen(const std::string& out_dir, int pieces, int beats, long seed) {
    KVMap kv{{"cmd", "gen"},
             {"pieces", std::to_string(pieces)},
             {"beats", std::to_string(beats)},
             {"seed", std::to_string(seed)}};
    auto paths = make_synthetic_corpus(out_dir, pieces, beats, (std::uint64_t)seed,
                                       config_stamp(kv));
    std::cout << "wrote " << pieces << " pieces under " << out_dir << "\n"
              << "manifest: " << paths.manifest << "\n"
              << "split: " << paths.train_split << " / " << paths.test_split << "\n";
    return 0;
}

int cmd_train(const std::string& config_path, const KVMap& overrides) {
    KVMap kv;
    if (!config_path.empty()) kv = load_kv_file(config_path);
    for (const auto& [k, v] : overrides) kv[k] = v;

    std::string manifest_path = kv_get(kv, "manifest", "");
    if (manifest_path.empty())
        throw std::runtime_error("train: no manifest given (config key 'manifest')");
    std::string out_dir = kv_get(kv, "out_dir", "train_out");
    std::string test_manifest = kv_get(kv, "test_manifest", "");

    ModelConfig mc = ModelConfig::from_kv(kv);
    TrainConfig tc = TrainConfig::from_kv(kv);
    KVMap full = mc.to_kv();
    for (const auto& [k, v] : tc.to_kv()) full[k] = v;
    full["manifest"] = manifest_path;
    std::string stamp = format_kv(full) + "# " + config_stamp(full) + "\n";

    auto pieces = load_pieces(load_manifest(manifest_path));
    std::cout << "loaded " << pieces.size() << " training pieces\n";

    Rng init_rng((std::uint64_t)tc.seed);
    Model model(mc, init_rng);
    OptimizerState opt;
    long start_step = 0;
    std::string resume = kv_get(kv, "resume", "");
    if (!resume.empty()) {
        Checkpoint ck;
        model = load_model(resume, ck);
        if (ck.optimizer) opt = *ck.optimizer;
        start_step = ck.step;
        std::cout << "resumed from " << resume << " at step " << start_step << "\n";
    }

    TrainResult res = train_loop(pieces, model, opt, tc, out_dir, start_step, stamp);
    if (!res.log.empty())
        std::cout << "final step " << res.log.back().step
                  << " loss " << res.log.back().loss << "\n";

    std::cout << "train token accuracy: " << 100.0 * token_accuracy(model, pieces)
              << "%\n";
    if (!test_manifest.empty()) {
        auto test_pieces = load_pieces(load_manifest(test_manifest));
        std::cout << "test token accuracy: "
                  << 100.0 * token_accuracy(model, test_pieces) << "%\n";
    }
    std::cout << "checkpoint: " << res.final_checkpoint << "\n";
    return 0;
}

int cmd_infer(const std::string& ckpt_path, const std::string& midi_path,
              const std::string& out_path, bool one_shot, bool no_trace) {
    Checkpoint ck;
    Model model = load_model(ckpt_path, ck, one_shot);
    MidiScore score = parse_midi_file(midi_path);
    PianoRoll roll = build_piano_roll(score.notes, score.total_beats, midi_path);
    PiecePrediction pred = decode(model, roll);

    std::string stamp = "config_hash=" + std::to_string(fnv1a(ck.config_text));
    write_label_file(out_path, frames_to_segments(pred.targets), stamp);
    if (!no_trace) {
        std::ofstream tf(out_path + ".trace.json");
        tf << trace_to_json(pred.trace, stamp);
    }
    std::cout << "wrote " << out_path << " (" << pred.targets.size() << " tokens, "
              << (pred.trace.one_shot ? "one-shot" : "iterative") << ")\n";
    return 0;
}

std::set<std::string> lab_stems(const std::string& dir) {
    std::set<std::string> out;
    for (const auto& entry : fs::directory_iterator(dir))
        if (entry.path().extension() == ".lab") out.insert(entry.path().stem().string());
    return out;
}

int cmd_eval(const std::string& pred_dir, const std::string& ref_dir,
             bool run_baseline, const std::string& out_dir) {
    auto pred_set = lab_stems(pred_dir);
    auto ref_set = lab_stems(ref_dir);
    if (pred_set != ref_set) {
        std::string msg = "piece sets differ;";
        for (const auto& s : pred_set)
            if (!ref_set.count(s)) msg += " only-in-pred:" + s;
        for (const auto& s : ref_set)
            if (!pred_set.count(s)) msg += " only-in-ref:" + s;
        throw DataMismatchError(msg);
    }
    if (pred_set.empty()) throw DataMismatchError("no .lab files found");

    std::vector<FrameTargets> preds, refs, baseline_preds;
    std::vector<std::string> ids;
    std::vector<DecodeTrace> traces;
    for (const auto& stem : pred_set) {
        auto ref_segs = load_label_file(ref_dir + "/" + stem + ".lab");
        auto pred_segs = load_label_file(pred_dir + "/" + stem + ".lab");
        double total = ref_segs.empty() ? 0 : ref_segs.back().end_beat;
        refs.push_back(targets_from_segments(ref_segs, total));
        preds.push_back(targets_from_segments(pred_segs, total));
        ids.push_back(stem);

        std::string trace_path = pred_dir + "/" + stem + ".lab.trace.json";
        if (fs::exists(trace_path)) {
            std::ifstream tf(trace_path);
            nlohmann::json j = nlohmann::json::parse(tf);
            DecodeTrace trace;
            trace.one_shot = j["mode"] == "one_shot";
            if (!trace.one_shot)
                for (const auto& tok : j["tokens"]) {
                    TokenTrace tt;
                    int i = 0;
                    for (const auto& s : tok["commit_order"]) {
                        std::string name = s;
                        tt.commit_order[i++] =
                            name == "root" ? kSlotRoot
                                           : name == "quality" ? kSlotQuality : kSlotBass;
                    }
                    trace.tokens.push_back(tt);
                }
            traces.push_back(std::move(trace));
        }

        if (run_baseline) {
            std::string midi_path = ref_dir + "/" + stem + ".mid";
            if (!fs::exists(midi_path))
                throw DataMismatchError("baseline needs MIDI next to labels: " +
                                        midi_path);
            MidiScore score = parse_midi_file(midi_path);
            PianoRoll roll = build_piano_roll(score.notes,
                                              std::max(score.total_beats, total));
            baseline_preds.push_back(rule_based_baseline(roll));
        }
    }

    EvalReport rep = evaluate(preds, refs, ids);
    if (!traces.empty()) rep.order = order_statistics(traces);
    std::cout << format_report(rep);

    EvalReport baseline_rep;
    if (run_baseline) {
        baseline_rep = evaluate(baseline_preds, refs, ids);
        std::cout << "\nrule-based baseline:\n" << format_report(baseline_rep);
    }

    if (!out_dir.empty()) {
        fs::create_directories(out_dir);
        std::string stamp = "eval";
        std::ofstream(out_dir + "/report.txt") << format_report(rep);
        std::ofstream(out_dir + "/report.json") << report_to_json(rep, stamp);
        std::ofstream(out_dir + "/quality_confusion.csv") << confusion_to_csv(rep);
        if (run_baseline) {
            std::ofstream(out_dir + "/baseline_report.json")
                << report_to_json(baseline_rep, stamp);
        }
        std::cout << "reports written to " << out_dir << "\n";
    }
    return 0;
}

// Table-2-style ablation rows on one checkpoint: rule baseline, w/o BD+ID,
// w/o ID, and the full model.
int cmd_ablate(const std::string& ckpt_path, const std::string& manifest_path,
               const std::string& out_dir) {
    auto entries = load_manifest(manifest_path);
    auto pieces = load_pieces(entries);
    if (pieces.empty()) throw DataMismatchError("ablate: empty manifest");

    std::vector<FrameTargets> refs;
    std::vector<std::string> ids;
    for (const auto& p : pieces) {
        refs.push_back(p.targets);
        ids.push_back(p.id);
    }

    struct Row {
        std::string name;
        bool baseline;
        bool use_boundary;
        bool use_iterative;
    };
    const Row rows[] = {
        {"rule-based", true, false, false},
        {"BACHI w/o BD and ID", false, false, false},
        {"BACHI w/o ID", false, true, false},
        {"BACHI (full)", false, true, true},
    };

    nlohmann::json table = nlohmann::json::array();
    std::cout << "ablation (macro %, " << pieces.size() << " pieces)\n";
    for (const auto& row : rows) {
        std::vector<FrameTargets> preds;
        if (row.baseline) {
            for (const auto& p : pieces) preds.push_back(rule_based_baseline(p.roll));
        } else {
            Checkpoint ck;
            Model model = load_model(ckpt_path, ck, !row.use_iterative,
                                     !row.use_boundary);
            for (const auto& p : pieces) preds.push_back(decode(model, p.roll).targets);
        }
        EvalReport rep = evaluate(preds, refs, ids);
        char buf[160];
        std::snprintf(buf, sizeof buf, "  %-22s root %6.2f  quality %6.2f  bass %6.2f  full %6.2f\n",
                      row.name.c_str(), 100 * rep.macro_root, 100 * rep.macro_quality,
                      100 * rep.macro_bass, 100 * rep.macro_full);
        std::cout << buf;
        table.push_back({{"name", row.name},
                         {"root", rep.macro_root},
                         {"quality", rep.macro_quality},
                         {"bass", rep.macro_bass},
                         {"full", rep.macro_full}});
    }
    if (!out_dir.empty()) {
        fs::create_directories(out_dir);
        std::ofstream(out_dir + "/ablation.json") << table.dump(2);
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"BACHI symbolic chord recognition toolkit"};
    app.require_subcommand(1);

    // gen
    auto* gen = app.add_subcommand("gen", "generate a synthetic corpus");
    std::string gen_out = "corpus";
    int gen_pieces = 20, gen_beats = 16;
    long gen_seed = 0;
    gen->add_option("--out", gen_out, "output directory");
    gen->add_option("--pieces", gen_pieces, "number of pieces")->check(CLI::PositiveNumber);
    gen->add_option("--beats", gen_beats, "beats per piece")->check(CLI::PositiveNumber);
    gen->add_option("--seed", gen_seed, "rng seed");

    // train
    auto* train = app.add_subcommand("train", "train a model");
    std::string train_config;
    std::vector<std::string> train_set;
    train->add_option("--config", train_config, "flat key=value config file");
    train->add_option("--set", train_set,
                      "config overrides as key=value (repeatable)");
    std::string train_manifest, train_out, train_test_manifest, train_resume;
    train->add_option("--manifest", train_manifest, "training manifest");
    train->add_option("--test-manifest", train_test_manifest, "held-out manifest");
    train->add_option("--out", train_out, "output directory");
    train->add_option("--resume", train_resume, "checkpoint to resume from");
    long train_seed = -1, train_steps = -1;
    double train_lr_max = -1;
    train->add_option("--seed", train_seed, "rng seed");
    train->add_option("--total-steps", train_steps, "optimizer steps");
    train->add_option("--lr-max", train_lr_max, "peak learning rate");

    // infer
    auto* infer = app.add_subcommand("infer", "predict chords for a MIDI file");
    std::string in_ckpt, in_midi, in_out = "prediction.lab";
    bool in_one_shot = false, in_no_trace = false;
    infer->add_option("--ckpt", in_ckpt, "checkpoint file")->required();
    infer->add_option("--midi", in_midi, "input MIDI file")->required();
    infer->add_option("--out", in_out, "output label file");
    infer->add_flag("--one-shot", in_one_shot, "single-pass decoding (ablation)");
    infer->add_flag("--no-trace", in_no_trace, "skip the decode-trace sidecar");

    // eval
    auto* eval_cmd = app.add_subcommand("eval", "score predictions against references");
    std::string ev_pred, ev_ref, ev_baseline, ev_out;
    eval_cmd->add_option("--pred", ev_pred, "directory of predicted .lab files")->required();
    eval_cmd->add_option("--ref", ev_ref, "directory of reference .lab files")->required();
    eval_cmd->add_option("--baseline", ev_baseline, "also score a baseline ('rule')");
    eval_cmd->add_option("--out", ev_out, "report output directory");

    // ablate
    auto* ablate = app.add_subcommand("ablate", "Table-2-style ablation rows");
    std::string ab_ckpt, ab_manifest, ab_out;
    ablate->add_option("--ckpt", ab_ckpt, "checkpoint file")->required();
    ablate->add_option("--manifest", ab_manifest, "evaluation manifest")->required();
    ablate->add_option("--out", ab_out, "report output directory");

    int threads = 1;
    bool deterministic = false;
    app.add_option("--threads", threads, "worker threads (current build is serial)");
    app.add_flag("--deterministic", deterministic, "force single-threaded order");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (gen->parsed()) return cmd_gen(gen_out, gen_pieces, gen_beats, gen_seed);
        if (train->parsed()) {
            KVMap overrides;
            for (const auto& kvs : train_set) {
                auto eq = kvs.find('=');
                if (eq == std::string::npos)
                    throw std::runtime_error("--set expects key=value, got " + kvs);
                overrides[kvs.substr(0, eq)] = kvs.substr(eq + 1);
            }
            if (!train_manifest.empty()) overrides["manifest"] = train_manifest;
            if (!train_test_manifest.empty())
                overrides["test_manifest"] = train_test_manifest;
            if (!train_out.empty()) overrides["out_dir"] = train_out;
            if (!train_resume.empty()) overrides["resume"] = train_resume;
            if (train_seed >= 0) overrides["seed"] = std::to_string(train_seed);
            if (train_steps >= 0) overrides["total_steps"] = std::to_string(train_steps);
            if (train_lr_max > 0) overrides["lr_max"] = std::to_string(train_lr_max);
            return cmd_train(train_config, overrides);
        }
        if (infer->parsed())
            return cmd_infer(in_ckpt, in_midi, in_out, in_one_shot, in_no_trace);
        if (eval_cmd->parsed()) {
            if (!ev_baseline.empty() && ev_baseline != "rule")
                throw std::runtime_error("unknown baseline '" + ev_baseline + "'");
            return cmd_eval(ev_pred, ev_ref, ev_baseline == "rule", ev_out);
        }
        if (ablate->parsed()) return cmd_ablate(ab_ckpt, ab_manifest, ab_out);
    } catch (const CheckpointError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const DataMismatchError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
