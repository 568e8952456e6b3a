#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "bachi/checkpoint.hpp"
#include "bachi/train.hpp"
#include "grad_check.hpp"

using namespace bachi;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
    fs::path dir = fs::temp_directory_path() / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

ModelConfig tiny_config() {
    ModelConfig cfg;
    cfg.d_model = 8;
    cfg.encoder_layers = 1;
    cfg.heads = 2;
    cfg.ffn_mult = 2;
    cfg.dropout = 0.0;
    return cfg;
}

// logits rows as leaf parameters so gradients can be inspected
struct FakeOutput {
    std::vector<Var> leaves;
    ForwardOutput out;
};

FakeOutput fake_output(const FrameTargets& targets, double margin) {
    FakeOutput f;
    const long L = (long)targets.size();
    Mat bl(L, 1);
    for (long t = 0; t < L; ++t)
        bl(t, 0) = margin * (targets.boundaries[(size_t)t] ? 1.0 : -1.0);
    f.out.boundary_logits = constant(bl);
    for (long t = 0; t < L; ++t) {
        auto row = [&](int classes, int target) {
            Mat m = Mat::Zero(1, classes);
            if (margin != 0.0) m(0, target) = margin;
            Var v = parameter(m);
            f.leaves.push_back(v);
            return v;
        };
        SlotLogits sl;
        sl.root = row(kNumRoots, targets.roots[(size_t)t]);
        sl.quality = row(kNumQualities, targets.qualities[(size_t)t]);
        sl.bass = row(kNumBasses, targets.basses[(size_t)t]);
        f.out.logits.push_back(sl);
    }
    return f;
}

FrameTargets two_token_targets() {
    FrameTargets t;
    t.roots = {0, 7};
    t.qualities = {0, 2};
    t.basses = {4, 7};
    t.boundaries = {1, 1};
    return t;
}

std::vector<TokenSlots> all_masked(size_t n) {
    return std::vector<TokenSlots>(n, TokenSlots::all_masked());
}

}  // namespace

TEST_CASE("sample_mask") {
    Rng rng(1);
    auto full = sample_mask(rng, 50, 1.0);
    for (const auto& ts : full)
        for (int s = 0; s < kNumSlots; ++s) CHECK(ts.masked[s]);

    // every token keeps at least one masked slot even at low rates
    auto sparse = sample_mask(rng, 200, 0.05);
    for (const auto& ts : sparse)
        CHECK((ts.masked[0] || ts.masked[1] || ts.masked[2]));

    // at rate 0.5 the empty outcome is redrawn, lifting the per-slot
    // marginal from 1/2 to 4/7
    const size_t n = 100000;
    auto many = sample_mask(rng, n, 0.5);
    double per_slot[3] = {0, 0, 0};
    for (const auto& ts : many)
        for (int s = 0; s < kNumSlots; ++s) per_slot[s] += ts.masked[s];
    for (int s = 0; s < kNumSlots; ++s) {
        double frac = per_slot[s] / (double)n;
        CHECK(frac > 0.55);
        CHECK(frac < 0.60);
    }

    // identical seeds replay identically
    Rng a(42), b(42);
    auto ma = sample_mask(a, 100, 0.5);
    auto mb = sample_mask(b, 100, 0.5);
    for (size_t i = 0; i < 100; ++i) CHECK(ma[i].masked == mb[i].masked);

    CHECK_THROWS(sample_mask(rng, 0, 0.5));
}

TEST_CASE("compute_loss") {
    FrameTargets targets = two_token_targets();
    TrainConfig cfg;

    SUBCASE("perfect logits give near-zero loss") {
        FakeOutput f = fake_output(targets, 25.0);
        LossBreakdown lb = compute_loss(f.out, targets, all_masked(2), cfg);
        CHECK(lb.total->value(0, 0) < 1e-6);
    }

    SUBCASE("uniform logits give log-cardinality losses") {
        FakeOutput f = fake_output(targets, 0.0);
        LossBreakdown lb = compute_loss(f.out, targets, all_masked(2), cfg);
        CHECK(lb.boundary == doctest::Approx(std::log(2.0)));
        CHECK(lb.root == doctest::Approx(std::log(13.0)));
        CHECK(lb.quality == doctest::Approx(std::log(15.0)));
        CHECK(lb.bass == doctest::Approx(std::log(13.0)));
        double expect = std::log(2.0) + 2 * std::log(13.0) + std::log(15.0);
        CHECK(lb.total->value(0, 0) == doctest::Approx(expect));
    }

    SUBCASE("only masked slots contribute") {
        std::vector<TokenSlots> mask(2);
        for (auto& ts : mask) ts.masked = {true, false, false};
        FakeOutput f = fake_output(targets, 0.0);
        LossBreakdown lb = compute_loss(f.out, targets, mask, cfg);
        CHECK(lb.root == doctest::Approx(std::log(13.0)));
        CHECK(lb.quality == 0.0);
        CHECK(lb.bass == 0.0);

        // gradient flows to masked logits only
        backward(lb.total);
        for (size_t t = 0; t < 2; ++t) {
            CHECK(f.leaves[3 * t + 0]->grad.cwiseAbs().maxCoeff() > 0.0);  // root
            for (int s = 1; s < 3; ++s) {
                const Mat& g = f.leaves[3 * t + (size_t)s]->grad;
                CHECK((g.size() == 0 || g.cwiseAbs().maxCoeff() == 0.0));
            }
        }
    }

    SUBCASE("element weights scale the total") {
        TrainConfig heavy = cfg;
        heavy.w_quality = 3.0;
        FakeOutput f = fake_output(targets, 0.0);
        double base = compute_loss(f.out, targets, all_masked(2), cfg).total->value(0, 0);
        double scaled =
            compute_loss(f.out, targets, all_masked(2), heavy).total->value(0, 0);
        CHECK(scaled - base == doctest::Approx(2.0 * std::log(15.0)));
    }

    SUBCASE("no masked slot anywhere is an error") {
        std::vector<TokenSlots> none(2);
        for (auto& ts : none) ts.masked = {false, false, false};
        FakeOutput f = fake_output(targets, 0.0);
        CHECK_THROWS_WITH_AS(compute_loss(f.out, targets, none, cfg),
                             doctest::Contains("no masked slot"), std::runtime_error);
    }
}

TEST_CASE("augmentation") {
    TrainPiece piece;
    piece.roll = build_piano_roll({{60, 0.0, 1.0, 80}, {43, 0.0, 2.0, 80}}, 2.0);
    piece.targets.roots = {0, 0, 7, 7};
    piece.targets.qualities = {0, 0, kQualityN, kQualityN};
    piece.targets.basses = {4, 4, 12, 12};
    piece.targets.boundaries = {1, 0, 1, 0};

    SUBCASE("zero shift is the identity") {
        TrainPiece same = augment_piece(piece, 0);
        CHECK((same.roll.frames - piece.roll.frames).cwiseAbs().maxCoeff() == 0.0);
        CHECK(same.targets.roots == piece.targets.roots);
        CHECK(same.targets.basses == piece.targets.basses);
    }

    SUBCASE("roll columns and label classes shift together") {
        TrainPiece up = augment_piece(piece, 3);
        // pitch 60 -> column 39 -> 42; pitch 43 -> column 22 -> 25
        CHECK(up.roll.frames.col(42).sum() == doctest::Approx(12.0));
        CHECK(up.roll.frames.col(25).sum() == doctest::Approx(24.0));
        CHECK(up.roll.frames.sum() == piece.roll.frames.sum());
        CHECK(up.targets.roots == std::vector<int>{3, 3, 10, 10});
        CHECK(up.targets.basses == std::vector<int>{7, 7, 12, 12});  // N fixed
        CHECK(up.targets.qualities == piece.targets.qualities);
        CHECK(up.targets.boundaries == piece.targets.boundaries);
    }

    SUBCASE("target shifts compose mod 12") {
        FrameTargets t = piece.targets;
        FrameTargets round = transpose_targets(transpose_targets(t, 5), 7);
        CHECK(round.roots == t.roots);
        CHECK(round.basses == t.basses);
    }
}

TEST_CASE("synthetic corpus") {
    fs::path dir = fresh_dir("bachi_corpus_a");
    CorpusPaths paths = make_synthetic_corpus(dir.string(), 12, 16, 7, "seed=7");

    auto manifest = load_manifest(paths.manifest);
    auto train = load_manifest(paths.train_split);
    auto test = load_manifest(paths.test_split);
    CHECK(manifest.size() == 12);
    CHECK(test.size() == 1);
    CHECK(train.size() == 11);

    auto pieces = load_pieces(manifest);
    REQUIRE(pieces.size() == 12);
    for (const auto& p : pieces) {
        CHECK(p.roll.num_tokens() >= 16 * 2);  // 16 beats, 2 tokens per beat
        CHECK((long)p.targets.size() == p.roll.num_tokens());
        CHECK(p.targets.boundaries[0] == 1);
    }

    // the rendered bass really is the lowest sounding pitch of each chord
    for (const auto& [midi_path, label_path] : manifest) {
        MidiScore score = parse_midi_file(midi_path);
        auto segments = load_label_file(label_path);
        for (const auto& seg : segments) {
            if (seg.label.is_no_chord()) continue;
            int lowest = 128;
            for (const auto& n : score.notes)
                if (n.onset_beats < seg.end_beat - 1e-9 &&
                    n.onset_beats + n.duration_beats > seg.start_beat + 1e-9)
                    lowest = std::min(lowest, n.pitch);
            REQUIRE(lowest < 128);
            CHECK(lowest >= 42);
            CHECK(lowest <= 53);
            CHECK(lowest % 12 == seg.label.bass);
        }
    }

    // same seed reproduces every file byte for byte
    fs::path dir_b = fresh_dir("bachi_corpus_b");
    make_synthetic_corpus(dir_b.string(), 12, 16, 7, "seed=7");
    for (const auto& entry : fs::directory_iterator(dir)) {
        fs::path mirror = dir_b / entry.path().filename();
        REQUIRE(fs::exists(mirror));
        std::ifstream fa(entry.path(), std::ios::binary);
        std::ifstream fb(mirror, std::ios::binary);
        std::string ca((std::istreambuf_iterator<char>(fa)), {});
        std::string cb((std::istreambuf_iterator<char>(fb)), {});
        if (entry.path().extension() == ".lab") {
            // manifests embed the directory; labels must match exactly
            CHECK(ca == cb);
        } else if (entry.path().extension() == ".mid") {
            CHECK(ca == cb);
        }
    }
}

TEST_CASE("training smoke: loss decreases") {
    fs::path dir = fresh_dir("bachi_train_smoke");
    CorpusPaths paths = make_synthetic_corpus(dir.string(), 6, 8, 11);
    auto pieces = load_pieces(load_manifest(paths.manifest));

    Rng init(5);
    Model model(tiny_config(), init);
    OptimizerState opt;
    TrainConfig cfg;
    cfg.total_steps = 40;
    cfg.warmup_steps = 5;
    cfg.lr_max = 3e-3;
    cfg.lr_min = 1e-4;
    cfg.batch_pieces = 2;
    cfg.max_tokens = 64;
    cfg.seed = 3;

    TrainResult res = train_loop(pieces, model, opt, cfg, "");
    REQUIRE(res.log.size() == 40);
    double early = 0, late = 0;
    for (int i = 0; i < 5; ++i) {
        early += res.log[(size_t)i].loss;
        late += res.log[res.log.size() - 1 - (size_t)i].loss;
    }
    CHECK(late < early);
    for (const auto& rec : res.log) CHECK(std::isfinite(rec.loss));
    // warmup ramps linearly from zero
    CHECK(res.log[0].lr == 0.0);
    CHECK(res.log[1].lr == doctest::Approx(cfg.lr_max / 5));
}

TEST_CASE("checkpoint resume is bitwise reproducible") {
    fs::path dir = fresh_dir("bachi_resume");
    CorpusPaths paths = make_synthetic_corpus(dir.string(), 4, 8, 13);
    auto pieces = load_pieces(load_manifest(paths.manifest));

    ModelConfig mc = tiny_config();
    TrainConfig cfg;
    cfg.total_steps = 16;
    cfg.warmup_steps = 4;
    cfg.lr_max = 1e-3;
    cfg.batch_pieces = 2;
    cfg.max_tokens = 64;
    cfg.seed = 9;
    cfg.checkpoint_every = 8;

    // straight run to 16 steps
    Rng init_a(77);
    Model a(mc, init_a);
    OptimizerState opt_a;
    train_loop(pieces, a, opt_a, cfg, "");

    // identical init with checkpointing, then resume from the midpoint
    // checkpoint under the same schedule
    Rng init_b(77);
    Model b0(mc, init_b);
    OptimizerState opt_b0;
    std::string out = (dir / "run").string();
    train_loop(pieces, b0, opt_b0, cfg, out);

    Checkpoint ckpt = load_checkpoint(out + "/ckpt_8.bchk");
    CHECK(ckpt.step == 8);
    REQUIRE(ckpt.optimizer.has_value());
    Model b(mc, ckpt.params);
    OptimizerState opt_b = *ckpt.optimizer;
    train_loop(pieces, b, opt_b, cfg, "", ckpt.step);

    for (const auto& [name, pa] : a.params().items()) {
        const Mat& pb = b.params().get(name)->value;
        INFO("parameter ", name);
        CHECK((pa->value - pb).cwiseAbs().maxCoeff() == 0.0);
    }
    CHECK(opt_b.step == opt_a.step);
}

TEST_CASE("train config round trip and validation") {
    TrainConfig cfg;
    cfg.mask_rate = 0.4;
    cfg.w_quality = 2.5;
    TrainConfig back = TrainConfig::from_kv(cfg.to_kv());
    CHECK(back.mask_rate == doctest::Approx(0.4));
    CHECK(back.w_quality == doctest::Approx(2.5));

    KVMap bad = cfg.to_kv();
    bad["mask_rate"] = "0";
    CHECK_THROWS(TrainConfig::from_kv(bad));
}
