#include "bachi/train.hpp"

#include "bachi/checkpoint.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <numeric>

namespace bachi {

KVMap TrainConfig::to_kv() const {
    KVMap kv;
    kv["warmup_steps"] = std::to_string(warmup_steps);
    kv["lr_min"] = std::to_string(lr_min);
    kv["lr_max"] = std::to_string(lr_max);
    kv["max_grad_norm"] = std::to_string(max_grad_norm);
    kv["total_steps"] = std::to_string(total_steps);
    kv["batch_pieces"] = std::to_string(batch_pieces);
    kv["max_tokens"] = std::to_string(max_tokens);
    kv["seed"] = std::to_string(seed);
    kv["mask_rate"] = std::to_string(mask_rate);
    kv["w_boundary"] = std::to_string(w_boundary);
    kv["w_root"] = std::to_string(w_root);
    kv["w_quality"] = std::to_string(w_quality);
    kv["w_bass"] = std::to_string(w_bass);
    kv["weight_decay"] = std::to_string(weight_decay);
    kv["augment"] = augment ? "true" : "false";
    kv["teacher_force_boundaries"] = teacher_force_boundaries ? "true" : "false";
    kv["checkpoint_every"] = std::to_string(checkpoint_every);
    return kv;
}

TrainConfig TrainConfig::from_kv(const KVMap& kv) {
    TrainConfig c;
    c.warmup_steps = kv_get_long(kv, "warmup_steps", c.warmup_steps);
    c.lr_min = kv_get_double(kv, "lr_min", c.lr_min);
    c.lr_max = kv_get_double(kv, "lr_max", c.lr_max);
    c.max_grad_norm = kv_get_double(kv, "max_grad_norm", c.max_grad_norm);
    c.total_steps = kv_get_long(kv, "total_steps", c.total_steps);
    c.batch_pieces = (int)kv_get_long(kv, "batch_pieces", c.batch_pieces);
    c.max_tokens = kv_get_long(kv, "max_tokens", c.max_tokens);
    c.seed = kv_get_long(kv, "seed", c.seed);
    c.mask_rate = kv_get_double(kv, "mask_rate", c.mask_rate);
    c.w_boundary = kv_get_double(kv, "w_boundary", c.w_boundary);
    c.w_root = kv_get_double(kv, "w_root", c.w_root);
    c.w_quality = kv_get_double(kv, "w_quality", c.w_quality);
    c.w_bass = kv_get_double(kv, "w_bass", c.w_bass);
    c.weight_decay = kv_get_double(kv, "weight_decay", c.weight_decay);
    c.augment = kv_get_bool(kv, "augment", c.augment);
    c.teacher_force_boundaries =
        kv_get_bool(kv, "teacher_force_boundaries", c.teacher_force_boundaries);
    c.checkpoint_every = kv_get_long(kv, "checkpoint_every", c.checkpoint_every);
    require(c.mask_rate > 0.0 && c.mask_rate <= 1.0, "TrainConfig: mask_rate in (0,1]");
    require(c.w_boundary > 0 && c.w_root > 0 && c.w_quality > 0 && c.w_bass > 0,
            "TrainConfig: loss weights must be positive");
    return c;
}

std::vector<TokenSlots> sample_mask(Rng& rng, size_t tokens, double mask_rate) {
    require(tokens >= 1, "sample_mask: need at least one token");
    std::bernoulli_distribution mask_bit(mask_rate);
    std::vector<TokenSlots> out(tokens);
    for (auto& ts : out) {
        do {
            for (int s = 0; s < kNumSlots; ++s) ts.masked[s] = mask_bit(rng);
        } while (!ts.masked[0] && !ts.masked[1] && !ts.masked[2]);
    }
    return out;
}

LossBreakdown compute_loss(const ForwardOutput& out, const FrameTargets& targets,
                           const std::vector<TokenSlots>& mask,
                           const TrainConfig& cfg) {
    const size_t L = targets.size();
    require(out.logits.size() == L && mask.size() == L,
            "compute_loss: length mismatch");

    Mat boundary_targets((long)L, 1);
    for (size_t t = 0; t < L; ++t) boundary_targets((long)t, 0) = targets.boundaries[t];
    Var l_boundary = binary_cross_entropy(out.boundary_logits, boundary_targets);

    size_t any_masked = 0;
    for (const auto& ts : mask)
        any_masked += ts.masked[0] + ts.masked[1] + ts.masked[2];
    require(any_masked > 0, "compute_loss: degenerate batch with no masked slot");

    struct Element {
        int slot;
        const std::vector<int>* targets;
        double weight;
    };
    const Element elements[3] = {{kSlotRoot, &targets.roots, cfg.w_root},
                                 {kSlotQuality, &targets.qualities, cfg.w_quality},
                                 {kSlotBass, &targets.basses, cfg.w_bass}};

    LossBreakdown lb;
    lb.total = scale(l_boundary, cfg.w_boundary);
    lb.boundary = l_boundary->value(0, 0);
    double* slots_out[3] = {&lb.root, &lb.quality, &lb.bass};
    for (const auto& el : elements) {
        std::vector<Var> rows;
        std::vector<Scalar> weights;
        rows.reserve(L);
        for (size_t t = 0; t < L; ++t) {
            rows.push_back(out.logits[t][el.slot]);
            weights.push_back(mask[t].masked[(size_t)el.slot] ? 1.0 : 0.0);
        }
        double wsum = std::accumulate(weights.begin(), weights.end(), 0.0);
        if (wsum == 0.0) continue;  // element never masked in this piece
        Var ce = cross_entropy(concat_rows(rows), *el.targets, weights);
        *slots_out[el.slot] = ce->value(0, 0);
        lb.total = add(lb.total, scale(ce, el.weight));
    }
    return lb;
}

FrameTargets transpose_targets(const FrameTargets& targets, int semitones) {
    auto shift = [semitones](int c) {
        return c == kNoPitchClass ? c : ((c + semitones) % 12 + 12) % 12;
    };
    FrameTargets out = targets;
    for (auto& r : out.roots) r = shift(r);
    for (auto& b : out.basses) b = shift(b);
    return out;
}

TrainPiece augment_piece(const TrainPiece& piece, int semitones) {
    TrainPiece out;
    out.id = piece.id;
    out.roll = transpose_roll(piece.roll, semitones);
    out.targets = transpose_targets(piece.targets, semitones);
    return out;
}

namespace {

// rng streams derived from (seed, step) so a resumed run replays identically
Rng step_rng(long seed, long step, int stream) {
    std::seed_seq seq{(std::uint32_t)seed, (std::uint32_t)step, (std::uint32_t)stream};
    return Rng(seq);
}

std::vector<std::vector<size_t>> build_batches(size_t n_pieces,
                                               const std::vector<TrainPiece>& pieces,
                                               const TrainConfig& cfg, long epoch) {
    std::vector<size_t> order(n_pieces);
    std::iota(order.begin(), order.end(), 0);
    Rng rng = step_rng(cfg.seed, epoch, 101);
    std::shuffle(order.begin(), order.end(), rng);

    std::vector<std::vector<size_t>> batches;
    std::vector<size_t> cur;
    long cur_tokens = 0;
    for (size_t idx : order) {
        long toks = pieces[idx].roll.num_tokens();
        if (!cur.empty() &&
            (cur_tokens + toks > cfg.max_tokens || (int)cur.size() >= cfg.batch_pieces)) {
            batches.push_back(cur);
            cur.clear();
            cur_tokens = 0;
        }
        cur.push_back(idx);
        cur_tokens += toks;
    }
    if (!cur.empty()) batches.push_back(cur);
    return batches;
}

}  // namespace

TrainResult train_loop(const std::vector<TrainPiece>& pieces, Model& model,
                       OptimizerState& opt, const TrainConfig& cfg,
                       const std::string& out_dir, long start_step,
                       const std::string& config_stamp) {
    require(!pieces.empty(), "train_loop: empty training set");
    opt.weight_decay = cfg.weight_decay;

    LRSchedule sched{cfg.warmup_steps, cfg.lr_min, cfg.lr_max, cfg.total_steps};

    std::ofstream metrics;
    if (!out_dir.empty()) {
        std::filesystem::create_directories(out_dir);
        metrics.open(out_dir + "/metrics.ndjson", start_step > 0 ? std::ios::app
                                                                 : std::ios::out);
    }

    TrainResult result;
    long step = 0;
    for (long epoch = 0; step < cfg.total_steps; ++epoch) {
        auto batches = build_batches(pieces.size(), pieces, cfg, epoch);
        for (const auto& batch : batches) {
            if (step >= cfg.total_steps) break;
            if (step < start_step) {
                ++step;
                continue;
            }

            Rng aug_rng = step_rng(cfg.seed, step, 1);
            Rng mask_rng = step_rng(cfg.seed, step, 2);
            Rng drop_rng = step_rng(cfg.seed, step, 3);

            model.params().zero_grad();
            Var total;
            StepRecord rec;
            rec.step = step;
            for (size_t idx : batch) {
                TrainPiece piece = pieces[idx];
                if (cfg.augment) {
                    int k = (int)(aug_rng() % 12);
                    if (k != 0) piece = augment_piece(piece, k);
                }
                auto mask = sample_mask(mask_rng, piece.targets.size(), cfg.mask_rate);
                ForwardOutput out = model.forward_full(
                    piece.roll, mask, drop_rng, true,
                    cfg.teacher_force_boundaries ? &piece.targets.boundaries : nullptr);
                LossBreakdown lb = compute_loss(out, piece.targets, mask, cfg);
                rec.loss_boundary += lb.boundary;
                rec.loss_root += lb.root;
                rec.loss_quality += lb.quality;
                rec.loss_bass += lb.bass;
                total = total ? add(total, lb.total) : lb.total;
            }
            total = scale(total, 1.0 / (double)batch.size());
            rec.loss = total->value(0, 0);
            rec.loss_boundary /= (double)batch.size();
            rec.loss_root /= (double)batch.size();
            rec.loss_quality /= (double)batch.size();
            rec.loss_bass /= (double)batch.size();
            if (!std::isfinite(rec.loss)) {
                std::string ids;
                for (size_t idx : batch) ids += pieces[idx].id + " ";
                throw std::runtime_error("train_loop: non-finite loss at step " +
                                         std::to_string(step) + " on batch: " + ids);
            }

            backward(total);
            clip_grad_norm(model.params(), cfg.max_grad_norm);
            rec.lr = lr_at_step(sched, step);
            adamw_step(model.params(), opt, rec.lr);

            if (metrics.is_open()) {
                metrics << "{\"step\":" << rec.step << ",\"lr\":" << rec.lr
                        << ",\"loss\":" << rec.loss
                        << ",\"loss_boundary\":" << rec.loss_boundary
                        << ",\"loss_root\":" << rec.loss_root
                        << ",\"loss_quality\":" << rec.loss_quality
                        << ",\"loss_bass\":" << rec.loss_bass << "}\n";
            }
            result.log.push_back(rec);
            ++step;

            if (!out_dir.empty() &&
                (step % cfg.checkpoint_every == 0 || step == cfg.total_steps)) {
                std::string path = out_dir + "/ckpt_" + std::to_string(step) + ".bchk";
                save_checkpoint(path, config_stamp, step, model.params(), &opt);
                result.final_checkpoint = path;
            }
        }
    }
    return result;
}

// ---------------------------------------------------------------------------
// synthetic corpus

namespace {

// quality sampling weights: common qualities dominate, set-ambiguous ones
// (sus2/sus4, maj6/min7, dim7, aug, hdim7/min6) stay rare
const std::vector<std::pair<int, double>>& quality_weights() {
    static const std::vector<std::pair<int, double>> w = {
        {quality_index("maj"), 0.22},    {quality_index("min"), 0.20},
        {quality_index("7"), 0.15},      {quality_index("maj7"), 0.12},
        {quality_index("min7"), 0.12},   {quality_index("dim"), 0.05},
        {quality_index("sus4"), 0.04},   {quality_index("sus2"), 0.02},
        {quality_index("maj6"), 0.02},   {quality_index("aug"), 0.015},
        {quality_index("dim7"), 0.015},  {quality_index("hdim7"), 0.01},
        {quality_index("min6"), 0.01},   {quality_index("minmaj7"), 0.01},
    };
    return w;
}

int sample_quality(Rng& rng) {
    const auto& w = quality_weights();
    double total = 0;
    for (const auto& [q, p] : w) total += p;
    std::uniform_real_distribution<double> dist(0.0, total);
    double x = dist(rng);
    for (const auto& [q, p] : w) {
        if (x < p) return q;
        x -= p;
    }
    return w.back().first;
}

}  // namespace

CorpusPaths make_synthetic_corpus(const std::string& out_dir, int n_pieces,
                                  int beats_per_piece, std::uint64_t seed,
                                  const std::string& config_stamp) {
    require(n_pieces >= 1, "make_synthetic_corpus: need at least one piece");
    require(beats_per_piece >= 4, "make_synthetic_corpus: need at least 4 beats");
    std::filesystem::create_directories(out_dir);
    Rng rng(seed);

    std::vector<std::pair<std::string, std::string>> entries;
    for (int p = 0; p < n_pieces; ++p) {
        std::vector<Segment> segments;
        std::vector<NoteEvent> notes;
        int beat = 0;
        while (beat < beats_per_piece) {
            int remaining = beats_per_piece - beat;
            int dur;
            {
                std::uniform_real_distribution<double> d01(0.0, 1.0);
                double x = d01(rng);
                dur = x < 0.35 ? 1 : x < 0.75 ? 2 : 4;
                while (dur > remaining) dur /= 2;
            }

            std::uniform_real_distribution<double> d01(0.0, 1.0);
            bool rest = d01(rng) < 0.05;
            if (rest) {
                segments.push_back({(double)beat, (double)(beat + dur),
                                    ChordLabel::no_chord()});
                beat += dur;
                continue;
            }

            ChordLabel label;
            label.root = (int)(rng() % 12);
            label.quality = sample_quality(rng);
            const auto& tpl = quality_templates()[(size_t)label.quality];
            label.bass = (label.root + tpl[rng() % tpl.size()]) % 12;
            segments.push_back({(double)beat, (double)(beat + dur), label});

            // render: bass tone in a low octave, remaining chord tones above
            int bass_pitch = 48 + ((label.bass + 6) % 12) - 6;  // 42..53
            std::vector<int> pitches = {bass_pitch};
            for (int interval : tpl) {
                int pc = (label.root + interval) % 12;
                pitches.push_back(60 + pc);
            }
            bool rearticulate = d01(rng) < 0.5;
            if (rearticulate) {
                for (int b = 0; b < dur; ++b)
                    for (int pitch : pitches)
                        notes.push_back({pitch, (double)(beat + b), 1.0, 80});
            } else {
                for (int pitch : pitches)
                    notes.push_back({pitch, (double)beat, (double)dur, 80});
            }
            beat += dur;
        }

        char name[32];
        std::snprintf(name, sizeof name, "piece_%04d", p);
        std::string midi_path = out_dir + "/" + name + ".mid";
        std::string label_path = out_dir + "/" + name + ".lab";
        write_midi_file(midi_path, notes);
        write_label_file(label_path, segments, config_stamp);
        entries.emplace_back(midi_path, label_path);
    }

    // seeded piece-level 9:1 split
    std::vector<size_t> order(entries.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    size_t n_test = std::max<size_t>(1, entries.size() / 10);
    if (entries.size() == 1) n_test = 0;

    CorpusPaths paths;
    paths.manifest = out_dir + "/manifest.tsv";
    paths.train_split = out_dir + "/train.tsv";
    paths.test_split = out_dir + "/test.tsv";
    auto write_entries = [&](const std::string& path, size_t begin, size_t end) {
        std::ofstream out(path);
        require((bool)out, "cannot write manifest: " + path);
        if (!config_stamp.empty()) out << "# " << config_stamp << "\n";
        for (size_t i = begin; i < end; ++i) {
            const auto& [m, l] = entries[order[i]];
            out << m << "\t" << l << "\n";
        }
    };
    write_entries(paths.test_split, 0, n_test);
    write_entries(paths.train_split, n_test, entries.size());
    {
        std::ofstream out(paths.manifest);
        require((bool)out, "cannot write manifest: " + paths.manifest);
        if (!config_stamp.empty()) out << "# " << config_stamp << "\n";
        for (const auto& [m, l] : entries) out << m << "\t" << l << "\n";
    }
    return paths;
}

std::vector<TrainPiece> load_pieces(
    const std::vector<std::pair<std::string, std::string>>& manifest) {
    std::vector<TrainPiece> out;
    for (const auto& [midi_path, label_path] : manifest) {
        LabeledPiece piece = load_piece(midi_path, label_path);
        TrainPiece tp;
        tp.id = midi_path;
        tp.targets = labels_to_frame_targets(piece);
        tp.roll = std::move(piece.roll);
        out.push_back(std::move(tp));
    }
    return out;
}

}  // namespace bachi
