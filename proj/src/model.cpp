#include "bachi/model.hpp"

#include <cmath>

namespace bachi {

KVMap ModelConfig::to_kv() const {
    KVMap kv;
    kv["d_model"] = std::to_string(d_model);
    kv["encoder_layers"] = std::to_string(encoder_layers);
    kv["heads"] = std::to_string(heads);
    kv["ffn_mult"] = std::to_string(ffn_mult);
    kv["context_radius"] = std::to_string(context_radius);
    kv["patch_size"] = std::to_string(patch_size);
    kv["frames_per_beat"] = std::to_string(frames_per_beat);
    kv["n_roots"] = std::to_string(n_roots);
    kv["n_qualities"] = std::to_string(n_qualities);
    kv["n_basses"] = std::to_string(n_basses);
    kv["dropout"] = std::to_string(dropout);
    kv["use_boundary"] = use_boundary ? "true" : "false";
    kv["use_iterative"] = use_iterative ? "true" : "false";
    return kv;
}

ModelConfig ModelConfig::from_kv(const KVMap& kv) {
    ModelConfig c;
    c.d_model = (int)kv_get_long(kv, "d_model", c.d_model);
    c.encoder_layers = (int)kv_get_long(kv, "encoder_layers", c.encoder_layers);
    c.heads = (int)kv_get_long(kv, "heads", c.heads);
    c.ffn_mult = (int)kv_get_long(kv, "ffn_mult", c.ffn_mult);
    c.context_radius = (int)kv_get_long(kv, "context_radius", c.context_radius);
    c.patch_size = (int)kv_get_long(kv, "patch_size", c.patch_size);
    c.frames_per_beat = (int)kv_get_long(kv, "frames_per_beat", c.frames_per_beat);
    c.n_roots = (int)kv_get_long(kv, "n_roots", c.n_roots);
    c.n_qualities = (int)kv_get_long(kv, "n_qualities", c.n_qualities);
    c.n_basses = (int)kv_get_long(kv, "n_basses", c.n_basses);
    c.dropout = kv_get_double(kv, "dropout", c.dropout);
    c.use_boundary = kv_get_bool(kv, "use_boundary", c.use_boundary);
    c.use_iterative = kv_get_bool(kv, "use_iterative", c.use_iterative);
    c.validate();
    return c;
}

void ModelConfig::validate() const {
    require(d_model > 0 && d_model % heads == 0,
            "ModelConfig: d_model must be a positive multiple of heads");
    require(context_radius >= 0, "ModelConfig: context_radius must be >= 0");
    require(encoder_layers >= 1, "ModelConfig: need at least one encoder layer");
    require(dropout >= 0.0 && dropout < 1.0, "ModelConfig: dropout in [0,1)");
}

Mat positional_encoding(long length, int d) {
    Mat pe(length, d);
    for (long t = 0; t < length; ++t)
        for (int i = 0; i < d; i += 2) {
            double angle = (double)t / std::pow(10000.0, (double)i / d);
            pe(t, i) = std::sin(angle);
            if (i + 1 < d) pe(t, i + 1) = std::cos(angle);
        }
    return pe;
}

Model::Model(ModelConfig cfg, Rng& init_rng) : cfg_(cfg) {
    cfg_.validate();
    register_params(init_rng);
}

Model::Model(ModelConfig cfg, const ParamStore& loaded) : cfg_(cfg) {
    cfg_.validate();
    Rng dummy(0);
    register_params(dummy);
    for (const auto& [name, p] : params_.items()) {
        require(loaded.has(name), "checkpoint/config mismatch: missing parameter " + name);
        const Mat& src = loaded.get(name)->value;
        require(src.rows() == p->value.rows() && src.cols() == p->value.cols(),
                "checkpoint/config mismatch: shape of " + name);
        p->value = src;
    }
    require(loaded.items().size() == params_.items().size(),
            "checkpoint/config mismatch: extra parameters in checkpoint");
}

void Model::register_params(Rng& rng) {
    const int d = cfg_.d_model;
    const int f = d * cfg_.ffn_mult;

    auto lin = [&](const std::string& name, long in, long out) {
        params_.add(name + ".W", xavier_uniform(in, out, rng));
        params_.add(name + ".b", Mat::Zero(1, out));
    };
    auto ln = [&](const std::string& name, long width) {
        params_.add(name + ".g", Mat::Ones(1, width));
        params_.add(name + ".b", Mat::Zero(1, width));
    };
    auto attn = [&](const std::string& name) {
        for (const char* w : {"Wq", "Wk", "Wv", "Wo"})
            params_.add(name + "." + w, xavier_uniform(d, d, rng));
        for (const char* b : {"bq", "bk", "bv", "bo"})
            params_.add(name + "." + b, Mat::Zero(1, d));
    };

    lin("patch", (long)cfg_.patch_size * kNumPitches, 2 * d);
    for (int i = 0; i < cfg_.encoder_layers; ++i) {
        std::string p = "enc" + std::to_string(i);
        ln(p + ".ln1", d);
        attn(p + ".attn");
        ln(p + ".ln2", d);
        lin(p + ".ffn.l1", d, f);
        lin(p + ".ffn.l2", f, d);
    }
    ln("enc.final_ln", d);

    lin("bd.l1", d, d);
    lin("bd.l2", d, 1);

    ln("film.in_ln", d + 1);
    ln("film.h_ln", d);
    for (const char* branch : {"gamma", "beta"}) {
        lin(std::string("film.") + branch + ".l1", d + 1, d);
        lin(std::string("film.") + branch + ".l2", d, d);
    }

    params_.add("dec.mask", normal_init(1, d, 0.02, rng));
    params_.add("dec.slot", normal_init(kNumSlots, d, 0.02, rng));
    params_.add("dec.emb.root", normal_init(cfg_.n_roots, d, 0.02, rng));
    params_.add("dec.emb.quality", normal_init(cfg_.n_qualities, d, 0.02, rng));
    params_.add("dec.emb.bass", normal_init(cfg_.n_basses, d, 0.02, rng));
    ln("dec.ln_sa", d);
    attn("dec.sa");
    ln("dec.ln_ca", d);
    attn("dec.ca");
    ln("dec.ln_ffn", d);
    lin("dec.ffn.l1", d, f);
    lin("dec.ffn.l2", f, d);
    ln("dec.final_ln", d);

    lin("head.root", d, cfg_.n_roots);
    lin("head.quality", d, cfg_.n_qualities);
    lin("head.bass", d, cfg_.n_basses);
}

namespace {

Var apply_linear(const ParamStore& ps, const std::string& name, const Var& x) {
    return linear(x, ps.get(name + ".W"), ps.get(name + ".b"));
}

Var apply_ln(const ParamStore& ps, const std::string& name, const Var& x) {
    return layer_norm(x, ps.get(name + ".g"), ps.get(name + ".b"));
}

Var apply_attn(const ParamStore& ps, const std::string& name, const Var& q,
               const Var& kv, int heads) {
    return multi_head_attention(q, kv, ps.get(name + ".Wq"), ps.get(name + ".bq"),
                                ps.get(name + ".Wk"), ps.get(name + ".bk"),
                                ps.get(name + ".Wv"), ps.get(name + ".bv"),
                                ps.get(name + ".Wo"), ps.get(name + ".bo"), heads);
}

Var apply_ffn(const ParamStore& ps, const std::string& name, const Var& x) {
    return apply_linear(ps, name + ".l2", relu(apply_linear(ps, name + ".l1", x)));
}

}  // namespace

Var Model::patch_embed(const PianoRoll& roll, Rng& rng, bool training) const {
    require(roll.num_frames() % cfg_.patch_size == 0,
            "patch_embed: frame count not divisible by patch size");
    Var x = constant(roll.frames);
    Var projected = conv1d(x, params_.get("patch.W"), params_.get("patch.b"),
                           cfg_.patch_size);
    Var tokens = glu(projected);
    Var pe = constant(positional_encoding(tokens->value.rows(), cfg_.d_model));
    return dropout(add(tokens, pe), cfg_.dropout, rng, training);
}

Var Model::encode(const Var& tokens, Rng& rng, bool training) const {
    Var x = tokens;
    for (int i = 0; i < cfg_.encoder_layers; ++i) {
        std::string p = "enc" + std::to_string(i);
        Var norm = apply_ln(params_, p + ".ln1", x);
        Var h = apply_attn(params_, p + ".attn", norm, norm, cfg_.heads);
        x = add(x, dropout(h, cfg_.dropout, rng, training));
        Var ff = apply_ffn(params_, p + ".ffn", apply_ln(params_, p + ".ln2", x));
        x = add(x, dropout(ff, cfg_.dropout, rng, training));
    }
    return apply_ln(params_, "enc.final_ln", x);
}

Var Model::predict_boundaries(const Var& H) const {
    return apply_linear(params_, "bd.l2", relu(apply_linear(params_, "bd.l1", H)));
}

Var Model::film_condition(const Var& H, const Var& boundary_prob) const {
    Var lnH = apply_ln(params_, "film.h_ln", H);
    if (!cfg_.use_boundary) return lnH;
    Var feat = apply_ln(params_, "film.in_ln", concat_cols({H, boundary_prob}));
    auto mlp = [&](const char* branch) {
        std::string p = std::string("film.") + branch;
        return apply_linear(params_, p + ".l2",
                            relu(apply_linear(params_, p + ".l1", feat)));
    };
    Var gamma = mlp("gamma");
    Var beta = mlp("beta");
    return add(mul(lnH, add_scalar(gamma, 1.0)), beta);
}

Var Model::assemble_context(const Var& Z, const Var& H, long t) const {
    const long L = H->value.rows();
    require(t >= 0 && t < L, "assemble_context: token index out of range");
    const int r = cfg_.context_radius;
    std::vector<int> idx;
    for (long k = t - r; k <= t + r; ++k)
        idx.push_back(k >= 0 && k < L ? (int)k : -1);
    return concat_rows({gather_rows(Z, {(int)t}), gather_rows(H, idx)});
}

Var Model::decoder_input(const TokenSlots& slots) const {
    static const char* tables[kNumSlots] = {"dec.emb.root", "dec.emb.quality",
                                            "dec.emb.bass"};
    std::vector<Var> rows;
    for (int s = 0; s < kNumSlots; ++s) {
        Var content = slots.masked[s]
                          ? params_.get("dec.mask")
                          : gather_rows(params_.get(tables[s]), {slots.committed[s]});
        rows.push_back(add(content, gather_rows(params_.get("dec.slot"), {s})));
    }
    return concat_rows(rows);
}

SlotLogits Model::decode_step(const TokenSlots& slots, const Var& context, Rng& rng,
                              bool training) const {
    require(context->value.rows() == 2 * cfg_.context_radius + 2,
            "decode_step: context row count mismatch");
    Var x = decoder_input(slots);
    Var sa_in = apply_ln(params_, "dec.ln_sa", x);
    x = add(x, dropout(apply_attn(params_, "dec.sa", sa_in, sa_in, cfg_.heads),
                       cfg_.dropout, rng, training));
    Var ca_in = apply_ln(params_, "dec.ln_ca", x);
    x = add(x, dropout(apply_attn(params_, "dec.ca", ca_in, context, cfg_.heads),
                       cfg_.dropout, rng, training));
    Var ff_in = apply_ln(params_, "dec.ln_ffn", x);
    x = add(x, dropout(apply_ffn(params_, "dec.ffn", ff_in), cfg_.dropout, rng, training));
    x = apply_ln(params_, "dec.final_ln", x);

    SlotLogits out;
    out.root = apply_linear(params_, "head.root", gather_rows(x, {kSlotRoot}));
    out.quality = apply_linear(params_, "head.quality", gather_rows(x, {kSlotQuality}));
    out.bass = apply_linear(params_, "head.bass", gather_rows(x, {kSlotBass}));
    return out;
}

ForwardOutput Model::forward_full(const PianoRoll& roll,
                                  const std::vector<TokenSlots>& slots, Rng& rng,
                                  bool training,
                                  const std::vector<int>* forced_boundaries) const {
    Var tokens = patch_embed(roll, rng, training);
    Var H = encode(tokens, rng, training);
    Var e_logits = predict_boundaries(H);
    const long L = H->value.rows();
    require((long)slots.size() == L, "forward_full: slot states vs token count");

    Var boundary_feature;
    if (forced_boundaries) {
        require((long)forced_boundaries->size() == L,
                "forward_full: forced boundary length mismatch");
        Mat fb(L, 1);
        for (long t = 0; t < L; ++t) fb(t, 0) = (Scalar)(*forced_boundaries)[(size_t)t];
        boundary_feature = constant(fb);
    } else {
        boundary_feature = sigmoid(e_logits);
    }
    Var Z = film_condition(H, boundary_feature);

    ForwardOutput out;
    out.boundary_logits = e_logits;
    out.logits.reserve((size_t)L);
    for (long t = 0; t < L; ++t) {
        Var C = assemble_context(Z, H, t);
        out.logits.push_back(decode_step(slots[(size_t)t], C, rng, training));
    }
    return out;
}

EncodeState Model::prepare(const PianoRoll& roll) const {
    Rng rng(0);  // inference path; dropout disabled
    EncodeState st;
    Var tokens = patch_embed(roll, rng, false);
    st.H = encode(tokens, rng, false);
    st.boundary_logits = predict_boundaries(st.H);
    st.Z = film_condition(st.H, sigmoid(st.boundary_logits));
    st.num_tokens = st.H->value.rows();
    return st;
}

}  // namespace bachi
