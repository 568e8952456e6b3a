// Parameter registry, AdamW with decoupled weight decay, warmup+cosine
// learning-rate schedule, and global gradient-norm clipping.
#pragma once

#include <map>
#include <string>
#include <vector>

#include "bachi/autodiff.hpp"

namespace bachi {

// Named parameters in deterministic (sorted) order. Grad buffers live on the
// nodes themselves and accumulate until zero_grad().
class ParamStore {
  public:
    Var add(const std::string& name, Mat init) {
        require(!params_.count(name), "ParamStore: duplicate name " + name);
        Var v = parameter(std::move(init));
        params_[name] = v;
        return v;
    }

    Var get(const std::string& name) const {
        auto it = params_.find(name);
        require(it != params_.end(), "ParamStore: unknown parameter " + name);
        return it->second;
    }

    bool has(const std::string& name) const { return params_.count(name) > 0; }

    void zero_grad() {
        for (auto& [name, p] : params_) p->grad.setZero(0, 0);
    }

    const std::map<std::string, Var>& items() const { return params_; }

    size_t count_scalars() const {
        size_t n = 0;
        for (const auto& [name, p] : params_) n += (size_t)p->value.size();
        return n;
    }

  private:
    std::map<std::string, Var> params_;
};

struct LRSchedule {
    long warmup_steps = 4000;
    Scalar lr_min = 1e-5;
    Scalar lr_max = 1e-4;
    long total_steps = 100000;
};

// linear warmup to lr_max, then cosine decay to lr_min, clamped past total
inline Scalar lr_at_step(const LRSchedule& s, long step) {
    require(step >= 0, "lr_at_step: negative step");
    if (step < s.warmup_steps)
        return s.lr_max * (Scalar)step / (Scalar)s.warmup_steps;
    if (step >= s.total_steps) return s.lr_min;
    Scalar progress = (Scalar)(step - s.warmup_steps) /
                      (Scalar)(s.total_steps - s.warmup_steps);
    return s.lr_min + (s.lr_max - s.lr_min) * 0.5 * (1.0 + std::cos(M_PI * progress));
}

struct OptimizerState {
    Scalar beta1 = 0.9;
    Scalar beta2 = 0.98;
    Scalar eps = 1e-9;
    Scalar weight_decay = 0.01;
    long step = 0;
    std::map<std::string, Mat> m;  // first moments
    std::map<std::string, Mat> v;  // second moments
};

// scales all gradients so the global L2 norm is at most max_norm; returns the
// applied scale factor
inline Scalar clip_grad_norm(ParamStore& params, Scalar max_norm = 2.0) {
    Scalar sq = 0;
    for (const auto& [name, p] : params.items())
        if (p->grad.size() != 0) sq += p->grad.squaredNorm();
    Scalar norm = std::sqrt(sq);
    if (norm <= max_norm || norm == 0.0) return 1.0;
    Scalar s = max_norm / norm;
    for (auto& [name, p] : params.items())
        if (p->grad.size() != 0) p->grad *= s;
    return s;
}

inline void adamw_step(ParamStore& params, OptimizerState& st, Scalar lr) {
    st.step += 1;
    const Scalar bc1 = 1.0 - std::pow(st.beta1, (Scalar)st.step);
    const Scalar bc2 = 1.0 - std::pow(st.beta2, (Scalar)st.step);
    for (auto& [name, p] : params.items()) {
        Mat g = p->grad.size() != 0 ? p->grad
                                    : Mat::Zero(p->value.rows(), p->value.cols());
        require(all_finite(g), "adamw_step: non-finite gradient in " + name);
        Mat& m = st.m.try_emplace(name, Mat::Zero(g.rows(), g.cols())).first->second;
        Mat& v = st.v.try_emplace(name, Mat::Zero(g.rows(), g.cols())).first->second;
        m = st.beta1 * m + (1.0 - st.beta1) * g;
        v = st.beta2 * v + (1.0 - st.beta2) * g.cwiseProduct(g);
        Mat mhat = m / bc1;
        Mat vhat = v / bc2;
        p->value *= (1.0 - lr * st.weight_decay);
        p->value -= lr * (mhat.array() / (vhat.array().sqrt() + st.eps)).matrix();
    }
}

// ---------------------------------------------------------------------------
// initializers

inline Mat xavier_uniform(long rows, long cols, Rng& rng) {
    Scalar limit = std::sqrt(6.0 / (Scalar)(rows + cols));
    std::uniform_real_distribution<Scalar> dist(-limit, limit);
    Mat m(rows, cols);
    for (long i = 0; i < rows; ++i)
        for (long j = 0; j < cols; ++j) m(i, j) = dist(rng);
    return m;
}

inline Mat normal_init(long rows, long cols, Scalar stddev, Rng& rng) {
    std::normal_distribution<Scalar> dist(0.0, stddev);
    Mat m(rows, cols);
    for (long i = 0; i < rows; ++i)
        for (long j = 0; j < cols; ++j) m(i, j) = dist(rng);
    return m;
}

}  // namespace bachi
