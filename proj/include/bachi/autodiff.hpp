// Reverse-mode automatic differentiation over dense Eigen matrices.
//
// Graphs are built dynamically: every operation returns a Var (shared node)
// holding its value and a closure that routes the upstream gradient to its
// parents. backward() walks the graph in reverse topological order.
#pragma once

#include <array>
#include <cmath>
#include <functional>
#include <memory>
#include <unordered_set>
#include <vector>

#include "bachi/common.hpp"

namespace bachi {

struct Node;
using Var = std::shared_ptr<Node>;

struct Node {
    Mat value;
    Mat grad;  // same shape as value once touched
    std::vector<Var> parents;
    std::function<void(Node&)> backprop;  // reads this->grad, accumulates into parents
    bool requires_grad = false;

    Mat& g() {
        if (grad.size() == 0) grad = Mat::Zero(value.rows(), value.cols());
        return grad;
    }
};

inline Var make_node(Mat v, std::vector<Var> parents = {},
                     std::function<void(Node&)> bp = nullptr) {
    auto n = std::make_shared<Node>();
    n->value = std::move(v);
    n->parents = std::move(parents);
    n->backprop = std::move(bp);
    for (const auto& p : n->parents)
        if (p->requires_grad) n->requires_grad = true;
    if (!n->backprop) n->requires_grad = false;
    return n;
}

inline Var constant(Mat v) { return make_node(std::move(v)); }

inline Var parameter(Mat v) {
    auto n = std::make_shared<Node>();
    n->value = std::move(v);
    n->requires_grad = true;
    return n;
}

inline std::string shape_str(const Mat& m) {
    return "[" + std::to_string(m.rows()) + "x" + std::to_string(m.cols()) + "]";
}

// ---------------------------------------------------------------------------
// backward

inline void topo_sort(const Var& root, std::vector<Node*>& order) {
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, size_t>> stack;
    stack.push_back({root.get(), 0});
    seen.insert(root.get());
    while (!stack.empty()) {
        auto& [n, i] = stack.back();
        if (i < n->parents.size()) {
            Node* p = n->parents[i++].get();
            if (p->requires_grad && !seen.count(p)) {
                seen.insert(p);
                stack.push_back({p, 0});
            }
        } else {
            order.push_back(n);
            stack.pop_back();
        }
    }
}

// Seeds d(loss)/d(loss)=1 and propagates to every reachable parameter.
// Gradients accumulate additively; callers zero parameter grads between steps.
inline void backward(const Var& loss) {
    require(loss->value.rows() == 1 && loss->value.cols() == 1,
            "backward: loss must be scalar, got " + shape_str(loss->value));
    std::vector<Node*> order;
    topo_sort(loss, order);
    loss->g()(0, 0) += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backprop && n->grad.size() != 0) n->backprop(*n);
    }
}

// ---------------------------------------------------------------------------
// elementwise / linear ops

inline Var add(const Var& a, const Var& b) {
    require(a->value.rows() == b->value.rows() && a->value.cols() == b->value.cols(),
            "add: shape mismatch " + shape_str(a->value) + " vs " + shape_str(b->value));
    return make_node(a->value + b->value, {a, b}, [](Node& n) {
        if (n.parents[0]->requires_grad) n.parents[0]->g() += n.grad;
        if (n.parents[1]->requires_grad) n.parents[1]->g() += n.grad;
    });
}

// broadcast a 1xC row (bias) across every row of x
inline Var add_rowvec(const Var& x, const Var& b) {
    require(b->value.rows() == 1 && b->value.cols() == x->value.cols(),
            "add_rowvec: bias " + shape_str(b->value) + " vs x " + shape_str(x->value));
    return make_node(x->value.rowwise() + b->value.row(0), {x, b}, [](Node& n) {
        if (n.parents[0]->requires_grad) n.parents[0]->g() += n.grad;
        if (n.parents[1]->requires_grad) n.parents[1]->g() += n.grad.colwise().sum();
    });
}

inline Var mul(const Var& a, const Var& b) {
    require(a->value.rows() == b->value.rows() && a->value.cols() == b->value.cols(),
            "mul: shape mismatch " + shape_str(a->value) + " vs " + shape_str(b->value));
    return make_node(a->value.cwiseProduct(b->value), {a, b}, [](Node& n) {
        if (n.parents[0]->requires_grad)
            n.parents[0]->g() += n.grad.cwiseProduct(n.parents[1]->value);
        if (n.parents[1]->requires_grad)
            n.parents[1]->g() += n.grad.cwiseProduct(n.parents[0]->value);
    });
}

inline Var scale(const Var& a, Scalar c) {
    return make_node(a->value * c, {a}, [c](Node& n) {
        if (n.parents[0]->requires_grad) n.parents[0]->g() += n.grad * c;
    });
}

inline Var add_scalar(const Var& a, Scalar c) {
    return make_node(a->value.array() + c, {a}, [](Node& n) {
        if (n.parents[0]->requires_grad) n.parents[0]->g() += n.grad;
    });
}

inline Var matmul(const Var& a, const Var& b) {
    require(a->value.cols() == b->value.rows(),
            "matmul: inner dims " + shape_str(a->value) + " * " + shape_str(b->value));
    return make_node(a->value * b->value, {a, b}, [](Node& n) {
        if (n.parents[0]->requires_grad)
            n.parents[0]->g() += n.grad * n.parents[1]->value.transpose();
        if (n.parents[1]->requires_grad)
            n.parents[1]->g() += n.parents[0]->value.transpose() * n.grad;
    });
}

// affine map along the last axis: x[.. ,in] * W[in,out] + b[1,out]
inline Var linear(const Var& x, const Var& W, const Var& b) {
    return add_rowvec(matmul(x, W), b);
}

inline Var sigmoid(const Var& x) {
    Mat s = (1.0 / (1.0 + (-x->value.array()).exp())).matrix();
    return make_node(s, {x}, [s](Node& n) {
        if (n.parents[0]->requires_grad)
            n.parents[0]->g() +=
                n.grad.cwiseProduct((s.array() * (1.0 - s.array())).matrix());
    });
}

inline Var relu(const Var& x) {
    return make_node(x->value.cwiseMax(0.0), {x}, [](Node& n) {
        if (n.parents[0]->requires_grad)
            n.parents[0]->g() += n.grad.cwiseProduct(
                (n.parents[0]->value.array() > 0.0).cast<Scalar>().matrix());
    });
}

// gated linear unit along the last axis: out = x[:, :k] * sigmoid(x[:, k:])
inline Var glu(const Var& x) {
    const auto cols = x->value.cols();
    require(cols % 2 == 0, "glu: last dimension must be even, got " + shape_str(x->value));
    const auto k = cols / 2;
    Mat a = x->value.leftCols(k);
    Mat g = (1.0 / (1.0 + (-x->value.rightCols(k).array()).exp())).matrix();
    return make_node(a.cwiseProduct(g), {x}, [a, g, k](Node& n) {
        if (!n.parents[0]->requires_grad) return;
        Mat& px = n.parents[0]->g();
        px.leftCols(k) += n.grad.cwiseProduct(g);
        px.rightCols(k) += n.grad.cwiseProduct(a).cwiseProduct(
            (g.array() * (1.0 - g.array())).matrix());
    });
}

// ---------------------------------------------------------------------------
// normalization

// rowwise layer norm with learnable gain/bias (both 1xC)
inline Var layer_norm(const Var& x, const Var& gain, const Var& bias,
                      Scalar eps = 1e-5) {
    const auto C = x->value.cols();
    require(gain->value.cols() == C && bias->value.cols() == C,
            "layer_norm: gain/bias width mismatch vs x " + shape_str(x->value));
    Mat mu = x->value.rowwise().mean();
    Mat centered = x->value.colwise() - mu.col(0);
    Mat var = centered.array().square().matrix().rowwise().mean();
    Mat inv_sd = (var.array() + eps).rsqrt().matrix();
    Mat xhat = (centered.array().colwise() * inv_sd.col(0).array()).matrix();
    Mat out = ((xhat.array().rowwise() * gain->value.row(0).array()).rowwise() +
               bias->value.row(0).array())
                  .matrix();
    return make_node(out, {x, gain, bias}, [xhat, inv_sd](Node& n) {
        Mat dxhat =
            (n.grad.array().rowwise() * n.parents[1]->value.row(0).array()).matrix();
        if (n.parents[0]->requires_grad) {
            Mat m1 = dxhat.rowwise().mean();
            Mat m2 = dxhat.cwiseProduct(xhat).rowwise().mean();
            Mat dx = dxhat;
            dx.colwise() -= m1.col(0);
            dx -= (xhat.array().colwise() * m2.col(0).array()).matrix();
            dx = (dx.array().colwise() * inv_sd.col(0).array()).matrix();
            n.parents[0]->g() += dx;
        }
        if (n.parents[1]->requires_grad)
            n.parents[1]->g() += n.grad.cwiseProduct(xhat).colwise().sum();
        if (n.parents[2]->requires_grad)
            n.parents[2]->g() += n.grad.colwise().sum();
    });
}

// ---------------------------------------------------------------------------
// softmax / losses

inline Mat softmax_rows_value(const Mat& x) {
    Mat shifted = x.colwise() - x.rowwise().maxCoeff().col(0);
    Mat e = shifted.array().exp();
    return e.array().colwise() / e.rowwise().sum().col(0).array();
}

inline Var softmax_rows(const Var& x) {
    Mat s = softmax_rows_value(x->value);
    return make_node(s, {x}, [s](Node& n) {
        if (!n.parents[0]->requires_grad) return;
        Mat inner = n.grad.cwiseProduct(s).rowwise().sum();
        Mat dx = s.cwiseProduct(n.grad.colwise() - inner.col(0));
        n.parents[0]->g() += dx;
    });
}

// mean of -log softmax(logits)[i, target[i]] over rows with weight[i] > 0.
// weights are per-row multipliers; the mean is over sum(weights).
inline Var cross_entropy(const Var& logits, const std::vector<int>& targets,
                         const std::vector<Scalar>& weights = {}) {
    const auto n_rows = logits->value.rows();
    const auto n_cls = logits->value.cols();
    require((long)targets.size() == n_rows, "cross_entropy: target count mismatch");
    std::vector<Scalar> w = weights.empty()
                                ? std::vector<Scalar>(n_rows, 1.0)
                                : weights;
    Scalar wsum = 0;
    for (Scalar wi : w) wsum += wi;
    require(wsum > 0, "cross_entropy: no selected rows");
    Mat p = softmax_rows_value(logits->value);
    Scalar loss = 0;
    for (long i = 0; i < n_rows; ++i) {
        require(targets[i] >= 0 && targets[i] < n_cls,
                "cross_entropy: target index out of range at row " + std::to_string(i));
        if (w[i] > 0) loss -= w[i] * std::log(std::max(p(i, targets[i]), 1e-300));
    }
    Mat out(1, 1);
    out(0, 0) = loss / wsum;
    return make_node(out, {logits}, [p, targets, w, wsum](Node& n) {
        if (!n.parents[0]->requires_grad) return;
        Scalar go = n.grad(0, 0) / wsum;
        Mat d = p;
        for (long i = 0; i < d.rows(); ++i) {
            d(i, targets[i]) -= 1.0;
            d.row(i) *= go * w[i];
        }
        n.parents[0]->g() += d;
    });
}

// numerically stable mean BCE-with-logits; logits and targets share shape
inline Var binary_cross_entropy(const Var& logits, const Mat& targets) {
    require(logits->value.rows() == targets.rows() &&
                logits->value.cols() == targets.cols(),
            "binary_cross_entropy: shape mismatch");
    const auto z = logits->value.array();
    const auto y = targets.array();
    // max(z,0) - z*y + log(1 + exp(-|z|))
    Mat losses = (z.max(0.0) - z * y + (1.0 + (-z.abs()).exp()).log()).matrix();
    Mat out(1, 1);
    out(0, 0) = losses.mean();
    Scalar inv_n = 1.0 / losses.size();
    return make_node(out, {logits}, [targets, inv_n](Node& n) {
        if (!n.parents[0]->requires_grad) return;
        const auto z = n.parents[0]->value.array();
        Mat s = (1.0 / (1.0 + (-z).exp())).matrix();
        n.parents[0]->g() += n.grad(0, 0) * inv_n * (s - targets);
    });
}

inline Var sum(const Var& x) {
    Mat out(1, 1);
    out(0, 0) = x->value.sum();
    return make_node(out, {x}, [](Node& n) {
        if (n.parents[0]->requires_grad)
            n.parents[0]->g().array() += n.grad(0, 0);
    });
}

inline Var mean(const Var& x) { return scale(sum(x), 1.0 / x->value.size()); }

// ---------------------------------------------------------------------------
// shape ops

inline Var concat_rows(const std::vector<Var>& parts) {
    require(!parts.empty(), "concat_rows: empty input");
    long rows = 0;
    const long cols = parts[0]->value.cols();
    for (const auto& p : parts) {
        require(p->value.cols() == cols, "concat_rows: column mismatch");
        rows += p->value.rows();
    }
    Mat out(rows, cols);
    long r = 0;
    for (const auto& p : parts) {
        out.middleRows(r, p->value.rows()) = p->value;
        r += p->value.rows();
    }
    return make_node(out, parts, [](Node& n) {
        long r = 0;
        for (auto& p : n.parents) {
            const long pr = p->value.rows();
            if (p->requires_grad) p->g() += n.grad.middleRows(r, pr);
            r += pr;
        }
    });
}

inline Var concat_cols(const std::vector<Var>& parts) {
    require(!parts.empty(), "concat_cols: empty input");
    long cols = 0;
    const long rows = parts[0]->value.rows();
    for (const auto& p : parts) {
        require(p->value.rows() == rows, "concat_cols: row mismatch");
        cols += p->value.cols();
    }
    Mat out(rows, cols);
    long c = 0;
    for (const auto& p : parts) {
        out.middleCols(c, p->value.cols()) = p->value;
        c += p->value.cols();
    }
    return make_node(out, parts, [](Node& n) {
        long c = 0;
        for (auto& p : n.parents) {
            const long pc = p->value.cols();
            if (p->requires_grad) p->g() += n.grad.middleCols(c, pc);
            c += pc;
        }
    });
}

// select rows by index; index -1 yields an all-zero row (sequence-edge padding)
inline Var gather_rows(const Var& x, std::vector<int> idx) {
    Mat out = Mat::Zero((long)idx.size(), x->value.cols());
    for (size_t i = 0; i < idx.size(); ++i) {
        if (idx[i] < 0) continue;
        require(idx[i] < x->value.rows(), "gather_rows: index out of range");
        out.row((long)i) = x->value.row(idx[i]);
    }
    return make_node(out, {x}, [idx](Node& n) {
        if (!n.parents[0]->requires_grad) return;
        Mat& px = n.parents[0]->g();
        for (size_t i = 0; i < idx.size(); ++i)
            if (idx[i] >= 0) px.row(idx[i]) += n.grad.row((long)i);
    });
}

// inverted dropout; identity when rate == 0 or not training
inline Var dropout(const Var& x, Scalar rate, Rng& rng, bool training) {
    if (!training || rate <= 0.0) return x;
    std::bernoulli_distribution keep(1.0 - rate);
    Mat mask(x->value.rows(), x->value.cols());
    const Scalar s = 1.0 / (1.0 - rate);
    for (long i = 0; i < mask.rows(); ++i)
        for (long j = 0; j < mask.cols(); ++j) mask(i, j) = keep(rng) ? s : 0.0;
    return mul(x, constant(mask));
}

// ---------------------------------------------------------------------------
// attention

// Multi-head scaled dot-product attention with per-head projections fused
// into one node. q_in is [Lq,d], kv_in is [Lkv,d]; all weights are [d,d],
// biases [1,d]. Full bidirectional attention (no mask).
inline Var multi_head_attention(const Var& q_in, const Var& kv_in,
                                const Var& Wq, const Var& bq, const Var& Wk,
                                const Var& bk, const Var& Wv, const Var& bv,
                                const Var& Wo, const Var& bo, int heads) {
    const long d = q_in->value.cols();
    require(kv_in->value.cols() == d, "attention: q/kv width mismatch");
    require(d % heads == 0, "attention: d_model " + std::to_string(d) +
                                " not divisible by heads " + std::to_string(heads));
    const long dh = d / heads;
    const Scalar inv_s = 1.0 / std::sqrt((Scalar)dh);

    Mat Q = (q_in->value * Wq->value).rowwise() + bq->value.row(0);
    Mat K = (kv_in->value * Wk->value).rowwise() + bk->value.row(0);
    Mat V = (kv_in->value * Wv->value).rowwise() + bv->value.row(0);

    auto attn = std::make_shared<std::vector<Mat>>(heads);  // per-head softmax rows
    Mat ctx(q_in->value.rows(), d);
    for (int h = 0; h < heads; ++h) {
        Mat scores = Q.middleCols(h * dh, dh) * K.middleCols(h * dh, dh).transpose() * inv_s;
        (*attn)[h] = softmax_rows_value(scores);
        ctx.middleCols(h * dh, dh) = (*attn)[h] * V.middleCols(h * dh, dh);
    }
    Mat out = (ctx * Wo->value).rowwise() + bo->value.row(0);

    auto cache = std::make_shared<std::array<Mat, 4>>();
    (*cache)[0] = std::move(Q);
    (*cache)[1] = std::move(K);
    (*cache)[2] = std::move(V);
    (*cache)[3] = std::move(ctx);

    return make_node(
        out, {q_in, kv_in, Wq, bq, Wk, bk, Wv, bv, Wo, bo},
        [attn, cache, heads, dh, inv_s](Node& n) {
            const Mat& Q = (*cache)[0];
            const Mat& K = (*cache)[1];
            const Mat& V = (*cache)[2];
            const Mat& ctx = (*cache)[3];
            Node& q_in = *n.parents[0];
            Node& kv_in = *n.parents[1];

            // output projection
            Mat dctx = n.grad * n.parents[8]->value.transpose();
            if (n.parents[8]->requires_grad)
                n.parents[8]->g() += ctx.transpose() * n.grad;
            if (n.parents[9]->requires_grad)
                n.parents[9]->g() += n.grad.colwise().sum();

            Mat dQ = Mat::Zero(Q.rows(), Q.cols());
            Mat dK = Mat::Zero(K.rows(), K.cols());
            Mat dV = Mat::Zero(V.rows(), V.cols());
            for (int h = 0; h < heads; ++h) {
                const Mat& A = (*attn)[h];
                Mat dOh = dctx.middleCols(h * dh, dh);
                Mat dA = dOh * V.middleCols(h * dh, dh).transpose();
                dV.middleCols(h * dh, dh) += A.transpose() * dOh;
                // softmax backward per row
                Mat inner = dA.cwiseProduct(A).rowwise().sum();
                Mat dS = A.cwiseProduct(dA.colwise() - inner.col(0)) * inv_s;
                dQ.middleCols(h * dh, dh) += dS * K.middleCols(h * dh, dh);
                dK.middleCols(h * dh, dh) += dS.transpose() * Q.middleCols(h * dh, dh);
            }

            auto route = [&](Mat& dP, Node& src, Node& W, Node& b) {
                if (W.requires_grad) W.g() += src.value.transpose() * dP;
                if (b.requires_grad) b.g() += dP.colwise().sum();
            };
            route(dQ, q_in, *n.parents[2], *n.parents[3]);
            route(dK, kv_in, *n.parents[4], *n.parents[5]);
            route(dV, kv_in, *n.parents[6], *n.parents[7]);
            if (q_in.requires_grad) q_in.g() += dQ * n.parents[2]->value.transpose();
            if (kv_in.requires_grad) {
                kv_in.g() += dK * n.parents[4]->value.transpose();
                kv_in.g() += dV * n.parents[6]->value.transpose();
            }
        });
}

// ---------------------------------------------------------------------------
// conv1d as unfold + matmul

// non-overlapping window unfold: [T,C] -> [T/k, k*C], window rows concatenated
inline Var unfold_windows(const Var& x, int k) {
    const long T = x->value.rows();
    const long C = x->value.cols();
    require(T % k == 0, "unfold_windows: T=" + std::to_string(T) +
                            " not divisible by window " + std::to_string(k));
    Mat out(T / k, (long)k * C);
    for (long w = 0; w < T / k; ++w)
        for (int j = 0; j < k; ++j)
            out.block(w, (long)j * C, 1, C) = x->value.row(w * k + j);
    return make_node(out, {x}, [k, C](Node& n) {
        if (!n.parents[0]->requires_grad) return;
        Mat& px = n.parents[0]->g();
        for (long w = 0; w < n.value.rows(); ++w)
            for (int j = 0; j < k; ++j)
                px.row(w * k + j) += n.grad.block(w, (long)j * C, 1, C);
    });
}

// strided 1D convolution, kernel == stride: [T,C_in] -> [T/k, C_out]
// W is [k*C_in, C_out], b is [1, C_out]
inline Var conv1d(const Var& x, const Var& W, const Var& b, int kernel) {
    return linear(unfold_windows(x, kernel), W, b);
}

}  // namespace bachi
