// Central finite-difference gradient checking used across the test suites.
#pragma once

#include <doctest.h>

#include <vector>

#include "bachi/autodiff.hpp"

namespace bachi::testing {

inline double rel_err(double a, double b) {
    return std::abs(a - b) / std::max({1.0, std::abs(a), std::abs(b)});
}

// Rebuilds the loss via `make_loss` around perturbed parameter values and
// compares analytic gradients against (f(x+h)-f(x-h))/2h elementwise.
template <typename F>
void check_gradients(const std::vector<Var>& params, F make_loss, double h = 1e-4,
                     double tol = 1e-4) {
    for (const auto& p : params) p->grad.setZero(0, 0);
    Var loss = make_loss();
    backward(loss);
    std::vector<Mat> analytic;
    for (const auto& p : params)
        analytic.push_back(p->grad.size() ? p->grad
                                          : Mat::Zero(p->value.rows(), p->value.cols()));

    for (size_t pi = 0; pi < params.size(); ++pi) {
        Mat& v = params[pi]->value;
        for (long i = 0; i < v.rows(); ++i)
            for (long j = 0; j < v.cols(); ++j) {
                const double orig = v(i, j);
                v(i, j) = orig + h;
                double plus = make_loss()->value(0, 0);
                v(i, j) = orig - h;
                double minus = make_loss()->value(0, 0);
                v(i, j) = orig;
                double numeric = (plus - minus) / (2 * h);
                INFO("param ", pi, " element (", i, ",", j, "): analytic ",
                     analytic[pi](i, j), " numeric ", numeric);
                CHECK(rel_err(analytic[pi](i, j), numeric) <= tol);
            }
    }
}

inline Mat random_mat(long rows, long cols, Rng& rng, double scl = 1.0) {
    std::normal_distribution<double> dist(0.0, scl);
    Mat m(rows, cols);
    for (long i = 0; i < rows; ++i)
        for (long j = 0; j < cols; ++j) m(i, j) = dist(rng);
    return m;
}

}  // namespace bachi::testing
