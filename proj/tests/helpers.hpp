#pragma once

// Shared test utilities: a central-difference gradient checker and a tiny
// plain-loop matrix type used to build reference oracles that stay
// independent of the library's tensor/tape implementation.

#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "mmsurv/tensor.hpp"

namespace testutil {

struct Mat {
    size_t r = 0, c = 0;
    std::vector<double> v;
    Mat() = default;
    Mat(size_t r_, size_t c_) : r(r_), c(c_), v(r_ * c_, 0.0) {}
    double& operator()(size_t i, size_t j) { return v[i * c + j]; }
    double operator()(size_t i, size_t j) const { return v[i * c + j]; }
};

inline Mat matmul(const Mat& a, const Mat& b) {
    Mat out(a.r, b.c);
    for (size_t i = 0; i < a.r; ++i)
        for (size_t k = 0; k < a.c; ++k) {
            const double aik = a(i, k);
            for (size_t j = 0; j < b.c; ++j) out(i, j) += aik * b(k, j);
        }
    return out;
}

inline Mat transpose(const Mat& a) {
    Mat out(a.c, a.r);
    for (size_t i = 0; i < a.r; ++i)
        for (size_t j = 0; j < a.c; ++j) out(j, i) = a(i, j);
    return out;
}

inline Mat add(const Mat& a, const Mat& b) {
    Mat out = a;
    for (size_t i = 0; i < out.v.size(); ++i) out.v[i] += b.v[i];
    return out;
}

inline Mat softmax_rows(const Mat& a) {
    Mat out = a;
    for (size_t i = 0; i < a.r; ++i) {
        double mx = a(i, 0);
        for (size_t j = 1; j < a.c; ++j) mx = std::max(mx, a(i, j));
        double sum = 0;
        for (size_t j = 0; j < a.c; ++j) {
            out(i, j) = std::exp(a(i, j) - mx);
            sum += out(i, j);
        }
        for (size_t j = 0; j < a.c; ++j) out(i, j) /= sum;
    }
    return out;
}

inline Mat layer_norm(const Mat& a, const std::vector<double>& g, const std::vector<double>& b,
                      double eps = 1e-5) {
    Mat out = a;
    for (size_t i = 0; i < a.r; ++i) {
        double mu = 0;
        for (size_t j = 0; j < a.c; ++j) mu += a(i, j);
        mu /= double(a.c);
        double var = 0;
        for (size_t j = 0; j < a.c; ++j) var += (a(i, j) - mu) * (a(i, j) - mu);
        var /= double(a.c);
        const double is = 1.0 / std::sqrt(var + eps);
        for (size_t j = 0; j < a.c; ++j) out(i, j) = (a(i, j) - mu) * is * g[j] + b[j];
    }
    return out;
}

inline Mat gelu(const Mat& a) {
    Mat out = a;
    for (double& x : out.v) {
        const double u = 0.7978845608 * (x + 0.044715 * x * x * x);
        x = 0.5 * x * (1.0 + std::tanh(u));
    }
    return out;
}

inline Mat from_tensor(const mmsurv::Tensor& t) {
    Mat m(t.rows(), t.cols());
    m.v = t.value();
    return m;
}

inline double max_abs_diff(const Mat& a, const Mat& b) {
    double worst = 0;
    for (size_t i = 0; i < a.v.size(); ++i) worst = std::max(worst, std::abs(a.v[i] - b.v[i]));
    return worst;
}

inline Mat random_mat(size_t r, size_t c, std::mt19937_64& rng, double sd = 1.0) {
    std::normal_distribution<double> d(0.0, sd);
    Mat m(r, c);
    for (double& x : m.v) x = d(rng);
    return m;
}

inline mmsurv::Tensor to_param(const Mat& m) {
    return mmsurv::Tensor::parameter(m.r, m.c, m.v);
}

inline mmsurv::Tensor to_const(const Mat& m) {
    return mmsurv::Tensor::from_data(m.r, m.c, m.v);
}

// Central finite differences against the analytic gradient of
// loss = f(params). f must rebuild the graph from the leaf tensors on every
// call. Checks up to max_coords coordinates per parameter (all if 0).
// Returns the worst relative error, where rel = |a-n| / max(1, |a|, |n|).
inline double grad_check(const std::function<mmsurv::Tensor()>& f,
                         const std::vector<mmsurv::Tensor>& params, double step = 1e-5,
                         size_t max_coords = 0, uint64_t seed = 1234) {
    using namespace mmsurv;
    std::mt19937_64 rng(seed);
    for (const auto& p : params) const_cast<Tensor&>(p).zero_grad();
    Tensor loss = f();
    backward(loss);
    double worst = 0.0;
    for (const auto& p : params) {
        auto& pt = const_cast<Tensor&>(p);
        const std::vector<double> analytic = pt.grad();
        std::vector<size_t> coords(pt.size());
        for (size_t i = 0; i < coords.size(); ++i) coords[i] = i;
        if (max_coords > 0 && coords.size() > max_coords) {
            std::shuffle(coords.begin(), coords.end(), rng);
            coords.resize(max_coords);
        }
        for (size_t ci : coords) {
            auto& buf = pt.mutable_value();
            const double orig = buf[ci];
            buf[ci] = orig + step;
            const double up = f().scalar();
            buf[ci] = orig - step;
            const double down = f().scalar();
            buf[ci] = orig;
            const double numeric = (up - down) / (2.0 * step);
            const double a = analytic[ci];
            const double rel =
                std::abs(a - numeric) / std::max({1.0, std::abs(a), std::abs(numeric)});
            worst = std::max(worst, rel);
        }
    }
    return worst;
}

}  // namespace testutil
