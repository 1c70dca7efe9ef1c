#pragma once

// Minimal dense NCHW tensor used throughout the library. Double precision
// so that finite-difference gradient checks are meaningful.

#include <cassert>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

namespace mccan {

struct Tensor {
    int n = 0, c = 0, h = 0, w = 0;
    std::vector<double> v;

    Tensor() = default;
    Tensor(int n_, int c_, int h_, int w_, double fill = 0.0)
        : n(n_), c(c_), h(h_), w(w_),
          v(static_cast<std::size_t>(n_) * c_ * h_ * w_, fill) {
        if (n_ < 0 || c_ < 0 || h_ < 0 || w_ < 0)
            throw std::invalid_argument("tensor: negative dimension");
    }

    std::size_t size() const { return v.size(); }
    bool empty() const { return v.empty(); }

    double& at(int in, int ic, int iy, int ix) {
        return v[((static_cast<std::size_t>(in) * c + ic) * h + iy) * w + ix];
    }
    double at(int in, int ic, int iy, int ix) const {
        return v[((static_cast<std::size_t>(in) * c + ic) * h + iy) * w + ix];
    }

    bool same_shape(const Tensor& o) const {
        return n == o.n && c == o.c && h == o.h && w == o.w;
    }

    void zero() { std::fill(v.begin(), v.end(), 0.0); }

    bool all_finite() const {
        for (double x : v)
            if (!std::isfinite(x)) return false;
        return true;
    }
};

inline double mean_abs_diff(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) throw std::invalid_argument("mean_abs_diff: shape mismatch");
    if (a.empty()) throw std::invalid_argument("mean_abs_diff: empty tensor");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(a.v[i] - b.v[i]);
    return s / static_cast<double>(a.size());
}

// d/da of mean |a - b|: sign(a-b)/numel, accumulated into ga with scale.
inline void mean_abs_diff_backward(const Tensor& a, const Tensor& b, double scale, Tensor& ga) {
    const double inv = scale / static_cast<double>(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a.v[i] - b.v[i];
        ga.v[i] += d > 0 ? inv : (d < 0 ? -inv : 0.0);
    }
}

inline double mean(const Tensor& t) {
    if (t.empty()) throw std::invalid_argument("mean: empty tensor");
    double s = 0.0;
    for (double x : t.v) s += x;
    return s / static_cast<double>(t.size());
}

} // namespace mccan
