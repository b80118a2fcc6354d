#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace knowexpert {

// All randomness goes through mt19937_64 plus the hand-rolled draws below.
// The std distributions are implementation-defined, these are not, so seeded
// runs reproduce bit-exactly.
using Rng = std::mt19937_64;

inline uint64_t rng_below(Rng& g, uint64_t n) {
    if (n == 0) throw std::invalid_argument("rng_below: n must be positive");
    const uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    uint64_t r = g();
    while (r >= limit) r = g();
    return r % n;
}

inline double rng_uniform01(Rng& g) {
    return static_cast<double>(g() >> 11) * 0x1.0p-53;
}

inline double rng_normal(Rng& g) {
    // Box-Muller, two fresh draws per sample.
    const double u1 = 1.0 - rng_uniform01(g);
    const double u2 = rng_uniform01(g);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

// Sample m distinct indices from [0, n) in ascending order.
inline std::vector<size_t> rng_sample_indices(Rng& g, size_t n, size_t m) {
    std::vector<size_t> pool(n);
    for (size_t i = 0; i < n; ++i) pool[i] = i;
    for (size_t i = 0; i < m && i + 1 < n; ++i) {
        const size_t j = i + static_cast<size_t>(rng_below(g, n - i));
        std::swap(pool[i], pool[j]);
    }
    pool.resize(m > n ? n : m);
    std::sort(pool.begin(), pool.end());
    return pool;
}

struct Mat {
    int rows = 0;
    int cols = 0;
    std::vector<double> a;

    Mat() = default;
    Mat(int r, int c) : rows(r), cols(c), a(static_cast<size_t>(r) * c, 0.0) {}

    double* row(int i) { return a.data() + static_cast<size_t>(i) * cols; }
    const double* row(int i) const { return a.data() + static_cast<size_t>(i) * cols; }
    double& at(int i, int j) { return a[static_cast<size_t>(i) * cols + j]; }
    double at(int i, int j) const { return a[static_cast<size_t>(i) * cols + j]; }
};

// y[n,out] = x[n,in] * w[in,out]
inline void matmul(const double* x, const double* w, double* y, int n, int in, int out) {
    std::memset(y, 0, sizeof(double) * static_cast<size_t>(n) * out);
    for (int t = 0; t < n; ++t) {
        const double* xr = x + static_cast<size_t>(t) * in;
        double* yr = y + static_cast<size_t>(t) * out;
        for (int i = 0; i < in; ++i) {
            const double xv = xr[i];
            if (xv == 0.0) continue;
            const double* wr = w + static_cast<size_t>(i) * out;
            for (int o = 0; o < out; ++o) yr[o] += xv * wr[o];
        }
    }
}

// dx[n,in] += dy[n,out] * w^T; dw[in,out] += x^T * dy; db[out] += column sums of dy
inline void matmul_backward(const double* x, const double* w, const double* dy,
                            double* dx, double* dw, double* db,
                            int n, int in, int out) {
    for (int t = 0; t < n; ++t) {
        const double* xr = x + static_cast<size_t>(t) * in;
        const double* dyr = dy + static_cast<size_t>(t) * out;
        if (db) {
            for (int o = 0; o < out; ++o) db[o] += dyr[o];
        }
        for (int i = 0; i < in; ++i) {
            const double* wr = w + static_cast<size_t>(i) * out;
            double acc = 0.0;
            for (int o = 0; o < out; ++o) acc += dyr[o] * wr[o];
            if (dx) dx[static_cast<size_t>(t) * in + i] += acc;
            if (dw) {
                const double xv = xr[i];
                if (xv != 0.0) {
                    double* dwr = dw + static_cast<size_t>(i) * out;
                    for (int o = 0; o < out; ++o) dwr[o] += xv * dyr[o];
                }
            }
        }
    }
}

// In-place softmax over v[0..n)
inline void softmax_inplace(double* v, int n) {
    double mx = v[0];
    for (int i = 1; i < n; ++i) mx = std::max(mx, v[i]);
    double sum = 0.0;
    for (int i = 0; i < n; ++i) {
        v[i] = std::exp(v[i] - mx);
        sum += v[i];
    }
    const double inv = 1.0 / sum;
    for (int i = 0; i < n; ++i) v[i] *= inv;
}

inline double log_sum_exp(const double* v, int n) {
    double mx = v[0];
    for (int i = 1; i < n; ++i) mx = std::max(mx, v[i]);
    double sum = 0.0;
    for (int i = 0; i < n; ++i) sum += std::exp(v[i] - mx);
    return mx + std::log(sum);
}

inline uint64_t fnv1a64(const void* data, size_t len) {
    const auto* p = static_cast<const unsigned char*>(data);
    uint64_t h = 1469598103934665603ull;
    for (size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 1099511628211ull;
    }
    return h;
}

inline uint64_t checksum(std::span<const double> v) {
    return fnv1a64(v.data(), v.size() * sizeof(double));
}

}  // namespace knowexpert
