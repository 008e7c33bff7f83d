#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "sticker/error.hpp"

namespace sticker {

// A named parameter tensor with its gradient and per-element trainability mask.
template <typename T>
struct Param {
    std::string name;
    std::vector<std::size_t> shape;
    std::vector<T> value;
    std::vector<T> grad;
    std::vector<std::uint8_t> trainable;
    bool decay = false;  // decoupled weight decay applies (weight matrices only)

    Param() = default;
    Param(std::string n, std::vector<std::size_t> s, bool apply_decay = false)
        : name(std::move(n)), shape(std::move(s)), decay(apply_decay) {
        const std::size_t count = element_count(shape);
        value.assign(count, T(0));
        grad.assign(count, T(0));
        trainable.assign(count, 1);
    }

    static std::size_t element_count(const std::vector<std::size_t>& s) {
        return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
    }

    std::size_t size() const { return value.size(); }
    void zero_grad() { std::fill(grad.begin(), grad.end(), T(0)); }
    void set_trainable(bool on) { std::fill(trainable.begin(), trainable.end(), on ? 1 : 0); }
    std::size_t trainable_count() const {
        return static_cast<std::size_t>(std::count(trainable.begin(), trainable.end(), 1));
    }
};

template <typename T>
using ParamList = std::vector<Param<T>*>;

// Row-major dense matrix.
template <typename T>
struct Mat {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<T> data;

    Mat() = default;
    Mat(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, T(0)) {}

    T* row(std::size_t i) { return data.data() + i * cols; }
    const T* row(std::size_t i) const { return data.data() + i * cols; }
    std::span<T> row_span(std::size_t i) { return {row(i), cols}; }
    std::span<const T> row_span(std::size_t i) const { return {row(i), cols}; }
    T& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
    T operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }
    void fill(T v) { std::fill(data.begin(), data.end(), v); }
};

template <typename T>
inline T dot(const T* a, const T* b, std::size_t n) {
    T acc = T(0);
#pragma omp simd reduction(+ : acc)
    for (std::size_t k = 0; k < n; ++k) {
        acc += a[k] * b[k];
    }
    return acc;
}

// y += a * x
template <typename T>
inline void axpy(T a, const T* x, T* y, std::size_t n) {
#pragma omp simd
    for (std::size_t k = 0; k < n; ++k) {
        y[k] += a * x[k];
    }
}

// y = x / |x|; returns |x|. Throws DegenerateEmbedding below `min_norm`.
template <typename T>
T l2_normalize(std::span<const T> x, std::span<T> y, double min_norm = 1e-8) {
    double ss = 0.0;
    for (T v : x) {
        ss += static_cast<double>(v) * static_cast<double>(v);
    }
    const double norm = std::sqrt(ss);
    if (!(norm >= min_norm)) {
        throw DegenerateEmbedding("embedding norm " + std::to_string(norm) +
                                  " is below the normalization threshold");
    }
    for (std::size_t i = 0; i < x.size(); ++i) {
        y[i] = static_cast<T>(static_cast<double>(x[i]) / norm);
    }
    return static_cast<T>(norm);
}

template <typename T>
std::vector<T> l2_normalized(std::span<const T> x, double min_norm = 1e-8) {
    std::vector<T> y(x.size());
    l2_normalize<T>(x, y, min_norm);
    return y;
}

// Given y = x / |x| and dL/dy, accumulates dL/dx = (dy - y (y . dy)) / |x|.
template <typename T>
void l2_normalize_backward(std::span<const T> y, T norm, std::span<const T> dy, std::span<T> dx) {
    const T proj = dot(y.data(), dy.data(), y.size());
    for (std::size_t i = 0; i < y.size(); ++i) {
        dx[i] += (dy[i] - y[i] * proj) / norm;
    }
}

}  // namespace sticker
