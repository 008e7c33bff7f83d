#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "sticker/rng.hpp"
#include "sticker/tensor.hpp"

namespace sticker {

// y = x W^T (+ b), W stored [out, in].
template <typename T>
struct Linear {
    std::size_t in = 0;
    std::size_t out = 0;
    bool has_bias = true;
    Param<T> weight;
    Param<T> bias;

    Linear() = default;
    Linear(const std::string& name, std::size_t in_features, std::size_t out_features,
           bool with_bias = true);

    void init(Rng& rng, double stddev);
    void forward(const Mat<T>& x, Mat<T>& y) const;
    // Accumulates into *dx when non-null; weight/bias gradients only when param_grads.
    void backward(const Mat<T>& x, const Mat<T>& dy, Mat<T>* dx, bool param_grads);
    void collect(ParamList<T>& out_params);
};

template <typename T>
struct LayerNorm {
    struct Cache {
        std::vector<T> rstd;
        Mat<T> xhat;
    };

    std::size_t dim = 0;
    Param<T> gamma;
    Param<T> beta;

    LayerNorm() = default;
    LayerNorm(const std::string& name, std::size_t d);

    void forward(const Mat<T>& x, Mat<T>& y, Cache* cache) const;
    // Accumulates into dx.
    void backward(const Cache& cache, const Mat<T>& dy, Mat<T>& dx, bool param_grads);
    void collect(ParamList<T>& out_params);
};

// Pre-norm transformer block: x + Attn(LN(x)), then + MLP(LN(.)) with tanh-GELU.
template <typename T>
struct TransformerBlock {
    struct Cache {
        typename LayerNorm<T>::Cache ln1;
        Mat<T> ln1_out;
        Mat<T> qkv;
        std::vector<T> att;  // heads x n x n softmax weights
        Mat<T> att_y;
        Mat<T> x_mid;
        typename LayerNorm<T>::Cache ln2;
        Mat<T> ln2_out;
        Mat<T> h_pre;
        Mat<T> h_act;
    };

    std::size_t width = 0;
    std::size_t heads = 0;
    bool causal = false;
    LayerNorm<T> ln1;
    Linear<T> qkv;
    Linear<T> proj;
    LayerNorm<T> ln2;
    Linear<T> fc1;
    Linear<T> fc2;

    TransformerBlock() = default;
    TransformerBlock(const std::string& name, std::size_t width, std::size_t heads,
                     std::size_t ff, bool causal);

    void init(Rng& rng, double stddev, double residual_stddev);
    void forward(const Mat<T>& x, Mat<T>& out, Cache* cache) const;
    // Accumulates dL/dx into dx (same shape as x).
    void backward(const Cache& cache, const Mat<T>& dout, Mat<T>& dx, bool param_grads);
    void collect(ParamList<T>& out_params);
};

template <typename T>
T gelu(T x);
template <typename T>
T gelu_grad(T x);

}  // namespace sticker
