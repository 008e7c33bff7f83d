#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "sticker/tensor.hpp"
#include "sticker/tokenizer.hpp"

namespace sticker {

// Row i of `text` and row i of `image` form the positive pair. Rows are expected to be
// unit-norm, so sim(T_i, I_j) is their dot product.
template <typename T>
struct ContrastiveBatch {
    Mat<T> text;
    Mat<T> image;
    T tau = T(0.07);
};

template <typename T>
struct ContrastiveGrad {
    double loss = 0.0;
    Mat<T> d_text;
    Mat<T> d_image;
    double d_tau = 0.0;
};

// Mean softmax cross-entropy over rows of S/tau (text -> image).
template <typename T>
double info_nce_t2i(const ContrastiveBatch<T>& batch);
// Same over columns (image -> text).
template <typename T>
double info_nce_i2t(const ContrastiveBatch<T>& batch);
template <typename T>
double clip_total(const ContrastiveBatch<T>& batch);

template <typename T>
ContrastiveGrad<T> info_nce_t2i_grad(const ContrastiveBatch<T>& batch);
template <typename T>
ContrastiveGrad<T> info_nce_i2t_grad(const ContrastiveBatch<T>& batch);
// Both directions; also reports the two components.
template <typename T>
ContrastiveGrad<T> clip_total_grad(const ContrastiveBatch<T>& batch, double* l_t2i = nullptr,
                                   double* l_i2t = nullptr);

// Mean over mask-true rows of -log softmax(logits[r])[targets[r]].
template <typename T>
double lm_nll(const Mat<T>& logits, std::span<const Token> targets,
              std::span<const std::uint8_t> mask);

// Gradient wrt the logits, scaled by `scale` (e.g. when several sequences share one mean).
template <typename T>
double lm_nll_grad(const Mat<T>& logits, std::span<const Token> targets,
                   std::span<const std::uint8_t> mask, Mat<T>& d_logits, double scale = 1.0);

// L_c + lambda (L_t2i + L_i2t).
double combined_loss(double l_c, double l_t2i, double l_i2t, double lambda = 1.0);

}  // namespace sticker
