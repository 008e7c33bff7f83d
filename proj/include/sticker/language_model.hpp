#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "sticker/layers.hpp"
#include "sticker/tokenizer.hpp"

namespace sticker {

struct LmConfig {
    std::size_t base_vocab = 0;
    std::size_t context = 128;
    std::size_t width = 128;
    std::size_t layers = 4;
    std::size_t heads = 4;
    std::size_t ff = 256;
};

// Causal decoder: token + position embeddings, pre-norm blocks, final LN, untied head.
// Before extend_vocab the tables have base_vocab rows; after it, base_vocab + 5.
template <typename T>
struct LanguageModel {
    struct Cache {
        std::vector<Token> tokens;
        std::optional<std::size_t> slot;
        std::vector<typename TransformerBlock<T>::Cache> blocks;
        typename LayerNorm<T>::Cache ln_f;
        std::size_t logits_from = 0;
    };

    struct Output {
        Mat<T> hiddens;  // n x width, after the final LN
        Mat<T> logits;   // (n - logits_from) x vocab
        std::size_t logits_from = 0;
    };

    LmConfig config;
    bool extended = false;
    Param<T> tok_emb;
    Param<T> pos;
    std::vector<TransformerBlock<T>> blocks;
    LayerNorm<T> ln_f;
    Param<T> head;

    LanguageModel() = default;
    LanguageModel(const LmConfig& cfg, bool with_special_rows);

    void init(Rng& rng);
    std::size_t vocab() const { return tok_emb.shape[0]; }

    // When `slot` is set, the whole input row at that position (token and position
    // embedding) is replaced by `slot_input` (width values). Logits are produced for rows
    // logits_from..n-1 only.
    void forward(std::span<const Token> tokens, std::optional<std::size_t> slot,
                 std::span<const T> slot_input, std::size_t logits_from, Output& out,
                 Cache* cache) const;

    // d_logits matches Output::logits; d_hiddens (n x width) may be empty. Block and LN
    // weight gradients are skipped unless `body_grads`; embedding/head gradients are always
    // accumulated. Returns dL/d(slot_input) when a slot was used, else empty.
    std::vector<T> backward(const Cache& cache, const Mat<T>& d_logits, const Mat<T>& d_hiddens,
                            bool body_grads);

    void collect(ParamList<T>& out);
};

// Appends the five special-token rows to the embedding table and head. New rows are the
// mean of the existing rows plus N(0, noise_std^2). Only the new rows are marked trainable.
template <typename T>
LanguageModel<T> extend_vocab(const LanguageModel<T>& lm, Rng& rng, double noise_std = 0.01);

// Argmax decoding without sampling; ties go to the lowest id. The stopping token (eos or a
// member of `stop`) is included in the returned continuation.
template <typename T>
std::vector<Token> greedy_decode(const LanguageModel<T>& lm, std::span<const Token> prompt,
                                 std::size_t max_new, std::span<const Token> stop = {},
                                 std::optional<std::size_t> slot = std::nullopt,
                                 std::span<const T> slot_input = {});

template <typename T>
std::size_t argmax_lowest(std::span<const T> values);

}  // namespace sticker
