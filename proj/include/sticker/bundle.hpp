#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sticker/encoders.hpp"
#include "sticker/language_model.hpp"
#include "sticker/tokenizer.hpp"

namespace sticker {

struct BundleConfig {
    VisionConfig vision;
    TextConfig text;
    LmConfig lm;
    std::size_t embed_dim = 64;
    double init_tau = 0.07;
    double min_tau = 1e-3;

    // Toy sizes for a tokenizer with the given base vocabulary.
    static BundleConfig for_vocab(std::size_t base_vocab);
};

// Everything the two training stages touch. Parameter trainability lives on each Param.
template <typename T>
struct ModelBundle {
    BundleConfig config;
    Tokenizer tokenizer;
    VisionEncoder<T> vision;
    TextEncoder<T> text;
    LanguageModel<T> lm;
    Linear<T> w_t;  // D -> d, stored [d, D]
    Linear<T> w_c;  // d -> D, stored [D, d]
    Param<T> log_tau;
    bool lm_pretrained = false;

    ModelBundle(const BundleConfig& cfg, Tokenizer tok);

    void init(std::uint64_t seed);

    // exp(log_tau) clamped to min_tau.
    T tau() const;
    bool tau_clamped() const;

    // Fixed order: vision, text, log_tau, lm, w_t, w_c.
    ParamList<T> params();
    std::vector<const Param<T>*> params() const;
    void zero_grad();
    void set_all_trainable(bool on);

    // Adds the special-token rows and leaves exactly the new rows, W_t and W_c trainable.
    // Throws InvalidState when already extended.
    void extend(Rng& rng, double noise_std = 0.01);

    // SHA-256 over the vision encoder's names, shapes and float32 values.
    std::string vision_fingerprint() const;
};

// Digest over the float32 values of every element whose trainability equals `trainable`.
template <typename T>
std::string masked_digest(const ModelBundle<T>& bundle, bool trainable);

template <typename U, typename T>
ModelBundle<U> cast_bundle(const ModelBundle<T>& src);

// W_c v: the LM input row substituted at an image slot.
template <typename T>
std::vector<T> project_visual(const ModelBundle<T>& bundle, std::span<const T> visual);

// LM forward with an optional visual embedding at the image slot; both or neither must be
// given.
template <typename T>
void lm_forward(const ModelBundle<T>& bundle, std::span<const Token> tokens,
                std::optional<std::span<const T>> visual, std::optional<std::size_t> slot,
                std::size_t logits_from, typename LanguageModel<T>::Output& out,
                typename LanguageModel<T>::Cache* cache = nullptr);

// normalize(W_t h). Throws DegenerateEmbedding for a near-zero projection.
template <typename T>
std::vector<T> extract_ret_embedding(std::span<const T> hidden, const Linear<T>& w_t);

}  // namespace sticker
