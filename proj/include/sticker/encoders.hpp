#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <vector>

#include "sticker/corpus.hpp"
#include "sticker/layers.hpp"
#include "sticker/tokenizer.hpp"

namespace sticker {

struct VisionConfig {
    std::size_t image_size = 32;
    std::size_t patch = 8;
    std::size_t width = 64;
    std::size_t layers = 2;
    std::size_t heads = 4;
    std::size_t ff = 128;
    std::size_t embed_dim = 64;

    std::size_t patches() const { return (image_size / patch) * (image_size / patch); }
    std::size_t patch_features() const { return patch * patch * 3; }
};

struct TextConfig {
    std::size_t vocab = 0;
    std::size_t context = 64;
    std::size_t width = 64;
    std::size_t layers = 2;
    std::size_t heads = 4;
    std::size_t ff = 128;
    std::size_t embed_dim = 64;
};

// Image encoder: 8x8 patches -> linear embed + learned positions -> pre-norm blocks ->
// final LN -> mean over patches -> bias-free projection to embed_dim.
template <typename T>
struct VisionEncoder {
    struct Cache {
        Mat<T> patches;
        std::vector<typename TransformerBlock<T>::Cache> blocks;
        std::vector<Mat<T>> block_inputs;
        typename LayerNorm<T>::Cache ln_f;
        Mat<T> ln_out;
        Mat<T> pooled;
    };

    VisionConfig config;
    Linear<T> patch_embed;
    Param<T> pos;
    std::vector<TransformerBlock<T>> blocks;
    LayerNorm<T> ln_f;
    Linear<T> head;

    VisionEncoder() = default;
    explicit VisionEncoder(const VisionConfig& cfg);

    void init(Rng& rng);
    // Raw (unnormalized) embed_dim vector for one frame.
    std::vector<T> forward(const Raster& frame, Cache* cache) const;
    void backward(const Cache& cache, std::span<const T> d_raw);
    void collect(ParamList<T>& out);
};

// Bidirectional text encoder; the representation is the final hidden state at position 0.
template <typename T>
struct TextEncoder {
    struct Cache {
        std::vector<Token> tokens;
        std::vector<typename TransformerBlock<T>::Cache> blocks;
        typename LayerNorm<T>::Cache ln_f;
        Mat<T> ln_out;
        Mat<T> first;
    };

    TextConfig config;
    Param<T> tok_emb;
    Param<T> pos;
    std::vector<TransformerBlock<T>> blocks;
    LayerNorm<T> ln_f;
    Linear<T> head;

    TextEncoder() = default;
    explicit TextEncoder(const TextConfig& cfg);

    void init(Rng& rng);
    // `tokens` must already be stripped of padding.
    std::vector<T> forward(std::span<const Token> tokens, Cache* cache) const;
    void backward(const Cache& cache, std::span<const T> d_raw);
    void collect(ParamList<T>& out);
};

// Frames -> [frame_index, multiplicity] pairs so repeated frames are encoded once.
std::vector<std::pair<const Raster*, int>> unique_frames(const std::array<const Raster*, 3>& frames);

// Encodes the first/middle/last frames independently, averages, L2-normalizes.
// Throws DegenerateEmbedding when the average has norm < 1e-8.
template <typename T>
std::vector<T> encode_image(const VisionEncoder<T>& vision,
                            const std::array<const Raster*, 3>& frames);

template <typename T>
std::vector<T> encode_record_image(const VisionEncoder<T>& vision, const StickerRecord& record);

// Trailing pad tokens are ignored; empty input or a pad followed by a non-pad token is
// rejected, as is input longer than the context.
template <typename T>
std::vector<T> encode_text(const TextEncoder<T>& text, std::span<const Token> tokens);

// Strips trailing padding; validates as encode_text does.
std::span<const Token> strip_padding(std::span<const Token> tokens, std::size_t context);

}  // namespace sticker
