#include "sticker/encoders.hpp"

#include <cmath>

#include "sticker/error.hpp"

namespace sticker {
namespace {
constexpr double kInitStd = 0.02;
}

// ---------------------------------------------------------------------------
// VisionEncoder

template <typename T>
VisionEncoder<T>::VisionEncoder(const VisionConfig& cfg)
    : config(cfg),
      patch_embed("vision.patch_embed", cfg.patch_features(), cfg.width),
      pos("vision.pos", {cfg.patches(), cfg.width}),
      ln_f("vision.ln_f", cfg.width),
      head("vision.head", cfg.width, cfg.embed_dim, false) {
    if (cfg.image_size % cfg.patch != 0) {
        throw InvalidArgument("vision: image size must be a multiple of the patch size");
    }
    for (std::size_t l = 0; l < cfg.layers; ++l) {
        blocks.emplace_back("vision.block" + std::to_string(l), cfg.width, cfg.heads, cfg.ff,
                            false);
    }
}

template <typename T>
void VisionEncoder<T>::init(Rng& rng) {
    patch_embed.init(rng, kInitStd);
    for (auto& v : pos.value) {
        v = static_cast<T>(rng.normal() * kInitStd);
    }
    const double residual = kInitStd / std::sqrt(2.0 * static_cast<double>(config.layers));
    for (auto& b : blocks) {
        b.init(rng, kInitStd, residual);
    }
    head.init(rng, 1.0 / std::sqrt(static_cast<double>(config.width)));
}

template <typename T>
std::vector<T> VisionEncoder<T>::forward(const Raster& frame, Cache* cache) const {
    const auto size = static_cast<int>(config.image_size);
    if (frame.width != size || frame.height != size) {
        throw InvalidArgument("vision: expected a " + std::to_string(size) + "x" +
                              std::to_string(size) + " raster");
    }
    const std::size_t grid = config.image_size / config.patch;
    const std::size_t p = config.patch;
    Mat<T> patches(config.patches(), config.patch_features());
    for (std::size_t py = 0; py < grid; ++py) {
        for (std::size_t px = 0; px < grid; ++px) {
            T* row = patches.row(py * grid + px);
            std::size_t k = 0;
            for (std::size_t y = 0; y < p; ++y) {
                for (std::size_t x = 0; x < p; ++x) {
                    for (int c = 0; c < 3; ++c) {
                        const auto v = frame.at(static_cast<int>(py * p + y),
                                                static_cast<int>(px * p + x), c);
                        row[k++] = static_cast<T>(v) * T(2.0 / 255.0) - T(1);
                    }
                }
            }
        }
    }

    Mat<T> x;
    patch_embed.forward(patches, x);
    for (std::size_t k = 0; k < x.data.size(); ++k) {
        x.data[k] += pos.value[k];
    }
    if (cache != nullptr) {
        cache->patches = std::move(patches);
        cache->blocks.resize(blocks.size());
    }
    Mat<T> next;
    for (std::size_t l = 0; l < blocks.size(); ++l) {
        blocks[l].forward(x, next, cache != nullptr ? &cache->blocks[l] : nullptr);
        std::swap(x, next);
    }
    Mat<T> ln_out;
    ln_f.forward(x, ln_out, cache != nullptr ? &cache->ln_f : nullptr);
    Mat<T> pooled(1, config.width);
    const T inv = T(1) / static_cast<T>(ln_out.rows);
    for (std::size_t i = 0; i < ln_out.rows; ++i) {
        axpy(inv, ln_out.row(i), pooled.row(0), config.width);
    }
    Mat<T> out;
    head.forward(pooled, out);
    if (cache != nullptr) {
        cache->ln_out = std::move(ln_out);
        cache->pooled = std::move(pooled);
    }
    return out.data;
}

template <typename T>
void VisionEncoder<T>::backward(const Cache& cache, std::span<const T> d_raw) {
    Mat<T> d_out(1, config.embed_dim);
    std::copy(d_raw.begin(), d_raw.end(), d_out.data.begin());
    Mat<T> d_pooled(1, config.width);
    head.backward(cache.pooled, d_out, &d_pooled, true);

    const std::size_t n = cache.ln_out.rows;
    Mat<T> d_ln(n, config.width);
    const T inv = T(1) / static_cast<T>(n);
    for (std::size_t i = 0; i < n; ++i) {
        axpy(inv, d_pooled.row(0), d_ln.row(i), config.width);
    }
    Mat<T> dx(n, config.width);
    ln_f.backward(cache.ln_f, d_ln, dx, true);
    for (std::size_t l = blocks.size(); l-- > 0;) {
        Mat<T> d_in(n, config.width);
        blocks[l].backward(cache.blocks[l], dx, d_in, true);
        std::swap(dx, d_in);
    }
    for (std::size_t k = 0; k < dx.data.size(); ++k) {
        pos.grad[k] += dx.data[k];
    }
    patch_embed.backward(cache.patches, dx, nullptr, true);
}

template <typename T>
void VisionEncoder<T>::collect(ParamList<T>& out) {
    patch_embed.collect(out);
    out.push_back(&pos);
    for (auto& b : blocks) {
        b.collect(out);
    }
    ln_f.collect(out);
    head.collect(out);
}

// ---------------------------------------------------------------------------
// TextEncoder

template <typename T>
TextEncoder<T>::TextEncoder(const TextConfig& cfg)
    : config(cfg),
      tok_emb("text.tok_emb", {cfg.vocab, cfg.width}),
      pos("text.pos", {cfg.context, cfg.width}),
      ln_f("text.ln_f", cfg.width),
      head("text.head", cfg.width, cfg.embed_dim, false) {
    for (std::size_t l = 0; l < cfg.layers; ++l) {
        blocks.emplace_back("text.block" + std::to_string(l), cfg.width, cfg.heads, cfg.ff,
                            false);
    }
}

template <typename T>
void TextEncoder<T>::init(Rng& rng) {
    for (auto& v : tok_emb.value) {
        v = static_cast<T>(rng.normal() * kInitStd);
    }
    for (auto& v : pos.value) {
        v = static_cast<T>(rng.normal() * kInitStd);
    }
    const double residual = kInitStd / std::sqrt(2.0 * static_cast<double>(config.layers));
    for (auto& b : blocks) {
        b.init(rng, kInitStd, residual);
    }
    head.init(rng, 1.0 / std::sqrt(static_cast<double>(config.width)));
}

template <typename T>
std::vector<T> TextEncoder<T>::forward(std::span<const Token> tokens, Cache* cache) const {
    if (tokens.empty()) {
        throw InvalidArgument("text encoder: empty token sequence");
    }
    if (tokens.size() > config.context) {
        throw InvalidArgument("text encoder: " + std::to_string(tokens.size()) +
                              " tokens exceed the context of " + std::to_string(config.context));
    }
    const std::size_t n = tokens.size();
    const std::size_t w = config.width;
    Mat<T> x(n, w);
    for (std::size_t i = 0; i < n; ++i) {
        const Token t = tokens[i];
        if (t < 0 || static_cast<std::size_t>(t) >= config.vocab) {
            throw InvalidArgument("text encoder: token id " + std::to_string(t) +
                                  " outside the base vocabulary");
        }
        const T* e = tok_emb.value.data() + static_cast<std::size_t>(t) * w;
        const T* p = pos.value.data() + i * w;
        T* xr = x.row(i);
        for (std::size_t k = 0; k < w; ++k) {
            xr[k] = e[k] + p[k];
        }
    }
    if (cache != nullptr) {
        cache->tokens.assign(tokens.begin(), tokens.end());
        cache->blocks.resize(blocks.size());
    }
    Mat<T> next;
    for (std::size_t l = 0; l < blocks.size(); ++l) {
        blocks[l].forward(x, next, cache != nullptr ? &cache->blocks[l] : nullptr);
        std::swap(x, next);
    }
    Mat<T> ln_out;
    ln_f.forward(x, ln_out, cache != nullptr ? &cache->ln_f : nullptr);
    Mat<T> first(1, w);
    std::copy(ln_out.row(0), ln_out.row(0) + w, first.row(0));
    Mat<T> out;
    head.forward(first, out);
    if (cache != nullptr) {
        cache->ln_out = std::move(ln_out);
        cache->first = std::move(first);
    }
    return out.data;
}

template <typename T>
void TextEncoder<T>::backward(const Cache& cache, std::span<const T> d_raw) {
    const std::size_t n = cache.tokens.size();
    const std::size_t w = config.width;
    Mat<T> d_out(1, config.embed_dim);
    std::copy(d_raw.begin(), d_raw.end(), d_out.data.begin());
    Mat<T> d_first(1, w);
    head.backward(cache.first, d_out, &d_first, true);
    Mat<T> d_ln(n, w);
    std::copy(d_first.row(0), d_first.row(0) + w, d_ln.row(0));
    Mat<T> dx(n, w);
    ln_f.backward(cache.ln_f, d_ln, dx, true);
    for (std::size_t l = blocks.size(); l-- > 0;) {
        Mat<T> d_in(n, w);
        blocks[l].backward(cache.blocks[l], dx, d_in, true);
        std::swap(dx, d_in);
    }
    for (std::size_t i = 0; i < n; ++i) {
        const auto t = static_cast<std::size_t>(cache.tokens[i]);
        axpy(T(1), dx.row(i), tok_emb.grad.data() + t * w, w);
        axpy(T(1), dx.row(i), pos.grad.data() + i * w, w);
    }
}

template <typename T>
void TextEncoder<T>::collect(ParamList<T>& out) {
    out.push_back(&tok_emb);
    out.push_back(&pos);
    for (auto& b : blocks) {
        b.collect(out);
    }
    ln_f.collect(out);
    head.collect(out);
}

// ---------------------------------------------------------------------------
// Embedding entry points

std::vector<std::pair<const Raster*, int>> unique_frames(const std::array<const Raster*, 3>& frames) {
    std::vector<std::pair<const Raster*, int>> out;
    for (const Raster* f : frames) {
        auto it = std::find_if(out.begin(), out.end(), [&](const auto& p) { return p.first == f; });
        if (it == out.end()) {
            out.emplace_back(f, 1);
        } else {
            ++it->second;
        }
    }
    return out;
}

template <typename T>
std::vector<T> encode_image(const VisionEncoder<T>& vision,
                            const std::array<const Raster*, 3>& frames) {
    std::vector<T> avg(vision.config.embed_dim, T(0));
    for (const auto& [frame, count] : unique_frames(frames)) {
        const auto raw = vision.forward(*frame, nullptr);
        axpy(static_cast<T>(count) / T(3), raw.data(), avg.data(), avg.size());
    }
    return l2_normalized<T>(avg);
}

template <typename T>
std::vector<T> encode_record_image(const VisionEncoder<T>& vision, const StickerRecord& record) {
    return encode_image(vision, select_frames(record));
}

std::span<const Token> strip_padding(std::span<const Token> tokens, std::size_t context) {
    std::size_t len = tokens.size();
    while (len > 0 && tokens[len - 1] == Tokenizer::kPad) {
        --len;
    }
    if (len == 0) {
        throw InvalidArgument("encode_text: empty token sequence");
    }
    for (std::size_t i = 0; i < len; ++i) {
        if (tokens[i] == Tokenizer::kPad) {
            throw InvalidArgument("encode_text: padding must be trailing");
        }
    }
    if (len > context) {
        throw InvalidArgument("encode_text: " + std::to_string(len) +
                              " tokens exceed the context of " + std::to_string(context));
    }
    return tokens.first(len);
}

template <typename T>
std::vector<T> encode_text(const TextEncoder<T>& text, std::span<const Token> tokens) {
    const auto raw = text.forward(strip_padding(tokens, text.config.context), nullptr);
    return l2_normalized<T>(raw);
}

template struct VisionEncoder<float>;
template struct VisionEncoder<double>;
template struct TextEncoder<float>;
template struct TextEncoder<double>;
template std::vector<float> encode_image(const VisionEncoder<float>&,
                                         const std::array<const Raster*, 3>&);
template std::vector<double> encode_image(const VisionEncoder<double>&,
                                          const std::array<const Raster*, 3>&);
template std::vector<float> encode_record_image(const VisionEncoder<float>&, const StickerRecord&);
template std::vector<double> encode_record_image(const VisionEncoder<double>&,
                                                 const StickerRecord&);
template std::vector<float> encode_text(const TextEncoder<float>&, std::span<const Token>);
template std::vector<double> encode_text(const TextEncoder<double>&, std::span<const Token>);

}  // namespace sticker
