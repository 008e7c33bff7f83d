#include "sticker/language_model.hpp"

#include <algorithm>
#include <cmath>

#include "sticker/error.hpp"

namespace sticker {
namespace {
constexpr double kInitStd = 0.02;
}

template <typename T>
LanguageModel<T>::LanguageModel(const LmConfig& cfg, bool with_special_rows)
    : config(cfg),
      extended(with_special_rows),
      ln_f("lm.ln_f", cfg.width) {
    if (cfg.base_vocab < 3) {
        throw InvalidArgument("language model: base vocabulary too small");
    }
    const std::size_t rows = cfg.base_vocab + (with_special_rows ? kSpecialTokenCount : 0);
    tok_emb = Param<T>("lm.tok_emb", {rows, cfg.width});
    pos = Param<T>("lm.pos", {cfg.context, cfg.width});
    head = Param<T>("lm.head", {rows, cfg.width}, true);
    for (std::size_t l = 0; l < cfg.layers; ++l) {
        blocks.emplace_back("lm.block" + std::to_string(l), cfg.width, cfg.heads, cfg.ff, true);
    }
}

template <typename T>
void LanguageModel<T>::init(Rng& rng) {
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
    for (auto& v : head.value) {
        v = static_cast<T>(rng.normal() * kInitStd);
    }
}

template <typename T>
void LanguageModel<T>::forward(std::span<const Token> tokens, std::optional<std::size_t> slot,
                               std::span<const T> slot_input, std::size_t logits_from,
                               Output& out, Cache* cache) const {
    const std::size_t n = tokens.size();
    const std::size_t w = config.width;
    if (n == 0) {
        throw InvalidArgument("language model: empty token sequence");
    }
    if (n > config.context) {
        throw InvalidArgument("language model: " + std::to_string(n) +
                              " tokens exceed the context of " + std::to_string(config.context));
    }
    if (slot && *slot >= n) {
        throw InvalidArgument("language model: image slot " + std::to_string(*slot) +
                              " out of range");
    }
    if (slot && slot_input.size() != w) {
        throw InvalidArgument("language model: slot input has " +
                              std::to_string(slot_input.size()) + " values, expected " +
                              std::to_string(w));
    }
    if (logits_from > n) {
        throw InvalidArgument("language model: logits_from past the sequence end");
    }

    Mat<T> x(n, w);
    for (std::size_t i = 0; i < n; ++i) {
        T* xr = x.row(i);
        if (slot && *slot == i) {
            std::copy(slot_input.begin(), slot_input.end(), xr);
            continue;
        }
        const Token t = tokens[i];
        if (t < 0 || static_cast<std::size_t>(t) >= vocab()) {
            throw InvalidArgument("language model: token id " + std::to_string(t) +
                                  " outside the vocabulary of " + std::to_string(vocab()));
        }
        const T* e = tok_emb.value.data() + static_cast<std::size_t>(t) * w;
        const T* p = pos.value.data() + i * w;
        for (std::size_t k = 0; k < w; ++k) {
            xr[k] = e[k] + p[k];
        }
    }
    if (cache != nullptr) {
        cache->tokens.assign(tokens.begin(), tokens.end());
        cache->slot = slot;
        cache->blocks.resize(blocks.size());
        cache->logits_from = logits_from;
    }
    Mat<T> next;
    for (std::size_t l = 0; l < blocks.size(); ++l) {
        blocks[l].forward(x, next, cache != nullptr ? &cache->blocks[l] : nullptr);
        std::swap(x, next);
    }
    ln_f.forward(x, out.hiddens, cache != nullptr ? &cache->ln_f : nullptr);

    const std::size_t v = vocab();
    out.logits_from = logits_from;
    out.logits = Mat<T>(n - logits_from, v);
    for (std::size_t i = logits_from; i < n; ++i) {
        const T* h = out.hiddens.row(i);
        T* lr = out.logits.row(i - logits_from);
        for (std::size_t r = 0; r < v; ++r) {
            lr[r] = dot(h, head.value.data() + r * w, w);
        }
    }
}

template <typename T>
std::vector<T> LanguageModel<T>::backward(const Cache& cache, const Mat<T>& d_logits,
                                          const Mat<T>& d_hiddens, bool body_grads) {
    const std::size_t n = cache.tokens.size();
    const std::size_t w = config.width;
    const std::size_t v = vocab();
    // Hidden states are recomputed from the LN cache: h = xhat * gamma + beta.
    Mat<T> dh(n, w);
    if (!d_hiddens.data.empty()) {
        dh = d_hiddens;
    }
    for (std::size_t i = cache.logits_from; i < n; ++i) {
        const T* dl = d_logits.row(i - cache.logits_from);
        const T* xh = cache.ln_f.xhat.row(i);
        std::vector<T> h(w);
        for (std::size_t k = 0; k < w; ++k) {
            h[k] = xh[k] * ln_f.gamma.value[k] + ln_f.beta.value[k];
        }
        T* dhr = dh.row(i);
        for (std::size_t r = 0; r < v; ++r) {
            const T g = dl[r];
            if (g == T(0)) {
                continue;
            }
            axpy(g, head.value.data() + r * w, dhr, w);
            axpy(g, h.data(), head.grad.data() + r * w, w);
        }
    }
    Mat<T> dx(n, w);
    ln_f.backward(cache.ln_f, dh, dx, body_grads);
    for (std::size_t l = blocks.size(); l-- > 0;) {
        Mat<T> d_in(n, w);
        blocks[l].backward(cache.blocks[l], dx, d_in, body_grads);
        std::swap(dx, d_in);
    }
    std::vector<T> d_slot;
    for (std::size_t i = 0; i < n; ++i) {
        if (cache.slot && *cache.slot == i) {
            d_slot.assign(dx.row(i), dx.row(i) + w);
            continue;
        }
        const auto t = static_cast<std::size_t>(cache.tokens[i]);
        axpy(T(1), dx.row(i), tok_emb.grad.data() + t * w, w);
        if (body_grads) {
            axpy(T(1), dx.row(i), pos.grad.data() + i * w, w);
        }
    }
    return d_slot;
}

template <typename T>
void LanguageModel<T>::collect(ParamList<T>& out) {
    out.push_back(&tok_emb);
    out.push_back(&pos);
    for (auto& b : blocks) {
        b.collect(out);
    }
    ln_f.collect(out);
    out.push_back(&head);
}

template <typename T>
LanguageModel<T> extend_vocab(const LanguageModel<T>& lm, Rng& rng, double noise_std) {
    if (lm.extended) {
        throw InvalidState("extend_vocab: the special tokens were already added");
    }
    LanguageModel<T> ext = lm;
    ext.extended = true;
    ParamList<T> params;
    ext.collect(params);
    for (auto* p : params) {
        p->set_trainable(false);
    }
    const std::size_t base = lm.vocab();
    const std::size_t w = lm.config.width;
    auto grow = [&](const Param<T>& src, Param<T>& dst) {
        std::vector<double> mean(w, 0.0);
        for (std::size_t r = 0; r < base; ++r) {
            for (std::size_t k = 0; k < w; ++k) {
                mean[k] += static_cast<double>(src.value[r * w + k]);
            }
        }
        for (auto& m : mean) {
            m /= static_cast<double>(base);
        }
        dst = Param<T>(src.name, {base + kSpecialTokenCount, w}, src.decay);
        std::copy(src.value.begin(), src.value.end(), dst.value.begin());
        std::fill(dst.trainable.begin(), dst.trainable.end(), 0);
        for (std::size_t r = base; r < base + kSpecialTokenCount; ++r) {
            for (std::size_t k = 0; k < w; ++k) {
                dst.value[r * w + k] = static_cast<T>(mean[k] + rng.normal() * noise_std);
                dst.trainable[r * w + k] = 1;
            }
        }
    };
    grow(lm.tok_emb, ext.tok_emb);
    grow(lm.head, ext.head);
    return ext;
}

template <typename T>
std::size_t argmax_lowest(std::span<const T> values) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < values.size(); ++i) {
        if (values[i] > values[best]) {
            best = i;
        }
    }
    return best;
}

template <typename T>
std::vector<Token> greedy_decode(const LanguageModel<T>& lm, std::span<const Token> prompt,
                                 std::size_t max_new, std::span<const Token> stop,
                                 std::optional<std::size_t> slot, std::span<const T> slot_input) {
    if (prompt.size() > lm.config.context) {
        throw InvalidArgument("greedy_decode: prompt of " + std::to_string(prompt.size()) +
                              " tokens exceeds the context of " +
                              std::to_string(lm.config.context));
    }
    std::vector<Token> seq(prompt.begin(), prompt.end());
    std::vector<Token> generated;
    typename LanguageModel<T>::Output out;
    while (generated.size() < max_new && seq.size() < lm.config.context) {
        lm.forward(seq, slot, slot_input, seq.size() - 1, out, nullptr);
        const auto next = static_cast<Token>(argmax_lowest<T>(out.logits.row_span(0)));
        generated.push_back(next);
        seq.push_back(next);
        if (next == Tokenizer::kEos || std::find(stop.begin(), stop.end(), next) != stop.end()) {
            break;
        }
    }
    return generated;
}

template struct LanguageModel<float>;
template struct LanguageModel<double>;
template LanguageModel<float> extend_vocab(const LanguageModel<float>&, Rng&, double);
template LanguageModel<double> extend_vocab(const LanguageModel<double>&, Rng&, double);
template std::size_t argmax_lowest(std::span<const float>);
template std::size_t argmax_lowest(std::span<const double>);
template std::vector<Token> greedy_decode(const LanguageModel<float>&, std::span<const Token>,
                                          std::size_t, std::span<const Token>,
                                          std::optional<std::size_t>, std::span<const float>);
template std::vector<Token> greedy_decode(const LanguageModel<double>&, std::span<const Token>,
                                          std::size_t, std::span<const Token>,
                                          std::optional<std::size_t>, std::span<const double>);

}  // namespace sticker
