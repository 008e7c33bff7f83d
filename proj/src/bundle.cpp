#include "sticker/bundle.hpp"

#include <cmath>

#include "sticker/digest.hpp"
#include "sticker/error.hpp"

namespace sticker {

BundleConfig BundleConfig::for_vocab(std::size_t base_vocab) {
    BundleConfig c;
    c.text.vocab = base_vocab;
    c.lm.base_vocab = base_vocab;
    c.vision.embed_dim = c.embed_dim;
    c.text.embed_dim = c.embed_dim;
    return c;
}

template <typename T>
ModelBundle<T>::ModelBundle(const BundleConfig& cfg, Tokenizer tok)
    : config(cfg),
      tokenizer(std::move(tok)),
      vision(cfg.vision),
      text(cfg.text),
      lm(cfg.lm, false),
      w_t("proj.w_t", cfg.lm.width, cfg.embed_dim, false),
      w_c("proj.w_c", cfg.embed_dim, cfg.lm.width, false),
      log_tau("log_tau", {1}) {
    const auto base = static_cast<std::size_t>(tokenizer.base_size());
    if (cfg.text.vocab != base || cfg.lm.base_vocab != base) {
        throw InvalidArgument("bundle: model vocabulary does not match the tokenizer");
    }
    if (cfg.vision.embed_dim != cfg.embed_dim || cfg.text.embed_dim != cfg.embed_dim) {
        throw InvalidArgument("bundle: encoder output sizes disagree with embed_dim");
    }
    log_tau.value[0] = static_cast<T>(std::log(cfg.init_tau));
}

template <typename T>
void ModelBundle<T>::init(std::uint64_t seed) {
    Rng vision_rng(hash_combine(seed, 1));
    Rng text_rng(hash_combine(seed, 2));
    Rng lm_rng(hash_combine(seed, 3));
    Rng proj_rng(hash_combine(seed, 4));
    vision.init(vision_rng);
    text.init(text_rng);
    lm.init(lm_rng);
    w_t.init(proj_rng, 1.0 / std::sqrt(static_cast<double>(config.lm.width)));
    w_c.init(proj_rng, 0.02);
    log_tau.value[0] = static_cast<T>(std::log(config.init_tau));
}

template <typename T>
T ModelBundle<T>::tau() const {
    return std::max(static_cast<T>(std::exp(log_tau.value[0])), static_cast<T>(config.min_tau));
}

template <typename T>
bool ModelBundle<T>::tau_clamped() const {
    return std::exp(static_cast<double>(log_tau.value[0])) < config.min_tau;
}

template <typename T>
ParamList<T> ModelBundle<T>::params() {
    ParamList<T> out;
    vision.collect(out);
    text.collect(out);
    out.push_back(&log_tau);
    lm.collect(out);
    w_t.collect(out);
    w_c.collect(out);
    return out;
}

template <typename T>
std::vector<const Param<T>*> ModelBundle<T>::params() const {
    auto list = const_cast<ModelBundle<T>*>(this)->params();
    return {list.begin(), list.end()};
}

template <typename T>
void ModelBundle<T>::zero_grad() {
    for (auto* p : params()) {
        p->zero_grad();
    }
}

template <typename T>
void ModelBundle<T>::set_all_trainable(bool on) {
    for (auto* p : params()) {
        p->set_trainable(on);
    }
}

template <typename T>
void ModelBundle<T>::extend(Rng& rng, double noise_std) {
    if (lm.extended) {
        throw InvalidState("extend_vocab: the special tokens were already added");
    }
    auto extended = extend_vocab(lm, rng, noise_std);
    set_all_trainable(false);
    lm = std::move(extended);
    w_t.weight.set_trainable(true);
    w_c.weight.set_trainable(true);
}

template <typename T>
std::string ModelBundle<T>::vision_fingerprint() const {
    ParamList<T> list;
    const_cast<VisionEncoder<T>&>(vision).collect(list);
    Sha256 h;
    for (const auto* p : list) {
        h.update(p->name);
        for (auto s : p->shape) {
            const auto v = static_cast<std::uint64_t>(s);
            h.update_values<std::uint64_t>({&v, 1});
        }
        std::vector<float> values(p->value.begin(), p->value.end());
        h.update_values<float>(values);
    }
    return h.hex();
}

template <typename T>
std::string masked_digest(const ModelBundle<T>& bundle, bool trainable) {
    Sha256 h;
    for (const auto* p : bundle.params()) {
        h.update(p->name);
        for (std::size_t i = 0; i < p->size(); ++i) {
            if ((p->trainable[i] != 0) == trainable) {
                const auto idx = static_cast<std::uint64_t>(i);
                h.update_values<std::uint64_t>({&idx, 1});
                h.update_values<T>({&p->value[i], 1});
            }
        }
    }
    return h.hex();
}

template <typename U, typename T>
ModelBundle<U> cast_bundle(const ModelBundle<T>& src) {
    ModelBundle<U> dst(src.config, src.tokenizer);
    if (src.lm.extended) {
        dst.lm = LanguageModel<U>(src.config.lm, true);
    }
    dst.lm_pretrained = src.lm_pretrained;
    auto from = src.params();
    auto to = dst.params();
    for (std::size_t i = 0; i < from.size(); ++i) {
        to[i]->value.assign(from[i]->value.begin(), from[i]->value.end());
        to[i]->trainable = from[i]->trainable;
        to[i]->grad.assign(to[i]->value.size(), U(0));
    }
    return dst;
}

template <typename T>
std::vector<T> project_visual(const ModelBundle<T>& bundle, std::span<const T> visual) {
    if (visual.size() != bundle.config.embed_dim) {
        throw InvalidArgument("visual embedding has " + std::to_string(visual.size()) +
                              " values, expected " + std::to_string(bundle.config.embed_dim));
    }
    Mat<T> v(1, visual.size());
    std::copy(visual.begin(), visual.end(), v.data.begin());
    Mat<T> out;
    bundle.w_c.forward(v, out);
    return out.data;
}

template <typename T>
void lm_forward(const ModelBundle<T>& bundle, std::span<const Token> tokens,
                std::optional<std::span<const T>> visual, std::optional<std::size_t> slot,
                std::size_t logits_from, typename LanguageModel<T>::Output& out,
                typename LanguageModel<T>::Cache* cache) {
    if (visual.has_value() != slot.has_value()) {
        throw InvalidArgument("lm_forward: a visual embedding needs an image slot and vice versa");
    }
    std::vector<T> row;
    if (visual) {
        row = project_visual(bundle, *visual);
    }
    bundle.lm.forward(tokens, slot, row, logits_from, out, cache);
}

template <typename T>
std::vector<T> extract_ret_embedding(std::span<const T> hidden, const Linear<T>& w_t) {
    Mat<T> h(1, hidden.size());
    std::copy(hidden.begin(), hidden.end(), h.data.begin());
    Mat<T> out;
    w_t.forward(h, out);
    return l2_normalized<T>(out.data);
}

template struct ModelBundle<float>;
template struct ModelBundle<double>;
template std::string masked_digest(const ModelBundle<float>&, bool);
template std::string masked_digest(const ModelBundle<double>&, bool);
template ModelBundle<float> cast_bundle<float, float>(const ModelBundle<float>&);
template ModelBundle<double> cast_bundle<double, float>(const ModelBundle<float>&);
template ModelBundle<float> cast_bundle<float, double>(const ModelBundle<double>&);
template ModelBundle<double> cast_bundle<double, double>(const ModelBundle<double>&);
template std::vector<float> project_visual(const ModelBundle<float>&, std::span<const float>);
template std::vector<double> project_visual(const ModelBundle<double>&, std::span<const double>);
template void lm_forward(const ModelBundle<float>&, std::span<const Token>,
                         std::optional<std::span<const float>>, std::optional<std::size_t>,
                         std::size_t, LanguageModel<float>::Output&, LanguageModel<float>::Cache*);
template void lm_forward(const ModelBundle<double>&, std::span<const Token>,
                         std::optional<std::span<const double>>, std::optional<std::size_t>,
                         std::size_t, LanguageModel<double>::Output&,
                         LanguageModel<double>::Cache*);
template std::vector<float> extract_ret_embedding(std::span<const float>, const Linear<float>&);
template std::vector<double> extract_ret_embedding(std::span<const double>, const Linear<double>&);

}  // namespace sticker
