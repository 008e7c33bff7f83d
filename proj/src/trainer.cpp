#include "sticker/trainer.hpp"

#include <cmath>
#include <unordered_map>

#include "sticker/chat_tasks.hpp"
#include "sticker/error.hpp"
#include "sticker/evaluation.hpp"
#include "sticker/losses.hpp"

namespace sticker {

nlohmann::ordered_json StepRecord::to_json() const {
    nlohmann::ordered_json j;
    j["step"] = step;
    j["lr"] = lr;
    j["loss"] = loss;
    j["loss_c"] = loss_c;
    j["loss_t2i"] = loss_t2i;
    j["loss_i2t"] = loss_i2t;
    return j;
}

namespace {

// Epoch-wise batches over a fixed pool; the order is reshuffled per epoch from the seed.
class BatchSampler {
public:
    BatchSampler(std::vector<std::size_t> pool, std::size_t batch, std::uint64_t seed, bool shuffle)
        : pool_(std::move(pool)), batch_(batch), seed_(seed), shuffle_(shuffle) {
        if (batch_ == 0 || batch_ > pool_.size()) {
            throw InvalidArgument("batch_size " + std::to_string(batch_) +
                                  " exceeds the training set of " + std::to_string(pool_.size()));
        }
        start_epoch();
    }

    std::size_t batches_per_epoch() const { return pool_.size() / batch_; }
    std::size_t epoch() const { return epoch_; }

    // Returns true when this batch completes an epoch.
    bool next(std::vector<std::size_t>& out) {
        if (cursor_ + batch_ > order_.size()) {
            ++epoch_;
            start_epoch();
        }
        out.assign(order_.begin() + static_cast<std::ptrdiff_t>(cursor_),
                   order_.begin() + static_cast<std::ptrdiff_t>(cursor_ + batch_));
        cursor_ += batch_;
        return cursor_ + batch_ > order_.size();
    }

private:
    void start_epoch() {
        order_ = pool_;
        if (shuffle_) {
            Rng rng(hash_combine(seed_, 0xE90C0000ULL + epoch_));
            rng.shuffle(order_.begin(), order_.end());
        }
        cursor_ = 0;
    }

    std::vector<std::size_t> pool_;
    std::vector<std::size_t> order_;
    std::size_t batch_;
    std::uint64_t seed_;
    bool shuffle_;
    std::size_t cursor_ = 0;
    std::size_t epoch_ = 0;
};

void check_finite(double loss, std::size_t step) {
    if (!std::isfinite(loss)) {
        throw NumericError("non-finite loss at step " + std::to_string(step));
    }
}

template <typename T>
void emit(const TrainHooks& hooks, TrainResult& result, const StepRecord& rec) {
    result.steps.push_back(rec);
    if (hooks.log) {
        hooks.log(rec.to_json());
    }
}

template <typename T>
void optimizer_step(ModelBundle<T>& bundle, OptimizerState<T>& state, const TrainConfig& cfg,
                    double lr) {
    auto params = bundle.params();
    clip_grad_norm(params, cfg.grad_clip);
    masked_step(params, state, lr, cfg.weight_decay);
}

}  // namespace

template <typename T>
LossParts clip_objective(ModelBundle<T>& bundle, std::span<const ClipExample> batch,
                         bool with_grads) {
    const std::size_t n = batch.size();
    const std::size_t d = bundle.config.embed_dim;
    ContrastiveBatch<T> cb;
    cb.text = Mat<T>(n, d);
    cb.image = Mat<T>(n, d);
    cb.tau = bundle.tau();
    std::vector<typename TextEncoder<T>::Cache> text_cache(n);
    std::vector<T> text_norm(n);
    struct FrameWork {
        typename VisionEncoder<T>::Cache cache;
        T weight;
    };
    std::vector<std::vector<FrameWork>> frames(n);
    std::vector<T> image_norm(n);
    for (std::size_t b = 0; b < n; ++b) {
        const auto raw_t = bundle.text.forward(batch[b].text, with_grads ? &text_cache[b] : nullptr);
        text_norm[b] = l2_normalize<T>(raw_t, cb.text.row_span(b));

        std::vector<T> avg(d, T(0));
        for (const auto& [frame, count] : unique_frames(batch[b].frames)) {
            FrameWork fw;
            fw.weight = static_cast<T>(count) / T(3);
            const auto raw = bundle.vision.forward(*frame, with_grads ? &fw.cache : nullptr);
            axpy(fw.weight, raw.data(), avg.data(), d);
            frames[b].push_back(std::move(fw));
        }
        image_norm[b] = l2_normalize<T>(avg, cb.image.row_span(b));
    }

    LossParts parts;
    if (!with_grads) {
        parts.l_t2i = info_nce_t2i(cb);
        parts.l_i2t = info_nce_i2t(cb);
        parts.total = parts.l_t2i + parts.l_i2t;
        return parts;
    }
    const auto g = clip_total_grad(cb, &parts.l_t2i, &parts.l_i2t);
    parts.total = g.loss;

    std::vector<T> d_raw(d);
    for (std::size_t b = 0; b < n; ++b) {
        std::fill(d_raw.begin(), d_raw.end(), T(0));
        l2_normalize_backward<T>(cb.text.row_span(b), text_norm[b], g.d_text.row_span(b), d_raw);
        bundle.text.backward(text_cache[b], d_raw);

        std::fill(d_raw.begin(), d_raw.end(), T(0));
        l2_normalize_backward<T>(cb.image.row_span(b), image_norm[b], g.d_image.row_span(b), d_raw);
        for (auto& fw : frames[b]) {
            std::vector<T> d_frame(d);
            for (std::size_t k = 0; k < d; ++k) {
                d_frame[k] = d_raw[k] * fw.weight;
            }
            bundle.vision.backward(fw.cache, d_frame);
        }
    }
    if (!bundle.tau_clamped()) {
        bundle.log_tau.grad[0] += static_cast<T>(g.d_tau * static_cast<double>(cb.tau));
    }
    return parts;
}

template <typename T>
double lm_sequence_objective(LanguageModel<T>& lm, std::span<const std::vector<Token>> seqs,
                             bool with_grads) {
    std::size_t total = 0;
    for (const auto& s : seqs) {
        if (s.size() < 2) {
            throw InvalidArgument("lm_sequence_objective: sequences need at least two tokens");
        }
        total += s.size() - 1;
    }
    double loss = 0.0;
    for (const auto& s : seqs) {
        const std::size_t n = s.size();
        typename LanguageModel<T>::Cache cache;
        typename LanguageModel<T>::Output out;
        lm.forward(s, std::nullopt, {}, 0, out, with_grads ? &cache : nullptr);
        std::vector<Token> targets(s.begin() + 1, s.end());
        targets.push_back(Tokenizer::kPad);
        std::vector<std::uint8_t> mask(n, 1);
        mask[n - 1] = 0;
        const double scale = static_cast<double>(n - 1) / static_cast<double>(total);
        if (!with_grads) {
            loss += scale * lm_nll(out.logits, targets, mask);
            continue;
        }
        Mat<T> d_logits(n, out.logits.cols);
        loss += scale * lm_nll_grad(out.logits, targets, mask, d_logits, scale);
        lm.backward(cache, d_logits, Mat<T>(), true);
    }
    return loss;
}

template <typename T>
LlmExample<T> make_llm_example(const ModelBundle<T>& bundle, const InstructionSample& sample,
                               const std::vector<T>& target, const std::vector<T>* input_image) {
    const auto prompt = render_prompt(sample, bundle.tokenizer, bundle.config.lm.context);
    LlmExample<T> ex;
    ex.tokens = prompt.tokens;
    ex.prompt_len = prompt.tokens.size();
    ex.tokens.insert(ex.tokens.end(), sample.answer_tokens.begin(), sample.answer_tokens.end());
    if (ex.tokens.size() > bundle.config.lm.context) {
        throw InvalidArgument("training sequence exceeds the LM context");
    }
    ex.ret_index = ex.prompt_len + sample.ret_position;
    ex.slot = prompt.image_slot;
    if (ex.slot) {
        if (input_image == nullptr) {
            throw InvalidArgument("instruction has an image slot but no input image");
        }
        ex.visual = *input_image;
    }
    ex.target = target;
    return ex;
}

template <typename T>
LossParts llm_objective(ModelBundle<T>& bundle, std::span<const LlmExample<T>> batch,
                        double lambda, bool with_grads, bool body_grads) {
    const std::size_t n = batch.size();
    const std::size_t d = bundle.config.embed_dim;
    const std::size_t width = bundle.config.lm.width;
    struct Work {
        typename LanguageModel<T>::Cache cache;
        typename LanguageModel<T>::Output out;
        T ret_norm = T(0);
    };
    std::vector<Work> work(n);
    std::size_t answer_tokens = 0;
    ContrastiveBatch<T> cb;
    cb.text = Mat<T>(n, d);
    cb.image = Mat<T>(n, d);
    cb.tau = bundle.tau();
    for (std::size_t b = 0; b < n; ++b) {
        const auto& ex = batch[b];
        Work& w = work[b];
        answer_tokens += ex.tokens.size() - ex.prompt_len;
        std::vector<T> row;
        if (ex.slot) {
            row = project_visual<T>(bundle, ex.visual);
        }
        bundle.lm.forward(ex.tokens, ex.slot, row, ex.prompt_len - 1, w.out,
                          with_grads ? &w.cache : nullptr);
        Mat<T> h(1, width);
        std::copy(w.out.hiddens.row(ex.ret_index), w.out.hiddens.row(ex.ret_index) + width, h.row(0));
        Mat<T> raw;
        bundle.w_t.forward(h, raw);
        w.ret_norm = l2_normalize<T>(raw.row_span(0), cb.text.row_span(b));
        std::copy(ex.target.begin(), ex.target.end(), cb.image.row(b));
    }

    LossParts parts;
    ContrastiveGrad<T> g;
    if (with_grads) {
        g = clip_total_grad(cb, &parts.l_t2i, &parts.l_i2t);
    } else {
        parts.l_t2i = info_nce_t2i(cb);
        parts.l_i2t = info_nce_i2t(cb);
    }
    for (std::size_t b = 0; b < n; ++b) {
        const auto& ex = batch[b];
        Work& w = work[b];
        const std::size_t len = ex.tokens.size();
        const std::size_t rows = w.out.logits.rows;  // positions prompt_len-1 .. len-1
        std::vector<Token> targets(rows, Tokenizer::kPad);
        std::vector<std::uint8_t> mask(rows, 0);
        for (std::size_t r = 0; r + 1 < rows; ++r) {
            targets[r] = ex.tokens[ex.prompt_len + r];
            mask[r] = 1;
        }
        const std::size_t m = len - ex.prompt_len;
        const double scale = static_cast<double>(m) / static_cast<double>(answer_tokens);
        if (!with_grads) {
            parts.l_c += scale * lm_nll(w.out.logits, targets, mask);
            continue;
        }
        Mat<T> d_logits(rows, w.out.logits.cols);
        parts.l_c += scale * lm_nll_grad(w.out.logits, targets, mask, d_logits, scale);

        // <ret> branch: d(normalized) -> d(raw) -> W_t -> hidden row.
        Mat<T> d_hidden(len, width);
        if (lambda > 0.0) {
            std::vector<T> d_norm(d);
            for (std::size_t k = 0; k < d; ++k) {
                d_norm[k] = static_cast<T>(lambda) * g.d_text(b, k);
            }
            Mat<T> d_raw(1, d);
            l2_normalize_backward<T>(cb.text.row_span(b), w.ret_norm, d_norm, d_raw.row_span(0));
            Mat<T> h(1, width);
            std::copy(w.out.hiddens.row(ex.ret_index), w.out.hiddens.row(ex.ret_index) + width,
                      h.row(0));
            Mat<T> dh(1, width);
            bundle.w_t.backward(h, d_raw, &dh, true);
            std::copy(dh.row(0), dh.row(0) + width, d_hidden.row(ex.ret_index));
        }
        const auto d_slot = bundle.lm.backward(w.cache, d_logits, d_hidden, body_grads);
        if (ex.slot) {
            Mat<T> v(1, d);
            std::copy(ex.visual.begin(), ex.visual.end(), v.row(0));
            Mat<T> ds(1, width);
            std::copy(d_slot.begin(), d_slot.end(), ds.row(0));
            bundle.w_c.backward(v, ds, nullptr, true);
        }
    }
    parts.total = combined_loss(parts.l_c, parts.l_t2i, parts.l_i2t, lambda);
    return parts;
}

template <typename T>
TrainResult train_sticker_clip(const TrainConfig& cfg, const Manifest& manifest,
                               ModelBundle<T>& bundle, const TrainHooks& hooks) {
    cfg.validate();
    const auto train_idx = manifest.indices(Split::train);
    BatchSampler sampler(train_idx, cfg.batch_size, cfg.seed, cfg.shuffle);

    bundle.set_all_trainable(false);
    {
        ParamList<T> list;
        bundle.vision.collect(list);
        bundle.text.collect(list);
        list.push_back(&bundle.log_tau);
        for (auto* p : list) {
            p->set_trainable(true);
        }
    }
    auto params = bundle.params();
    OptimizerState<T> state(params);

    // Pair texts are fixed per record; tokenize once.
    std::vector<ClipExample> examples(manifest.records.size());
    for (std::size_t i : train_idx) {
        const auto& rec = manifest.records[i];
        examples[i].text = bundle.tokenizer.encode(build_pair_text(rec, bundle.tokenizer));
        examples[i].frames = select_frames(rec);
    }

    TrainResult result;
    std::vector<std::size_t> batch;
    std::vector<ClipExample> items;
    for (std::size_t step = 0; step < cfg.total_steps; ++step) {
        const bool epoch_end = sampler.next(batch);
        bundle.zero_grad();
        items.clear();
        for (std::size_t i : batch) {
            items.push_back(examples[i]);
        }
        const auto parts = clip_objective<T>(bundle, items, true);
        check_finite(parts.total, step);

        const double lr = cosine_lr(step, cfg);
        optimizer_step(bundle, state, cfg, lr);
        emit<T>(hooks, result, StepRecord{step, lr, parts.total, 0.0, parts.l_t2i, parts.l_i2t});

        const bool eval_now = cfg.eval_every > 0 ? (step + 1) % cfg.eval_every == 0 : epoch_end;
        if (hooks.evaluate && (eval_now || step + 1 == cfg.total_steps)) {
            nlohmann::ordered_json e;
            e["eval_step"] = step + 1;
            e["epoch"] = sampler.epoch() + 1;
            e["tau"] = static_cast<double>(bundle.tau());
            e["train"] = eval_clip_t2i(bundle, manifest, Split::train).to_json();
            if (!manifest.indices(Split::test).empty()) {
                e["test"] = eval_clip_t2i(bundle, manifest, Split::test).to_json();
            }
            result.evals.push_back(e);
            if (hooks.log) {
                hooks.log(e);
            }
        }
        if (hooks.checkpoint && cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0) {
            hooks.checkpoint(step + 1);
        }
    }
    return result;
}

template <typename T>
TrainResult pretrain_base_lm(const TrainConfig& cfg, ModelBundle<T>& bundle,
                             const TrainHooks& hooks) {
    cfg.validate();
    if (bundle.lm.extended) {
        throw InvalidState("pretrain_base_lm: the language model is already extended");
    }
    bundle.set_all_trainable(false);
    {
        ParamList<T> list;
        bundle.lm.collect(list);
        for (auto* p : list) {
            p->set_trainable(true);
        }
    }
    auto params = bundle.params();
    OptimizerState<T> state(params);
    TrainResult result;
    Rng rng(hash_combine(cfg.seed, 0x9E7A1ULL));
    std::vector<std::vector<Token>> seqs;
    for (std::size_t step = 0; step < cfg.total_steps; ++step) {
        bundle.zero_grad();
        seqs.clear();
        for (std::size_t b = 0; b < cfg.batch_size; ++b) {
            seqs.push_back(render_chat_sequence(sample_chat_task(rng), bundle.tokenizer).tokens);
        }
        const double loss = lm_sequence_objective<T>(bundle.lm, seqs, true);
        check_finite(loss, step);
        const double lr = cosine_lr(step, cfg);
        optimizer_step(bundle, state, cfg, lr);
        emit<T>(hooks, result, StepRecord{step, lr, loss, loss, 0.0, 0.0});
        if (hooks.checkpoint && cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0) {
            hooks.checkpoint(step + 1);
        }
    }
    bundle.lm_pretrained = true;
    return result;
}

template <typename T>
TrainResult train_sticker_llm(const TrainConfig& cfg, const Manifest& manifest,
                              ModelBundle<T>& bundle, const TemplateSet& templates,
                              const TrainHooks& hooks) {
    cfg.validate();
    templates.validate();
    if (!bundle.lm.extended) {
        throw InvalidState("train_sticker_llm: extend the vocabulary first");
    }
    const auto train_idx = manifest.indices(Split::train);
    BatchSampler sampler(train_idx, cfg.batch_size, cfg.seed, cfg.shuffle);
    auto params = bundle.params();
    OptimizerState<T> state(params);

    // The vision encoder is frozen, so every image embedding is computed once.
    std::vector<std::vector<T>> image_emb(manifest.records.size());
    for (std::size_t i = 0; i < manifest.records.size(); ++i) {
        image_emb[i] = encode_record_image(bundle.vision, manifest.records[i]);
    }
    std::unordered_map<StickerId, std::size_t> position;
    for (std::size_t i = 0; i < manifest.records.size(); ++i) {
        position[manifest.records[i].id] = i;
    }

    TrainResult result;
    std::vector<std::size_t> batch;
    std::vector<LlmExample<T>> items;
    for (std::size_t step = 0; step < cfg.total_steps; ++step) {
        sampler.next(batch);
        bundle.zero_grad();
        Rng rng(hash_combine(cfg.seed, 0x11A0000ULL + step));
        items.clear();
        for (std::size_t i : batch) {
            const auto sample =
                sample_instruction(manifest.records[i], manifest, templates, bundle.tokenizer, rng);
            const std::vector<T>* input = nullptr;
            if (sample.input_image_id) {
                input = &image_emb[position.at(*sample.input_image_id)];
            }
            items.push_back(make_llm_example<T>(bundle, sample, image_emb[i], input));
        }
        const auto parts = llm_objective<T>(bundle, items, cfg.lambda, true);
        check_finite(parts.total, step);
        const double lr = cosine_lr(step, cfg);
        optimizer_step(bundle, state, cfg, lr);
        emit<T>(hooks, result,
                StepRecord{step, lr, parts.total, parts.l_c, parts.l_t2i, parts.l_i2t});

        const bool eval_now = cfg.eval_every > 0 && (step + 1) % cfg.eval_every == 0;
        if (hooks.evaluate && (eval_now || step + 1 == cfg.total_steps) &&
            !manifest.indices(Split::test).empty()) {
            const auto index_rows = manifest.indices(Split::test);
            std::vector<StickerId> ids;
            std::vector<std::vector<float>> rows;
            for (std::size_t i : index_rows) {
                ids.push_back(manifest.records[i].id);
                rows.emplace_back(image_emb[i].begin(), image_emb[i].end());
            }
            const RetrievalIndex index(std::move(ids), std::move(rows), bundle.vision_fingerprint());
            nlohmann::ordered_json e;
            e["eval_step"] = step + 1;
            for (auto mode : {RetrievalMode::t2i, RetrievalMode::i2i, RetrievalMode::it2i}) {
                e[std::string(to_string(mode))] =
                    eval_retrieval(bundle, manifest, index, mode, templates).to_json();
            }
            result.evals.push_back(e);
            if (hooks.log) {
                hooks.log(e);
            }
        }
        if (hooks.checkpoint && cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0) {
            hooks.checkpoint(step + 1);
        }
    }
    return result;
}

#define STICKER_OBJECTIVES(T)                                                                    \
    template LossParts clip_objective(ModelBundle<T>&, std::span<const ClipExample>, bool);      \
    template double lm_sequence_objective(LanguageModel<T>&,                                     \
                                          std::span<const std::vector<Token>>, bool);            \
    template LlmExample<T> make_llm_example(const ModelBundle<T>&, const InstructionSample&,     \
                                            const std::vector<T>&, const std::vector<T>*);       \
    template LossParts llm_objective(ModelBundle<T>&, std::span<const LlmExample<T>>, double,    \
                                     bool, bool);

STICKER_OBJECTIVES(float)
STICKER_OBJECTIVES(double)

#undef STICKER_OBJECTIVES

template TrainResult train_sticker_clip(const TrainConfig&, const Manifest&, ModelBundle<float>&,
                                        const TrainHooks&);
template TrainResult train_sticker_clip(const TrainConfig&, const Manifest&, ModelBundle<double>&,
                                        const TrainHooks&);
template TrainResult pretrain_base_lm(const TrainConfig&, ModelBundle<float>&, const TrainHooks&);
template TrainResult pretrain_base_lm(const TrainConfig&, ModelBundle<double>&, const TrainHooks&);
template TrainResult train_sticker_llm(const TrainConfig&, const Manifest&, ModelBundle<float>&,
                                       const TemplateSet&, const TrainHooks&);
template TrainResult train_sticker_llm(const TrainConfig&, const Manifest&, ModelBundle<double>&,
                                       const TemplateSet&, const TrainHooks&);

}  // namespace sticker
