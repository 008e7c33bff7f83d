#pragma once

#include <array>
#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include <json.hpp>

#include "sticker/bundle.hpp"
#include "sticker/corpus.hpp"
#include "sticker/optimizer.hpp"
#include "sticker/templates.hpp"

namespace sticker {

struct StepRecord {
    std::size_t step = 0;
    double lr = 0.0;
    double loss = 0.0;
    double loss_c = 0.0;
    double loss_t2i = 0.0;
    double loss_i2t = 0.0;

    nlohmann::ordered_json to_json() const;
};

struct TrainHooks {
    // Receives every step record and every evaluation object, in order.
    std::function<void(const nlohmann::ordered_json&)> log;
    // Called after step s (1-based) when cfg.checkpoint_every divides s.
    std::function<void(std::size_t step)> checkpoint;
    // Skip the periodic evaluation (used by short runs and tests).
    bool evaluate = true;
};

struct TrainResult {
    std::vector<StepRecord> steps;
    std::vector<nlohmann::ordered_json> evals;
};

struct LossParts {
    double total = 0.0;
    double l_c = 0.0;
    double l_t2i = 0.0;
    double l_i2t = 0.0;
};

// One image-text pair for the contrastive objective.
struct ClipExample {
    std::vector<Token> text;
    std::array<const Raster*, 3> frames{};
};

// clip_total over the batch after encoding and normalizing both sides. With `with_grads`
// the gradients land in the vision/text encoders and log_tau (unless tau is clamped).
template <typename T>
LossParts clip_objective(ModelBundle<T>& bundle, std::span<const ClipExample> batch,
                         bool with_grads);

// Token-mean next-token loss of the LM over whole sequences (every position but the last).
template <typename T>
double lm_sequence_objective(LanguageModel<T>& lm, std::span<const std::vector<Token>> seqs,
                             bool with_grads);

// One rendered instruction/answer sequence for the retrieval-token objective.
template <typename T>
struct LlmExample {
    std::vector<Token> tokens;             // prompt followed by the answer
    std::size_t prompt_len = 0;
    std::size_t ret_index = 0;             // position of <ret> in tokens
    std::optional<std::size_t> slot;       // image placeholder position
    std::vector<T> visual;                 // unit image embedding for the slot
    std::vector<T> target;                 // unit image embedding of the target sticker
};

// L_c (answer tokens, token mean over the batch) + lambda (L_t2i + L_i2t) where the text
// side is normalize(W_t h_<ret>) and tau is the bundle's frozen value. Gradients reach the
// LM embedding/head tables, W_t and W_c; the LM body only when `body_grads`.
template <typename T>
LossParts llm_objective(ModelBundle<T>& bundle, std::span<const LlmExample<T>> batch,
                        double lambda, bool with_grads, bool body_grads = false);

template <typename T>
LlmExample<T> make_llm_example(const ModelBundle<T>& bundle, const InstructionSample& sample,
                               const std::vector<T>& target,
                               const std::vector<T>* input_image);

// Dual-encoder contrastive training over the train split. Vision, text and log_tau train;
// the LM and projections are left frozen.
template <typename T>
TrainResult train_sticker_clip(const TrainConfig& cfg, const Manifest& manifest,
                               ModelBundle<T>& bundle, const TrainHooks& hooks = {});

// Next-token training of the base LM on the non-retrieval chat tasks (all positions).
template <typename T>
TrainResult pretrain_base_lm(const TrainConfig& cfg, ModelBundle<T>& bundle,
                             const TrainHooks& hooks = {});

// Trains the special-token rows, W_t and W_c with L_c + lambda (L_t2i + L_i2t). The bundle
// must already be extended; every other element stays bit-identical.
template <typename T>
TrainResult train_sticker_llm(const TrainConfig& cfg, const Manifest& manifest,
                              ModelBundle<T>& bundle, const TemplateSet& templates,
                              const TrainHooks& hooks = {});

}  // namespace sticker
