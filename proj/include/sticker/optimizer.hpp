#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "sticker/tensor.hpp"

namespace sticker {

enum class Precision { f32, f64 };

struct TrainConfig {
    std::size_t batch_size = 64;
    double lr = 2e-3;
    double weight_decay = 1e-2;
    std::size_t total_steps = 1000;
    std::size_t warmup_steps = 50;
    double lambda = 1.0;
    std::uint64_t seed = 0;
    Precision precision = Precision::f32;
    double grad_clip = 1.0;  // global norm; <= 0 disables
    bool shuffle = true;
    std::size_t eval_every = 0;        // steps; 0 = once per epoch
    std::size_t checkpoint_every = 0;  // steps; 0 = only at the end

    static TrainConfig clip_defaults();
    static TrainConfig pretrain_defaults();
    static TrainConfig llm_defaults();

    // Keys absent from `j` keep the values of `base`. warmup_steps defaults to 5% of
    // total_steps when total_steps is given without it.
    static TrainConfig from_json(const nlohmann::json& j, const TrainConfig& base);
    nlohmann::ordered_json to_json() const;
    // Throws InvalidArgument on a violated invariant (e.g. warmup past the end).
    void validate() const;
};

// Linear warmup from 0 to lr, then half-cosine down to 0 at total_steps.
double cosine_lr(std::size_t step, const TrainConfig& cfg);

struct AdamW {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

template <typename T>
struct OptimizerState {
    AdamW hyper;
    std::vector<std::vector<T>> m;
    std::vector<std::vector<T>> v;
    std::uint64_t step = 0;

    OptimizerState() = default;
    explicit OptimizerState(const ParamList<T>& params);
};

// One AdamW step over every trainable element; frozen elements (and their moments) are left
// untouched. Decoupled decay only on Params flagged `decay`.
template <typename T>
void masked_step(ParamList<T>& params, OptimizerState<T>& state, double lr, double weight_decay);

// Global L2 norm over trainable gradient elements.
template <typename T>
double grad_norm(const ParamList<T>& params);

// Scales trainable gradients so their global norm is at most max_norm; returns the norm
// before clipping.
template <typename T>
double clip_grad_norm(ParamList<T>& params, double max_norm);

}  // namespace sticker
