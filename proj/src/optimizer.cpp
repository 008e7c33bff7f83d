#include "sticker/optimizer.hpp"

#include <cmath>
#include <numbers>

#include "sticker/error.hpp"

namespace sticker {

TrainConfig TrainConfig::clip_defaults() {
    TrainConfig c;
    c.batch_size = 64;
    c.lr = 2e-3;
    c.weight_decay = 1e-2;
    c.total_steps = 900;
    c.warmup_steps = 45;
    c.seed = 7;
    return c;
}

TrainConfig TrainConfig::pretrain_defaults() {
    TrainConfig c;
    c.batch_size = 32;
    c.lr = 3e-3;
    c.weight_decay = 1e-2;
    c.total_steps = 1500;
    c.warmup_steps = 75;
    c.seed = 11;
    return c;
}

TrainConfig TrainConfig::llm_defaults() {
    TrainConfig c;
    c.batch_size = 32;
    // Only a few thousand parameters train against frozen features; lr 2e-3 barely moves
    // the retrieval head in a 10 minute budget.
    c.lr = 2e-2;
    c.weight_decay = 0.0;
    c.total_steps = 2000;
    c.warmup_steps = 100;
    c.lambda = 1.0;
    c.seed = 13;
    return c;
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j, const TrainConfig& base) {
    TrainConfig c = base;
    try {
        if (!j.is_object()) {
            throw InvalidArgument("training config must be a JSON object");
        }
        for (const auto& [key, value] : j.items()) {
            if (key == "batch_size") c.batch_size = value.get<std::size_t>();
            else if (key == "lr") c.lr = value.get<double>();
            else if (key == "weight_decay") c.weight_decay = value.get<double>();
            else if (key == "total_steps") c.total_steps = value.get<std::size_t>();
            else if (key == "warmup_steps") c.warmup_steps = value.get<std::size_t>();
            else if (key == "lambda") c.lambda = value.get<double>();
            else if (key == "seed") c.seed = value.get<std::uint64_t>();
            else if (key == "grad_clip") c.grad_clip = value.get<double>();
            else if (key == "shuffle") c.shuffle = value.get<bool>();
            else if (key == "eval_every") c.eval_every = value.get<std::size_t>();
            else if (key == "checkpoint_every") c.checkpoint_every = value.get<std::size_t>();
            else if (key == "precision") {
                const auto p = value.get<std::string>();
                if (p == "single") c.precision = Precision::f32;
                else if (p == "double") c.precision = Precision::f64;
                else throw InvalidArgument("precision must be 'single' or 'double'");
            } else {
                throw InvalidArgument("unknown training config key '" + key + "'");
            }
        }
    } catch (const nlohmann::json::exception& e) {
        throw InvalidArgument(std::string("training config: ") + e.what());
    }
    if (j.contains("total_steps") && !j.contains("warmup_steps")) {
        c.warmup_steps = static_cast<std::size_t>(std::llround(0.05 * static_cast<double>(c.total_steps)));
    }
    c.validate();
    return c;
}

nlohmann::ordered_json TrainConfig::to_json() const {
    nlohmann::ordered_json j;
    j["batch_size"] = batch_size;
    j["lr"] = lr;
    j["weight_decay"] = weight_decay;
    j["total_steps"] = total_steps;
    j["warmup_steps"] = warmup_steps;
    j["lambda"] = lambda;
    j["seed"] = seed;
    j["precision"] = precision == Precision::f32 ? "single" : "double";
    j["grad_clip"] = grad_clip;
    j["shuffle"] = shuffle;
    j["eval_every"] = eval_every;
    j["checkpoint_every"] = checkpoint_every;
    return j;
}

void TrainConfig::validate() const {
    if (batch_size == 0) throw InvalidArgument("batch_size must be positive");
    if (!(lr > 0.0)) throw InvalidArgument("lr must be positive");
    if (!(weight_decay >= 0.0)) throw InvalidArgument("weight_decay must be non-negative");
    if (total_steps == 0) throw InvalidArgument("total_steps must be positive");
    if (warmup_steps > total_steps) throw InvalidArgument("warmup_steps exceeds total_steps");
    if (!(lambda >= 0.0)) throw InvalidArgument("lambda must be non-negative");
}

double cosine_lr(std::size_t step, const TrainConfig& cfg) {
    if (step >= cfg.total_steps) {
        return 0.0;
    }
    if (step < cfg.warmup_steps) {
        return cfg.lr * static_cast<double>(step) / static_cast<double>(cfg.warmup_steps);
    }
    const double progress = static_cast<double>(step - cfg.warmup_steps) /
                            static_cast<double>(cfg.total_steps - cfg.warmup_steps);
    return cfg.lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

template <typename T>
OptimizerState<T>::OptimizerState(const ParamList<T>& params) {
    for (const auto* p : params) {
        m.emplace_back(p->size(), T(0));
        v.emplace_back(p->size(), T(0));
    }
}

template <typename T>
void masked_step(ParamList<T>& params, OptimizerState<T>& state, double lr, double weight_decay) {
    if (state.m.size() != params.size()) {
        throw InvalidArgument("masked_step: optimizer state has " +
                              std::to_string(state.m.size()) + " tensors, parameters " +
                              std::to_string(params.size()));
    }
    ++state.step;
    const double b1 = state.hyper.beta1;
    const double b2 = state.hyper.beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
    for (std::size_t t = 0; t < params.size(); ++t) {
        auto* p = params[t];
        auto& m = state.m[t];
        auto& v = state.v[t];
        if (m.size() != p->size() || p->grad.size() != p->size() ||
            p->trainable.size() != p->size()) {
            throw InvalidArgument("masked_step: shape mismatch for '" + p->name + "'");
        }
        const double decay = p->decay ? weight_decay : 0.0;
        for (std::size_t i = 0; i < p->size(); ++i) {
            if (p->trainable[i] == 0) {
                continue;
            }
            const double g = static_cast<double>(p->grad[i]);
            const double mi = b1 * static_cast<double>(m[i]) + (1.0 - b1) * g;
            const double vi = b2 * static_cast<double>(v[i]) + (1.0 - b2) * g * g;
            m[i] = static_cast<T>(mi);
            v[i] = static_cast<T>(vi);
            const double update = (mi / c1) / (std::sqrt(vi / c2) + state.hyper.eps);
            const double x = static_cast<double>(p->value[i]);
            p->value[i] = static_cast<T>(x - lr * (update + decay * x));
        }
    }
}

template <typename T>
double grad_norm(const ParamList<T>& params) {
    double ss = 0.0;
    for (const auto* p : params) {
        for (std::size_t i = 0; i < p->size(); ++i) {
            if (p->trainable[i] != 0) {
                const double g = static_cast<double>(p->grad[i]);
                ss += g * g;
            }
        }
    }
    return std::sqrt(ss);
}

template <typename T>
double clip_grad_norm(ParamList<T>& params, double max_norm) {
    const double norm = grad_norm(params);
    if (max_norm > 0.0 && norm > max_norm) {
        const T scale = static_cast<T>(max_norm / norm);
        for (auto* p : params) {
            for (std::size_t i = 0; i < p->size(); ++i) {
                if (p->trainable[i] != 0) {
                    p->grad[i] *= scale;
                }
            }
        }
    }
    return norm;
}

template struct OptimizerState<float>;
template struct OptimizerState<double>;
template void masked_step(ParamList<float>&, OptimizerState<float>&, double, double);
template void masked_step(ParamList<double>&, OptimizerState<double>&, double, double);
template double grad_norm(const ParamList<float>&);
template double grad_norm(const ParamList<double>&);
template double clip_grad_norm(ParamList<float>&, double);
template double clip_grad_norm(ParamList<double>&, double);

}  // namespace sticker
