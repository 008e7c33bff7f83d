#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "sticker/tensor.hpp"

namespace sticker {

struct GradCheckOptions {
    double eps = 1e-3;
    double fraction = 0.01;
    std::size_t min_per_tensor = 50;
    std::uint64_t seed = 0;
};

struct GradCheckReport {
    double max_rel_error = 0.0;
    std::string worst_param;
    std::size_t worst_index = 0;
    std::size_t checked = 0;
    bool ok = true;        // false when a loss evaluation was non-finite
    std::string failure;   // parameter path of the non-finite evaluation
};

// `loss` evaluates the scalar objective; with `with_grads` it must also accumulate analytic
// gradients into every Param::grad (which grad_check zeroes first). Each tensor is probed on
// a random subsample of max(fraction * size, min_per_tensor) elements (capped at its size)
// with central differences. Relative error = |a - n| / max(1e-8, |a| + |n|).
GradCheckReport grad_check(const std::function<double(bool with_grads)>& loss,
                           ParamList<double>& params, const GradCheckOptions& options = {});

}  // namespace sticker

namespace sticker {

struct NamedGradCheck {
    std::string name;
    GradCheckReport report;
};

// Double-precision finite-difference suites on small random models:
//   "losses": both InfoNCE directions and clip_total wrt raw (pre-normalization)
//             embeddings and log tau, and lm_nll wrt logits;
//   "clip":   the full contrastive objective through both encoders;
//   "llm":    next-token loss through the whole LM, and the combined objective through the
//             retrieval rows, W_t and W_c.
std::vector<NamedGradCheck> run_grad_checks(std::string_view component, std::uint64_t seed = 1,
                                            const GradCheckOptions& options = {});

}  // namespace sticker
