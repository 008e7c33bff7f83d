#include "sticker/grad_check.hpp"

#include <cmath>
#include <numeric>

#include "sticker/rng.hpp"

namespace sticker {

GradCheckReport grad_check(const std::function<double(bool with_grads)>& loss,
                           ParamList<double>& params, const GradCheckOptions& options) {
    GradCheckReport report;
    for (auto* p : params) {
        p->zero_grad();
    }
    const double base = loss(true);
    if (!std::isfinite(base)) {
        report.ok = false;
        report.failure = "<initial evaluation>";
        return report;
    }
    std::vector<std::vector<double>> analytic;
    analytic.reserve(params.size());
    for (auto* p : params) {
        analytic.push_back(p->grad);
    }

    Rng rng(hash_combine(options.seed, 0x6C4ECULL));
    for (std::size_t t = 0; t < params.size(); ++t) {
        auto* p = params[t];
        const std::size_t n = p->size();
        const auto wanted = static_cast<std::size_t>(std::ceil(options.fraction * static_cast<double>(n)));
        const std::size_t count = std::min(n, std::max(wanted, options.min_per_tensor));
        std::vector<std::size_t> order(n);
        std::iota(order.begin(), order.end(), std::size_t{0});
        rng.shuffle(order.begin(), order.end());
        for (std::size_t s = 0; s < count; ++s) {
            const std::size_t i = order[s];
            const double original = p->value[i];
            p->value[i] = original + options.eps;
            const double up = loss(false);
            p->value[i] = original - options.eps;
            const double down = loss(false);
            p->value[i] = original;
            if (!std::isfinite(up) || !std::isfinite(down)) {
                report.ok = false;
                report.failure = p->name + "[" + std::to_string(i) + "]";
                return report;
            }
            const double numeric = (up - down) / (2.0 * options.eps);
            const double a = analytic[t][i];
            const double rel = std::abs(a - numeric) / std::max(1e-8, std::abs(a) + std::abs(numeric));
            ++report.checked;
            if (rel > report.max_rel_error) {
                report.max_rel_error = rel;
                report.worst_param = p->name;
                report.worst_index = i;
            }
        }
    }
    return report;
}

}  // namespace sticker
