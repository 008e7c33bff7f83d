#include "sticker/losses.hpp"

#include <cmath>
#include <limits>

#include "sticker/error.hpp"

namespace sticker {
namespace {

template <typename T>
std::vector<double> similarity(const ContrastiveBatch<T>& b) {
    const std::size_t n = b.text.rows;
    if (n == 0 || b.image.rows != n) {
        throw InvalidArgument("contrastive batch needs N >= 1 text and image rows of equal count");
    }
    if (b.text.cols != b.image.cols) {
        throw InvalidArgument("contrastive batch: text and image dimensions differ");
    }
    if (!(b.tau > T(0))) {
        throw InvalidArgument("contrastive batch: temperature must be positive");
    }
    std::vector<double> s(n * n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            double acc = 0.0;
            const T* t = b.text.row(i);
            const T* v = b.image.row(j);
            for (std::size_t k = 0; k < b.text.cols; ++k) {
                acc += static_cast<double>(t[k]) * static_cast<double>(v[k]);
            }
            s[i * n + j] = acc;
        }
    }
    return s;
}

// Cross-entropy of each row (or column when `columns`) of S/tau against the diagonal.
// Fills dS (same layout as S) and d tau when requested.
double directional(const std::vector<double>& s, std::size_t n, double tau, bool columns,
                   std::vector<double>* ds, double* dtau) {
    double loss = 0.0;
    std::vector<double> p(n);
    for (std::size_t i = 0; i < n; ++i) {
        auto at = [&](std::size_t j) { return columns ? s[j * n + i] : s[i * n + j]; };
        double max_z = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < n; ++j) {
            max_z = std::max(max_z, at(j) / tau);
        }
        double sum = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            p[j] = std::exp(at(j) / tau - max_z);
            sum += p[j];
        }
        loss += -(at(i) / tau - max_z - std::log(sum));
        if (ds == nullptr) {
            continue;
        }
        for (std::size_t j = 0; j < n; ++j) {
            p[j] /= sum;
            // dL_i/dz_j = p_j - [j == i]; z = s / tau.
            const double dz = (p[j] - (i == j ? 1.0 : 0.0)) / static_cast<double>(n);
            double& slot = columns ? (*ds)[j * n + i] : (*ds)[i * n + j];
            slot += dz / tau;
            *dtau += -dz * at(j) / (tau * tau);
        }
    }
    return loss / static_cast<double>(n);
}

template <typename T>
ContrastiveGrad<T> finish(const ContrastiveBatch<T>& b, const std::vector<double>& ds,
                          double loss, double dtau) {
    const std::size_t n = b.text.rows;
    const std::size_t d = b.text.cols;
    ContrastiveGrad<T> g;
    g.loss = loss;
    g.d_tau = dtau;
    g.d_text = Mat<T>(n, d);
    g.d_image = Mat<T>(n, d);
    std::vector<double> acc(d);
    for (std::size_t i = 0; i < n; ++i) {
        std::fill(acc.begin(), acc.end(), 0.0);
        for (std::size_t j = 0; j < n; ++j) {
            const T* v = b.image.row(j);
            for (std::size_t k = 0; k < d; ++k) {
                acc[k] += ds[i * n + j] * static_cast<double>(v[k]);
            }
        }
        for (std::size_t k = 0; k < d; ++k) {
            g.d_text(i, k) = static_cast<T>(acc[k]);
        }
    }
    for (std::size_t j = 0; j < n; ++j) {
        std::fill(acc.begin(), acc.end(), 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            const T* t = b.text.row(i);
            for (std::size_t k = 0; k < d; ++k) {
                acc[k] += ds[i * n + j] * static_cast<double>(t[k]);
            }
        }
        for (std::size_t k = 0; k < d; ++k) {
            g.d_image(j, k) = static_cast<T>(acc[k]);
        }
    }
    return g;
}

template <typename T>
ContrastiveGrad<T> grad_impl(const ContrastiveBatch<T>& b, bool t2i, bool i2t, double* l_t2i,
                             double* l_i2t) {
    const auto s = similarity(b);
    const std::size_t n = b.text.rows;
    const double tau = static_cast<double>(b.tau);
    std::vector<double> ds(n * n, 0.0);
    double dtau = 0.0;
    double total = 0.0;
    if (t2i) {
        const double l = directional(s, n, tau, false, &ds, &dtau);
        total += l;
        if (l_t2i != nullptr) *l_t2i = l;
    }
    if (i2t) {
        const double l = directional(s, n, tau, true, &ds, &dtau);
        total += l;
        if (l_i2t != nullptr) *l_i2t = l;
    }
    return finish(b, ds, total, dtau);
}

}  // namespace

template <typename T>
double info_nce_t2i(const ContrastiveBatch<T>& batch) {
    const auto s = similarity(batch);
    return directional(s, batch.text.rows, static_cast<double>(batch.tau), false, nullptr,
                       nullptr);
}

template <typename T>
double info_nce_i2t(const ContrastiveBatch<T>& batch) {
    const auto s = similarity(batch);
    return directional(s, batch.text.rows, static_cast<double>(batch.tau), true, nullptr,
                       nullptr);
}

template <typename T>
double clip_total(const ContrastiveBatch<T>& batch) {
    return info_nce_t2i(batch) + info_nce_i2t(batch);
}

template <typename T>
ContrastiveGrad<T> info_nce_t2i_grad(const ContrastiveBatch<T>& batch) {
    return grad_impl(batch, true, false, nullptr, nullptr);
}

template <typename T>
ContrastiveGrad<T> info_nce_i2t_grad(const ContrastiveBatch<T>& batch) {
    return grad_impl(batch, false, true, nullptr, nullptr);
}

template <typename T>
ContrastiveGrad<T> clip_total_grad(const ContrastiveBatch<T>& batch, double* l_t2i,
                                   double* l_i2t) {
    return grad_impl(batch, true, true, l_t2i, l_i2t);
}

namespace {

template <typename T>
double nll_impl(const Mat<T>& logits, std::span<const Token> targets,
                std::span<const std::uint8_t> mask, Mat<T>* d_logits, double scale) {
    if (targets.size() != logits.rows || mask.size() != logits.rows) {
        throw InvalidArgument("lm_nll: logits, targets and mask disagree in length");
    }
    std::size_t m = 0;
    for (auto b : mask) {
        m += b != 0 ? 1 : 0;
    }
    if (m == 0) {
        throw InvalidArgument("lm_nll: no unmasked positions");
    }
    if (d_logits != nullptr && (d_logits->rows != logits.rows || d_logits->cols != logits.cols)) {
        *d_logits = Mat<T>(logits.rows, logits.cols);
    }
    const std::size_t v = logits.cols;
    double total = 0.0;
    for (std::size_t r = 0; r < logits.rows; ++r) {
        if (mask[r] == 0) {
            continue;
        }
        const Token t = targets[r];
        if (t < 0 || static_cast<std::size_t>(t) >= v) {
            throw InvalidArgument("lm_nll: target id " + std::to_string(t) + " out of range");
        }
        const T* lr = logits.row(r);
        double max_l = -std::numeric_limits<double>::infinity();
        for (std::size_t k = 0; k < v; ++k) {
            max_l = std::max(max_l, static_cast<double>(lr[k]));
        }
        double sum = 0.0;
        for (std::size_t k = 0; k < v; ++k) {
            sum += std::exp(static_cast<double>(lr[k]) - max_l);
        }
        const double log_z = max_l + std::log(sum);
        total += log_z - static_cast<double>(lr[t]);
        if (d_logits != nullptr) {
            T* dr = d_logits->row(r);
            const double w = scale / static_cast<double>(m);
            for (std::size_t k = 0; k < v; ++k) {
                const double p = std::exp(static_cast<double>(lr[k]) - log_z);
                dr[k] += static_cast<T>(w * (p - (static_cast<Token>(k) == t ? 1.0 : 0.0)));
            }
        }
    }
    return total / static_cast<double>(m);
}

}  // namespace

template <typename T>
double lm_nll(const Mat<T>& logits, std::span<const Token> targets,
              std::span<const std::uint8_t> mask) {
    return nll_impl<T>(logits, targets, mask, nullptr, 1.0);
}

template <typename T>
double lm_nll_grad(const Mat<T>& logits, std::span<const Token> targets,
                   std::span<const std::uint8_t> mask, Mat<T>& d_logits, double scale) {
    return nll_impl<T>(logits, targets, mask, &d_logits, scale);
}

double combined_loss(double l_c, double l_t2i, double l_i2t, double lambda) {
    if (!(lambda >= 0.0)) {
        throw InvalidArgument("combined_loss: lambda must be non-negative");
    }
    return l_c + lambda * (l_t2i + l_i2t);
}

#define STICKER_LOSSES(T)                                                                     \
    template double info_nce_t2i(const ContrastiveBatch<T>&);                                 \
    template double info_nce_i2t(const ContrastiveBatch<T>&);                                 \
    template double clip_total(const ContrastiveBatch<T>&);                                   \
    template ContrastiveGrad<T> info_nce_t2i_grad(const ContrastiveBatch<T>&);                \
    template ContrastiveGrad<T> info_nce_i2t_grad(const ContrastiveBatch<T>&);                \
    template ContrastiveGrad<T> clip_total_grad(const ContrastiveBatch<T>&, double*, double*); \
    template double lm_nll(const Mat<T>&, std::span<const Token>,                             \
                           std::span<const std::uint8_t>);                                    \
    template double lm_nll_grad(const Mat<T>&, std::span<const Token>,                        \
                                std::span<const std::uint8_t>, Mat<T>&, double);

STICKER_LOSSES(float)
STICKER_LOSSES(double)

#undef STICKER_LOSSES

}  // namespace sticker
