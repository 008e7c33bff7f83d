#include "sticker/layers.hpp"

#include <cmath>
#include <limits>
#include <numbers>

namespace sticker {

namespace {
constexpr double kLayerNormEps = 1e-5;
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;
}  // namespace

template <typename T>
T gelu(T x) {
    const T u = T(kGeluC) * (x + T(kGeluA) * x * x * x);
    return T(0.5) * x * (T(1) + std::tanh(u));
}

template <typename T>
T gelu_grad(T x) {
    const T u = T(kGeluC) * (x + T(kGeluA) * x * x * x);
    const T t = std::tanh(u);
    return T(0.5) * (T(1) + t) +
           T(0.5) * x * (T(1) - t * t) * T(kGeluC) * (T(1) + T(3 * kGeluA) * x * x);
}

// ---------------------------------------------------------------------------
// Linear

template <typename T>
Linear<T>::Linear(const std::string& name, std::size_t in_features, std::size_t out_features,
                  bool with_bias)
    : in(in_features),
      out(out_features),
      has_bias(with_bias),
      weight(name + ".weight", {out_features, in_features}, true) {
    if (with_bias) {
        bias = Param<T>(name + ".bias", {out_features});
    }
}

template <typename T>
void Linear<T>::init(Rng& rng, double stddev) {
    for (auto& w : weight.value) {
        w = static_cast<T>(rng.normal() * stddev);
    }
    std::fill(bias.value.begin(), bias.value.end(), T(0));
}

template <typename T>
void Linear<T>::forward(const Mat<T>& x, Mat<T>& y) const {
    if (x.cols != in) {
        throw InvalidArgument(weight.name + ": input width " + std::to_string(x.cols) +
                              " != " + std::to_string(in));
    }
    if (y.rows != x.rows || y.cols != out) {
        y = Mat<T>(x.rows, out);
    }
    const T* w = weight.value.data();
    for (std::size_t n = 0; n < x.rows; ++n) {
        const T* xr = x.row(n);
        T* yr = y.row(n);
        for (std::size_t o = 0; o < out; ++o) {
            yr[o] = dot(xr, w + o * in, in);
        }
        if (has_bias) {
            for (std::size_t o = 0; o < out; ++o) {
                yr[o] += bias.value[o];
            }
        }
    }
}

template <typename T>
void Linear<T>::backward(const Mat<T>& x, const Mat<T>& dy, Mat<T>* dx, bool param_grads) {
    const T* w = weight.value.data();
    T* dw = weight.grad.data();
    for (std::size_t n = 0; n < x.rows; ++n) {
        const T* xr = x.row(n);
        const T* dyr = dy.row(n);
        T* dxr = dx != nullptr ? dx->row(n) : nullptr;
        for (std::size_t o = 0; o < out; ++o) {
            const T g = dyr[o];
            if (g == T(0)) {
                continue;
            }
            if (dxr != nullptr) {
                axpy(g, w + o * in, dxr, in);
            }
            if (param_grads) {
                axpy(g, xr, dw + o * in, in);
            }
        }
        if (param_grads && has_bias) {
            for (std::size_t o = 0; o < out; ++o) {
                bias.grad[o] += dyr[o];
            }
        }
    }
}

template <typename T>
void Linear<T>::collect(ParamList<T>& out_params) {
    out_params.push_back(&weight);
    if (has_bias) {
        out_params.push_back(&bias);
    }
}

// ---------------------------------------------------------------------------
// LayerNorm

template <typename T>
LayerNorm<T>::LayerNorm(const std::string& name, std::size_t d)
    : dim(d), gamma(name + ".gamma", {d}), beta(name + ".beta", {d}) {
    std::fill(gamma.value.begin(), gamma.value.end(), T(1));
}

template <typename T>
void LayerNorm<T>::forward(const Mat<T>& x, Mat<T>& y, Cache* cache) const {
    if (y.rows != x.rows || y.cols != dim) {
        y = Mat<T>(x.rows, dim);
    }
    if (cache != nullptr) {
        cache->rstd.assign(x.rows, T(0));
        cache->xhat = Mat<T>(x.rows, dim);
    }
    const T inv_dim = T(1) / static_cast<T>(dim);
    for (std::size_t n = 0; n < x.rows; ++n) {
        const T* xr = x.row(n);
        T mean = T(0);
        for (std::size_t k = 0; k < dim; ++k) {
            mean += xr[k];
        }
        mean *= inv_dim;
        T var = T(0);
        for (std::size_t k = 0; k < dim; ++k) {
            const T c = xr[k] - mean;
            var += c * c;
        }
        var *= inv_dim;
        const T rstd = T(1) / std::sqrt(var + T(kLayerNormEps));
        T* yr = y.row(n);
        for (std::size_t k = 0; k < dim; ++k) {
            const T xh = (xr[k] - mean) * rstd;
            yr[k] = xh * gamma.value[k] + beta.value[k];
            if (cache != nullptr) {
                cache->xhat(n, k) = xh;
            }
        }
        if (cache != nullptr) {
            cache->rstd[n] = rstd;
        }
    }
}

template <typename T>
void LayerNorm<T>::backward(const Cache& cache, const Mat<T>& dy, Mat<T>& dx, bool param_grads) {
    const T inv_dim = T(1) / static_cast<T>(dim);
    std::vector<T> dxhat(dim);
    for (std::size_t n = 0; n < dy.rows; ++n) {
        const T* dyr = dy.row(n);
        const T* xh = cache.xhat.row(n);
        T mean_d = T(0);
        T mean_dx = T(0);
        for (std::size_t k = 0; k < dim; ++k) {
            dxhat[k] = dyr[k] * gamma.value[k];
            mean_d += dxhat[k];
            mean_dx += dxhat[k] * xh[k];
            if (param_grads) {
                gamma.grad[k] += dyr[k] * xh[k];
                beta.grad[k] += dyr[k];
            }
        }
        mean_d *= inv_dim;
        mean_dx *= inv_dim;
        const T rstd = cache.rstd[n];
        T* dxr = dx.row(n);
        for (std::size_t k = 0; k < dim; ++k) {
            dxr[k] += rstd * (dxhat[k] - mean_d - xh[k] * mean_dx);
        }
    }
}

template <typename T>
void LayerNorm<T>::collect(ParamList<T>& out_params) {
    out_params.push_back(&gamma);
    out_params.push_back(&beta);
}

// ---------------------------------------------------------------------------
// TransformerBlock

template <typename T>
TransformerBlock<T>::TransformerBlock(const std::string& name, std::size_t w, std::size_t h,
                                      std::size_t ff, bool is_causal)
    : width(w),
      heads(h),
      causal(is_causal),
      ln1(name + ".ln1", w),
      qkv(name + ".attn.qkv", w, 3 * w),
      proj(name + ".attn.proj", w, w),
      ln2(name + ".ln2", w),
      fc1(name + ".mlp.fc1", w, ff),
      fc2(name + ".mlp.fc2", ff, w) {
    if (w % h != 0) {
        throw InvalidArgument(name + ": width must be divisible by the head count");
    }
}

template <typename T>
void TransformerBlock<T>::init(Rng& rng, double stddev, double residual_stddev) {
    qkv.init(rng, stddev);
    proj.init(rng, residual_stddev);
    fc1.init(rng, stddev);
    fc2.init(rng, residual_stddev);
}

template <typename T>
void TransformerBlock<T>::forward(const Mat<T>& x, Mat<T>& out, Cache* cache) const {
    const std::size_t n = x.rows;
    const std::size_t hd = width / heads;
    const T scale = T(1) / std::sqrt(static_cast<T>(hd));

    Cache local;
    Cache& c = cache != nullptr ? *cache : local;
    ln1.forward(x, c.ln1_out, cache != nullptr ? &c.ln1 : nullptr);
    qkv.forward(c.ln1_out, c.qkv);

    c.att.assign(heads * n * n, T(0));
    c.att_y = Mat<T>(n, width);
    std::vector<T> scores(n);
    for (std::size_t h = 0; h < heads; ++h) {
        for (std::size_t i = 0; i < n; ++i) {
            const T* q = c.qkv.row(i) + h * hd;
            const std::size_t limit = causal ? i + 1 : n;
            T max_s = -std::numeric_limits<T>::infinity();
            for (std::size_t j = 0; j < limit; ++j) {
                scores[j] = dot(q, c.qkv.row(j) + width + h * hd, hd) * scale;
                max_s = std::max(max_s, scores[j]);
            }
            T sum = T(0);
            for (std::size_t j = 0; j < limit; ++j) {
                scores[j] = std::exp(scores[j] - max_s);
                sum += scores[j];
            }
            T* att_row = c.att.data() + (h * n + i) * n;
            T* y = c.att_y.row(i) + h * hd;
            for (std::size_t j = 0; j < limit; ++j) {
                att_row[j] = scores[j] / sum;
                axpy(att_row[j], c.qkv.row(j) + 2 * width + h * hd, y, hd);
            }
        }
    }

    Mat<T> attn_out;
    proj.forward(c.att_y, attn_out);
    c.x_mid = x;
    for (std::size_t k = 0; k < c.x_mid.data.size(); ++k) {
        c.x_mid.data[k] += attn_out.data[k];
    }

    ln2.forward(c.x_mid, c.ln2_out, cache != nullptr ? &c.ln2 : nullptr);
    fc1.forward(c.ln2_out, c.h_pre);
    c.h_act = Mat<T>(n, c.h_pre.cols);
    for (std::size_t k = 0; k < c.h_pre.data.size(); ++k) {
        c.h_act.data[k] = gelu(c.h_pre.data[k]);
    }
    Mat<T> mlp_out;
    fc2.forward(c.h_act, mlp_out);
    out = c.x_mid;
    for (std::size_t k = 0; k < out.data.size(); ++k) {
        out.data[k] += mlp_out.data[k];
    }
}

template <typename T>
void TransformerBlock<T>::backward(const Cache& c, const Mat<T>& dout, Mat<T>& dx,
                                   bool param_grads) {
    const std::size_t n = dout.rows;
    const std::size_t hd = width / heads;
    const T scale = T(1) / std::sqrt(static_cast<T>(hd));

    // MLP branch.
    Mat<T> d_x_mid = dout;
    Mat<T> d_h(n, c.h_act.cols);
    fc2.backward(c.h_act, dout, &d_h, param_grads);
    for (std::size_t k = 0; k < d_h.data.size(); ++k) {
        d_h.data[k] *= gelu_grad(c.h_pre.data[k]);
    }
    Mat<T> d_ln2(n, width);
    fc1.backward(c.ln2_out, d_h, &d_ln2, param_grads);
    ln2.backward(c.ln2, d_ln2, d_x_mid, param_grads);

    // Attention branch.
    Mat<T> d_att_y(n, width);
    proj.backward(c.att_y, d_x_mid, &d_att_y, param_grads);
    Mat<T> d_qkv(n, 3 * width);
    std::vector<T> d_att(n);
    for (std::size_t h = 0; h < heads; ++h) {
        for (std::size_t i = 0; i < n; ++i) {
            const std::size_t limit = causal ? i + 1 : n;
            const T* att_row = c.att.data() + (h * n + i) * n;
            const T* dy = d_att_y.row(i) + h * hd;
            T weighted = T(0);
            for (std::size_t j = 0; j < limit; ++j) {
                d_att[j] = dot(dy, c.qkv.row(j) + 2 * width + h * hd, hd);
                weighted += att_row[j] * d_att[j];
                axpy(att_row[j], dy, d_qkv.row(j) + 2 * width + h * hd, hd);
            }
            const T* q = c.qkv.row(i) + h * hd;
            T* dq = d_qkv.row(i) + h * hd;
            for (std::size_t j = 0; j < limit; ++j) {
                const T ds = att_row[j] * (d_att[j] - weighted) * scale;
                if (ds == T(0)) {
                    continue;
                }
                axpy(ds, c.qkv.row(j) + width + h * hd, dq, hd);
                axpy(ds, q, d_qkv.row(j) + width + h * hd, hd);
            }
        }
    }
    Mat<T> d_ln1(n, width);
    qkv.backward(c.ln1_out, d_qkv, &d_ln1, param_grads);

    for (std::size_t k = 0; k < dx.data.size(); ++k) {
        dx.data[k] += d_x_mid.data[k];
    }
    ln1.backward(c.ln1, d_ln1, dx, param_grads);
}

template <typename T>
void TransformerBlock<T>::collect(ParamList<T>& out_params) {
    ln1.collect(out_params);
    qkv.collect(out_params);
    proj.collect(out_params);
    ln2.collect(out_params);
    fc1.collect(out_params);
    fc2.collect(out_params);
}

template float gelu<float>(float);
template double gelu<double>(double);
template float gelu_grad<float>(float);
template double gelu_grad<double>(double);
template struct Linear<float>;
template struct Linear<double>;
template struct LayerNorm<float>;
template struct LayerNorm<double>;
template struct TransformerBlock<float>;
template struct TransformerBlock<double>;

}  // namespace sticker
