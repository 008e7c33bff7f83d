#pragma once

// Straightforward reference implementations used as test oracles. They deliberately avoid
// the library code paths (no max-subtraction, no shared helpers).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <vector>

#include "sticker/retrieval.hpp"

namespace oracle {

using Matrix = std::vector<std::vector<double>>;

inline Matrix similarities(const Matrix& text, const Matrix& image) {
    Matrix s(text.size(), std::vector<double>(image.size(), 0.0));
    for (std::size_t i = 0; i < text.size(); ++i) {
        for (std::size_t j = 0; j < image.size(); ++j) {
            for (std::size_t k = 0; k < text[i].size(); ++k) {
                s[i][j] += text[i][k] * image[j][k];
            }
        }
    }
    return s;
}

// Row-wise softmax cross-entropy with the diagonal as target.
inline double row_ce(const Matrix& s, double tau) {
    double total = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i) {
        double z = 0.0;
        for (std::size_t j = 0; j < s.size(); ++j) {
            z += std::exp(s[i][j] / tau);
        }
        total += -std::log(std::exp(s[i][i] / tau) / z);
    }
    return total / static_cast<double>(s.size());
}

inline Matrix transpose(const Matrix& s) {
    Matrix t(s[0].size(), std::vector<double>(s.size()));
    for (std::size_t i = 0; i < s.size(); ++i) {
        for (std::size_t j = 0; j < s[i].size(); ++j) {
            t[j][i] = s[i][j];
        }
    }
    return t;
}

inline double t2i(const Matrix& text, const Matrix& image, double tau) {
    return row_ce(similarities(text, image), tau);
}

inline double i2t(const Matrix& text, const Matrix& image, double tau) {
    return row_ce(transpose(similarities(text, image)), tau);
}

inline double nll(const Matrix& logits, const std::vector<int>& targets,
                  const std::vector<std::uint8_t>& mask) {
    double total = 0.0;
    int count = 0;
    for (std::size_t r = 0; r < logits.size(); ++r) {
        if (!mask[r]) continue;
        double z = 0.0;
        for (double v : logits[r]) z += std::exp(v);
        total += -std::log(std::exp(logits[r][targets[r]]) / z);
        ++count;
    }
    return total / count;
}

// Full stable sort of every row: score descending, id ascending.
inline std::vector<sticker::Hit> full_sort(const sticker::RetrievalIndex& index,
                                           const std::vector<float>& q, std::size_t k) {
    std::vector<sticker::Hit> all;
    for (std::size_t i = 0; i < index.size(); ++i) {
        double s = 0.0;
        const auto row = index.row(i);
        for (std::size_t c = 0; c < q.size(); ++c) {
            s += static_cast<double>(row[c]) * static_cast<double>(q[c]);
        }
        all.push_back({index.ids()[i], s});
    }
    std::sort(all.begin(), all.end(), [](const sticker::Hit& a, const sticker::Hit& b) {
        if (a.score != b.score) return a.score > b.score;
        return a.id < b.id;
    });
    all.resize(std::min(k, all.size()));
    return all;
}

}  // namespace oracle
