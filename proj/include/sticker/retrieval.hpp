#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "sticker/corpus.hpp"
#include "sticker/encoders.hpp"

namespace sticker {

enum class QueryKind { text, image, image_text };
std::string_view to_string(QueryKind kind);

struct Hit {
    StickerId id = 0;
    double score = 0.0;
};

struct QueryResult {
    std::vector<Hit> hits;  // score descending, ties by ascending id
    QueryKind kind = QueryKind::text;
};

// Id-ordered unit-norm embeddings with exact brute-force search.
class RetrievalIndex {
public:
    RetrievalIndex() = default;
    // Rows are sorted by id on construction; throws InvalidArgument on duplicates, a
    // non-unit row or an empty index.
    RetrievalIndex(std::vector<StickerId> ids, std::vector<std::vector<float>> rows,
                   std::string encoder_fingerprint);

    std::size_t size() const { return ids_.size(); }
    std::size_t dim() const { return dim_; }
    const std::vector<StickerId>& ids() const { return ids_; }
    std::span<const float> row(std::size_t i) const { return {data_.data() + i * dim_, dim_}; }
    std::optional<std::size_t> position(StickerId id) const;
    const std::string& fingerprint() const { return fingerprint_; }

    // Top min(k, size) rows by dot product (accumulated in double).
    QueryResult search(std::span<const float> query, std::size_t k,
                       QueryKind kind = QueryKind::text) const;

    void save(const std::filesystem::path& path) const;
    static RetrievalIndex load(const std::filesystem::path& path);

    friend bool operator==(const RetrievalIndex&, const RetrievalIndex&) = default;

private:
    std::vector<StickerId> ids_;
    std::vector<float> data_;
    std::size_t dim_ = 0;
    std::string fingerprint_;
};

// One row per record of `split` via select_frames + encode_image.
RetrievalIndex build_index(const Manifest& manifest, Split split,
                           const VisionEncoder<float>& vision, const std::string& fingerprint);

// 1-based rank of `gold` in the result, or nullopt when absent.
std::optional<std::size_t> rank_of(const QueryResult& result, StickerId gold);

double recall_at_k(std::span<const QueryResult> results, std::span<const StickerId> golds,
                   std::size_t k);
double mean_recall(double r1, double r5, double r10);

}  // namespace sticker
