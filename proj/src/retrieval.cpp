#include "sticker/retrieval.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "sticker/error.hpp"

namespace sticker {
namespace {
constexpr std::array<char, 8> kIndexMagic = {'S', 'T', 'K', 'R', 'I', 'D', 'X', '1'};
constexpr double kUnitTolerance = 1e-5;
}  // namespace

std::string_view to_string(QueryKind kind) {
    switch (kind) {
        case QueryKind::text:
            return "text";
        case QueryKind::image:
            return "image";
        case QueryKind::image_text:
            return "image+text";
    }
    return "?";
}

RetrievalIndex::RetrievalIndex(std::vector<StickerId> ids, std::vector<std::vector<float>> rows,
                               std::string encoder_fingerprint)
    : fingerprint_(std::move(encoder_fingerprint)) {
    if (ids.empty()) {
        throw InvalidArgument("retrieval index: no rows");
    }
    if (ids.size() != rows.size()) {
        throw InvalidArgument("retrieval index: id and row counts differ");
    }
    dim_ = rows.front().size();
    std::vector<std::size_t> order(ids.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return ids[a] < ids[b]; });
    ids_.reserve(ids.size());
    data_.reserve(ids.size() * dim_);
    for (std::size_t i : order) {
        if (!ids_.empty() && ids_.back() == ids[i]) {
            throw InvalidArgument("retrieval index: duplicate id " + std::to_string(ids[i]));
        }
        if (rows[i].size() != dim_) {
            throw InvalidArgument("retrieval index: rows differ in dimension");
        }
        double ss = 0.0;
        for (float v : rows[i]) {
            ss += static_cast<double>(v) * v;
        }
        if (std::abs(std::sqrt(ss) - 1.0) > kUnitTolerance) {
            throw InvalidArgument("retrieval index: row for id " + std::to_string(ids[i]) +
                                  " is not unit-norm");
        }
        ids_.push_back(ids[i]);
        data_.insert(data_.end(), rows[i].begin(), rows[i].end());
    }
}

std::optional<std::size_t> RetrievalIndex::position(StickerId id) const {
    const auto it = std::lower_bound(ids_.begin(), ids_.end(), id);
    if (it == ids_.end() || *it != id) {
        return std::nullopt;
    }
    return static_cast<std::size_t>(it - ids_.begin());
}

QueryResult RetrievalIndex::search(std::span<const float> query, std::size_t k,
                                   QueryKind kind) const {
    if (ids_.empty()) {
        throw InvalidArgument("search: empty index");
    }
    if (k == 0) {
        throw InvalidArgument("search: k must be at least 1");
    }
    if (query.size() != dim_) {
        throw InvalidArgument("search: query has " + std::to_string(query.size()) +
                              " values, index rows " + std::to_string(dim_));
    }
    std::vector<Hit> all(ids_.size());
    for (std::size_t i = 0; i < ids_.size(); ++i) {
        const float* r = data_.data() + i * dim_;
        double acc = 0.0;
        for (std::size_t j = 0; j < dim_; ++j) {
            acc += static_cast<double>(r[j]) * static_cast<double>(query[j]);
        }
        all[i] = {ids_[i], acc};
    }
    const std::size_t top = std::min(k, all.size());
    auto better = [](const Hit& a, const Hit& b) {
        return a.score > b.score || (a.score == b.score && a.id < b.id);
    };
    std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(top), all.end(), better);
    all.resize(top);
    return {std::move(all), kind};
}

void RetrievalIndex::save(const std::filesystem::path& path) const {
    nlohmann::ordered_json header;
    header["count"] = ids_.size();
    header["dim"] = dim_;
    header["encoder_fingerprint"] = fingerprint_;
    const std::string text = header.dump();
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    std::ofstream os(path, std::ios::binary);
    if (!os) {
        throw FormatError("cannot write index " + path.string());
    }
    const auto size = static_cast<std::uint64_t>(text.size());
    os.write(kIndexMagic.data(), kIndexMagic.size());
    os.write(reinterpret_cast<const char*>(&size), sizeof size);
    os.write(text.data(), static_cast<std::streamsize>(text.size()));
    os.write(reinterpret_cast<const char*>(ids_.data()),
             static_cast<std::streamsize>(ids_.size() * sizeof(StickerId)));
    os.write(reinterpret_cast<const char*>(data_.data()),
             static_cast<std::streamsize>(data_.size() * sizeof(float)));
    if (!os) {
        throw FormatError("failed writing index " + path.string());
    }
}

RetrievalIndex RetrievalIndex::load(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) {
        throw FormatError("missing file: " + path.string());
    }
    std::array<char, 8> magic{};
    std::uint64_t size = 0;
    if (!is.read(magic.data(), magic.size()) || magic != kIndexMagic ||
        !is.read(reinterpret_cast<char*>(&size), sizeof size) || size > (1u << 20)) {
        throw FormatError("index: " + path.string() + " is not an index file");
    }
    std::string text(size, '\0');
    if (!is.read(text.data(), static_cast<std::streamsize>(size))) {
        throw FormatError("index: truncated header");
    }
    std::size_t count = 0;
    std::size_t dim = 0;
    std::string fingerprint;
    try {
        const auto header = nlohmann::json::parse(text);
        count = header.at("count").get<std::size_t>();
        dim = header.at("dim").get<std::size_t>();
        fingerprint = header.at("encoder_fingerprint").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("index: malformed header: ") + e.what());
    }
    std::vector<StickerId> ids(count);
    std::vector<float> data(count * dim);
    if (!is.read(reinterpret_cast<char*>(ids.data()),
                 static_cast<std::streamsize>(count * sizeof(StickerId))) ||
        !is.read(reinterpret_cast<char*>(data.data()),
                 static_cast<std::streamsize>(data.size() * sizeof(float)))) {
        throw FormatError("index: truncated data");
    }
    std::vector<std::vector<float>> rows(count);
    for (std::size_t i = 0; i < count; ++i) {
        rows[i].assign(data.begin() + static_cast<std::ptrdiff_t>(i * dim),
                       data.begin() + static_cast<std::ptrdiff_t>((i + 1) * dim));
    }
    try {
        return RetrievalIndex(std::move(ids), std::move(rows), std::move(fingerprint));
    } catch (const InvalidArgument& e) {
        throw FormatError(std::string("index: ") + e.what());
    }
}

RetrievalIndex build_index(const Manifest& manifest, Split split,
                           const VisionEncoder<float>& vision, const std::string& fingerprint) {
    std::vector<StickerId> ids;
    std::vector<std::vector<float>> rows;
    for (std::size_t i : manifest.indices(split)) {
        const auto& r = manifest.records[i];
        ids.push_back(r.id);
        rows.push_back(encode_record_image(vision, r));
    }
    return RetrievalIndex(std::move(ids), std::move(rows), fingerprint);
}

std::optional<std::size_t> rank_of(const QueryResult& result, StickerId gold) {
    for (std::size_t i = 0; i < result.hits.size(); ++i) {
        if (result.hits[i].id == gold) {
            return i + 1;
        }
    }
    return std::nullopt;
}

double recall_at_k(std::span<const QueryResult> results, std::span<const StickerId> golds,
                   std::size_t k) {
    if (results.size() != golds.size()) {
        throw InvalidArgument("recall_at_k: result and gold counts differ");
    }
    if (results.empty()) {
        throw InvalidArgument("recall_at_k: no queries");
    }
    std::size_t hits = 0;
    for (std::size_t i = 0; i < results.size(); ++i) {
        const auto r = rank_of(results[i], golds[i]);
        if (r && *r <= k) {
            ++hits;
        }
    }
    return static_cast<double>(hits) / static_cast<double>(results.size());
}

double mean_recall(double r1, double r5, double r10) { return (r1 + r5 + r10) / 3.0; }

}  // namespace sticker
