#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace sticker {

inline constexpr int kRasterSize = 32;
inline constexpr int kEmotionCount = 30;
inline constexpr int kPositiveEmotions = 15;
inline constexpr int kNegativeEmotions = 11;
inline constexpr int kStyleCount = 5;
inline constexpr int kManifestSchemaVersion = 1;

using StickerId = std::int64_t;

enum class Polarity { positive, negative, ambiguous };
enum class Split { train, test };

std::string_view to_string(Split split);
Split parse_split(std::string_view text);

// 8-bit RGB raster, row-major H x W x 3. Channel value v maps to v / 255 in [0, 1].
struct Raster {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> rgb;

    Raster() = default;
    Raster(int w, int h) : width(w), height(h), rgb(static_cast<std::size_t>(w) * h * 3, 0) {}

    std::uint8_t& at(int y, int x, int c) {
        return rgb[(static_cast<std::size_t>(y) * width + x) * 3 + c];
    }
    std::uint8_t at(int y, int x, int c) const {
        return rgb[(static_cast<std::size_t>(y) * width + x) * 3 + c];
    }

    friend bool operator==(const Raster&, const Raster&) = default;
};

struct EmotionLabel {
    int category_id = 0;
    Polarity polarity = Polarity::positive;

    // ids 0-14 positive, 15-25 negative, 26-29 ambiguous.
    static EmotionLabel from_id(int category_id);
    std::string name() const;  // "pos_00" ... "neg_10" ... "ambig_03"

    friend bool operator==(const EmotionLabel&, const EmotionLabel&) = default;
};

struct StyleLabel {
    int style_id = 0;
    std::string name;

    static StyleLabel from_id(int style_id);

    friend bool operator==(const StyleLabel&, const StyleLabel&) = default;
};

struct StickerRecord {
    StickerId id = 0;
    std::vector<Raster> frames;
    std::string description;
    std::string ocr_text;
    std::vector<EmotionLabel> emotions;  // sorted by category_id, unique
    StyleLabel style;
    Split split = Split::train;

    friend bool operator==(const StickerRecord&, const StickerRecord&) = default;
};

struct Manifest {
    std::vector<StickerRecord> records;
    std::uint64_t seed = 0;
    int schema_version = kManifestSchemaVersion;

    const StickerRecord& by_id(StickerId id) const;
    const StickerRecord* find(StickerId id) const;
    // Positions into `records` for one split, in record order.
    std::vector<std::size_t> indices(Split split) const;

    friend bool operator==(const Manifest&, const Manifest&) = default;
};

// Throws FormatError describing the first violated record invariant.
void validate_record(const StickerRecord& record);
// Validates every record plus id uniqueness.
void validate_manifest(const Manifest& manifest);

// Split is a pure function of (seed, id): within each block of ten consecutive ids exactly
// one id is assigned to the test split.
Split split_for(std::uint64_t seed, StickerId id);

Manifest generate_synthetic_corpus(std::uint64_t seed, std::size_t n_records,
                                   double animated_fraction);

// First, middle (floor((n-1)/2)) and last frame index for an n-frame sticker.
std::array<std::size_t, 3> select_frame_indices(std::size_t n_frames);
std::array<const Raster*, 3> select_frames(const StickerRecord& record);

// SHA-256 over a canonical serialization of every field, including raster bytes.
std::string manifest_digest(const Manifest& manifest);

// ---------------------------------------------------------------------------
// Procedural sticker appearance.

std::span<const std::string_view> color_words();
std::span<const std::string_view> subject_words();
std::span<const std::string_view> action_words();
std::span<const std::string_view> style_names();
std::span<const std::string_view> ocr_phrases(Polarity polarity);

struct StickerAttributes {
    int style_id = 0;
    int color_id = 0;
    int subject_id = 0;
    int border_emotion = 0;  // lowest emotion category of the sticker
};

// Background hue from style, glyph bitmap from subject, glyph colour from colour word,
// border colour/pattern from the lowest emotion category.
Raster render_sticker(const StickerAttributes& attributes);

// Frame k >= 1 of an animated sticker: deterministic 1px translation and brightness jitter.
Raster jitter_frame(const Raster& base, std::uint64_t seed, StickerId id, std::size_t frame);

struct DescriptionAttributes {
    int color_id = 0;
    int subject_id = 0;
};

// Recovers the visible attributes named in a description; nullopt if either is missing.
std::optional<DescriptionAttributes> parse_description(std::string_view description);

}  // namespace sticker
