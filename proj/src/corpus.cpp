#include "sticker/corpus.hpp"

#include <algorithm>
#include <cstdio>
#include <numeric>
#include <set>
#include <sstream>

#include "sticker/digest.hpp"
#include "sticker/error.hpp"
#include "sticker/rng.hpp"

namespace sticker {
namespace {

using Rgb = std::array<std::uint8_t, 3>;

constexpr std::array<std::string_view, 8> kColorWords = {
    "red", "orange", "yellow", "green", "cyan", "blue", "purple", "pink"};
constexpr std::array<Rgb, 8> kColorRgb = {{{220, 30, 30},
                                           {240, 140, 20},
                                           {230, 210, 20},
                                           {40, 170, 60},
                                           {30, 200, 210},
                                           {40, 70, 220},
                                           {140, 50, 200},
                                           {240, 100, 180}}};

constexpr std::array<std::string_view, 12> kSubjectWords = {
    "cat", "dog", "bear", "rabbit", "frog", "duck", "panda", "fox", "pig", "bird", "fish", "star"};
// 4x4 glyph bitmaps, one row per string.
constexpr std::array<std::array<std::string_view, 4>, 12> kSubjectGlyphs = {{
    {"X..X", "XXXX", "XXXX", ".XX."},
    {"XX..", "XXXX", ".XX.", ".X.X"},
    {"X..X", ".XX.", "XXXX", "XXXX"},
    {"X.X.", "X.X.", "XXX.", "XXX."},
    {"XX.X", "XXXX", "....", "XXXX"},
    {".XX.", ".XXX", "XXX.", ".XX."},
    {"X..X", "XXXX", "X..X", ".XX."},
    {"X..X", ".XX.", ".XX.", "..X."},
    {"XXXX", "X..X", "X..X", "XXXX"},
    {".X..", "XXX.", ".XXX", "X..."},
    {"X.X.", "XXXX", "XXXX", "X.X."},
    {"..X.", "XXXX", ".XX.", "X..X"},
}};

constexpr std::array<std::string_view, 8> kActionWords = {
    "waving", "smiling", "jumping", "sleeping", "running", "crying", "dancing", "eating"};

constexpr std::array<std::string_view, kStyleCount> kStyleNames = {
    "cartoon", "plush", "human", "wordart", "harmful"};
constexpr std::array<Rgb, kStyleCount> kStyleBackground = {{{230, 220, 200},
                                                            {200, 230, 215},
                                                            {210, 210, 235},
                                                            {240, 240, 240},
                                                            {90, 90, 90}}};

constexpr std::array<Rgb, 10> kBorderRgb = {{{20, 20, 20},
                                             {250, 250, 250},
                                             {120, 70, 30},
                                             {20, 30, 100},
                                             {110, 120, 20},
                                             {0, 120, 120},
                                             {120, 0, 40},
                                             {200, 160, 0},
                                             {160, 160, 170},
                                             {200, 0, 200}}};

constexpr std::array<std::string_view, 6> kPositivePhrases = {
    "haha", "love you", "so happy", "yay", "thank you", "good job"};
constexpr std::array<std::string_view, 5> kNegativePhrases = {
    "so sad", "go away", "no way", "i am angry", "leave me"};
constexpr std::array<std::string_view, 4> kAmbiguousPhrases = {"hmm", "really?", "oh", "what?"};

constexpr int kBorderWidth = 3;
constexpr int kGlyphOrigin = 8;
constexpr int kGlyphCell = 4;

bool border_pixel_on(int pattern, int y, int x) {
    // Position along the perimeter decides the dash phase.
    const int along = (y < kBorderWidth || y >= kRasterSize - kBorderWidth) ? x : y;
    switch (pattern) {
        case 0:
            return true;
        case 1:
            return (along / 4) % 2 == 0;
        default:
            return (along / 2) % 2 == 0;
    }
}

std::uint8_t scale_channel(std::uint8_t v, int percent) {
    return static_cast<std::uint8_t>(std::min(255, (v * percent + 50) / 100));
}

}  // namespace

std::string_view to_string(Split split) { return split == Split::train ? "train" : "test"; }

Split parse_split(std::string_view text) {
    if (text == "train") {
        return Split::train;
    }
    if (text == "test") {
        return Split::test;
    }
    throw InvalidArgument("unknown split '" + std::string(text) + "'");
}

EmotionLabel EmotionLabel::from_id(int category_id) {
    if (category_id < 0 || category_id >= kEmotionCount) {
        throw InvalidArgument("emotion id out of range: " + std::to_string(category_id));
    }
    Polarity p = Polarity::ambiguous;
    if (category_id < kPositiveEmotions) {
        p = Polarity::positive;
    } else if (category_id < kPositiveEmotions + kNegativeEmotions) {
        p = Polarity::negative;
    }
    return EmotionLabel{category_id, p};
}

std::string EmotionLabel::name() const {
    char buf[32];
    switch (polarity) {
        case Polarity::positive:
            std::snprintf(buf, sizeof buf, "pos_%02d", category_id);
            break;
        case Polarity::negative:
            std::snprintf(buf, sizeof buf, "neg_%02d", category_id - kPositiveEmotions);
            break;
        case Polarity::ambiguous:
            std::snprintf(buf, sizeof buf, "ambig_%02d",
                          category_id - kPositiveEmotions - kNegativeEmotions);
            break;
    }
    return buf;
}

StyleLabel StyleLabel::from_id(int style_id) {
    if (style_id < 0 || style_id >= kStyleCount) {
        throw InvalidArgument("style id out of range: " + std::to_string(style_id));
    }
    return StyleLabel{style_id, std::string(kStyleNames[static_cast<std::size_t>(style_id)])};
}

const StickerRecord* Manifest::find(StickerId id) const {
    // Generated manifests are id-ordered with id == position; fall back to a scan otherwise.
    if (id >= 0 && static_cast<std::size_t>(id) < records.size() &&
        records[static_cast<std::size_t>(id)].id == id) {
        return &records[static_cast<std::size_t>(id)];
    }
    for (const auto& r : records) {
        if (r.id == id) {
            return &r;
        }
    }
    return nullptr;
}

const StickerRecord& Manifest::by_id(StickerId id) const {
    const StickerRecord* r = find(id);
    if (r == nullptr) {
        throw InvalidArgument("unknown sticker id " + std::to_string(id));
    }
    return *r;
}

std::vector<std::size_t> Manifest::indices(Split split) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < records.size(); ++i) {
        if (records[i].split == split) {
            out.push_back(i);
        }
    }
    return out;
}

void validate_record(const StickerRecord& record) {
    const std::string where = "record " + std::to_string(record.id) + ": ";
    if (record.id < 0) {
        throw FormatError(where + "negative id");
    }
    if (record.frames.empty()) {
        throw FormatError(where + "no frames");
    }
    for (const auto& f : record.frames) {
        if (f.width != record.frames.front().width || f.height != record.frames.front().height) {
            throw FormatError(where + "frames differ in size");
        }
        if (f.width != kRasterSize || f.height != kRasterSize ||
            f.rgb.size() != static_cast<std::size_t>(kRasterSize * kRasterSize * 3)) {
            throw FormatError(where + "frame is not 32x32 RGB");
        }
    }
    if (record.emotions.empty()) {
        throw FormatError(where + "empty emotion set");
    }
    for (std::size_t i = 0; i < record.emotions.size(); ++i) {
        const auto& e = record.emotions[i];
        if (e.category_id < 0 || e.category_id >= kEmotionCount ||
            EmotionLabel::from_id(e.category_id).polarity != e.polarity) {
            throw FormatError(where + "invalid emotion label");
        }
        if (i > 0 && record.emotions[i - 1].category_id >= e.category_id) {
            throw FormatError(where + "emotions must be sorted and unique");
        }
    }
    if (record.style.style_id < 0 || record.style.style_id >= kStyleCount) {
        throw FormatError(where + "invalid style");
    }
}

void validate_manifest(const Manifest& manifest) {
    std::set<StickerId> seen;
    for (const auto& r : manifest.records) {
        validate_record(r);
        if (!seen.insert(r.id).second) {
            throw FormatError("duplicate sticker id " + std::to_string(r.id));
        }
    }
}

Split split_for(std::uint64_t seed, StickerId id) {
    const auto uid = static_cast<std::uint64_t>(id);
    const std::uint64_t test_slot = hash_combine(seed ^ 0x5350'4c49'54ULL, uid / 10) % 10;
    return uid % 10 == test_slot ? Split::test : Split::train;
}

std::array<std::size_t, 3> select_frame_indices(std::size_t n_frames) {
    if (n_frames == 0) {
        throw InvalidArgument("select_frames: sticker has no frames");
    }
    return {0, (n_frames - 1) / 2, n_frames - 1};
}

std::array<const Raster*, 3> select_frames(const StickerRecord& record) {
    const auto idx = select_frame_indices(record.frames.size());
    return {&record.frames[idx[0]], &record.frames[idx[1]], &record.frames[idx[2]]};
}

std::span<const std::string_view> color_words() { return kColorWords; }
std::span<const std::string_view> subject_words() { return kSubjectWords; }
std::span<const std::string_view> action_words() { return kActionWords; }
std::span<const std::string_view> style_names() { return kStyleNames; }

std::span<const std::string_view> ocr_phrases(Polarity polarity) {
    switch (polarity) {
        case Polarity::positive:
            return kPositivePhrases;
        case Polarity::negative:
            return kNegativePhrases;
        case Polarity::ambiguous:
            return kAmbiguousPhrases;
    }
    return {};
}

Raster render_sticker(const StickerAttributes& a) {
    Raster img(kRasterSize, kRasterSize);
    const Rgb bg = kStyleBackground.at(static_cast<std::size_t>(a.style_id));
    const Rgb border = kBorderRgb.at(static_cast<std::size_t>(a.border_emotion % 10));
    const int pattern = a.border_emotion / 10;
    const Rgb glyph = kColorRgb.at(static_cast<std::size_t>(a.color_id));
    const auto& bitmap = kSubjectGlyphs.at(static_cast<std::size_t>(a.subject_id));

    for (int y = 0; y < kRasterSize; ++y) {
        for (int x = 0; x < kRasterSize; ++x) {
            Rgb px = bg;
            const bool in_border = y < kBorderWidth || x < kBorderWidth ||
                                   y >= kRasterSize - kBorderWidth ||
                                   x >= kRasterSize - kBorderWidth;
            if (in_border && border_pixel_on(pattern, y, x)) {
                px = border;
            }
            const int gy = y - kGlyphOrigin;
            const int gx = x - kGlyphOrigin;
            if (gy >= 0 && gx >= 0 && gy < 4 * kGlyphCell && gx < 4 * kGlyphCell &&
                bitmap[static_cast<std::size_t>(gy / kGlyphCell)]
                      [static_cast<std::size_t>(gx / kGlyphCell)] == 'X') {
                px = glyph;
            }
            for (int c = 0; c < 3; ++c) {
                img.at(y, x, c) = px[static_cast<std::size_t>(c)];
            }
        }
    }
    return img;
}

Raster jitter_frame(const Raster& base, std::uint64_t seed, StickerId id, std::size_t frame) {
    const std::uint64_t h = hash_combine(hash_combine(seed, static_cast<std::uint64_t>(id)),
                                         0xF7A3E000ULL + frame);
    const int dx = static_cast<int>(h % 3) - 1;
    const int dy = static_cast<int>((h / 3) % 3) - 1;
    const int brightness = 85 + static_cast<int>((h / 9) % 31);  // 85..115 percent
    Raster out(base.width, base.height);
    for (int y = 0; y < base.height; ++y) {
        for (int x = 0; x < base.width; ++x) {
            const int sy = std::clamp(y - dy, 0, base.height - 1);
            const int sx = std::clamp(x - dx, 0, base.width - 1);
            for (int c = 0; c < 3; ++c) {
                out.at(y, x, c) = scale_channel(base.at(sy, sx, c), brightness);
            }
        }
    }
    return out;
}

std::optional<DescriptionAttributes> parse_description(std::string_view description) {
    std::optional<int> color;
    std::optional<int> subject;
    std::size_t pos = 0;
    while (pos < description.size()) {
        const std::size_t end = std::min(description.find(' ', pos), description.size());
        const std::string_view word = description.substr(pos, end - pos);
        for (std::size_t i = 0; i < kColorWords.size(); ++i) {
            if (word == kColorWords[i] && !color) {
                color = static_cast<int>(i);
            }
        }
        for (std::size_t i = 0; i < kSubjectWords.size(); ++i) {
            if (word == kSubjectWords[i] && !subject) {
                subject = static_cast<int>(i);
            }
        }
        pos = end + 1;
    }
    if (!color || !subject) {
        return std::nullopt;
    }
    return DescriptionAttributes{*color, *subject};
}

Manifest generate_synthetic_corpus(std::uint64_t seed, std::size_t n_records,
                                   double animated_fraction) {
    if (n_records < 2) {
        throw InvalidArgument("generate_synthetic_corpus: n_records must be >= 2");
    }
    if (!(animated_fraction >= 0.0 && animated_fraction <= 1.0)) {
        throw InvalidArgument("generate_synthetic_corpus: animated_fraction must be in [0, 1]");
    }

    // Exactly round(fraction * n) animated records, chosen by a seeded permutation.
    const auto n_animated =
        static_cast<std::size_t>(std::llround(animated_fraction * static_cast<double>(n_records)));
    std::vector<std::size_t> order(n_records);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng perm_rng(hash_combine(seed, 0xA11A7EDULL));
    perm_rng.shuffle(order.begin(), order.end());
    std::vector<bool> animated(n_records, false);
    for (std::size_t i = 0; i < n_animated; ++i) {
        animated[order[i]] = true;
    }

    Manifest manifest;
    manifest.seed = seed;
    manifest.records.reserve(n_records);
    for (std::size_t i = 0; i < n_records; ++i) {
        const auto id = static_cast<StickerId>(i);
        Rng rng(hash_combine(seed, static_cast<std::uint64_t>(id)));

        StickerAttributes attrs;
        attrs.style_id = static_cast<int>(rng.below(kStyleCount));
        attrs.color_id = static_cast<int>(rng.below(kColorWords.size()));
        attrs.subject_id = static_cast<int>(rng.below(kSubjectWords.size()));
        const auto action = rng.below(kActionWords.size());

        std::vector<int> emotion_ids{static_cast<int>(rng.below(kEmotionCount))};
        if (rng.uniform() < 0.25) {
            int second = static_cast<int>(rng.below(kEmotionCount - 1));
            if (second >= emotion_ids[0]) {
                ++second;
            }
            emotion_ids.push_back(second);
        }
        std::sort(emotion_ids.begin(), emotion_ids.end());
        attrs.border_emotion = emotion_ids.front();

        StickerRecord r;
        r.id = id;
        r.style = StyleLabel::from_id(attrs.style_id);
        for (int e : emotion_ids) {
            r.emotions.push_back(EmotionLabel::from_id(e));
        }
        r.description = std::string(kColorWords[static_cast<std::size_t>(attrs.color_id)]) + " " +
                        std::string(kSubjectWords[static_cast<std::size_t>(attrs.subject_id)]) +
                        " " + std::string(kActionWords[action]);
        const auto phrases = ocr_phrases(r.emotions.front().polarity);
        if (rng.uniform() >= 0.2) {
            r.ocr_text = std::string(phrases[rng.below(phrases.size())]);
        }

        Raster base = render_sticker(attrs);
        std::size_t n_frames = 1;
        if (animated[i]) {
            n_frames = 3 + static_cast<std::size_t>(rng.below(3));
        }
        r.frames.push_back(base);
        for (std::size_t k = 1; k < n_frames; ++k) {
            r.frames.push_back(jitter_frame(base, seed, id, k));
        }
        r.split = split_for(seed, id);
        manifest.records.push_back(std::move(r));
    }
    return manifest;
}

std::string manifest_digest(const Manifest& manifest) {
    Sha256 h;
    std::ostringstream head;
    head << "schema=" << manifest.schema_version << ";seed=" << manifest.seed
         << ";n=" << manifest.records.size() << ";";
    h.update(head.str());
    for (const auto& r : manifest.records) {
        std::ostringstream s;
        s << "id=" << r.id << ";desc=" << r.description.size() << ':' << r.description
          << ";ocr=" << r.ocr_text.size() << ':' << r.ocr_text << ";style=" << r.style.style_id
          << ";split=" << to_string(r.split) << ";emotions=";
        for (const auto& e : r.emotions) {
            s << e.category_id << ',';
        }
        s << ";frames=" << r.frames.size() << ";";
        h.update(s.str());
        for (const auto& f : r.frames) {
            h.update_values(std::span<const std::uint8_t>(f.rgb));
        }
    }
    return h.hex();
}

}  // namespace sticker
