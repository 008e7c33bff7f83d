#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "sticker/corpus.hpp"
#include "sticker/error.hpp"
#include "sticker/manifest_io.hpp"

using namespace sticker;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
    const auto dir = fs::temp_directory_path() / ("sticker_test_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::string read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const fs::path& p, const std::string& text) {
    std::ofstream(p, std::ios::binary) << text;
}

}  // namespace

TEST_CASE("two-record corpus") {
    const auto m = generate_synthetic_corpus(7, 2, 0.0);
    REQUIRE(m.records.size() == 2);
    for (const auto& r : m.records) {
        CHECK(r.frames.size() == 1);
        CHECK_NOTHROW(validate_record(r));
    }
    CHECK(m.records[0].id != m.records[1].id);
    const auto train = m.indices(Split::train);
    const auto test = m.indices(Split::test);
    CHECK(train.size() + test.size() == 2);
    for (auto i : train) {
        CHECK(std::find(test.begin(), test.end(), i) == test.end());
    }
    CHECK(generate_synthetic_corpus(7, 2, 0.0) == m);
}

TEST_CASE("desk-scale corpus shape") {
    const auto m = generate_synthetic_corpus(7, 640, 0.25);
    REQUIRE(m.records.size() == 640);
    CHECK(m.indices(Split::train).size() == 576);
    CHECK(m.indices(Split::test).size() == 64);
    std::size_t animated = 0;
    std::set<StickerId> ids;
    for (const auto& r : m.records) {
        animated += r.frames.size() > 1 ? 1 : 0;
        ids.insert(r.id);
        CHECK(r.frames.front().width == kRasterSize);
        CHECK(r.frames.front().height == kRasterSize);
        CHECK_FALSE(r.description.empty());
        CHECK(parse_description(r.description).has_value());
    }
    CHECK(animated == 160);
    CHECK(ids.size() == 640);
    CHECK_NOTHROW(validate_manifest(m));
}

TEST_CASE("generation is deterministic and seed-sensitive") {
    const auto a = generate_synthetic_corpus(7, 640, 0.25);
    const auto b = generate_synthetic_corpus(7, 640, 0.25);
    CHECK(a == b);
    CHECK(manifest_digest(a) == manifest_digest(b));
    CHECK(manifest_digest(a).size() == 64);
    const auto c = generate_synthetic_corpus(8, 640, 0.25);
    CHECK(manifest_digest(a) != manifest_digest(c));
}

TEST_CASE("digest covers raster bytes") {
    auto m = generate_synthetic_corpus(3, 10, 0.5);
    const auto before = manifest_digest(m);
    m.records[4].frames[0].rgb[17] ^= 1;
    CHECK(manifest_digest(m) != before);
}

TEST_CASE("split assignment is a function of seed and id") {
    for (StickerId block = 0; block < 50; ++block) {
        int test = 0;
        for (StickerId k = 0; k < 10; ++k) {
            test += split_for(7, block * 10 + k) == Split::test ? 1 : 0;
            CHECK(split_for(7, block * 10 + k) == split_for(7, block * 10 + k));
        }
        CHECK(test == 1);
    }
}

TEST_CASE("generator rejects bad arguments") {
    CHECK_THROWS_AS(generate_synthetic_corpus(7, 1, 0.0), InvalidArgument);
    CHECK_THROWS_AS(generate_synthetic_corpus(7, 10, 1.5), InvalidArgument);
    CHECK_THROWS_AS(generate_synthetic_corpus(7, 10, -0.1), InvalidArgument);
}

TEST_CASE("frame selection indices") {
    using A = std::array<std::size_t, 3>;
    CHECK(select_frame_indices(1) == A{0, 0, 0});
    CHECK(select_frame_indices(7) == A{0, 3, 6});
    CHECK(select_frame_indices(2) == A{0, 0, 1});
    CHECK(select_frame_indices(4) == A{0, 1, 3});
    for (std::size_t n = 1; n < 40; ++n) {
        const auto idx = select_frame_indices(n);
        CHECK(idx[0] == 0);
        CHECK(idx[1] == (n - 1) / 2);
        CHECK(idx[2] == n - 1);
    }
    const auto m = generate_synthetic_corpus(7, 40, 1.0);
    for (const auto& r : m.records) {
        const auto frames = select_frames(r);
        const auto idx = select_frame_indices(r.frames.size());
        for (int k = 0; k < 3; ++k) {
            CHECK(frames[k] == &r.frames[idx[k]]);
        }
    }
}

TEST_CASE("label taxonomies") {
    CHECK(EmotionLabel::from_id(0).polarity == Polarity::positive);
    CHECK(EmotionLabel::from_id(14).polarity == Polarity::positive);
    CHECK(EmotionLabel::from_id(15).polarity == Polarity::negative);
    CHECK(EmotionLabel::from_id(25).polarity == Polarity::negative);
    CHECK(EmotionLabel::from_id(26).polarity == Polarity::ambiguous);
    CHECK(EmotionLabel::from_id(29).polarity == Polarity::ambiguous);
    CHECK_THROWS_AS(EmotionLabel::from_id(30), InvalidArgument);
    CHECK_THROWS_AS(EmotionLabel::from_id(-1), InvalidArgument);
    CHECK_THROWS_AS(StyleLabel::from_id(kStyleCount), InvalidArgument);
    CHECK(parse_split("test") == Split::test);
    CHECK_THROWS_AS(parse_split("val"), InvalidArgument);
}

TEST_CASE("record validation") {
    const auto m = generate_synthetic_corpus(7, 4, 1.0);
    auto r = m.records[0];
    r.frames.clear();
    CHECK_THROWS_AS(validate_record(r), FormatError);
    r = m.records[0];
    r.frames[1] = Raster(16, 16);
    CHECK_THROWS_AS(validate_record(r), FormatError);
    r = m.records[0];
    r.emotions.clear();
    CHECK_THROWS_AS(validate_record(r), FormatError);
    r = m.records[0];
    r.emotions = {EmotionLabel::from_id(3), EmotionLabel::from_id(3)};
    CHECK_THROWS_AS(validate_record(r), FormatError);

    auto dup = m;
    dup.records[1].id = dup.records[0].id;
    CHECK_THROWS_AS(validate_manifest(dup), FormatError);
}

TEST_CASE("manifest save/load round trip") {
    const auto dir = scratch_dir("roundtrip");
    const auto m = generate_synthetic_corpus(7, 30, 0.25);
    save_manifest(m, dir);
    CHECK(fs::exists(dir / "manifest.json"));
    CHECK(fs::exists(dir / "index.jsonl"));
    CHECK(fs::exists(dir / "frames" / "0_0.png"));
    const auto back = load_manifest(dir);
    CHECK(back == m);
    CHECK(manifest_digest(back) == manifest_digest(m));
    fs::remove_all(dir);
}

TEST_CASE("manifest load errors") {
    const auto dir = scratch_dir("errors");
    const auto m = generate_synthetic_corpus(7, 4, 0.0);
    save_manifest(m, dir);
    const auto index = read_file(dir / "index.jsonl");

    SUBCASE("duplicate id names the id") {
        const auto first = index.substr(0, index.find('\n') + 1);
        write_file(dir / "index.jsonl", index + first);
        try {
            (void)load_manifest(dir);
            FAIL("expected a format error");
        } catch (const FormatError& e) {
            CHECK(std::string(e.what()).find("duplicate sticker id 0") != std::string::npos);
        }
    }
    SUBCASE("empty index") {
        write_file(dir / "index.jsonl", "");
        try {
            (void)load_manifest(dir);
            FAIL("expected a format error");
        } catch (const FormatError& e) {
            CHECK(std::string(e.what()).find("no records") != std::string::npos);
        }
    }
    SUBCASE("malformed line carries the line number") {
        write_file(dir / "index.jsonl", index + "{not json\n");
        try {
            (void)load_manifest(dir);
            FAIL("expected a format error");
        } catch (const FormatError& e) {
            CHECK(std::string(e.what()).find(":5") != std::string::npos);
        }
    }
    SUBCASE("missing directory") {
        CHECK_THROWS_AS(load_manifest(dir / "nope"), FormatError);
    }
    SUBCASE("schema mismatch") {
        write_file(dir / "manifest.json", R"({"schema_version": 99, "seed": 7})");
        CHECK_THROWS_AS(load_manifest(dir), FormatError);
    }
    fs::remove_all(dir);
}
