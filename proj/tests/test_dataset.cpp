#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <set>

#include "glyphforge/dataset.hpp"
#include "glyphforge/errors.hpp"

using namespace gf;
namespace fs = std::filesystem;

namespace {

const fs::path kFonts = fs::path(GF_TEST_DATA_DIR) / "fonts";

fs::path fresh_dir(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / "gf_test_dataset" / name;
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

} // namespace

TEST_CASE("build keeps exactly the shared codepoints with target-ordered style ids") {
    const fs::path out = fresh_dir("intersection");
    // reference covers {A,B,C,bar,square,hollow,space}; target covers {B,C,D}
    const PairManifest m =
        build_pair_dataset(kFonts / "oracle_ref.ttf", {kFonts / "oracle_t1.ttf"}, 32, out);
    std::set<char32_t> cps;
    for (const auto& rec : m.records) {
        CHECK(rec.style_id == 0);
        cps.insert(rec.codepoint);
    }
    CHECK(cps == std::set<char32_t>{U'B', U'C'});
    CHECK(fs::exists(out / "manifest.json"));
    CHECK(fs::exists(out / "ref" / "U+0042.png"));
    CHECK(fs::exists(out / "s00" / "U+0042.png"));
}

TEST_CASE("two single-glyph targets produce two records with style ids 0 and 1") {
    const fs::path out = fresh_dir("two_targets");
    const PairManifest m = build_pair_dataset(kFonts / "oracle_ref.ttf",
                                              {kFonts / "oracle_b.ttf", kFonts / "oracle_c.ttf"}, 32, out);
    REQUIRE(m.records.size() == 2);
    CHECK(m.styles.size() == 2);
    std::set<std::pair<char32_t, int>> got;
    for (const auto& rec : m.records) got.emplace(rec.codepoint, rec.style_id);
    CHECK(got == std::set<std::pair<char32_t, int>>{{U'B', 0}, {U'C', 1}});
}

TEST_CASE("a target sharing nothing raises EmptyIntersection") {
    const fs::path out = fresh_dir("empty");
    CHECK_THROWS_AS(build_pair_dataset(kFonts / "oracle_ref.ttf", {kFonts / "oracle_none.ttf"}, 32, out),
                    EmptyIntersection);
}

TEST_CASE("invalid canvas and missing fonts are rejected") {
    const fs::path out = fresh_dir("invalid");
    CHECK_THROWS_AS(build_pair_dataset(kFonts / "oracle_ref.ttf", {kFonts / "oracle_t1.ttf"}, 33, out),
                    InvalidCanvas);
    CHECK_THROWS_AS(build_pair_dataset(kFonts / "nope.ttf", {kFonts / "oracle_t1.ttf"}, 32, out), IoError);
}

TEST_CASE("manifest round-trips through JSON with validation") {
    const fs::path out = fresh_dir("roundtrip");
    const PairManifest built =
        build_pair_dataset(kFonts / "oracle_ref.ttf", {kFonts / "oracle_t1.ttf"}, 32, out);
    const PairManifest loaded = load_manifest(out / "manifest.json");
    CHECK(loaded.canvas_size == built.canvas_size);
    CHECK(loaded.styles == built.styles);
    REQUIRE(loaded.records.size() == built.records.size());
    for (std::size_t i = 0; i < loaded.records.size(); ++i) {
        CHECK(loaded.records[i].codepoint == built.records[i].codepoint);
        CHECK(loaded.records[i].reference_path == built.records[i].reference_path);
        CHECK(loaded.records[i].target_path == built.records[i].target_path);
        CHECK(loaded.records[i].style_id == built.records[i].style_id);
    }
}

TEST_CASE("pair symmetry: every referenced bitmap matches the manifest canvas") {
    const fs::path out = fresh_dir("symmetry");
    const PairManifest m = build_pair_dataset(kFonts / "oracle_ref.ttf",
                                              {kFonts / "oracle_t1.ttf", kFonts / "oracle_b.ttf"}, 64, out);
    for (const auto& rec : m.records) {
        const GlyphBitmap ref = read_png_gray8(m.base_dir / rec.reference_path);
        const GlyphBitmap tgt = read_png_gray8(m.base_dir / rec.target_path);
        CHECK(ref.width == 64);
        CHECK(ref.height == 64);
        CHECK(tgt.width == ref.width);
        CHECK(tgt.height == ref.height);
    }
}

TEST_CASE("batch loader yields every record once per epoch, seed-deterministic") {
    const fs::path out = fresh_dir("loader");
    // 100 shared codepoints x 2 styles
    const PairManifest m = build_pair_dataset(kFonts / "train_ref.ttf",
                                              {kFonts / "train_serif.ttf", kFonts / "train_bold.ttf"}, 32, out);
    REQUIRE(m.records.size() == 200);

    BatchLoader loader(m, 16, 7);
    CHECK(loader.batches_per_epoch() == 13);

    SUBCASE("batch sizes are 16 with a short tail") {
        const auto batches = loader.epoch(0);
        REQUIRE(batches.size() == 13);
        for (std::size_t i = 0; i + 1 < batches.size(); ++i) CHECK(batches[i].size() == 16);
        CHECK(batches.back().size() == 8);

        std::set<std::pair<char32_t, int>> seen;
        for (const auto& b : batches)
            for (const auto& ex : b) seen.emplace(ex.codepoint, ex.style_id);
        CHECK(seen.size() == 200); // every record exactly once
    }

    SUBCASE("same seed twice gives the identical order") {
        BatchLoader again(m, 16, 7);
        const auto a = loader.epoch(3);
        const auto b = again.epoch(3);
        REQUIRE(a.size() == b.size());
        for (std::size_t i = 0; i < a.size(); ++i)
            for (std::size_t j = 0; j < a[i].size(); ++j) {
                CHECK(a[i][j].codepoint == b[i][j].codepoint);
                CHECK(a[i][j].style_id == b[i][j].style_id);
            }
    }

    SUBCASE("different seeds shuffle differently with high probability") {
        int distinct = 0;
        for (std::uint64_t s = 0; s < 100; ++s) {
            BatchLoader l1(m, 200, s), l2(m, 200, s + 1000);
            const auto e1 = l1.epoch(0), e2 = l2.epoch(0);
            bool differ = false;
            for (std::size_t j = 0; j < e1[0].size() && !differ; ++j)
                differ = e1[0][j].codepoint != e2[0][j].codepoint || e1[0][j].style_id != e2[0][j].style_id;
            distinct += differ ? 1 : 0;
        }
        CHECK(distinct >= 99); // permutation collision odds are negligible
    }

    SUBCASE("10 records, batch 4 gives sizes 4,4,2") {
        PairManifest small = m;
        small.records.resize(10);
        BatchLoader l(small, 4, 1);
        const auto batches = l.epoch(0);
        REQUIRE(batches.size() == 3);
        CHECK(batches[0].size() == 4);
        CHECK(batches[1].size() == 4);
        CHECK(batches[2].size() == 2);
    }
}

TEST_CASE("normalized examples carry the ink-positive convention") {
    const fs::path out = fresh_dir("norm");
    const PairManifest m = build_pair_dataset(kFonts / "oracle_ref.ttf", {kFonts / "oracle_t1.ttf"}, 32, out);
    BatchLoader loader(m, 4, 0);
    for (const auto& ex : loader.all()) {
        bool has_pos = false;
        for (float v : ex.x0->values) {
            CHECK(v >= -1.0f);
            CHECK(v <= 1.0f);
            has_pos |= v > 0.0f;
        }
        CHECK(has_pos); // every oracle target glyph has ink
    }
}

TEST_CASE("loader rejects unreadable bitmaps and bad sizes") {
    const fs::path out = fresh_dir("badsize");
    PairManifest m = build_pair_dataset(kFonts / "oracle_ref.ttf", {kFonts / "oracle_t1.ttf"}, 32, out);
    m.records[0].target_path = "missing/file.png";
    CHECK_THROWS_AS(BatchLoader(m, 4, 0), IoError);

    PairManifest wrong = m;
    wrong.records.clear();
    CHECK_THROWS_AS(BatchLoader(wrong, 4, 0), InvalidConfig);
}

TEST_CASE("fingerprint is content-sensitive") {
    const fs::path out = fresh_dir("fingerprint");
    build_pair_dataset(kFonts / "oracle_ref.ttf", {kFonts / "oracle_t1.ttf"}, 32, out);
    const std::uint64_t a = fingerprint_file(out / "manifest.json");
    const std::uint64_t b = fingerprint_file(out / "manifest.json");
    CHECK(a == b);
    CHECK(fingerprint_hex(a).size() == 16);
    const std::uint64_t other = fingerprint_file(out / "ref" / "U+0042.png");
    CHECK(a != other);
}
