#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <filesystem>

#include "glyphforge/errors.hpp"
#include "glyphforge/font.hpp"

using namespace gf;
namespace fs = std::filesystem;

namespace {

const fs::path kFonts = fs::path(GF_TEST_DATA_DIR) / "fonts";

struct Bbox {
    int min_x = 1 << 30, min_y = 1 << 30, max_x = -1, max_y = -1;
    int width() const { return max_x - min_x + 1; }
    int height() const { return max_y - min_y + 1; }
    bool empty() const { return max_x < 0; }
};

Bbox ink_bbox(const GlyphBitmap& b) {
    Bbox box;
    for (int y = 0; y < b.height; ++y)
        for (int x = 0; x < b.width; ++x)
            if (b.at(x, y) < 0.5f) {
                box.min_x = std::min(box.min_x, x);
                box.min_y = std::min(box.min_y, y);
                box.max_x = std::max(box.max_x, x);
                box.max_y = std::max(box.max_y, y);
            }
    return box;
}

} // namespace

TEST_CASE("synthetic bar glyph renders at the analytic position") {
    const TtfFont font = TtfFont::load_file(kFonts / "oracle_ref.ttf");
    const GlyphBitmap bmp = rasterize_glyph(font, U'一', 128);
    CHECK(ink_fraction(bmp) > 0.0);

    // Font units: bar x in [100,900], y in [460,540]; canvas/em = 0.128,
    // baseline at 102.4. Device bbox: x [12.8, 115.2], y [33.28, 43.52].
    const Bbox box = ink_bbox(bmp);
    CHECK(std::abs(box.min_x - 13) <= 2);
    CHECK(std::abs(box.max_x - 114) <= 2);
    CHECK(std::abs(box.min_y - 33) <= 2);
    CHECK(std::abs(box.max_y - 43) <= 2);
    CHECK(box.width() > 3 * box.height()); // one horizontal stroke

    // background is exactly 1.0 outside coverage
    CHECK(bmp.at(0, 0) == 1.0f);
    CHECK(bmp.at(127, 127) == 1.0f);
}

TEST_CASE("synthetic square glyph at canvas 64") {
    const TtfFont font = TtfFont::load_file(kFonts / "oracle_ref.ttf");
    const GlyphBitmap bmp = rasterize_glyph(font, U'■', 64);
    const Bbox box = ink_bbox(bmp);
    // x,y in [250,750] font units -> device [16,48] x [3.2,35.2]
    CHECK(std::abs(box.min_x - 16) <= 2);
    CHECK(std::abs(box.max_x - 47) <= 2);
    CHECK(std::abs(box.min_y - 3) <= 2);
    CHECK(std::abs(box.max_y - 35) <= 2);
    CHECK(std::abs(box.width() - box.height()) <= 1);
}

TEST_CASE("missing glyph and invalid canvas raise the documented errors") {
    const TtfFont font = TtfFont::load_file(kFonts / "oracle_ref.ttf");
    CHECK_THROWS_AS(rasterize_glyph(font, static_cast<char32_t>(0x20000), 128), MissingGlyph);
    CHECK_THROWS_AS(rasterize_glyph(font, U'A', 100), InvalidCanvas);
    CHECK_THROWS_AS(rasterize_glyph(font, U'A', 4), InvalidCanvas);
}

TEST_CASE("blank glyph rasterizes to an all-background canvas") {
    const TtfFont font = TtfFont::load_file(kFonts / "oracle_ref.ttf");
    const GlyphBitmap bmp = rasterize_glyph(font, U' ', 32);
    CHECK(ink_fraction(bmp) == 0.0);
    for (float p : bmp.pixels) CHECK(p == 1.0f);
}

TEST_CASE("coverage comes from the character map") {
    const TtfFont font = TtfFont::load_file(kFonts / "oracle_ref.ttf");
    const auto cps = font.codepoints();
    CHECK(cps.size() == 7);
    CHECK(font.has_codepoint(U'A'));
    CHECK(font.has_codepoint(U'一'));
    CHECK(font.has_codepoint(U' ')); // blank but mapped
    CHECK(!font.has_codepoint(U'Z'));
    CHECK(std::is_sorted(cps.begin(), cps.end()));
}

TEST_CASE("rasterization is deterministic") {
    const TtfFont font = TtfFont::load_file(kFonts / "train_ref.ttf");
    const GlyphBitmap a = rasterize_glyph(font, U'H', 64);
    const GlyphBitmap b = rasterize_glyph(font, U'H', 64);
    REQUIRE(a.pixels.size() == b.pixels.size());
    for (std::size_t i = 0; i < a.pixels.size(); ++i) CHECK(a.pixels[i] == b.pixels[i]);
}

TEST_CASE("DejaVu glyph sizes match a trusted rasterizer within 2 px") {
    // Expected ink-bbox sizes computed with PIL/FreeType at the equivalent
    // pixel size (canvas 64, em scaled by ascent-descent).
    const TtfFont font = TtfFont::load_file(kFonts / "train_ref.ttf");
    struct Expect {
        char32_t cp;
        int w, h;
    };
    const Expect cases[] = {
        {U'H', 30, 40}, {U'g', 27, 42}, {U'o', 27, 31}, {U'Α', 36, 40}, {U'À', 36, 52}};
    for (const auto& e : cases) {
        const GlyphBitmap bmp = rasterize_glyph(font, e.cp, 64);
        const Bbox box = ink_bbox(bmp);
        REQUIRE(!box.empty());
        CHECK(std::abs(box.width() - e.w) <= 2);
        CHECK(std::abs(box.height() - e.h) <= 2);
    }
}

TEST_CASE("composite glyphs resolve components (accent sits above the base)") {
    const TtfFont font = TtfFont::load_file(kFonts / "train_ref.ttf");
    const Bbox plain = ink_bbox(rasterize_glyph(font, U'A', 64));
    const Bbox accented = ink_bbox(rasterize_glyph(font, U'À', 64));
    CHECK(accented.min_y < plain.min_y);      // accent extends upward
    CHECK(std::abs(accented.max_y - plain.max_y) <= 1);
}

TEST_CASE("hollow square keeps its counter under the nonzero rule") {
    const TtfFont font = TtfFont::load_file(kFonts / "oracle_ref.ttf");
    const GlyphBitmap bmp = rasterize_glyph(font, U'□', 64);
    // center must be background, ring must be ink
    CHECK(bmp.at(32, 26) > 0.5f);  // inside the hole (baseline shift moves it up)
    const Bbox box = ink_bbox(bmp);
    CHECK(box.width() >= 36);
    CHECK(ink_fraction(bmp) > 0.05);
    CHECK(ink_fraction(bmp) < 0.35);
}

TEST_CASE("font loading errors") {
    CHECK_THROWS_AS(TtfFont::load_file(kFonts / "missing.ttf"), IoError);
    CHECK_THROWS_AS(TtfFont::from_bytes({0, 1, 2, 3, 4, 5, 6, 7}, "junk"), FontError);
}
