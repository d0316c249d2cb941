#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>

#include "glyphforge/errors.hpp"
#include "glyphforge/image.hpp"
#include "glyphforge/rng.hpp"

using namespace gf;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir() {
    const fs::path p = fs::temp_directory_path() / "gf_test_image";
    fs::create_directories(p);
    return p;
}

} // namespace

TEST_CASE("normalize maps ink to +1 and background to -1") {
    GlyphBitmap b = make_blank_bitmap(8, U'x');
    const NormalizedImage all_bg = normalize(b);
    for (float v : all_bg.values) CHECK(v == -1.0f);

    b.pixels[3] = 0.0f;  // ink
    b.pixels[5] = 0.5f;  // midpoint
    const NormalizedImage n = normalize(b);
    CHECK(n.values[3] == 1.0f);
    CHECK(n.values[5] == 0.0f);
}

TEST_CASE("normalize/denormalize is a bijection on the 256 quantized levels") {
    GlyphBitmap b = make_blank_bitmap(16, 0);
    for (int k = 0; k < 256; ++k) b.pixels[static_cast<std::size_t>(k)] = static_cast<float>(k) / 255.0f;
    const GlyphBitmap round = denormalize(normalize(b), b.codepoint);
    float max_diff = 0.0f;
    for (int k = 0; k < 256; ++k)
        max_diff = std::max(max_diff, std::abs(round.pixels[static_cast<std::size_t>(k)] -
                                               b.pixels[static_cast<std::size_t>(k)]));
    CHECK(max_diff <= 1.0f / 255.0f);
}

TEST_CASE("bitmap validation enforces the canvas invariants") {
    GlyphBitmap b = make_blank_bitmap(32, 0);
    CHECK_NOTHROW(b.validate());
    b.width = 33;
    CHECK_THROWS_AS(b.validate(), InvalidCanvas);
    b = make_blank_bitmap(4, 0);
    CHECK_THROWS_AS(b.validate(), InvalidCanvas);
    b = make_blank_bitmap(32, 0);
    b.pixels[0] = 1.5f;
    CHECK_THROWS_AS(b.validate(), InvalidRange);
}

TEST_CASE("png round trip preserves 8-bit grayscale exactly") {
    Rng rng(4);
    GlyphBitmap b = make_blank_bitmap(32, U'A');
    for (auto& p : b.pixels) p = static_cast<float>(rng.uniform_int(256)) / 255.0f;
    const fs::path path = temp_dir() / "roundtrip.png";
    write_png_gray8(path, b);
    const GlyphBitmap r = read_png_gray8(path, b.codepoint);
    REQUIRE(r.width == 32);
    REQUIRE(r.height == 32);
    for (std::size_t i = 0; i < b.pixels.size(); ++i) CHECK(r.pixels[i] == b.pixels[i]);
}

TEST_CASE("png writes are byte-deterministic") {
    GlyphBitmap b = make_blank_bitmap(16, 0);
    b.pixels[5] = 0.25f;
    const fs::path p1 = temp_dir() / "det1.png";
    const fs::path p2 = temp_dir() / "det2.png";
    write_png_gray8(p1, b);
    write_png_gray8(p2, b);
    CHECK(fs::file_size(p1) == fs::file_size(p2));
    FILE* f1 = std::fopen(p1.string().c_str(), "rb");
    FILE* f2 = std::fopen(p2.string().c_str(), "rb");
    REQUIRE(f1 != nullptr);
    REQUIRE(f2 != nullptr);
    int c1, c2;
    do {
        c1 = std::fgetc(f1);
        c2 = std::fgetc(f2);
        CHECK(c1 == c2);
    } while (c1 != EOF);
    std::fclose(f1);
    std::fclose(f2);
}

TEST_CASE("reading a missing file raises IoError") {
    CHECK_THROWS_AS(read_png_gray8(temp_dir() / "does_not_exist.png"), IoError);
}

TEST_CASE("ink fraction counts dark pixels") {
    GlyphBitmap b = make_blank_bitmap(8, 0);
    CHECK(ink_fraction(b) == 0.0);
    for (int i = 0; i < 16; ++i) b.pixels[static_cast<std::size_t>(i)] = 0.0f;
    CHECK(ink_fraction(b) == doctest::Approx(16.0 / 64.0));
}

TEST_CASE("rng determinism and stream independence") {
    Rng a(42), b(42);
    for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
    Rng s1 = Rng::from_stream(42, 1, 0);
    Rng s2 = Rng::from_stream(42, 2, 0);
    int same = 0;
    for (int i = 0; i < 64; ++i) same += s1.next_u64() == s2.next_u64() ? 1 : 0;
    CHECK(same == 0);
}

TEST_CASE("rng normal moments") {
    Rng rng(9);
    const int n = 200000;
    double sum = 0.0, sq = 0.0;
    for (int i = 0; i < n; ++i) {
        const double v = rng.normal();
        sum += v;
        sq += v * v;
    }
    const double mean = sum / n;
    const double var = sq / n - mean * mean;
    CHECK(std::abs(mean) < 3.0 / std::sqrt(static_cast<double>(n)));
    CHECK(std::abs(var - 1.0) < 3.0 * std::sqrt(2.0 / n));
}
