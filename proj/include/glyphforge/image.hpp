#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace gf {

/// Fixed-size grayscale raster of one glyph. Convention: 0 = ink, 1 = background.
struct GlyphBitmap {
    int width = 0;
    int height = 0;
    char32_t codepoint = 0;
    std::vector<float> pixels; // row-major, values in [0,1]

    float& at(int x, int y) { return pixels[static_cast<std::size_t>(y) * width + x]; }
    float at(int x, int y) const { return pixels[static_cast<std::size_t>(y) * width + x]; }

    // Throws on violated invariants (square pow2 canvas, pixel range).
    void validate() const;
};

/// Data-space image for the diffusion process: v = 1 - 2*pixel, ink maps to +1.
struct NormalizedImage {
    int side = 0;
    std::vector<float> values; // row-major, in [-1,1]
};

bool is_pow2(int v);

GlyphBitmap make_blank_bitmap(int side, char32_t codepoint = 0);

NormalizedImage normalize(const GlyphBitmap& bitmap);
GlyphBitmap denormalize(const NormalizedImage& image, char32_t codepoint = 0);

/// Fraction of pixels darker than 0.5.
double ink_fraction(const GlyphBitmap& bitmap);

// 8-bit grayscale PNG, no alpha. Reading converts any PNG to 8-bit gray.
void write_png_gray8(const std::filesystem::path& path, const GlyphBitmap& bitmap);
GlyphBitmap read_png_gray8(const std::filesystem::path& path, char32_t codepoint = 0);

// Optional tEXt key/value pairs (used by the grid renderer for row labels).
void write_png_gray8_with_text(const std::filesystem::path& path, const GlyphBitmap& bitmap,
                               const std::vector<std::pair<std::string, std::string>>& text);

} // namespace gf
