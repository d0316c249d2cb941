#include "glyphforge/image.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>

#include <png.h>

#include "glyphforge/errors.hpp"

namespace gf {

bool is_pow2(int v) { return v > 0 && (v & (v - 1)) == 0; }

void GlyphBitmap::validate() const {
    if (width != height) throw InvalidCanvas("bitmap canvas must be square, got " + std::to_string(width) + "x" + std::to_string(height));
    if (width < 8 || !is_pow2(width)) throw InvalidCanvas("canvas side must be a power of two >= 8, got " + std::to_string(width));
    if (pixels.size() != static_cast<std::size_t>(width) * height) throw ShapeMismatch("pixel buffer size does not match canvas");
    for (float p : pixels)
        if (!(p >= 0.0f && p <= 1.0f)) throw InvalidRange("pixel value outside [0,1]");
}

GlyphBitmap make_blank_bitmap(int side, char32_t codepoint) {
    GlyphBitmap b;
    b.width = b.height = side;
    b.codepoint = codepoint;
    b.pixels.assign(static_cast<std::size_t>(side) * side, 1.0f);
    return b;
}

NormalizedImage normalize(const GlyphBitmap& bitmap) {
    if (bitmap.width != bitmap.height) throw ShapeMismatch("normalize expects a square bitmap");
    NormalizedImage out;
    out.side = bitmap.width;
    out.values.resize(bitmap.pixels.size());
    for (std::size_t i = 0; i < bitmap.pixels.size(); ++i) out.values[i] = 1.0f - 2.0f * bitmap.pixels[i];
    return out;
}

GlyphBitmap denormalize(const NormalizedImage& image, char32_t codepoint) {
    GlyphBitmap out;
    out.width = out.height = image.side;
    out.codepoint = codepoint;
    out.pixels.resize(image.values.size());
    for (std::size_t i = 0; i < image.values.size(); ++i) {
        const float p = 0.5f * (1.0f - image.values[i]);
        out.pixels[i] = std::clamp(p, 0.0f, 1.0f);
    }
    return out;
}

double ink_fraction(const GlyphBitmap& bitmap) {
    if (bitmap.pixels.empty()) return 0.0;
    std::size_t ink = 0;
    for (float p : bitmap.pixels)
        if (p < 0.5f) ++ink;
    return static_cast<double>(ink) / static_cast<double>(bitmap.pixels.size());
}

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

std::vector<std::uint8_t> quantize(const GlyphBitmap& bitmap) {
    std::vector<std::uint8_t> bytes(bitmap.pixels.size());
    for (std::size_t i = 0; i < bitmap.pixels.size(); ++i) {
        const float p = std::clamp(bitmap.pixels[i], 0.0f, 1.0f);
        bytes[i] = static_cast<std::uint8_t>(std::lround(p * 255.0f));
    }
    return bytes;
}

void write_png_impl(const std::filesystem::path& path, const GlyphBitmap& bitmap,
                    const std::vector<std::pair<std::string, std::string>>* text) {
    FilePtr fp(std::fopen(path.string().c_str(), "wb"));
    if (!fp) throw IoError("cannot open for writing: " + path.string());

    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw IoError("png_create_write_struct failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        throw IoError("png_create_info_struct failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw IoError("png write failed: " + path.string());
    }
    png_init_io(png, fp.get());
    png_set_compression_level(png, 6);
    png_set_IHDR(png, info, static_cast<png_uint_32>(bitmap.width), static_cast<png_uint_32>(bitmap.height), 8,
                 PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);

    std::vector<png_text> chunks;
    if (text) {
        chunks.reserve(text->size());
        for (const auto& [k, v] : *text) {
            png_text t{};
            t.compression = PNG_TEXT_COMPRESSION_NONE;
            t.key = const_cast<char*>(k.c_str());
            t.text = const_cast<char*>(v.c_str());
            t.text_length = v.size();
            chunks.push_back(t);
        }
        if (!chunks.empty()) png_set_text(png, info, chunks.data(), static_cast<int>(chunks.size()));
    }

    png_write_info(png, info);
    const auto bytes = quantize(bitmap);
    for (int y = 0; y < bitmap.height; ++y)
        png_write_row(png, const_cast<png_bytep>(bytes.data() + static_cast<std::size_t>(y) * bitmap.width));
    png_write_end(png, info);
    png_destroy_write_struct(&png, &info);
}

} // namespace

void write_png_gray8(const std::filesystem::path& path, const GlyphBitmap& bitmap) {
    write_png_impl(path, bitmap, nullptr);
}

void write_png_gray8_with_text(const std::filesystem::path& path, const GlyphBitmap& bitmap,
                               const std::vector<std::pair<std::string, std::string>>& text) {
    write_png_impl(path, bitmap, &text);
}

GlyphBitmap read_png_gray8(const std::filesystem::path& path, char32_t codepoint) {
    FilePtr fp(std::fopen(path.string().c_str(), "rb"));
    if (!fp) throw IoError("cannot open for reading: " + path.string());

    std::uint8_t sig[8] = {};
    if (std::fread(sig, 1, 8, fp.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0)
        throw IoError("not a PNG file: " + path.string());

    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw IoError("png_create_read_struct failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        throw IoError("png_create_info_struct failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError("png read failed: " + path.string());
    }
    png_init_io(png, fp.get());
    png_set_sig_bytes(png, 8);
    png_read_info(png, info);

    const int color = png_get_color_type(png, info);
    const int depth = png_get_bit_depth(png, info);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    if (depth == 16) png_set_strip_16(png);
    if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    if (color == PNG_COLOR_TYPE_RGB || color == PNG_COLOR_TYPE_RGB_ALPHA || color == PNG_COLOR_TYPE_PALETTE)
        png_set_rgb_to_gray_fixed(png, 1, -1, -1);
    png_read_update_info(png, info);

    const int w = static_cast<int>(png_get_image_width(png, info));
    const int h = static_cast<int>(png_get_image_height(png, info));
    std::vector<std::uint8_t> bytes(static_cast<std::size_t>(w) * h);
    for (int y = 0; y < h; ++y) png_read_row(png, bytes.data() + static_cast<std::size_t>(y) * w, nullptr);
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);

    GlyphBitmap out;
    out.width = w;
    out.height = h;
    out.codepoint = codepoint;
    out.pixels.resize(bytes.size());
    for (std::size_t i = 0; i < bytes.size(); ++i) out.pixels[i] = static_cast<float>(bytes[i]) / 255.0f;
    return out;
}

} // namespace gf
