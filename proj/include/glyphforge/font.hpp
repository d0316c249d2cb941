#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "glyphforge/image.hpp"
#include "glyphforge/raster.hpp"

namespace gf {

/// TrueType outline font (glyf tables). CFF-flavoured OTF is rejected at load.
/// Coverage comes from the character map, never from rendering.
class TtfFont {
public:
    static TtfFont load_file(const std::filesystem::path& path);
    static TtfFont from_bytes(std::vector<std::uint8_t> bytes, std::string name);

    const std::string& name() const { return name_; }
    int units_per_em() const { return units_per_em_; }
    int ascent() const { return ascent_; }
    int descent() const { return descent_; } // typically negative

    bool has_codepoint(char32_t cp) const { return cmap_.count(cp) != 0; }
    std::vector<char32_t> codepoints() const; // sorted ascending

    int advance_width(char32_t cp) const; // font units

    struct OutlinePoint {
        double x, y;
        bool on_curve;
    };
    using OutlineContour = std::vector<OutlinePoint>;

    /// Raw quadratic outline in font units (y up). Empty for blank glyphs.
    std::vector<OutlineContour> outline(char32_t cp) const;

private:
    TtfFont() = default;
    void parse();
    std::uint16_t glyph_index(char32_t cp) const;
    void decode_glyph(std::uint16_t gid, double dx, double dy, const double* mat2x2,
                      std::vector<OutlineContour>& out, int depth) const;

    std::vector<std::uint8_t> data_;
    std::string name_;
    std::map<std::string, std::pair<std::uint32_t, std::uint32_t>> tables_; // tag -> (offset, length)
    std::map<char32_t, std::uint16_t> cmap_;
    std::vector<std::uint32_t> loca_;
    std::uint32_t glyf_offset_ = 0;
    std::uint32_t glyf_length_ = 0;
    int units_per_em_ = 0;
    int ascent_ = 0;
    int descent_ = 0;
    int num_glyphs_ = 0;
    int num_hmetrics_ = 0;
    std::uint32_t hmtx_offset_ = 0;
};

/// Renders `codepoint` centered in its em-box scaled to `canvas` (a power of two >= 8).
/// Anti-aliased grayscale; background exactly 1.0 outside coverage.
GlyphBitmap rasterize_glyph(const TtfFont& font, char32_t codepoint, int canvas);

} // namespace gf
