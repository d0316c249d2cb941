#pragma once

#include <span>
#include <string>
#include <vector>

#include "glyphforge/image.hpp"
#include "glyphforge/raster.hpp"

namespace gf {

struct TraceConfig {
    double threshold = 0.5;        // pixel < threshold => ink
    double simplify_tolerance = 0.75;
    double fit_max_error = 1.0;
    double min_contour_area = 4.0; // px^2
    double corner_angle_deg = 60.0;

    void validate() const;
};

struct Mask {
    int width = 0, height = 0;
    std::vector<std::uint8_t> ink; // row-major, 1 = ink

    bool at(int x, int y) const {
        if (x < 0 || y < 0 || x >= width || y >= height) return false;
        return ink[static_cast<std::size_t>(y) * width + x] != 0;
    }
};

Mask binarize(const GlyphBitmap& bitmap, double threshold);

/// Closed boundary polygon on the pixel-corner grid. Outer contours carry
/// positive shoelace area, holes negative; first point is not repeated.
struct Contour {
    std::vector<Vec2> points;
    bool hole = false;

    double signed_area() const;
};

/// Pixel-exact boundary extraction (ink kept on the right of travel). Contours
/// with |area| below min_area are dropped. Empty mask yields an empty list.
std::vector<Contour> trace_contours(const Mask& mask, double min_area = 0.0);

/// Ramer-Douglas-Peucker on a closed contour; every input point stays within
/// `tolerance` of the simplified polyline.
Contour simplify(const Contour& contour, double tolerance);

/// Variant that also reports which input indices were kept (ascending).
Contour simplify_indices(const Contour& contour, double tolerance, std::vector<int>& kept);

struct CubicSeg {
    Vec2 c1, c2, p; // two control points and the segment endpoint
};

/// Closed chain of cubic segments; segment i starts where segment i-1 ended
/// (the last segment ends back at `start`).
struct VectorPath {
    Vec2 start;
    std::vector<CubicSeg> segs;
    bool closed = true;
};

/// Least-squares cubic fitting with recursive splitting until every sample lies
/// within max_error of its curve; vertices turning more than corner_angle_deg
/// become segment boundaries with split tangents. `between`, when non-empty,
/// supplies extra witness points per polyline edge that must also satisfy the
/// error bound (used to honour the bound on pre-simplification traced points).
VectorPath fit_beziers(const Contour& contour, double max_error, double corner_angle_deg = 60.0,
                       const std::vector<std::vector<Vec2>>* between = nullptr);

/// Standalone SVG 1.1 document; one path element with even-odd fill carrying
/// all contours, coordinates rounded to 2 decimals, viewBox = canvas.
std::string emit_svg(std::span<const VectorPath> paths, int canvas);

/// Parses path data produced by emit_svg (M/C/Z subset).
std::vector<VectorPath> parse_svg_paths(const std::string& svg_text);

/// Renders the fitted outlines back to a bitmap (even-odd rule, anti-aliased).
GlyphBitmap rasterize_paths(std::span<const VectorPath> paths, int canvas);

/// Full pipeline: binarize -> trace -> simplify -> fit (with traced-point
/// witnesses). Returns one VectorPath per surviving contour.
std::vector<VectorPath> trace_glyph(const GlyphBitmap& bitmap, const TraceConfig& cfg);

/// Distance from every traced contour point of `bitmap` to the fitted chain;
/// used by tests and the round-trip check.
double max_fit_deviation(const GlyphBitmap& bitmap, const TraceConfig& cfg, const std::vector<VectorPath>& paths);

/// pixel_match between the binarized input and the re-rasterized SVG outlines.
double svg_roundtrip_match(const GlyphBitmap& bitmap, const TraceConfig& cfg);

/// Nearest distance from a point to a cubic chain (projection + refinement).
double distance_to_paths(const Vec2& p, const std::vector<VectorPath>& paths);

} // namespace gf
