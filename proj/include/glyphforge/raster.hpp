#pragma once

#include <vector>

namespace gf {

struct Vec2 {
    double x = 0.0;
    double y = 0.0;
};

using Polyline = std::vector<Vec2>; // closed implicitly (last connects to first)

enum class FillRule { nonzero, even_odd };

/// Scanline coverage of a set of closed polylines over a w x h pixel grid.
/// Pixel (x,y) covers [x,x+1) x [y,y+1). Exact span coverage in x, `subsamples`
/// sub-scanlines per pixel row in y. Returns row-major coverage in [0,1].
std::vector<float> fill_coverage(const std::vector<Polyline>& contours, int width, int height,
                                 FillRule rule, int subsamples = 8);

/// Adds the flattened quadratic (p0,c,p1) to `out` (p0 assumed already present).
void flatten_quadratic(Vec2 p0, Vec2 c, Vec2 p1, double tolerance, Polyline& out);

/// Adds the flattened cubic (p0,c1,c2,p1) to `out` (p0 assumed already present).
void flatten_cubic(Vec2 p0, Vec2 c1, Vec2 c2, Vec2 p1, double tolerance, Polyline& out);

} // namespace gf
