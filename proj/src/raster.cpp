#include "glyphforge/raster.hpp"

#include <algorithm>
#include <cmath>

namespace gf {

namespace {

struct Edge {
    double x0, y0, x1, y1; // y0 < y1 after normalization
    int dir;               // +1 if original segment pointed down (+y), -1 otherwise
};

void collect_edges(const std::vector<Polyline>& contours, std::vector<Edge>& edges) {
    for (const auto& poly : contours) {
        const std::size_t n = poly.size();
        if (n < 2) continue;
        for (std::size_t i = 0; i < n; ++i) {
            const Vec2& a = poly[i];
            const Vec2& b = poly[(i + 1) % n];
            if (a.y == b.y) continue; // horizontal edges never cross a scanline
            Edge e;
            if (a.y < b.y) {
                e = {a.x, a.y, b.x, b.y, +1};
            } else {
                e = {b.x, b.y, a.x, a.y, -1};
            }
            edges.push_back(e);
        }
    }
}

} // namespace

std::vector<float> fill_coverage(const std::vector<Polyline>& contours, int width, int height,
                                 FillRule rule, int subsamples) {
    std::vector<float> coverage(static_cast<std::size_t>(width) * height, 0.0f);
    std::vector<Edge> edges;
    collect_edges(contours, edges);
    if (edges.empty()) return coverage;

    const double weight = 1.0 / subsamples;
    std::vector<std::pair<double, int>> crossings; // (x, dir)
    crossings.reserve(edges.size());

    for (int row = 0; row < height; ++row) {
        float* out = coverage.data() + static_cast<std::size_t>(row) * width;
        for (int s = 0; s < subsamples; ++s) {
            const double y = row + (s + 0.5) / subsamples;
            crossings.clear();
            for (const Edge& e : edges) {
                if (y < e.y0 || y >= e.y1) continue; // half-open: shared vertices count once
                const double t = (y - e.y0) / (e.y1 - e.y0);
                crossings.emplace_back(e.x0 + t * (e.x1 - e.x0), e.dir);
            }
            if (crossings.size() < 2) continue;
            std::sort(crossings.begin(), crossings.end());

            // Walk crossings left to right, tracking inside-ness per fill rule.
            int winding = 0;
            std::size_t parity = 0;
            double span_start = 0.0;
            bool inside = false;
            for (const auto& [x, dir] : crossings) {
                bool now_inside;
                if (rule == FillRule::nonzero) {
                    winding += dir;
                    now_inside = winding != 0;
                } else {
                    ++parity;
                    now_inside = (parity % 2) != 0;
                }
                if (now_inside && !inside) {
                    span_start = x;
                    inside = true;
                } else if (!now_inside && inside) {
                    inside = false;
                    // Add the span [span_start, x) clipped to the row.
                    double lo = std::max(span_start, 0.0);
                    double hi = std::min(x, static_cast<double>(width));
                    if (hi <= lo) continue;
                    int px0 = static_cast<int>(std::floor(lo));
                    int px1 = static_cast<int>(std::ceil(hi)) - 1;
                    px1 = std::min(px1, width - 1);
                    for (int px = px0; px <= px1; ++px) {
                        const double seg = std::min(hi, static_cast<double>(px + 1)) - std::max(lo, static_cast<double>(px));
                        if (seg > 0.0) out[px] += static_cast<float>(seg * weight);
                    }
                }
            }
        }
    }
    for (float& c : coverage) c = std::min(c, 1.0f);
    return coverage;
}

namespace {

double point_segment_dist(Vec2 p, Vec2 a, Vec2 b) {
    const double dx = b.x - a.x, dy = b.y - a.y;
    const double len2 = dx * dx + dy * dy;
    double t = len2 > 0.0 ? ((p.x - a.x) * dx + (p.y - a.y) * dy) / len2 : 0.0;
    t = std::clamp(t, 0.0, 1.0);
    const double ex = a.x + t * dx - p.x, ey = a.y + t * dy - p.y;
    return std::sqrt(ex * ex + ey * ey);
}

void flatten_quad_rec(Vec2 p0, Vec2 c, Vec2 p1, double tol, Polyline& out, int depth) {
    if (depth >= 16 || point_segment_dist(c, p0, p1) * 0.5 <= tol) {
        out.push_back(p1);
        return;
    }
    const Vec2 q0{(p0.x + c.x) / 2, (p0.y + c.y) / 2};
    const Vec2 q1{(c.x + p1.x) / 2, (c.y + p1.y) / 2};
    const Vec2 m{(q0.x + q1.x) / 2, (q0.y + q1.y) / 2};
    flatten_quad_rec(p0, q0, m, tol, out, depth + 1);
    flatten_quad_rec(m, q1, p1, tol, out, depth + 1);
}

void flatten_cubic_rec(Vec2 p0, Vec2 c1, Vec2 c2, Vec2 p1, double tol, Polyline& out, int depth) {
    const double d = std::max(point_segment_dist(c1, p0, p1), point_segment_dist(c2, p0, p1));
    if (depth >= 16 || d * 0.5 <= tol) {
        out.push_back(p1);
        return;
    }
    const Vec2 a{(p0.x + c1.x) / 2, (p0.y + c1.y) / 2};
    const Vec2 b{(c1.x + c2.x) / 2, (c1.y + c2.y) / 2};
    const Vec2 c{(c2.x + p1.x) / 2, (c2.y + p1.y) / 2};
    const Vec2 ab{(a.x + b.x) / 2, (a.y + b.y) / 2};
    const Vec2 bc{(b.x + c.x) / 2, (b.y + c.y) / 2};
    const Vec2 m{(ab.x + bc.x) / 2, (ab.y + bc.y) / 2};
    flatten_cubic_rec(p0, a, ab, m, tol, out, depth + 1);
    flatten_cubic_rec(m, bc, c, p1, tol, out, depth + 1);
}

} // namespace

void flatten_quadratic(Vec2 p0, Vec2 c, Vec2 p1, double tolerance, Polyline& out) {
    flatten_quad_rec(p0, c, p1, tolerance, out, 0);
}

void flatten_cubic(Vec2 p0, Vec2 c1, Vec2 c2, Vec2 p1, double tolerance, Polyline& out) {
    flatten_cubic_rec(p0, c1, c2, p1, tolerance, out, 0);
}

} // namespace gf
