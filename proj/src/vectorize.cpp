#include "glyphforge/vectorize.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <optional>
#include <sstream>

#include "glyphforge/errors.hpp"
#include "glyphforge/eval.hpp"

namespace gf {

void TraceConfig::validate() const {
    if (!(threshold > 0.0 && threshold < 1.0)) throw InvalidRange("trace threshold must lie in (0,1)");
    if (!(simplify_tolerance > 0.0)) throw InvalidRange("simplify_tolerance must be positive");
    if (!(fit_max_error > 0.0)) throw InvalidRange("fit_max_error must be positive");
    if (!(min_contour_area > 0.0)) throw InvalidRange("min_contour_area must be positive");
    if (!(corner_angle_deg > 0.0 && corner_angle_deg < 180.0)) throw InvalidRange("corner angle must lie in (0,180)");
}

Mask binarize(const GlyphBitmap& bitmap, double threshold) {
    if (!(threshold > 0.0 && threshold < 1.0)) throw InvalidRange("binarize threshold must lie in (0,1)");
    Mask m;
    m.width = bitmap.width;
    m.height = bitmap.height;
    m.ink.resize(bitmap.pixels.size());
    for (std::size_t i = 0; i < bitmap.pixels.size(); ++i)
        m.ink[i] = bitmap.pixels[i] < static_cast<float>(threshold) ? 1 : 0; // ties go to background
    return m;
}

double Contour::signed_area() const {
    const std::size_t n = points.size();
    double a = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const Vec2& p = points[i];
        const Vec2& q = points[(i + 1) % n];
        a += p.x * q.y - q.x * p.y;
    }
    return a / 2.0;
}

namespace {

// Directions on the corner grid: 0:+x 1:+y 2:-x 3:-y (y grows downward).
constexpr int kDx[4] = {1, 0, -1, 0};
constexpr int kDy[4] = {0, 1, 0, -1};

} // namespace

std::vector<Contour> trace_contours(const Mask& mask, double min_area) {
    const int w = mask.width, h = mask.height;
    const int vw = w + 1; // corner-grid width
    // edge_out[vid] = bitmask of unvisited outgoing boundary edges at a vertex.
    std::vector<std::uint8_t> edge_out(static_cast<std::size_t>(vw) * (h + 1), 0);
    auto vid = [vw](int x, int y) { return static_cast<std::size_t>(y) * vw + x; };

    // Ink stays on the right of the travel direction.
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            if (!mask.at(x, y)) continue;
            if (!mask.at(x, y - 1)) edge_out[vid(x, y)] |= 1 << 0;         // top edge, +x
            if (!mask.at(x + 1, y)) edge_out[vid(x + 1, y)] |= 1 << 1;     // right edge, +y
            if (!mask.at(x, y + 1)) edge_out[vid(x + 1, y + 1)] |= 1 << 2; // bottom edge, -x
            if (!mask.at(x - 1, y)) edge_out[vid(x, y + 1)] |= 1 << 3;     // left edge, -y
        }
    }

    std::vector<Contour> contours;
    for (int sy = 0; sy <= h; ++sy) {
        for (int sx = 0; sx <= w; ++sx) {
            while (edge_out[vid(sx, sy)] != 0) {
                int dir = 0;
                while (!(edge_out[vid(sx, sy)] & (1 << dir))) ++dir;
                Contour c;
                int x = sx, y = sy, d = dir;
                for (;;) {
                    edge_out[vid(x, y)] &= static_cast<std::uint8_t>(~(1 << d));
                    // Merge collinear runs as we go.
                    if (c.points.size() >= 2) {
                        const Vec2& a = c.points[c.points.size() - 2];
                        const Vec2& b = c.points.back();
                        if ((b.x - a.x) * kDy[d] == (b.y - a.y) * kDx[d] &&
                            ((b.x - a.x) * kDx[d] > 0 || (b.y - a.y) * kDy[d] > 0))
                            c.points.pop_back();
                    }
                    x += kDx[d];
                    y += kDy[d];
                    if (x == sx && y == sy && c.points.empty()) break; // degenerate
                    c.points.push_back({static_cast<double>(x), static_cast<double>(y)});
                    if (x == sx && y == sy) break;
                    // Prefer the sharpest right turn, then straight, then left.
                    const int right = (d + 1) & 3, straight = d, left = (d + 3) & 3;
                    if (edge_out[vid(x, y)] & (1 << right))
                        d = right;
                    else if (edge_out[vid(x, y)] & (1 << straight))
                        d = straight;
                    else if (edge_out[vid(x, y)] & (1 << left))
                        d = left;
                    else
                        throw InvalidConfig("contour tracing reached a dead end (corrupt mask?)");
                }
                if (c.points.size() < 3) continue;
                // Merge a possible collinear seam across the closing point.
                {
                    auto collinear = [](const Vec2& a, const Vec2& b, const Vec2& cpt) {
                        return (b.x - a.x) * (cpt.y - b.y) == (b.y - a.y) * (cpt.x - b.x);
                    };
                    while (c.points.size() >= 3 &&
                           collinear(c.points[c.points.size() - 2], c.points.back(), c.points.front()))
                        c.points.pop_back();
                    while (c.points.size() >= 3 && collinear(c.points.back(), c.points.front(), c.points[1]))
                        c.points.erase(c.points.begin());
                }
                const double area = c.signed_area();
                c.hole = area < 0.0;
                if (std::abs(area) >= min_area) contours.push_back(std::move(c));
            }
        }
    }
    return contours;
}

namespace {

double point_to_segment(const Vec2& p, const Vec2& a, const Vec2& b) {
    const double dx = b.x - a.x, dy = b.y - a.y;
    const double len2 = dx * dx + dy * dy;
    double t = len2 > 0.0 ? ((p.x - a.x) * dx + (p.y - a.y) * dy) / len2 : 0.0;
    t = std::clamp(t, 0.0, 1.0);
    const double ex = a.x + t * dx - p.x, ey = a.y + t * dy - p.y;
    return std::hypot(ex, ey);
}

void rdp_open(const std::vector<Vec2>& pts, int first, int last, double tol, std::vector<char>& keep) {
    if (last - first < 2) return;
    double max_d = -1.0;
    int idx = -1;
    for (int i = first + 1; i < last; ++i) {
        const double d = point_to_segment(pts[static_cast<std::size_t>(i)], pts[static_cast<std::size_t>(first)],
                                          pts[static_cast<std::size_t>(last)]);
        if (d > max_d) {
            max_d = d;
            idx = i;
        }
    }
    if (max_d > tol) {
        keep[static_cast<std::size_t>(idx)] = 1;
        rdp_open(pts, first, idx, tol, keep);
        rdp_open(pts, idx, last, tol, keep);
    }
}

} // namespace

Contour simplify_indices(const Contour& contour, double tolerance, std::vector<int>& kept) {
    if (!(tolerance > 0.0)) throw InvalidRange("simplify tolerance must be positive");
    const auto& pts = contour.points;
    const int n = static_cast<int>(pts.size());
    kept.clear();
    if (n <= 3) {
        for (int i = 0; i < n; ++i) kept.push_back(i);
        return contour;
    }
    // Closed contour: anchor at point 0 and the farthest point from it, then
    // run open RDP over the two halves (rotated so the wrap is explicit).
    int far = 1;
    double best = -1.0;
    for (int i = 1; i < n; ++i) {
        const double d = std::hypot(pts[static_cast<std::size_t>(i)].x - pts[0].x,
                                    pts[static_cast<std::size_t>(i)].y - pts[0].y);
        if (d > best) {
            best = d;
            far = i;
        }
    }
    std::vector<char> keep(static_cast<std::size_t>(n), 0);
    keep[0] = keep[static_cast<std::size_t>(far)] = 1;
    rdp_open(pts, 0, far, tolerance, keep);
    {
        // Second half wraps: work on a rotated copy [far..n-1, 0].
        std::vector<Vec2> tail(pts.begin() + far, pts.end());
        tail.push_back(pts[0]);
        std::vector<char> keep_tail(tail.size(), 0);
        keep_tail.front() = keep_tail.back() = 1;
        rdp_open(tail, 0, static_cast<int>(tail.size()) - 1, tolerance, keep_tail);
        for (std::size_t i = 1; i + 1 < tail.size(); ++i)
            if (keep_tail[i]) keep[static_cast<std::size_t>(far) + i] = 1;
    }
    Contour out;
    out.hole = contour.hole;
    for (int i = 0; i < n; ++i) {
        if (keep[static_cast<std::size_t>(i)]) {
            kept.push_back(i);
            out.points.push_back(pts[static_cast<std::size_t>(i)]);
        }
    }
    return out;
}

Contour simplify(const Contour& contour, double tolerance) {
    std::vector<int> kept;
    return simplify_indices(contour, tolerance, kept);
}

// ---------------------------------------------------------------------------
// Schneider-style cubic fitting
// ---------------------------------------------------------------------------

namespace {

Vec2 operator+(Vec2 a, Vec2 b) { return {a.x + b.x, a.y + b.y}; }
Vec2 operator-(Vec2 a, Vec2 b) { return {a.x - b.x, a.y - b.y}; }
Vec2 operator*(Vec2 a, double s) { return {a.x * s, a.y * s}; }
double dot(Vec2 a, Vec2 b) { return a.x * b.x + a.y * b.y; }
double norm(Vec2 a) { return std::hypot(a.x, a.y); }
Vec2 normalized(Vec2 a) {
    const double n = norm(a);
    return n > 0.0 ? Vec2{a.x / n, a.y / n} : Vec2{0.0, 0.0};
}

using Bezier = std::array<Vec2, 4>;

Vec2 bezier_eval(const Bezier& b, double t) {
    const double u = 1.0 - t;
    const double b0 = u * u * u, b1 = 3 * u * u * t, b2 = 3 * u * t * t, b3 = t * t * t;
    return {b[0].x * b0 + b[1].x * b1 + b[2].x * b2 + b[3].x * b3,
            b[0].y * b0 + b[1].y * b1 + b[2].y * b2 + b[3].y * b3};
}

double bezier_b1(double u) {
    const double m = 1.0 - u;
    return 3 * u * m * m;
}
double bezier_b2(double u) {
    const double m = 1.0 - u;
    return 3 * u * u * m;
}

double newton_step(const Bezier& q, Vec2 p, double u) {
    Vec2 q1[3], q2[2];
    for (int i = 0; i < 3; ++i) q1[i] = (q[i + 1] - q[i]) * 3.0;
    for (int i = 0; i < 2; ++i) q2[i] = (q1[i + 1] - q1[i]) * 2.0;
    const Vec2 qu = bezier_eval(q, u);
    const double mu = 1.0 - u;
    const Vec2 q1u = q1[0] * (mu * mu) + q1[1] * (2 * mu * u) + q1[2] * (u * u);
    const Vec2 q2u = q2[0] * mu + q2[1] * u;
    const double num = dot(qu - p, q1u);
    const double den = dot(q1u, q1u) + dot(qu - p, q2u);
    if (std::abs(den) < 1e-12) return u;
    return u - num / den;
}

double dist_to_bezier(const Bezier& b, Vec2 p) {
    double best_u = 0.0, best_d2 = 1e300;
    for (int i = 0; i <= 16; ++i) {
        const double u = i / 16.0;
        const Vec2 q = bezier_eval(b, u);
        const double d2 = dot(q - p, q - p);
        if (d2 < best_d2) {
            best_d2 = d2;
            best_u = u;
        }
    }
    for (int it = 0; it < 4; ++it) best_u = std::clamp(newton_step(b, p, best_u), 0.0, 1.0);
    const Vec2 q = bezier_eval(b, best_u);
    return std::min(std::sqrt(best_d2), norm(q - p));
}

struct FitJob {
    const std::vector<Vec2>* pts = nullptr;
    const std::vector<std::vector<Vec2>>* between = nullptr; // witnesses per edge (pts[i] -> pts[i+1])
    double max_error = 1.0;
    std::vector<CubicSeg> out;

    double witness_error(const Bezier& bez, int first, int last) const {
        if (!between) return 0.0;
        double worst = 0.0;
        for (int i = first; i < last; ++i) {
            const auto& w = (*between)[static_cast<std::size_t>(i)];
            for (const Vec2& p : w) worst = std::max(worst, dist_to_bezier(bez, p));
        }
        return worst;
    }

    void emit(const Bezier& b) { out.push_back({b[1], b[2], b[3]}); }

    Bezier chord_cubic(int first, int last) const {
        const Vec2 a = (*pts)[static_cast<std::size_t>(first)], b = (*pts)[static_cast<std::size_t>(last)];
        return {a, a + (b - a) * (1.0 / 3.0), a + (b - a) * (2.0 / 3.0), b};
    }

    std::vector<double> chord_params(int first, int last) const {
        std::vector<double> u(static_cast<std::size_t>(last - first + 1), 0.0);
        for (int i = first + 1; i <= last; ++i)
            u[static_cast<std::size_t>(i - first)] = u[static_cast<std::size_t>(i - first - 1)] +
                                                     norm((*pts)[static_cast<std::size_t>(i)] -
                                                          (*pts)[static_cast<std::size_t>(i - 1)]);
        const double total = u.back();
        if (total > 0.0)
            for (auto& v : u) v /= total;
        return u;
    }

    Bezier generate(int first, int last, const std::vector<double>& u, Vec2 t1, Vec2 t2) const {
        const int n = last - first + 1;
        double c00 = 0, c01 = 0, c11 = 0, x0 = 0, x1 = 0;
        const Vec2 pf = (*pts)[static_cast<std::size_t>(first)], pl = (*pts)[static_cast<std::size_t>(last)];
        for (int i = 0; i < n; ++i) {
            const double ui = u[static_cast<std::size_t>(i)];
            const Vec2 a = t1 * bezier_b1(ui);
            const Vec2 b = t2 * bezier_b2(ui);
            const double mu = 1.0 - ui;
            const double b0 = mu * mu * mu, b1v = bezier_b1(ui), b2v = bezier_b2(ui), b3 = ui * ui * ui;
            const Vec2 tmp = (*pts)[static_cast<std::size_t>(first + i)] -
                             (pf * (b0 + b1v) + pl * (b2v + b3));
            c00 += dot(a, a);
            c01 += dot(a, b);
            c11 += dot(b, b);
            x0 += dot(a, tmp);
            x1 += dot(b, tmp);
        }
        const double det = c00 * c11 - c01 * c01;
        double al = 0.0, ar = 0.0;
        if (std::abs(det) > 1e-12) {
            al = (x0 * c11 - x1 * c01) / det;
            ar = (c00 * x1 - c01 * x0) / det;
        }
        const double seg_len = norm(pl - pf);
        const double eps_len = 1e-6 * seg_len;
        if (al < eps_len || ar < eps_len) {
            const double d = seg_len / 3.0;
            return {pf, pf + t1 * d, pl + t2 * d, pl};
        }
        return {pf, pf + t1 * al, pl + t2 * ar, pl};
    }

    double max_error_at(const Bezier& bez, int first, int last, const std::vector<double>& u, int& split) const {
        split = (last - first + 1) / 2 + first;
        double worst = 0.0;
        for (int i = first + 1; i < last; ++i) {
            const Vec2 q = bezier_eval(bez, u[static_cast<std::size_t>(i - first)]);
            const double d = norm(q - (*pts)[static_cast<std::size_t>(i)]);
            if (d >= worst) {
                worst = d;
                split = i;
            }
        }
        return worst;
    }

    Vec2 left_tangent(int i) const {
        return normalized((*pts)[static_cast<std::size_t>(i + 1)] - (*pts)[static_cast<std::size_t>(i)]);
    }
    Vec2 right_tangent(int i) const {
        return normalized((*pts)[static_cast<std::size_t>(i - 1)] - (*pts)[static_cast<std::size_t>(i)]);
    }
    Vec2 center_tangent(int i) const {
        const Vec2 v1 = (*pts)[static_cast<std::size_t>(i - 1)] - (*pts)[static_cast<std::size_t>(i)];
        const Vec2 v2 = (*pts)[static_cast<std::size_t>(i)] - (*pts)[static_cast<std::size_t>(i + 1)];
        Vec2 c = normalized({(v1.x + v2.x) / 2, (v1.y + v2.y) / 2});
        if (c.x == 0.0 && c.y == 0.0) c = normalized({-v1.y, v1.x}); // hairpin
        return c;
    }

    void fit(int first, int last, Vec2 t1, Vec2 t2, int depth) {
        const int n = last - first + 1;
        if (n == 2) {
            Bezier heur = {(*pts)[static_cast<std::size_t>(first)],
                           (*pts)[static_cast<std::size_t>(first)] +
                               t1 * (norm((*pts)[static_cast<std::size_t>(last)] -
                                          (*pts)[static_cast<std::size_t>(first)]) /
                                     3.0),
                           (*pts)[static_cast<std::size_t>(last)] +
                               t2 * (norm((*pts)[static_cast<std::size_t>(last)] -
                                          (*pts)[static_cast<std::size_t>(first)]) /
                                     3.0),
                           (*pts)[static_cast<std::size_t>(last)]};
            if (witness_error(heur, first, last) <= max_error) {
                emit(heur);
            } else {
                emit(chord_cubic(first, last)); // witnesses lie within RDP tolerance of the chord
            }
            return;
        }

        std::vector<double> u = chord_params(first, last);
        Bezier bez = generate(first, last, u, t1, t2);
        int split = 0;
        double err = max_error_at(bez, first, last, u, split);
        if (err <= max_error) {
            if (witness_error(bez, first, last) <= max_error) {
                emit(bez);
                return;
            }
        } else if (err < std::max(max_error * max_error, 2.0 * max_error)) {
            // A few reparameterization rounds before giving up and splitting.
            for (int it = 0; it < 4; ++it) {
                for (int i = 0; i <= last - first; ++i)
                    u[static_cast<std::size_t>(i)] =
                        std::clamp(newton_step(bez, (*pts)[static_cast<std::size_t>(first + i)],
                                               u[static_cast<std::size_t>(i)]),
                                   0.0, 1.0);
                bez = generate(first, last, u, t1, t2);
                err = max_error_at(bez, first, last, u, split);
                if (err <= max_error) break;
            }
            if (err <= max_error && witness_error(bez, first, last) <= max_error) {
                emit(bez);
                return;
            }
        }

        if (depth >= 64) { // safety valve; chords still satisfy the witness bound
            emit(chord_cubic(first, last));
            return;
        }
        split = std::clamp(split, first + 1, last - 1);
        const Vec2 tc = center_tangent(split);
        fit(first, split, t1, tc, depth + 1);
        fit(split, last, Vec2{-tc.x, -tc.y}, t2, depth + 1);
    }
};

} // namespace

VectorPath fit_beziers(const Contour& contour, double max_error, double corner_angle_deg,
                       const std::vector<std::vector<Vec2>>* between) {
    const auto& pts = contour.points;
    const int n = static_cast<int>(pts.size());
    if (n < 3) throw DegenerateContour("fit_beziers needs at least 3 points");
    if (!(max_error > 0.0)) throw InvalidRange("fit_max_error must be positive");

    // Corner detection on the closed polyline.
    const double cos_threshold = std::cos(corner_angle_deg * std::numbers::pi / 180.0);
    std::vector<int> corners;
    for (int i = 0; i < n; ++i) {
        const Vec2 prev = pts[static_cast<std::size_t>((i + n - 1) % n)];
        const Vec2 cur = pts[static_cast<std::size_t>(i)];
        const Vec2 next = pts[static_cast<std::size_t>((i + 1) % n)];
        const Vec2 in = normalized(cur - prev), out = normalized(next - cur);
        if (dot(in, out) < cos_threshold) corners.push_back(i); // turn angle above threshold
    }
    if (corners.empty()) corners = {0, n / 2}; // smooth loop: two artificial anchors
    if (corners.size() == 1) corners.push_back((corners[0] + n / 2) % n);
    std::sort(corners.begin(), corners.end());
    corners.erase(std::unique(corners.begin(), corners.end()), corners.end());

    VectorPath path;
    path.start = pts[static_cast<std::size_t>(corners[0])];
    path.closed = true;

    const std::size_t m = corners.size();
    for (std::size_t ci = 0; ci < m; ++ci) {
        const int a = corners[ci];
        const int b = corners[(ci + 1) % m];
        // Build the chain a..b (wrapping), including both endpoints.
        std::vector<Vec2> chain;
        std::vector<std::vector<Vec2>> chain_wit;
        int i = a;
        chain.push_back(pts[static_cast<std::size_t>(i)]);
        while (i != b) {
            const int j = (i + 1) % n;
            if (between) chain_wit.push_back((*between)[static_cast<std::size_t>(i)]);
            chain.push_back(pts[static_cast<std::size_t>(j)]);
            i = j;
        }
        if (chain.size() < 2) continue;

        FitJob job;
        job.pts = &chain;
        job.between = between ? &chain_wit : nullptr;
        job.max_error = max_error;
        const Vec2 t1 = normalized(chain[1] - chain[0]);
        const Vec2 t2 = normalized(chain[chain.size() - 2] - chain.back());
        job.fit(0, static_cast<int>(chain.size()) - 1, t1, t2, 0);
        for (auto& seg : job.out) path.segs.push_back(seg);
    }
    return path;
}

std::string emit_svg(std::span<const VectorPath> paths, int canvas) {
    std::ostringstream out;
    out << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << canvas << "\" height=\"" << canvas
        << "\" viewBox=\"0 0 " << canvas << " " << canvas << "\">\n";
    if (!paths.empty()) {
        out << "  <path fill=\"#000000\" fill-rule=\"evenodd\" d=\"";
        char buf[64];
        for (const VectorPath& p : paths) {
            std::snprintf(buf, sizeof buf, "M %.2f %.2f ", p.start.x, p.start.y);
            out << buf;
            for (const CubicSeg& s : p.segs) {
                std::snprintf(buf, sizeof buf, "C %.2f %.2f %.2f %.2f %.2f %.2f ", s.c1.x, s.c1.y, s.c2.x, s.c2.y,
                              s.p.x, s.p.y);
                out << buf;
            }
            out << "Z ";
        }
        out << "\"/>\n";
    }
    out << "</svg>\n";
    return out.str();
}

std::vector<VectorPath> parse_svg_paths(const std::string& svg_text) {
    std::vector<VectorPath> paths;
    std::size_t pos = 0;
    while ((pos = svg_text.find(" d=\"", pos)) != std::string::npos) {
        pos += 4;
        const std::size_t end = svg_text.find('"', pos);
        if (end == std::string::npos) throw SvgParseError("unterminated path data");
        std::istringstream in(svg_text.substr(pos, end - pos));
        pos = end + 1;

        std::string tok;
        std::optional<VectorPath> cur;
        Vec2 pen{0, 0};
        auto read_num = [&in]() {
            double v;
            if (!(in >> v)) throw SvgParseError("expected a number in path data");
            return v;
        };
        while (in >> tok) {
            if (tok == "M") {
                if (cur) paths.push_back(std::move(*cur));
                cur = VectorPath{};
                cur->start.x = read_num();
                cur->start.y = read_num();
                pen = cur->start;
            } else if (tok == "C") {
                if (!cur) throw SvgParseError("C before M in path data");
                CubicSeg s;
                s.c1.x = read_num();
                s.c1.y = read_num();
                s.c2.x = read_num();
                s.c2.y = read_num();
                s.p.x = read_num();
                s.p.y = read_num();
                cur->segs.push_back(s);
                pen = s.p;
            } else if (tok == "Z" || tok == "z") {
                if (!cur) throw SvgParseError("Z before M in path data");
                cur->closed = true;
                paths.push_back(std::move(*cur));
                cur.reset();
            } else {
                throw SvgParseError("unsupported path command: " + tok);
            }
        }
        if (cur) paths.push_back(std::move(*cur));
        (void)pen;
    }
    return paths;
}

GlyphBitmap rasterize_paths(std::span<const VectorPath> paths, int canvas) {
    std::vector<Polyline> polys;
    for (const VectorPath& p : paths) {
        Polyline poly;
        poly.push_back(p.start);
        Vec2 pen = p.start;
        for (const CubicSeg& s : p.segs) {
            flatten_cubic(pen, s.c1, s.c2, s.p, 0.05, poly);
            pen = s.p;
        }
        if (poly.size() > 1 && poly.front().x == poly.back().x && poly.front().y == poly.back().y) poly.pop_back();
        if (poly.size() >= 3) polys.push_back(std::move(poly));
    }
    const auto coverage = fill_coverage(polys, canvas, canvas, FillRule::even_odd, 8);
    GlyphBitmap bmp = make_blank_bitmap(canvas, 0);
    bmp.width = bmp.height = canvas;
    for (std::size_t i = 0; i < coverage.size(); ++i) bmp.pixels[i] = 1.0f - coverage[i];
    return bmp;
}

std::vector<VectorPath> trace_glyph(const GlyphBitmap& bitmap, const TraceConfig& cfg) {
    cfg.validate();
    const Mask mask = binarize(bitmap, cfg.threshold);
    const auto contours = trace_contours(mask, cfg.min_contour_area);
    std::vector<VectorPath> paths;
    for (const Contour& c : contours) {
        std::vector<int> kept;
        const Contour simple = simplify_indices(c, cfg.simplify_tolerance, kept);
        if (simple.points.size() < 3) continue;
        // Witnesses: the traced points dropped between consecutive kept indices.
        std::vector<std::vector<Vec2>> between(simple.points.size());
        const int n = static_cast<int>(c.points.size());
        for (std::size_t e = 0; e < kept.size(); ++e) {
            const int a = kept[e];
            const int b = kept[(e + 1) % kept.size()];
            auto& w = between[e];
            for (int i = (a + 1) % n; i != b; i = (i + 1) % n) w.push_back(c.points[static_cast<std::size_t>(i)]);
        }
        paths.push_back(fit_beziers(simple, cfg.fit_max_error, cfg.corner_angle_deg, &between));
    }
    return paths;
}

double distance_to_paths(const Vec2& p, const std::vector<VectorPath>& paths) {
    double best = 1e300;
    for (const VectorPath& path : paths) {
        Vec2 pen = path.start;
        for (const CubicSeg& s : path.segs) {
            const Bezier b = {pen, s.c1, s.c2, s.p};
            best = std::min(best, dist_to_bezier(b, p));
            pen = s.p;
        }
    }
    return best;
}

double max_fit_deviation(const GlyphBitmap& bitmap, const TraceConfig& cfg, const std::vector<VectorPath>& paths) {
    const Mask mask = binarize(bitmap, cfg.threshold);
    const auto contours = trace_contours(mask, cfg.min_contour_area);
    double worst = 0.0;
    for (const Contour& c : contours)
        for (const Vec2& p : c.points) worst = std::max(worst, distance_to_paths(p, paths));
    return worst;
}

double svg_roundtrip_match(const GlyphBitmap& bitmap, const TraceConfig& cfg) {
    const auto paths = trace_glyph(bitmap, cfg);
    const std::string svg = emit_svg(paths, bitmap.width);
    const auto parsed = parse_svg_paths(svg);
    const GlyphBitmap back = rasterize_paths(parsed, bitmap.width);
    const Mask mask = binarize(bitmap, cfg.threshold);
    GlyphBitmap binarized = make_blank_bitmap(bitmap.width, bitmap.codepoint);
    for (std::size_t i = 0; i < mask.ink.size(); ++i) binarized.pixels[i] = mask.ink[i] ? 0.0f : 1.0f;
    return pixel_match(binarized, back);
}

} // namespace gf
