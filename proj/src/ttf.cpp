#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "glyphforge/errors.hpp"
#include "glyphforge/font.hpp"

namespace gf {

namespace {

// Bounds-checked big-endian reader; fonts are untrusted input.
class Reader {
public:
    Reader(const std::uint8_t* data, std::size_t size, std::size_t pos = 0) : data_(data), size_(size), pos_(pos) {}

    std::uint8_t u8() {
        need(1);
        return data_[pos_++];
    }
    std::uint16_t u16() {
        need(2);
        const std::uint16_t v = static_cast<std::uint16_t>((data_[pos_] << 8) | data_[pos_ + 1]);
        pos_ += 2;
        return v;
    }
    std::int16_t i16() { return static_cast<std::int16_t>(u16()); }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v = (v << 8) | data_[pos_ + i];
        pos_ += 4;
        return v;
    }
    void skip(std::size_t n) {
        need(n);
        pos_ += n;
    }
    void seek(std::size_t p) {
        if (p > size_) throw FontError("font parse: seek out of range");
        pos_ = p;
    }
    std::size_t pos() const { return pos_; }

private:
    void need(std::size_t n) const {
        if (pos_ + n > size_) throw FontError("font parse: unexpected end of data");
    }
    const std::uint8_t* data_;
    std::size_t size_;
    std::size_t pos_;
};

constexpr double kF2Dot14 = 1.0 / 16384.0;

} // namespace

TtfFont TtfFont::load_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open font file: " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (bytes.empty()) throw FontError("empty font file: " + path.string());
    return from_bytes(std::move(bytes), path.stem().string());
}

TtfFont TtfFont::from_bytes(std::vector<std::uint8_t> bytes, std::string name) {
    TtfFont f;
    f.data_ = std::move(bytes);
    f.name_ = std::move(name);
    f.parse();
    return f;
}

void TtfFont::parse() {
    Reader r(data_.data(), data_.size());
    const std::uint32_t tag = r.u32();
    if (tag == 0x4F54544F) // 'OTTO'
        throw FontError("font '" + name_ + "' uses CFF outlines; only TrueType (glyf) is supported");
    if (tag != 0x00010000 && tag != 0x74727565) // 1.0 or 'true'
        throw FontError("unrecognized font container in '" + name_ + "'");

    const int num_tables = r.u16();
    r.skip(6); // searchRange, entrySelector, rangeShift
    for (int i = 0; i < num_tables; ++i) {
        char tg[5] = {};
        for (int k = 0; k < 4; ++k) tg[k] = static_cast<char>(r.u8());
        r.u32(); // checksum
        const std::uint32_t off = r.u32();
        const std::uint32_t len = r.u32();
        if (off > data_.size() || len > data_.size() - off) throw FontError("table out of range: " + std::string(tg));
        tables_[tg] = {off, len};
    }

    auto table = [&](const char* t) -> std::pair<std::uint32_t, std::uint32_t> {
        auto it = tables_.find(t);
        if (it == tables_.end()) throw FontError("font '" + name_ + "' lacks required table " + t);
        return it->second;
    };

    // head
    {
        auto [off, len] = table("head");
        Reader h(data_.data(), data_.size(), off);
        h.skip(18);
        units_per_em_ = h.u16();
        h.seek(off + 50);
        const int loca_format = h.i16();

        // maxp
        auto [moff, mlen] = table("maxp");
        Reader m(data_.data(), data_.size(), moff);
        m.skip(4);
        num_glyphs_ = m.u16();

        // loca
        auto [loff, llen] = table("loca");
        Reader l(data_.data(), data_.size(), loff);
        loca_.resize(static_cast<std::size_t>(num_glyphs_) + 1);
        for (auto& v : loca_) v = loca_format == 0 ? static_cast<std::uint32_t>(l.u16()) * 2 : l.u32();
    }

    // hhea + hmtx
    {
        auto [off, len] = table("hhea");
        Reader h(data_.data(), data_.size(), off);
        h.skip(4);
        ascent_ = h.i16();
        descent_ = h.i16();
        h.seek(off + 34);
        num_hmetrics_ = h.u16();
        hmtx_offset_ = table("hmtx").first;
    }

    {
        auto [off, len] = table("glyf");
        glyf_offset_ = off;
        glyf_length_ = len;
    }

    // cmap: prefer (3,10) format 12, then (3,1)/(0,*) format 4.
    {
        auto [off, len] = table("cmap");
        Reader c(data_.data(), data_.size(), off);
        c.u16();
        const int n = c.u16();
        std::uint32_t best = 0;
        int best_score = -1;
        for (int i = 0; i < n; ++i) {
            const int plat = c.u16();
            const int enc = c.u16();
            const std::uint32_t sub = c.u32();
            int score = -1;
            if (plat == 3 && enc == 10) score = 3;
            else if (plat == 0 && enc >= 4) score = 3;
            else if (plat == 3 && enc == 1) score = 2;
            else if (plat == 0) score = 1;
            if (score > best_score) {
                best_score = score;
                best = sub;
            }
        }
        if (best_score < 0) throw FontError("font '" + name_ + "' has no usable cmap subtable");
        Reader s(data_.data(), data_.size(), off + best);
        const int format = s.u16();
        if (format == 4) {
            s.u16(); // length
            s.u16(); // language
            const int segx2 = s.u16();
            const int segs = segx2 / 2;
            s.skip(6);
            std::vector<std::uint16_t> ends(segs), starts(segs), deltas(segs), range_offsets(segs);
            for (auto& v : ends) v = s.u16();
            s.u16(); // reservedPad
            for (auto& v : starts) v = s.u16();
            for (auto& v : deltas) v = s.u16();
            const std::size_t range_base = s.pos();
            for (auto& v : range_offsets) v = s.u16();
            for (int seg = 0; seg < segs; ++seg) {
                if (starts[seg] == 0xFFFF) continue;
                for (std::uint32_t cp = starts[seg]; cp <= ends[seg]; ++cp) {
                    std::uint16_t gid;
                    if (range_offsets[seg] == 0) {
                        gid = static_cast<std::uint16_t>(cp + deltas[seg]);
                    } else {
                        const std::size_t addr = range_base + static_cast<std::size_t>(seg) * 2 + range_offsets[seg] +
                                                 (cp - starts[seg]) * 2;
                        Reader g(data_.data(), data_.size(), addr);
                        gid = g.u16();
                        if (gid != 0) gid = static_cast<std::uint16_t>(gid + deltas[seg]);
                    }
                    if (gid != 0 && cp != 0xFFFF) cmap_[static_cast<char32_t>(cp)] = gid;
                }
            }
        } else if (format == 12) {
            s.u16();
            s.u32(); // length
            s.u32(); // language
            const std::uint32_t groups = s.u32();
            for (std::uint32_t g = 0; g < groups; ++g) {
                const std::uint32_t start = s.u32();
                const std::uint32_t end = s.u32();
                const std::uint32_t start_gid = s.u32();
                if (end < start || end - start > 0x110000) throw FontError("cmap group out of range");
                for (std::uint32_t cp = start; cp <= end; ++cp) {
                    const std::uint32_t gid = start_gid + (cp - start);
                    if (gid != 0 && gid < static_cast<std::uint32_t>(num_glyphs_))
                        cmap_[static_cast<char32_t>(cp)] = static_cast<std::uint16_t>(gid);
                }
            }
        } else {
            throw FontError("unsupported cmap subtable format " + std::to_string(format));
        }
    }

    if (units_per_em_ <= 0) throw FontError("font '" + name_ + "' has invalid unitsPerEm");
    if (ascent_ <= descent_) throw FontError("font '" + name_ + "' has degenerate vertical metrics");
}

std::vector<char32_t> TtfFont::codepoints() const {
    std::vector<char32_t> cps;
    cps.reserve(cmap_.size());
    for (const auto& [cp, gid] : cmap_) cps.push_back(cp);
    return cps;
}

std::uint16_t TtfFont::glyph_index(char32_t cp) const {
    auto it = cmap_.find(cp);
    if (it == cmap_.end()) throw MissingGlyph("font '" + name_ + "' has no glyph for codepoint U+" + [cp] {
        char buf[16];
        std::snprintf(buf, sizeof buf, "%04X", static_cast<unsigned>(cp));
        return std::string(buf);
    }());
    return it->second;
}

int TtfFont::advance_width(char32_t cp) const {
    const std::uint16_t gid = glyph_index(cp);
    const int idx = std::min<int>(gid, num_hmetrics_ - 1);
    Reader r(data_.data(), data_.size(), hmtx_offset_ + static_cast<std::size_t>(idx) * 4);
    return r.u16();
}

void TtfFont::decode_glyph(std::uint16_t gid, double dx, double dy, const double* mat,
                           std::vector<OutlineContour>& out, int depth) const {
    if (depth > 8) throw FontError("composite glyph nesting too deep");
    if (gid >= num_glyphs_) throw FontError("glyph index out of range");
    const std::uint32_t start = loca_[gid];
    const std::uint32_t end = loca_[gid + 1];
    if (start >= end) return; // blank glyph
    if (end > glyf_length_) throw FontError("glyf entry out of range");

    Reader r(data_.data(), data_.size(), glyf_offset_ + start);
    const int n_contours = r.i16();
    r.skip(8); // bbox

    auto apply = [&](double x, double y) -> Vec2 {
        return {mat[0] * x + mat[2] * y + dx, mat[1] * x + mat[3] * y + dy};
    };

    if (n_contours >= 0) {
        std::vector<int> ends(n_contours);
        for (auto& e : ends) e = r.u16();
        const int n_pts = n_contours > 0 ? ends.back() + 1 : 0;
        const int instr = r.u16();
        r.skip(static_cast<std::size_t>(instr));

        std::vector<std::uint8_t> flags;
        flags.reserve(n_pts);
        while (static_cast<int>(flags.size()) < n_pts) {
            const std::uint8_t f = r.u8();
            flags.push_back(f);
            if (f & 0x08) {
                const int rep = r.u8();
                for (int k = 0; k < rep; ++k) flags.push_back(f);
            }
        }
        if (static_cast<int>(flags.size()) != n_pts) throw FontError("glyph flag run overflow");

        std::vector<int> xs(n_pts), ys(n_pts);
        int v = 0;
        for (int i = 0; i < n_pts; ++i) {
            const std::uint8_t f = flags[i];
            if (f & 0x02) {
                const int d = r.u8();
                v += (f & 0x10) ? d : -d;
            } else if (!(f & 0x10)) {
                v += r.i16();
            }
            xs[i] = v;
        }
        v = 0;
        for (int i = 0; i < n_pts; ++i) {
            const std::uint8_t f = flags[i];
            if (f & 0x04) {
                const int d = r.u8();
                v += (f & 0x20) ? d : -d;
            } else if (!(f & 0x20)) {
                v += r.i16();
            }
            ys[i] = v;
        }

        int first = 0;
        for (int c = 0; c < n_contours; ++c) {
            const int last = ends[c];
            OutlineContour contour;
            for (int i = first; i <= last; ++i) {
                const Vec2 p = apply(xs[i], ys[i]);
                contour.push_back({p.x, p.y, (flags[i] & 0x01) != 0});
            }
            if (contour.size() >= 2) out.push_back(std::move(contour));
            first = last + 1;
        }
    } else {
        // composite
        for (;;) {
            const std::uint16_t flags = r.u16();
            const std::uint16_t comp_gid = r.u16();
            double adx = 0.0, ady = 0.0;
            if (flags & 0x0001) { // ARG_1_AND_2_ARE_WORDS
                const int a1 = r.i16(), a2 = r.i16();
                if (flags & 0x0002) { // ARGS_ARE_XY_VALUES
                    adx = a1;
                    ady = a2;
                }
            } else {
                const auto a1 = static_cast<std::int8_t>(r.u8());
                const auto a2 = static_cast<std::int8_t>(r.u8());
                if (flags & 0x0002) {
                    adx = a1;
                    ady = a2;
                }
            }
            double m[4] = {1, 0, 0, 1};
            if (flags & 0x0008) { // WE_HAVE_A_SCALE
                m[0] = m[3] = r.i16() * kF2Dot14;
            } else if (flags & 0x0040) { // X_AND_Y_SCALE
                m[0] = r.i16() * kF2Dot14;
                m[3] = r.i16() * kF2Dot14;
            } else if (flags & 0x0080) { // TWO_BY_TWO
                m[0] = r.i16() * kF2Dot14;
                m[1] = r.i16() * kF2Dot14;
                m[2] = r.i16() * kF2Dot14;
                m[3] = r.i16() * kF2Dot14;
            }
            // Compose child transform with the parent one.
            const double cm[4] = {mat[0] * m[0] + mat[2] * m[1], mat[1] * m[0] + mat[3] * m[1],
                                  mat[0] * m[2] + mat[2] * m[3], mat[1] * m[2] + mat[3] * m[3]};
            const Vec2 off = apply(adx, ady);
            decode_glyph(comp_gid, off.x, off.y, cm, out, depth + 1);
            if (!(flags & 0x0020)) break; // MORE_COMPONENTS
        }
    }
}

std::vector<TtfFont::OutlineContour> TtfFont::outline(char32_t cp) const {
    const std::uint16_t gid = glyph_index(cp);
    std::vector<OutlineContour> out;
    const double identity[4] = {1, 0, 0, 1};
    decode_glyph(gid, 0.0, 0.0, identity, out, 0);
    return out;
}

namespace {

// TrueType contours are quadratic with implied on-curve midpoints between
// consecutive off-curve points; contours may also start off-curve.
Polyline contour_to_polyline(const TtfFont::OutlineContour& c, double tol) {
    std::vector<TtfFont::OutlinePoint> pts;
    pts.reserve(c.size() + 2);
    std::size_t start = 0;
    bool found_on = false;
    for (std::size_t i = 0; i < c.size(); ++i) {
        if (c[i].on_curve) {
            start = i;
            found_on = true;
            break;
        }
    }
    if (found_on) {
        for (std::size_t k = 0; k < c.size(); ++k) pts.push_back(c[(start + k) % c.size()]);
    } else {
        // All off-curve: synthesize a starting on-curve midpoint.
        TtfFont::OutlinePoint mid{(c.back().x + c.front().x) / 2, (c.back().y + c.front().y) / 2, true};
        pts.push_back(mid);
        for (const auto& p : c) pts.push_back(p);
    }
    pts.push_back(pts.front()); // close

    Polyline poly;
    poly.push_back({pts[0].x, pts[0].y});
    std::size_t i = 1;
    while (i < pts.size()) {
        if (pts[i].on_curve) {
            poly.push_back({pts[i].x, pts[i].y});
            ++i;
        } else {
            const Vec2 ctrl{pts[i].x, pts[i].y};
            Vec2 end;
            if (i + 1 < pts.size() && !pts[i + 1].on_curve) {
                end = {(pts[i].x + pts[i + 1].x) / 2, (pts[i].y + pts[i + 1].y) / 2};
                flatten_quadratic(poly.back(), ctrl, end, tol, poly);
                ++i;
            } else if (i + 1 < pts.size()) {
                end = {pts[i + 1].x, pts[i + 1].y};
                flatten_quadratic(poly.back(), ctrl, end, tol, poly);
                i += 2;
            } else {
                break;
            }
        }
    }
    if (poly.size() > 1 && poly.front().x == poly.back().x && poly.front().y == poly.back().y) poly.pop_back();
    return poly;
}

} // namespace

GlyphBitmap rasterize_glyph(const TtfFont& font, char32_t codepoint, int canvas) {
    if (canvas < 8 || !is_pow2(canvas))
        throw InvalidCanvas("canvas must be a power of two >= 8, got " + std::to_string(canvas));

    const double em_span = font.ascent() - font.descent();
    const double scale = canvas / em_span;
    const double baseline = canvas * (font.ascent() / em_span);
    const double advance = font.advance_width(codepoint) * scale; // also triggers MissingGlyph
    const double x_off = (canvas - advance) / 2.0;

    const auto contours = font.outline(codepoint);
    GlyphBitmap bmp = make_blank_bitmap(canvas, codepoint);
    if (contours.empty()) return bmp;

    std::vector<Polyline> polys;
    polys.reserve(contours.size());
    for (const auto& c : contours) {
        // Transform to device space (y flips), then flatten at 0.1 px.
        TtfFont::OutlineContour dev;
        dev.reserve(c.size());
        for (const auto& p : c) dev.push_back({x_off + p.x * scale, baseline - p.y * scale, p.on_curve});
        Polyline poly = contour_to_polyline(dev, 0.1);
        if (poly.size() >= 3) polys.push_back(std::move(poly));
    }

    const auto coverage = fill_coverage(polys, canvas, canvas, FillRule::nonzero, 8);
    for (std::size_t i = 0; i < coverage.size(); ++i) bmp.pixels[i] = 1.0f - coverage[i];
    return bmp;
}

} // namespace gf
