#!/usr/bin/env python3
"""Regenerates the TTF fixtures under tests/data/fonts/.

Two families:
  * oracle_*.ttf — tiny synthetic fonts whose glyphs are axis-aligned
    rectangles with analytically known extents (rasterizer oracles and
    manifest-intersection cases).
  * train_*.ttf — DejaVu subsets used by the smoke-training corpus:
    the reference keeps 100 shared codepoints plus a Greek block that the
    targets deliberately lack (held out for zero-shot sampling).

Requires fontTools and a DejaVu installation (matplotlib ships one).
"""

import os
import sys

from fontTools.fontBuilder import FontBuilder
from fontTools.pens.ttGlyphPen import TTGlyphPen
from fontTools import subset

OUT = os.path.join(os.path.dirname(__file__), "..", "tests", "data", "fonts")

UPEM = 1000
ASCENT = 800
DESCENT = -200

# 94 visible ASCII + 6 accented letters (composite glyphs in DejaVu).
TRAIN100 = list(range(0x21, 0x7F)) + [0xC0, 0xC9, 0xD8, 0xE5, 0xF1, 0xF6]
# Held-out block for zero-shot tests: Greek capitals Alpha..Upsilon.
GREEK20 = list(range(0x391, 0x3A5))

assert len(TRAIN100) == 100
assert len(GREEK20) == 20


def glyph_name(cp):
    return "uni%04X" % cp


def build_synthetic(path, family, shapes, blank=()):
    """shapes: {codepoint: [(x0, y0, x1, y1), ...]} rects in font units.

    A rect list entry with reversed=True flag is drawn with opposite winding
    (a hole under the nonzero fill rule): pass ("hole", x0, y0, x1, y1).
    """
    cps = sorted(set(shapes) | set(blank))
    order = [".notdef"] + [glyph_name(cp) for cp in cps]
    fb = FontBuilder(UPEM, isTTF=True)
    fb.setupGlyphOrder(order)
    fb.setupCharacterMap({cp: glyph_name(cp) for cp in cps})

    glyphs = {".notdef": TTGlyphPen(None).glyph()}
    for cp in cps:
        pen = TTGlyphPen(None)
        for rect in shapes.get(cp, []):
            if rect[0] == "hole":
                _, x0, y0, x1, y1 = rect
                pen.moveTo((x0, y0))
                pen.lineTo((x0, y1))
                pen.lineTo((x1, y1))
                pen.lineTo((x1, y0))
                pen.closePath()
            else:
                x0, y0, x1, y1 = rect
                pen.moveTo((x0, y0))
                pen.lineTo((x1, y0))
                pen.lineTo((x1, y1))
                pen.lineTo((x0, y1))
                pen.closePath()
        glyphs[glyph_name(cp)] = pen.glyph()

    fb.setupGlyf(glyphs)
    fb.setupHorizontalMetrics({name: (UPEM, 0) for name in order})
    fb.setupHorizontalHeader(ascent=ASCENT, descent=DESCENT)
    fb.setupNameTable({"familyName": family, "styleName": "Regular"})
    fb.setupOS2(sTypoAscender=ASCENT, sTypoDescender=DESCENT)
    fb.setupPost()
    fb.save(path)
    print("wrote", path)


def find_dejavu(name):
    candidates = []
    try:
        import matplotlib

        candidates.append(
            os.path.join(os.path.dirname(matplotlib.__file__), "mpl-data", "fonts", "ttf", name)
        )
    except ImportError:
        pass
    candidates += [
        os.path.join("/usr/share/fonts/truetype/dejavu", name),
        os.path.join("/usr/share/fonts/TTF", name),
    ]
    for c in candidates:
        if os.path.exists(c):
            return c
    raise SystemExit("cannot locate %s; install DejaVu or matplotlib" % name)


def build_subset(src, dst, codepoints):
    options = subset.Options()
    options.hinting = False
    options.desubroutinize = True
    options.layout_features = []
    options.name_IDs = [1, 2]
    options.drop_tables += ["GSUB", "GPOS", "GDEF"]
    font = subset.load_font(src, options)
    ss = subset.Subsetter(options=options)
    ss.populate(unicodes=codepoints)
    ss.subset(font)
    font.save(dst)
    print("wrote", dst, "(%d codepoints)" % len(codepoints))


def main():
    os.makedirs(OUT, exist_ok=True)

    bar = (100, 460, 900, 540)          # U+4E00: one horizontal stroke
    square = (250, 250, 750, 750)       # U+25A0: filled square
    hollow = [(200, 200, 800, 800), ("hole", 350, 350, 650, 650)]  # U+25A1

    build_synthetic(
        os.path.join(OUT, "oracle_ref.ttf"),
        "GFOracleRef",
        {
            0x41: [(450, 100, 550, 700)],                       # A: vertical bar
            0x42: [(300, 100, 700, 250), (300, 450, 700, 600)], # B: two bars
            0x43: [(300, 100, 400, 700), (300, 100, 700, 200)], # C: L shape
            0x4E00: [bar],
            0x25A0: [square],
            0x25A1: hollow,
        },
        blank=(0x20,),
    )
    build_synthetic(
        os.path.join(OUT, "oracle_t1.ttf"),
        "GFOracleT1",
        {
            0x42: [(250, 100, 750, 300)],
            0x43: [(250, 400, 750, 650)],
            0x44: [(400, 300, 600, 500)],
        },
    )
    build_synthetic(os.path.join(OUT, "oracle_b.ttf"), "GFOracleB", {0x42: [(200, 200, 800, 500)]})
    build_synthetic(os.path.join(OUT, "oracle_c.ttf"), "GFOracleC", {0x43: [(200, 500, 800, 800)]})
    build_synthetic(
        os.path.join(OUT, "oracle_none.ttf"),
        "GFOracleNone",
        {0x45: [(100, 100, 900, 300)], 0x46: [(100, 500, 900, 700)]},
    )

    build_subset(find_dejavu("DejaVuSans.ttf"), os.path.join(OUT, "train_ref.ttf"), set(TRAIN100 + GREEK20))
    build_subset(find_dejavu("DejaVuSerif.ttf"), os.path.join(OUT, "train_serif.ttf"), set(TRAIN100))
    build_subset(find_dejavu("DejaVuSans-Bold.ttf"), os.path.join(OUT, "train_bold.ttf"), set(TRAIN100))

    license_src = None
    try:
        import matplotlib

        license_src = os.path.join(
            os.path.dirname(matplotlib.__file__), "mpl-data", "fonts", "ttf", "LICENSE_DEJAVU"
        )
    except ImportError:
        pass
    if license_src and os.path.exists(license_src):
        with open(license_src, "rb") as f:
            data = f.read()
        with open(os.path.join(OUT, "LICENSE_DEJAVU"), "wb") as f:
            f.write(data)
        print("copied DejaVu license")


if __name__ == "__main__":
    sys.exit(main())
