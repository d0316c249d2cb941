#include "glyphforge/dataset.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <set>
#include <unordered_map>

#include <nlohmann/json.hpp>

#include "glyphforge/errors.hpp"
#include "glyphforge/rng.hpp"
#include "glyphforge/threads.hpp"

namespace gf {

using nlohmann::json;

namespace {

std::string cp_name(char32_t cp) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "U+%04X", static_cast<unsigned>(cp));
    return buf;
}

} // namespace

void PairManifest::validate() const {
    if (canvas_size < 8 || !is_pow2(canvas_size))
        throw InvalidCanvas("manifest canvas_size must be a power of two >= 8");
    if (styles.empty()) throw InvalidConfig("manifest lists no styles");
    std::set<std::pair<char32_t, int>> seen;
    for (const auto& rec : records) {
        if (rec.style_id < 0 || rec.style_id >= static_cast<int>(styles.size()))
            throw IndexOutOfRange("record style_id " + std::to_string(rec.style_id) + " out of range");
        if (!seen.emplace(rec.codepoint, rec.style_id).second)
            throw InvalidConfig("duplicate (codepoint, style) record: " + cp_name(rec.codepoint));
    }
}

PairManifest build_pair_dataset(const std::filesystem::path& reference_font,
                                const std::vector<std::filesystem::path>& target_fonts, int canvas,
                                const std::filesystem::path& out_dir) {
    if (target_fonts.empty()) throw InvalidConfig("at least one target font is required");
    if (canvas < 8 || !is_pow2(canvas)) throw InvalidCanvas("canvas must be a power of two >= 8");

    const TtfFont ref = TtfFont::load_file(reference_font);
    const auto ref_cps = ref.codepoints();
    const std::set<char32_t> ref_set(ref_cps.begin(), ref_cps.end());

    std::filesystem::create_directories(out_dir / "ref");

    PairManifest manifest;
    manifest.canvas_size = canvas;
    manifest.reference_font_name = ref.name();
    manifest.base_dir = out_dir;

    std::set<char32_t> ref_rendered;
    std::vector<TtfFont> targets;
    targets.reserve(target_fonts.size());
    std::vector<std::vector<char32_t>> shared_per_style;

    for (std::size_t s = 0; s < target_fonts.size(); ++s) {
        targets.push_back(TtfFont::load_file(target_fonts[s]));
        const TtfFont& tgt = targets.back();
        std::vector<char32_t> shared;
        for (char32_t cp : tgt.codepoints())
            if (ref_set.count(cp)) shared.push_back(cp);
        if (shared.empty())
            throw EmptyIntersection("target font '" + tgt.name() + "' shares no codepoints with reference '" +
                                    ref.name() + "'");
        manifest.styles.push_back(tgt.name());
        shared_per_style.push_back(std::move(shared));
        for (char32_t cp : shared_per_style.back()) ref_rendered.insert(cp);
    }

    // Reference glyphs are shared across styles; render each codepoint once.
    const std::vector<char32_t> ref_list(ref_rendered.begin(), ref_rendered.end());
    parallel_for(0, static_cast<int>(ref_list.size()), [&](int i) {
        const char32_t cp = ref_list[static_cast<std::size_t>(i)];
        write_png_gray8(out_dir / "ref" / (cp_name(cp) + ".png"), rasterize_glyph(ref, cp, canvas));
    });

    for (std::size_t s = 0; s < targets.size(); ++s) {
        char dir[8];
        std::snprintf(dir, sizeof dir, "s%02zu", s);
        std::filesystem::create_directories(out_dir / dir);
        const auto& shared = shared_per_style[s];
        parallel_for(0, static_cast<int>(shared.size()), [&](int i) {
            const char32_t cp = shared[static_cast<std::size_t>(i)];
            write_png_gray8(out_dir / dir / (cp_name(cp) + ".png"), rasterize_glyph(targets[s], cp, canvas));
        });
        for (char32_t cp : shared) {
            PairRecord rec;
            rec.codepoint = cp;
            rec.reference_path = "ref/" + cp_name(cp) + ".png";
            rec.target_path = std::string(dir) + "/" + cp_name(cp) + ".png";
            rec.style_id = static_cast<int>(s);
            manifest.records.push_back(std::move(rec));
        }
    }

    manifest.validate();
    save_manifest(manifest, out_dir / "manifest.json");
    return manifest;
}

void save_manifest(const PairManifest& manifest, const std::filesystem::path& path) {
    json j;
    j["canvas_size"] = manifest.canvas_size;
    j["reference_font_name"] = manifest.reference_font_name;
    j["styles"] = manifest.styles;
    json records = json::array();
    for (const auto& rec : manifest.records) {
        records.push_back({{"codepoint", static_cast<std::uint32_t>(rec.codepoint)},
                           {"reference_path", rec.reference_path},
                           {"target_path", rec.target_path},
                           {"style_id", rec.style_id}});
    }
    j["records"] = std::move(records);
    std::ofstream out(path);
    if (!out) throw IoError("cannot write manifest: " + path.string());
    out << j.dump(2) << "\n";
}

PairManifest load_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read manifest: " + path.string());
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw IoError("malformed manifest " + path.string() + ": " + e.what());
    }
    PairManifest m;
    try {
        m.canvas_size = j.at("canvas_size").get<int>();
        m.reference_font_name = j.at("reference_font_name").get<std::string>();
        m.styles = j.at("styles").get<std::vector<std::string>>();
        for (const auto& r : j.at("records")) {
            PairRecord rec;
            rec.codepoint = static_cast<char32_t>(r.at("codepoint").get<std::uint32_t>());
            rec.reference_path = r.at("reference_path").get<std::string>();
            rec.target_path = r.at("target_path").get<std::string>();
            rec.style_id = r.at("style_id").get<int>();
            m.records.push_back(std::move(rec));
        }
    } catch (const json::exception& e) {
        throw IoError("manifest field error in " + path.string() + ": " + e.what());
    }
    m.base_dir = path.parent_path();
    m.validate();
    return m;
}

std::uint64_t fingerprint_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read for fingerprint: " + path.string());
    std::uint64_t h = 0xcbf29ce484222325ull;
    char buf[4096];
    while (in.read(buf, sizeof buf) || in.gcount() > 0) {
        const std::streamsize n = in.gcount();
        for (std::streamsize i = 0; i < n; ++i) {
            h ^= static_cast<std::uint8_t>(buf[i]);
            h *= 0x100000001b3ull;
        }
    }
    return h;
}

std::string fingerprint_hex(std::uint64_t fp) {
    char buf[20];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fp));
    return buf;
}

BatchLoader::BatchLoader(const PairManifest& manifest, int batch_size, std::uint64_t seed)
    : batch_size_(batch_size), seed_(seed) {
    if (manifest.records.empty()) throw InvalidConfig("manifest has no records");
    if (batch_size < 1) throw InvalidConfig("batch_size must be >= 1");

    // Load each unique bitmap once; references are shared across styles.
    std::unordered_map<std::string, std::size_t> index;
    std::vector<std::pair<std::string, char32_t>> to_load;
    auto intern = [&](const std::string& rel, char32_t cp) {
        auto [it, fresh] = index.emplace(rel, to_load.size());
        if (fresh) to_load.emplace_back(rel, cp);
        return it->second;
    };

    std::vector<std::pair<std::size_t, std::size_t>> pairs; // (x0 idx, ref idx)
    pairs.reserve(manifest.records.size());
    for (const auto& rec : manifest.records)
        pairs.emplace_back(intern(rec.target_path, rec.codepoint), intern(rec.reference_path, rec.codepoint));

    images_.resize(to_load.size());
    parallel_for(0, static_cast<int>(to_load.size()), [&](int i) {
        const auto& [rel, cp] = to_load[static_cast<std::size_t>(i)];
        GlyphBitmap bmp = read_png_gray8(manifest.base_dir / rel, cp);
        if (bmp.width != manifest.canvas_size || bmp.height != manifest.canvas_size)
            throw IoError("bitmap " + rel + " has size " + std::to_string(bmp.width) + "x" +
                          std::to_string(bmp.height) + ", manifest says " + std::to_string(manifest.canvas_size));
        images_[static_cast<std::size_t>(i)] = normalize(bmp);
    });

    examples_.reserve(manifest.records.size());
    for (std::size_t i = 0; i < manifest.records.size(); ++i) {
        TrainingExample ex;
        ex.x0 = &images_[pairs[i].first];
        ex.reference = &images_[pairs[i].second];
        ex.style_id = manifest.records[i].style_id;
        ex.codepoint = manifest.records[i].codepoint;
        examples_.push_back(ex);
    }
}

int BatchLoader::batches_per_epoch() const {
    return (record_count() + batch_size_ - 1) / batch_size_;
}

std::vector<std::vector<TrainingExample>> BatchLoader::epoch(int epoch_index) const {
    std::vector<std::size_t> order(examples_.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng shuffle_rng = Rng::from_stream(seed_, 0x50, static_cast<std::uint64_t>(epoch_index));
    shuffle_rng.shuffle(order.begin(), order.end());

    std::vector<std::vector<TrainingExample>> batches;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(batch_size_)) {
        const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(batch_size_));
        std::vector<TrainingExample> batch;
        batch.reserve(end - start);
        for (std::size_t i = start; i < end; ++i) batch.push_back(examples_[order[i]]);
        batches.push_back(std::move(batch));
    }
    return batches;
}

} // namespace gf
