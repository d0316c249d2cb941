#include "glyphforge/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "glyphforge/errors.hpp"
#include "glyphforge/threads.hpp"

namespace gf {

MatchReport MatchReport::from_scores(std::vector<double> scores, std::string metric) {
    MatchReport r;
    r.scores = std::move(scores);
    r.count = static_cast<int>(r.scores.size());
    r.metric_name = std::move(metric);
    double sum = 0.0;
    for (double s : r.scores) sum += s;
    r.mean = r.count > 0 ? sum / r.count : 0.0;
    return r;
}

namespace {

void check_same_size(const GlyphBitmap& a, const GlyphBitmap& b, const char* what) {
    if (a.width != b.width || a.height != b.height)
        throw ShapeMismatch(std::string(what) + ": " + std::to_string(a.width) + "x" + std::to_string(a.height) +
                            " vs " + std::to_string(b.width) + "x" + std::to_string(b.height));
}

} // namespace

double pixel_match(const GlyphBitmap& a, const GlyphBitmap& b) {
    check_same_size(a, b, "pixel_match");
    if (a.pixels.empty()) return 1.0;
    std::size_t agree = 0;
    for (std::size_t i = 0; i < a.pixels.size(); ++i) {
        const bool ink_a = a.pixels[i] < 0.5f;
        const bool ink_b = b.pixels[i] < 0.5f;
        if (ink_a == ink_b) ++agree;
    }
    return static_cast<double>(agree) / static_cast<double>(a.pixels.size());
}

double gray_mae(const GlyphBitmap& a, const GlyphBitmap& b) {
    check_same_size(a, b, "gray_mae");
    if (a.pixels.empty()) return 0.0;
    double sum = 0.0;
    for (std::size_t i = 0; i < a.pixels.size(); ++i) sum += std::abs(static_cast<double>(a.pixels[i]) - b.pixels[i]);
    return sum / static_cast<double>(a.pixels.size());
}

GlyphBitmap diff_map(const GlyphBitmap& a, const GlyphBitmap& b) {
    check_same_size(a, b, "diff_map");
    GlyphBitmap out;
    out.width = a.width;
    out.height = a.height;
    out.codepoint = a.codepoint;
    out.pixels.resize(a.pixels.size());
    for (std::size_t i = 0; i < a.pixels.size(); ++i)
        out.pixels[i] = std::abs(a.pixels[i] - b.pixels[i]);
    return out;
}

StepStudyResult step_study(const DenoiserNetF& net, const std::vector<NormalizedImage>& references,
                           std::span<const float> style, const std::vector<int>& steps_list,
                           const NoiseSchedule& schedule, std::uint64_t seed, int baseline_steps,
                           VarianceMode variance_mode) {
    if (steps_list.empty()) throw InvalidSteps("step study needs a non-empty steps list");
    for (int s : steps_list)
        if (s < 1 || s > schedule.T) throw InvalidSteps("study step count " + std::to_string(s) + " outside [1,T]");
    if (baseline_steps < 1 || baseline_steps > schedule.T) throw InvalidSteps("baseline steps outside [1,T]");
    if (references.empty()) throw InvalidConfig("step study needs at least one reference");

    const int n = static_cast<int>(references.size());
    const std::vector<float> style_v(style.begin(), style.end());

    auto sample_row = [&](int steps) {
        std::vector<GlyphBitmap> row(static_cast<std::size_t>(n));
        parallel_for(0, n, [&](int i) {
            SamplerConfig cfg;
            cfg.steps = steps;
            cfg.variance_mode = variance_mode;
            cfg.seed = seed + static_cast<std::uint64_t>(i) * 0x9E3779B9u; // per-reference stream
            row[static_cast<std::size_t>(i)] = sample(net, references[static_cast<std::size_t>(i)], style_v, cfg, schedule);
        });
        return row;
    };

    StepStudyResult result;
    result.baseline_steps = baseline_steps;
    const std::vector<GlyphBitmap> baseline = sample_row(baseline_steps);
    result.grid.push_back(baseline);

    for (int steps : steps_list) {
        const std::vector<GlyphBitmap> row = sample_row(steps);
        StepStudyRow r;
        r.steps = steps;
        double match = 0.0, mae = 0.0;
        for (int i = 0; i < n; ++i) {
            match += pixel_match(row[static_cast<std::size_t>(i)], baseline[static_cast<std::size_t>(i)]);
            mae += gray_mae(row[static_cast<std::size_t>(i)], baseline[static_cast<std::size_t>(i)]);
        }
        r.mean_pixel_match = match / n;
        r.mean_gray_mae = mae / n;
        result.rows.push_back(r);
        result.grid.push_back(row);
    }
    return result;
}

void write_step_study_csv(const StepStudyResult& result, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write study CSV: " + path.string());
    out << "steps,mean_pixel_match,mean_gray_mae\n";
    out.setf(std::ios::fixed);
    out.precision(6);
    for (const auto& row : result.rows)
        out << row.steps << "," << row.mean_pixel_match << "," << row.mean_gray_mae << "\n";
}

GlyphBitmap render_grid(const std::vector<std::vector<GlyphBitmap>>& rows, const GridOptions& options) {
    if (rows.empty() || rows[0].empty()) throw RaggedRows("grid needs at least one row and column");
    const std::size_t cols = rows[0].size();
    const int cell_w = rows[0][0].width;
    const int cell_h = rows[0][0].height;
    for (const auto& row : rows) {
        if (row.size() != cols) throw RaggedRows("grid rows have different lengths");
        for (const auto& cell : row)
            if (cell.width != cell_w || cell.height != cell_h) throw ShapeMismatch("grid cells differ in size");
    }
    if (!options.tint_rows.empty() && options.tint_rows.size() != rows.size())
        throw ShapeMismatch("tint_rows must match the number of rows");

    const int p = options.padding;
    const int pitch_x = cell_w + 2 * p;
    const int pitch_y = cell_h + 2 * p;
    GlyphBitmap grid = make_blank_bitmap(1, 0); // placeholder; rebuilt below
    grid.width = static_cast<int>(cols) * pitch_x;
    grid.height = static_cast<int>(rows.size()) * pitch_y;
    grid.pixels.assign(static_cast<std::size_t>(grid.width) * grid.height, 1.0f);

    for (std::size_t r = 0; r < rows.size(); ++r) {
        const bool tint = !options.tint_rows.empty() && options.tint_rows[r];
        for (std::size_t c = 0; c < cols; ++c) {
            const GlyphBitmap& cell = rows[r][c];
            const int ox = static_cast<int>(c) * pitch_x + p;
            const int oy = static_cast<int>(r) * pitch_y + p;
            for (int y = 0; y < cell_h; ++y) {
                for (int x = 0; x < cell_w; ++x) {
                    float v = cell.at(x, y);
                    if (tint) v = 0.45f + 0.55f * v; // ink renders mid-gray
                    grid.at(ox + x, oy + y) = v;
                }
            }
        }
    }
    return grid;
}

void write_grid_png(const std::filesystem::path& path, const std::vector<std::vector<GlyphBitmap>>& rows,
                    const std::vector<std::string>& labels, const GridOptions& options) {
    const GlyphBitmap grid = render_grid(rows, options);
    std::string joined;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (i) joined += "|";
        joined += labels[i];
    }
    write_png_gray8_with_text(path, grid, {{"row_labels", joined}});
}

} // namespace gf
