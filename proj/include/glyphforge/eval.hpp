#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "glyphforge/denoiser.hpp"
#include "glyphforge/image.hpp"
#include "glyphforge/sampling.hpp"
#include "glyphforge/schedule.hpp"

namespace gf {

struct MatchReport {
    std::vector<double> scores; // per glyph, in [0,1]
    double mean = 0.0;
    int count = 0;
    std::string metric_name;

    static MatchReport from_scores(std::vector<double> scores, std::string metric);
};

/// Fraction of pixels whose binarized values (threshold 0.5, pixel < 0.5 = ink)
/// agree. Symmetric; 1.0 on identical inputs. Accepts any same-size bitmaps, so
/// externally produced images can be scored too.
double pixel_match(const GlyphBitmap& a, const GlyphBitmap& b);

/// Mean absolute grayscale difference (secondary metric).
double gray_mae(const GlyphBitmap& a, const GlyphBitmap& b);

/// Per-pixel absolute difference as a bitmap (0 where equal, 1 at full contrast).
GlyphBitmap diff_map(const GlyphBitmap& a, const GlyphBitmap& b);

struct StepStudyRow {
    int steps = 0;
    double mean_pixel_match = 0.0;
    double mean_gray_mae = 0.0;
};

struct StepStudyResult {
    std::vector<StepStudyRow> rows;
    std::vector<std::vector<GlyphBitmap>> grid; // rows x references (first row = baseline)
    int baseline_steps = 0;
};

/// Samples every reference once per entry of steps_list plus once at
/// baseline_steps, scoring each row against the baseline. All rows reuse the
/// same per-reference seed so budgets share their noise landscape.
StepStudyResult step_study(const DenoiserNetF& net, const std::vector<NormalizedImage>& references,
                           std::span<const float> style, const std::vector<int>& steps_list,
                           const NoiseSchedule& schedule, std::uint64_t seed, int baseline_steps = 1000,
                           VarianceMode variance_mode = VarianceMode::beta_tilde);

void write_step_study_csv(const StepStudyResult& result, const std::filesystem::path& path);

struct GridOptions {
    int padding = 4;
    std::vector<bool> tint_rows; // tinted rows render ink in gray (reference rows)
};

/// Composite grid PNG: each cell padded on all sides; all cells must share
/// dimensions and rows must be rectangular. Row labels go into PNG tEXt.
GlyphBitmap render_grid(const std::vector<std::vector<GlyphBitmap>>& rows, const GridOptions& options = {});

void write_grid_png(const std::filesystem::path& path, const std::vector<std::vector<GlyphBitmap>>& rows,
                    const std::vector<std::string>& labels, const GridOptions& options = {});

} // namespace gf
