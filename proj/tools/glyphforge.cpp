// glyphforge: reference-conditioned glyph synthesis pipeline.
//
// Subcommands: dataset build, train, sample, study steps, trace.
// Exit codes: 0 ok, 2 validation error, 3 I/O error, 4 numerical error.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "glyphforge/dataset.hpp"
#include "glyphforge/denoiser.hpp"
#include "glyphforge/errors.hpp"
#include "glyphforge/eval.hpp"
#include "glyphforge/font.hpp"
#include "glyphforge/image.hpp"
#include "glyphforge/sampling.hpp"
#include "glyphforge/training.hpp"
#include "glyphforge/vectorize.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

char32_t parse_codepoint(const std::string& text) {
    std::string s = text;
    if (s.rfind("U+", 0) == 0 || s.rfind("u+", 0) == 0) s = s.substr(2);
    try {
        const unsigned long v = std::stoul(s, nullptr, 16);
        if (v == 0 || v > 0x10FFFF) throw gf::InvalidRange("codepoint out of range: " + text);
        return static_cast<char32_t>(v);
    } catch (const std::logic_error&) {
        throw gf::InvalidRange("cannot parse codepoint: " + text + " (expected U+XXXX)");
    }
}

std::string cp_name(char32_t cp) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "U+%04X", static_cast<unsigned>(cp));
    return buf;
}

// "0:0.5,1:0.5" -> (ids, weights)
std::pair<std::vector<int>, std::vector<double>> parse_mix(const std::string& spec) {
    std::vector<int> ids;
    std::vector<double> weights;
    std::size_t pos = 0;
    while (pos < spec.size()) {
        const std::size_t comma = spec.find(',', pos);
        const std::string part = spec.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos);
        const std::size_t colon = part.find(':');
        if (colon == std::string::npos) throw gf::InvalidRange("bad mix entry '" + part + "' (expected id:weight)");
        try {
            ids.push_back(std::stoi(part.substr(0, colon)));
            weights.push_back(std::stod(part.substr(colon + 1)));
        } catch (const std::logic_error&) {
            throw gf::InvalidRange("bad mix entry '" + part + "'");
        }
        if (comma == std::string::npos) break;
        pos = comma + 1;
    }
    if (ids.empty()) throw gf::InvalidRange("empty mix specification");
    return {ids, weights};
}

std::vector<int> parse_steps_list(const std::string& spec) {
    std::vector<int> steps;
    std::size_t pos = 0;
    while (pos < spec.size()) {
        const std::size_t comma = spec.find(',', pos);
        const std::string part = spec.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos);
        try {
            steps.push_back(std::stoi(part));
        } catch (const std::logic_error&) {
            throw gf::InvalidRange("bad steps entry '" + part + "'");
        }
        if (comma == std::string::npos) break;
        pos = comma + 1;
    }
    return steps;
}

gf::NormalizedImage reference_from_manifest(const gf::PairManifest& manifest, char32_t cp) {
    for (const auto& rec : manifest.records) {
        if (rec.codepoint == cp)
            return gf::normalize(gf::read_png_gray8(manifest.base_dir / rec.reference_path, cp));
    }
    throw gf::MissingGlyph("manifest has no reference bitmap for " + cp_name(cp));
}

struct SampleArgs {
    std::string ckpt, ref_png, manifest, ref_font, ref_glyph, mix, out, batch, variance = "beta_tilde";
    int style = 0;
    int steps = 50;
    std::uint64_t seed = 0;
    bool no_clamp = false;
    bool use_ema = false;
};

gf::SamplerConfig sampler_config(int steps, std::uint64_t seed, const std::string& variance, bool no_clamp,
                                 int schedule_T) {
    if (steps < 1 || steps > schedule_T)
        throw gf::InvalidSteps("steps must lie in [1," + std::to_string(schedule_T) + "]");
    gf::SamplerConfig cfg;
    cfg.steps = steps;
    cfg.seed = seed;
    cfg.clamp_x0 = !no_clamp;
    if (variance == "beta")
        cfg.variance_mode = gf::VarianceMode::beta;
    else if (variance == "beta_tilde")
        cfg.variance_mode = gf::VarianceMode::beta_tilde;
    else
        throw gf::InvalidRange("variance must be 'beta' or 'beta_tilde'");
    return cfg;
}

gf::NormalizedImage load_reference(const SampleArgs& a, int input_side, char32_t* cp_out) {
    if (!a.ref_png.empty()) {
        const gf::GlyphBitmap bmp = gf::read_png_gray8(a.ref_png);
        if (bmp.width != bmp.height || bmp.width != input_side)
            throw gf::ShapeMismatch("reference PNG is " + std::to_string(bmp.width) + "x" + std::to_string(bmp.height) +
                                    " but the checkpoint expects " + std::to_string(input_side));
        *cp_out = 0;
        return gf::normalize(bmp);
    }
    if (a.ref_glyph.empty())
        throw gf::InvalidConfig("provide --ref-png, or --ref-glyph with --manifest or --ref-font");
    const char32_t cp = parse_codepoint(a.ref_glyph);
    *cp_out = cp;
    if (!a.manifest.empty()) {
        const gf::PairManifest manifest = gf::load_manifest(a.manifest);
        if (manifest.canvas_size != input_side)
            throw gf::ShapeMismatch("manifest canvas does not match checkpoint input side");
        return reference_from_manifest(manifest, cp);
    }
    if (!a.ref_font.empty()) {
        const gf::TtfFont font = gf::TtfFont::load_file(a.ref_font);
        return gf::normalize(gf::rasterize_glyph(font, cp, input_side));
    }
    throw gf::InvalidConfig("--ref-glyph needs --manifest or --ref-font to resolve the reference bitmap");
}

int cmd_sample_run(const SampleArgs& args) {
    const gf::Checkpoint ckpt = gf::load_checkpoint(args.ckpt);
    const gf::DenoiserNetF net = gf::restore_network(ckpt, args.use_ema);
    const gf::NoiseSchedule schedule = ckpt.schedule.realize();

    if (!args.batch.empty()) {
        // Batch mode: JSON request list {codepoint, style or weights, seed, steps}.
        if (args.manifest.empty()) throw gf::InvalidConfig("--batch requires --manifest for reference lookup");
        const gf::PairManifest manifest = gf::load_manifest(args.manifest);
        if (manifest.canvas_size != net.config().input_side)
            throw gf::ShapeMismatch("manifest canvas does not match checkpoint input side");
        std::ifstream in(args.batch);
        if (!in) throw gf::IoError("cannot read batch request file: " + args.batch);
        json reqs;
        try {
            in >> reqs;
        } catch (const json::exception& e) {
            throw gf::InvalidConfig("malformed batch request JSON: " + std::string(e.what()));
        }
        if (!reqs.is_array()) throw gf::InvalidConfig("batch request file must hold a JSON array");
        fs::create_directories(args.out);
        for (const auto& req : reqs) {
            const char32_t cp = req.at("codepoint").is_string()
                                    ? parse_codepoint(req.at("codepoint").get<std::string>())
                                    : static_cast<char32_t>(req.at("codepoint").get<std::uint32_t>());
            const int steps = req.value("steps", 50);
            const std::uint64_t seed = req.value("seed", 0ull);
            const gf::SamplerConfig cfg = sampler_config(steps, seed, args.variance, args.no_clamp, schedule.T);
            const gf::NormalizedImage ref = reference_from_manifest(manifest, cp);
            gf::GlyphBitmap out;
            std::string style_tag;
            if (req.contains("weights")) {
                std::vector<int> ids;
                std::vector<double> ws;
                for (const auto& [key, val] : req.at("weights").items()) {
                    ids.push_back(std::stoi(key));
                    ws.push_back(val.get<double>());
                }
                out = gf::sample_interpolated(net, ref, ids, ws, cfg, schedule, cp);
                style_tag = "mix";
            } else {
                const int style = req.at("style").get<int>();
                out = gf::sample_style_id(net, ref, style, cfg, schedule, cp);
                style_tag = "s" + std::to_string(style);
            }
            char name[96];
            std::snprintf(name, sizeof name, "%s_%s_seed%llu_steps%d.png", cp_name(cp).c_str(), style_tag.c_str(),
                          static_cast<unsigned long long>(seed), steps);
            gf::write_png_gray8(fs::path(args.out) / name, out);
        }
        return 0;
    }

    char32_t cp = 0;
    const gf::NormalizedImage ref = load_reference(args, net.config().input_side, &cp);
    const gf::SamplerConfig cfg = sampler_config(args.steps, args.seed, args.variance, args.no_clamp, schedule.T);

    gf::GlyphBitmap out;
    if (!args.mix.empty()) {
        auto [ids, weights] = parse_mix(args.mix);
        out = gf::sample_interpolated(net, ref, ids, weights, cfg, schedule, cp);
    } else {
        out = gf::sample_style_id(net, ref, args.style, cfg, schedule, cp);
    }
    gf::write_png_gray8(args.out, out);
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"glyphforge: reference-conditioned diffusion for glyph synthesis"};
    app.require_subcommand(1);

    // ------------------------------------------------------------ dataset
    auto* dataset = app.add_subcommand("dataset", "dataset utilities");
    dataset->require_subcommand(1);
    auto* ds_build = dataset->add_subcommand("build", "rasterize shared glyphs into a paired training set");
    ds_build->set_config("--config", "", "TOML config file (flags take precedence)");
    std::string ds_reference, ds_out;
    std::vector<std::string> ds_targets;
    int ds_canvas = 32;
    ds_build->add_option("--reference", ds_reference, "reference (source style) font file")
        ->required()
        ->capture_default_str();
    ds_build->add_option("--target", ds_targets, "target font file(s); style ids follow this order")->required();
    ds_build->add_option("--canvas", ds_canvas, "canvas side in pixels (power of two >= 8)")->capture_default_str();
    ds_build->add_option("--out", ds_out, "output directory")->required();

    // ------------------------------------------------------------ train
    auto* train = app.add_subcommand("train", "train the denoiser on a pair manifest");
    train->set_config("--config", "", "TOML config file (flags take precedence)");
    std::string tr_manifest, tr_out, tr_resume, tr_preset = "desk", tr_loss_log;
    int tr_epochs = 20, tr_batch = 16, tr_ckpt_every = 10, tr_T = 1000;
    double tr_lr = -1.0, tr_beta_start = 1e-4, tr_beta_end = 0.02, tr_grad_clip = 1.0, tr_ema = 0.0;
    std::uint64_t tr_seed = 0;
    train->add_option("--manifest", tr_manifest, "manifest.json from dataset build")->required();
    train->add_option("--preset", tr_preset, "model preset: desk or full")->capture_default_str();
    train->add_option("--epochs", tr_epochs, "training epochs")->capture_default_str();
    train->add_option("--batch-size", tr_batch, "items per optimizer step")->capture_default_str();
    train->add_option("--lr", tr_lr, "learning rate (default 1e-4, desk preset 1e-3)");
    train->add_option("--seed", tr_seed, "training seed")->capture_default_str();
    train->add_option("--ema", tr_ema, "EMA decay in (0,1); 0 disables")->capture_default_str();
    train->add_option("--out", tr_out, "checkpoint/log output directory");
    train->add_option("--resume", tr_resume, "checkpoint to resume from");
    train->add_option("--checkpoint-every", tr_ckpt_every, "epochs between checkpoints")->capture_default_str();
    train->add_option("--T", tr_T, "diffusion steps in the schedule")->capture_default_str();
    train->add_option("--beta-start", tr_beta_start, "linear schedule start")->capture_default_str();
    train->add_option("--beta-end", tr_beta_end, "linear schedule end")->capture_default_str();
    train->add_option("--grad-clip", tr_grad_clip, "global gradient-norm clip; 0 disables")->capture_default_str();
    train->add_option("--loss-log", tr_loss_log, "loss CSV path (default <out>/loss.csv)");

    // ------------------------------------------------------------ sample
    auto* sample_cmd = app.add_subcommand("sample", "generate a glyph from a trained checkpoint");
    sample_cmd->set_config("--config", "", "TOML config file (flags take precedence)");
    SampleArgs sa;
    sample_cmd->add_option("--ckpt", sa.ckpt, "checkpoint file")->required();
    sample_cmd->add_option("--ref-png", sa.ref_png, "reference bitmap PNG");
    sample_cmd->add_option("--manifest", sa.manifest, "manifest for --ref-glyph / --batch lookup");
    sample_cmd->add_option("--ref-font", sa.ref_font, "font file to rasterize --ref-glyph from");
    sample_cmd->add_option("--ref-glyph", sa.ref_glyph, "reference codepoint, e.g. U+99AC");
    sample_cmd->add_option("--style", sa.style, "target style id")->capture_default_str();
    sample_cmd->add_option("--mix", sa.mix, "style mixture id:weight[,id:weight...] (weights sum to 1)");
    sample_cmd->add_option("--steps", sa.steps, "sampling steps")->capture_default_str();
    sample_cmd->add_option("--seed", sa.seed, "sampling seed")->capture_default_str();
    sample_cmd->add_option("--variance", sa.variance, "reverse variance: beta or beta_tilde")->capture_default_str();
    sample_cmd->add_flag("--no-clamp", sa.no_clamp, "disable x0 clamping inside reverse steps");
    sample_cmd->add_flag("--use-ema", sa.use_ema, "sample with EMA weights when present");
    sample_cmd->add_option("-o,--out", sa.out, "output PNG (or directory in batch mode)")->required();
    sample_cmd->add_option("--batch", sa.batch, "JSON request list {codepoint, style|weights, seed, steps}");

    // ------------------------------------------------------------ study
    auto* study = app.add_subcommand("study", "evaluation studies");
    study->require_subcommand(1);
    auto* study_steps = study->add_subcommand("steps", "step-count study against a many-step baseline");
    study_steps->set_config("--config", "", "TOML config file (flags take precedence)");
    std::string st_ckpt, st_manifest, st_steps = "2,5,10,50,100", st_out;
    int st_refs = 20, st_style = 0, st_baseline = 1000;
    std::uint64_t st_seed = 0;
    bool st_use_ema = false;
    study_steps->add_option("--ckpt", st_ckpt, "checkpoint file")->required();
    study_steps->add_option("--manifest", st_manifest, "manifest supplying reference bitmaps")->required();
    study_steps->add_option("--refs", st_refs, "number of references (first N in manifest order)")
        ->capture_default_str();
    study_steps->add_option("--style", st_style, "style id to study")->capture_default_str();
    study_steps->add_option("--steps", st_steps, "comma-separated step counts")->capture_default_str();
    study_steps->add_option("--baseline", st_baseline, "baseline step count")->capture_default_str();
    study_steps->add_option("--seed", st_seed, "study seed")->capture_default_str();
    study_steps->add_flag("--use-ema", st_use_ema, "use EMA weights when present");
    study_steps->add_option("--out", st_out, "output directory (steps.csv, grid.png)")->required();

    // ------------------------------------------------------------ trace
    auto* trace = app.add_subcommand("trace", "vectorize a glyph bitmap into SVG outlines");
    trace->set_config("--config", "", "TOML config file (flags take precedence)");
    std::string v_in, v_in_dir, v_out;
    gf::TraceConfig tc;
    bool v_roundtrip = false;
    trace->add_option("--in", v_in, "input PNG");
    trace->add_option("--in-dir", v_in_dir, "input directory of PNGs (batch mode)");
    trace->add_option("--threshold", tc.threshold, "ink threshold in (0,1)")->capture_default_str();
    trace->add_option("--simplify", tc.simplify_tolerance, "polyline simplification tolerance, px")
        ->capture_default_str();
    trace->add_option("--fit-error", tc.fit_max_error, "max Bezier fit error, px")->capture_default_str();
    trace->add_option("--min-area", tc.min_contour_area, "minimum contour area, px^2")->capture_default_str();
    trace->add_option("--corner-angle", tc.corner_angle_deg, "corner detection angle, degrees")
        ->capture_default_str();
    trace->add_flag("--roundtrip-check", v_roundtrip, "print pixel_match of the re-rasterized SVG");
    trace->add_option("-o,--out", v_out, "output SVG (or directory in batch mode)")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (*ds_build) {
            std::vector<fs::path> targets(ds_targets.begin(), ds_targets.end());
            const gf::PairManifest manifest = gf::build_pair_dataset(ds_reference, targets, ds_canvas, ds_out);
            std::cout << "wrote " << manifest.records.size() << " records (" << manifest.styles.size()
                      << " styles) to " << (fs::path(ds_out) / "manifest.json").string() << "\n";
        } else if (*train) {
            gf::DenoiserConfig net_cfg;
            double default_lr = 1e-4;
            const gf::PairManifest manifest = gf::load_manifest(tr_manifest);
            const int styles = static_cast<int>(manifest.styles.size());
            if (tr_preset == "desk") {
                net_cfg = gf::DenoiserConfig::desk(styles);
                default_lr = 1e-3;
            } else if (tr_preset == "full") {
                net_cfg = gf::DenoiserConfig::full(styles);
            } else {
                throw gf::InvalidConfig("unknown preset '" + tr_preset + "' (expected desk or full)");
            }
            net_cfg.input_side = manifest.canvas_size;

            gf::TrainConfig cfg;
            cfg.epochs = tr_epochs;
            cfg.batch_size = tr_batch;
            cfg.learning_rate = tr_lr > 0.0 ? tr_lr : default_lr;
            if (tr_ema > 0.0) cfg.ema_decay = tr_ema;
            cfg.seed = tr_seed;
            cfg.schedule = {tr_T, tr_beta_start, tr_beta_end, "linear"};
            cfg.checkpoint_every = tr_ckpt_every;
            cfg.grad_clip_norm = tr_grad_clip;
            if (!tr_out.empty()) cfg.out_dir = tr_out;
            if (!tr_loss_log.empty()) cfg.loss_log_path = tr_loss_log;

            std::optional<fs::path> resume;
            if (!tr_resume.empty()) resume = tr_resume;
            const gf::TrainResult result = gf::train_loop(tr_manifest, net_cfg, cfg, resume);
            for (std::size_t e = 0; e < result.epoch_mean_loss.size(); ++e)
                std::cout << "epoch " << e << " mean_loss " << result.epoch_mean_loss[e] << "\n";
            std::cout << "checkpoint: " << result.checkpoint_path.string() << "\n";
        } else if (*sample_cmd) {
            return cmd_sample_run(sa);
        } else if (*study_steps) {
            const gf::Checkpoint ckpt = gf::load_checkpoint(st_ckpt);
            const gf::DenoiserNetF net = gf::restore_network(ckpt, st_use_ema);
            const gf::NoiseSchedule schedule = ckpt.schedule.realize();
            const gf::PairManifest manifest = gf::load_manifest(st_manifest);
            if (manifest.canvas_size != net.config().input_side)
                throw gf::ShapeMismatch("manifest canvas does not match checkpoint input side");
            const std::vector<int> steps_list = parse_steps_list(st_steps);

            std::vector<gf::NormalizedImage> refs;
            std::vector<char32_t> seen;
            for (const auto& rec : manifest.records) {
                if (static_cast<int>(refs.size()) >= st_refs) break;
                if (std::find(seen.begin(), seen.end(), rec.codepoint) != seen.end()) continue;
                seen.push_back(rec.codepoint);
                refs.push_back(gf::normalize(gf::read_png_gray8(manifest.base_dir / rec.reference_path,
                                                                rec.codepoint)));
            }
            if (refs.empty()) throw gf::InvalidConfig("no references available in manifest");

            const auto style = net.lookup_style(st_style);
            const gf::StepStudyResult result =
                gf::step_study(net, refs, style, steps_list, schedule, st_seed, st_baseline);
            fs::create_directories(st_out);
            gf::write_step_study_csv(result, fs::path(st_out) / "steps.csv");

            std::vector<std::vector<gf::GlyphBitmap>> grid_rows(result.grid.begin() + 1, result.grid.end());
            std::vector<std::string> labels;
            for (int s : steps_list) labels.push_back("steps=" + std::to_string(s));
            gf::write_grid_png(fs::path(st_out) / "grid.png", grid_rows, labels);
            for (const auto& row : result.rows)
                std::cout << "steps " << row.steps << " pixel_match " << row.mean_pixel_match << " gray_mae "
                          << row.mean_gray_mae << "\n";
        } else if (*trace) {
            tc.validate();
            auto trace_one = [&](const fs::path& in_path, const fs::path& out_path) {
                const gf::GlyphBitmap bmp = gf::read_png_gray8(in_path);
                const auto paths = gf::trace_glyph(bmp, tc);
                std::ofstream out(out_path);
                if (!out) throw gf::IoError("cannot write SVG: " + out_path.string());
                out << gf::emit_svg(paths, bmp.width);
                if (v_roundtrip)
                    std::cout << in_path.filename().string() << " roundtrip pixel_match "
                              << gf::svg_roundtrip_match(bmp, tc) << "\n";
                return paths.size();
            };
            if (!v_in.empty()) {
                if (fs::path(v_in).extension() != ".png") throw gf::InvalidConfig("trace input must be a PNG file");
                trace_one(v_in, v_out);
            } else if (!v_in_dir.empty()) {
                fs::create_directories(v_out);
                std::vector<fs::path> inputs;
                for (const auto& entry : fs::directory_iterator(v_in_dir))
                    if (entry.path().extension() == ".png") inputs.push_back(entry.path());
                std::sort(inputs.begin(), inputs.end());
                json index = json::array();
                for (const auto& in_path : inputs) {
                    fs::path out_path = fs::path(v_out) / in_path.filename().replace_extension(".svg");
                    const std::size_t n = trace_one(in_path, out_path);
                    index.push_back({{"input", in_path.filename().string()},
                                     {"svg", out_path.filename().string()},
                                     {"paths", n}});
                }
                std::ofstream idx(fs::path(v_out) / "index.json");
                idx << index.dump(2) << "\n";
            } else {
                throw gf::InvalidConfig("trace needs --in or --in-dir");
            }
        }
    } catch (const gf::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        switch (e.kind()) {
            case gf::ErrorKind::validation:
                return 2;
            case gf::ErrorKind::io:
                return 3;
            case gf::ErrorKind::numeric:
                return 4;
        }
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
    return 0;
}
