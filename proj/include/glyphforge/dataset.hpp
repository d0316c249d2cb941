#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "glyphforge/font.hpp"
#include "glyphforge/image.hpp"

namespace gf {

struct PairRecord {
    char32_t codepoint = 0;
    std::string reference_path; // relative to the manifest file
    std::string target_path;
    int style_id = 0;
};

struct PairManifest {
    int canvas_size = 0;
    std::string reference_font_name;
    std::vector<std::string> styles;
    std::vector<PairRecord> records;
    std::filesystem::path base_dir; // directory of the manifest file; not serialized

    void validate() const;
};

/// Rasterizes every codepoint shared between the reference font and each target
/// font into out_dir (ref/ plus one s<NN>/ per style) and writes manifest.json.
/// style_id follows target order. Throws EmptyIntersection when a target shares
/// no codepoints with the reference.
PairManifest build_pair_dataset(const std::filesystem::path& reference_font,
                                const std::vector<std::filesystem::path>& target_fonts, int canvas,
                                const std::filesystem::path& out_dir);

void save_manifest(const PairManifest& manifest, const std::filesystem::path& path);
PairManifest load_manifest(const std::filesystem::path& path);

/// FNV-1a over the raw manifest file bytes; guards checkpoint/manifest pairing.
std::uint64_t fingerprint_file(const std::filesystem::path& path);
std::string fingerprint_hex(std::uint64_t fp);

struct TrainingExample {
    const NormalizedImage* x0 = nullptr;
    const NormalizedImage* reference = nullptr;
    int style_id = 0;
    char32_t codepoint = 0;
};

/// Loads every record into memory up front and serves seed-deterministic
/// shuffled batches, one epoch at a time. The last batch of an epoch may be
/// short. Thread-safe for reads once constructed.
class BatchLoader {
public:
    BatchLoader(const PairManifest& manifest, int batch_size, std::uint64_t seed);

    int record_count() const { return static_cast<int>(examples_.size()); }
    int batch_size() const { return batch_size_; }
    int batches_per_epoch() const;

    /// Batches for one epoch; the permutation depends only on (seed, epoch_index).
    std::vector<std::vector<TrainingExample>> epoch(int epoch_index) const;

    const std::vector<TrainingExample>& all() const { return examples_; }

private:
    std::vector<NormalizedImage> images_; // owned storage, stable addresses
    std::vector<TrainingExample> examples_;
    int batch_size_;
    std::uint64_t seed_;
};

} // namespace gf
