#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace baa {

inline constexpr int kMinBoneAge = 1;
inline constexpr int kMaxBoneAge = 288;

/// One labelled hand radiograph.
struct SampleRecord {
    std::string id;
    std::filesystem::path image_path;
    int bone_age = 0; // months
    bool male = false;

    friend bool operator==(const SampleRecord&, const SampleRecord&) = default;
};

struct DatasetManifest {
    std::vector<SampleRecord> records;
    std::string source;

    std::size_t size() const noexcept { return records.size(); }
    const SampleRecord& find(const std::string& id) const;
};

/// Reads a `id,boneage,male` CSV. Images are resolved as `<image_dir>/<id>.png`.
/// Throws MalformedRow, MissingImage (strict only) or DuplicateId.
DatasetManifest load_manifest(const std::filesystem::path& csv_path,
                              const std::filesystem::path& image_dir,
                              bool strict = true);

/// Writes the manifest back out in the same CSV schema.
void write_manifest_csv(const DatasetManifest& manifest, const std::filesystem::path& csv_path);

struct DatasetStats {
    std::size_t total = 0;
    std::size_t male_count = 0;
    std::size_t female_count = 0;
    int bin_width = 12;
    // Keyed by bin lower edge in months.
    std::map<int, std::size_t> age_histogram;
    std::map<int, std::size_t> male_histogram;
    std::map<int, std::size_t> female_histogram;
    int min_age = 0;
    int max_age = 0;
    double mean_age = 0.0;
    int modal_bin = 0;
};

DatasetStats compute_stats(const DatasetManifest& manifest, int bin_width = 12);

nlohmann::json to_json(const DatasetStats& stats);

struct SplitSizes {
    std::size_t train = 6000;
    std::size_t val = 2000;
    std::size_t test = 200;

    std::size_t total() const noexcept { return train + val + test; }
    friend bool operator==(const SplitSizes&, const SplitSizes&) = default;
};

/// Disjoint train/val/test id lists. Ids are kept in manifest order.
struct SplitAssignment {
    std::vector<std::string> train_ids;
    std::vector<std::string> val_ids;
    std::vector<std::string> test_ids;
    std::uint64_t seed = 0;
    SplitSizes sizes;

    friend bool operator==(const SplitAssignment&, const SplitAssignment&) = default;
};

/// Uniform draw without replacement, fully determined by `seed`.
/// Throws InsufficientSamples when the requested sizes exceed the manifest.
SplitAssignment make_splits(const DatasetManifest& manifest, const SplitSizes& sizes, std::uint64_t seed);

nlohmann::json to_json(const SplitAssignment& split);
SplitAssignment split_from_json(const nlohmann::json& j);

/// Resolves a list of ids against the manifest, preserving the list order.
std::vector<SampleRecord> select_records(const DatasetManifest& manifest, const std::vector<std::string>& ids);

struct SyntheticLayout {
    static constexpr int kImageSize = 64;
    static constexpr double kBaseBrightness = 20.0;
    static constexpr double kBrightnessSpan = 200.0;
    static constexpr double kNoiseAmplitude = 12.0;
};

/// Mean grey level the generator targets for a given age.
constexpr double synthetic_brightness(int bone_age) {
    return SyntheticLayout::kBaseBrightness +
           SyntheticLayout::kBrightnessSpan * (bone_age - kMinBoneAge) / double(kMaxBoneAge - kMinBoneAge);
}

/// Writes `n` grayscale PNGs whose mean brightness encodes the bone age
/// (see synthetic_brightness) plus `manifest.csv`, and returns the manifest.
DatasetManifest build_synthetic_dataset(const std::filesystem::path& out_dir, std::size_t n, std::uint64_t seed);

} // namespace baa
