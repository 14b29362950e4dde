#pragma once

#include <array>
#include <cstdint>
#include <unordered_map>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "baa/data.hpp"
#include "baa/image_io.hpp"
#include "baa/tensor.hpp"

namespace baa {

enum class Scaling {
    unit_interval,   // v / 255
    symmetric,       // v / 127.5 - 1
    mean_subtracted, // v - channel_means[c], raw 0..255 scale
};

struct PreprocessSpec {
    int target_height = 224;
    int target_width = 224;
    int channel_count = 3;
    Scaling scaling = Scaling::unit_interval;
    std::array<double, 3> channel_means{0.0, 0.0, 0.0};

    friend bool operator==(const PreprocessSpec&, const PreprocessSpec&) = default;
};

/// Maps a raw 8-bit value through the spec's scaling mode.
double scale_pixel(double value, int channel, const PreprocessSpec& spec);

struct FillNearest {
    friend bool operator==(const FillNearest&, const FillNearest&) = default;
};
struct FillConstant {
    double value = 0.0;
    friend bool operator==(const FillConstant&, const FillConstant&) = default;
};
using FillPolicy = std::variant<FillNearest, FillConstant>;

struct AugmentParams {
    double flip_probability = 0.5;
    double shear_max = 0.2;           // radians
    std::array<double, 2> zoom_range{0.8, 1.2};
    double rotation_max = 10.0;       // degrees
    FillPolicy fill = FillNearest{};

    /// All magnitudes zero: augment_image is the identity.
    static AugmentParams identity() { return {0.0, 0.0, {1.0, 1.0}, 0.0, FillNearest{}}; }
    bool is_identity() const noexcept;
    void validate() const;

    friend bool operator==(const AugmentParams&, const AugmentParams&) = default;
};

/// Resizes (bilinear), replicates grayscale to RGB and scales values.
/// Output is [target_height, target_width, 3]. Throws EmptyImage.
Tensor preprocess_image(const Raster& image, const PreprocessSpec& spec);

/// Random flip/shear/zoom/rotation about the image centre, bilinear
/// resampling. Fully determined by (image, params, seed).
Tensor augment_image(const Tensor& image, const AugmentParams& params, std::uint64_t seed);

/// Horizontal reflection of an [H,W,C] array.
Tensor flip_horizontal(const Tensor& image);

enum class BatchMode { train, eval };

struct Batch {
    Tensor images;             // [B,H,W,3]
    std::vector<double> targets; // months
};

/// Decoded rasters keyed by record id, so epochs do not re-read PNGs.
class ImageCache {
public:
    const Raster& get(const SampleRecord& record);
    void preload(const std::vector<SampleRecord>& records);
    std::size_t size() const noexcept { return rasters_.size(); }

private:
    std::unordered_map<std::string, Raster> rasters_;
};

/// Builds a batch. Augmentation runs only in train mode; the per-sample
/// augmentation seed is derived from `seed` and the position in `records`.
Batch make_batch(const std::vector<SampleRecord>& records, const PreprocessSpec& spec, const AugmentParams& params,
                 BatchMode mode, std::uint64_t seed);
Batch make_batch(const std::vector<SampleRecord>& records, const PreprocessSpec& spec, const AugmentParams& params,
                 BatchMode mode, std::uint64_t seed, ImageCache& cache);

/// Defaults per backbone input convention.
PreprocessSpec default_preprocess(int side, Scaling scaling);

std::string to_string(Scaling s);
Scaling scaling_from_string(const std::string& s);

nlohmann::json to_json(const PreprocessSpec& spec);
nlohmann::json to_json(const AugmentParams& params);

} // namespace baa
