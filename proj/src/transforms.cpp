#include "baa/transforms.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "baa/errors.hpp"
#include "baa/random.hpp"

namespace baa {

namespace {

// Half-pixel-centre source coordinate for a resize, clamped to the valid range.
double source_coord(int dst, int dst_size, int src_size) {
    const double scale = static_cast<double>(src_size) / dst_size;
    return std::clamp((dst + 0.5) * scale - 0.5, 0.0, static_cast<double>(src_size - 1));
}

template <typename Fetch>
double bilinear(Fetch&& fetch, double sx, double sy, int width, int height) {
    const int x0 = static_cast<int>(std::floor(sx));
    const int y0 = static_cast<int>(std::floor(sy));
    const int x1 = std::min(x0 + 1, width - 1);
    const int y1 = std::min(y0 + 1, height - 1);
    const double fx = sx - x0;
    const double fy = sy - y0;
    const double top = std::lerp(fetch(y0, x0), fetch(y0, x1), fx);
    const double bottom = std::lerp(fetch(y1, x0), fetch(y1, x1), fx);
    return std::lerp(top, bottom, fy);
}

} // namespace

double scale_pixel(double value, int channel, const PreprocessSpec& spec) {
    switch (spec.scaling) {
    case Scaling::unit_interval: return value / 255.0;
    case Scaling::symmetric: return value / 127.5 - 1.0;
    case Scaling::mean_subtracted: return value - spec.channel_means[channel];
    }
    return value;
}

bool AugmentParams::is_identity() const noexcept {
    return flip_probability == 0.0 && shear_max == 0.0 && zoom_range[0] == 1.0 && zoom_range[1] == 1.0 &&
           rotation_max == 0.0;
}

void AugmentParams::validate() const {
    if (!(flip_probability >= 0.0 && flip_probability <= 1.0))
        throw ConfigError("flip_probability must lie in [0,1]");
    if (!(shear_max >= 0.0) || !(rotation_max >= 0.0))
        throw ConfigError("shear_max and rotation_max must be >= 0");
    if (!(zoom_range[0] > 0.0 && zoom_range[0] <= 1.0 && zoom_range[1] >= 1.0))
        throw ConfigError("zoom_range must satisfy 0 < lo <= 1 <= hi");
}

Tensor preprocess_image(const Raster& image, const PreprocessSpec& spec) {
    if (image.empty() || image.width <= 0 || image.height <= 0)
        throw EmptyImage();
    if (image.channels != 1 && image.channels != 3)
        throw InputError("expected a grayscale or RGB image");
    if (spec.target_height <= 0 || spec.target_width <= 0 || spec.channel_count != 3)
        throw ConfigError("invalid preprocess spec");

    const int h = spec.target_height, w = spec.target_width;
    Tensor out({static_cast<std::size_t>(h), static_cast<std::size_t>(w), 3});
    for (int y = 0; y < h; ++y) {
        const double sy = source_coord(y, h, image.height);
        for (int x = 0; x < w; ++x) {
            const double sx = source_coord(x, w, image.width);
            for (int c = 0; c < 3; ++c) {
                const int src_c = image.channels == 1 ? 0 : c;
                auto fetch = [&](int yy, int xx) { return static_cast<double>(image.at(yy, xx, src_c)); };
                const double raw = bilinear(fetch, sx, sy, image.width, image.height);
                out[(static_cast<std::size_t>(y) * w + x) * 3 + c] = scale_pixel(raw, c, spec);
            }
        }
    }
    return out;
}

Tensor flip_horizontal(const Tensor& image) {
    const std::size_t h = image.dim(0), w = image.dim(1), c = image.dim(2);
    Tensor out(image.shape);
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x)
            for (std::size_t k = 0; k < c; ++k)
                out[(y * w + x) * c + k] = image[(y * w + (w - 1 - x)) * c + k];
    return out;
}

Tensor augment_image(const Tensor& image, const AugmentParams& params, std::uint64_t seed) {
    if (image.rank() != 3)
        throw ShapeMismatch("augment_image expects [H,W,C], got " + shape_string(image.shape));

    // Fixed draw order: flip, rotation, shear, zoom x, zoom y.
    Rng rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const bool flip = unit(rng) < params.flip_probability;
    const double theta = params.rotation_max * (2.0 * unit(rng) - 1.0) * std::numbers::pi / 180.0;
    const double shear = params.shear_max * (2.0 * unit(rng) - 1.0);
    const double zx = std::lerp(params.zoom_range[0], params.zoom_range[1], unit(rng));
    const double zy = std::lerp(params.zoom_range[0], params.zoom_range[1], unit(rng));

    const bool warp = theta != 0.0 || shear != 0.0 || zx != 1.0 || zy != 1.0;
    if (!warp)
        return flip ? flip_horizontal(image) : image;

    const int h = static_cast<int>(image.dim(0)), w = static_cast<int>(image.dim(1));
    const int channels = static_cast<int>(image.dim(2));

    // Output -> source map: rotation * shear * zoom about the image centre.
    const double c = std::cos(theta), s = std::sin(theta);
    const double a00 = c * zx, a01 = (c * -std::sin(shear) - s * std::cos(shear)) * zy;
    const double a10 = s * zx, a11 = (s * -std::sin(shear) + c * std::cos(shear)) * zy;
    const double cx = (w - 1) / 2.0, cy = (h - 1) / 2.0;

    const bool nearest = std::holds_alternative<FillNearest>(params.fill);
    const double constant = nearest ? 0.0 : std::get<FillConstant>(params.fill).value;

    Tensor out(image.shape);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const double dx = x - cx, dy = y - cy;
            double sx = a00 * dx + a01 * dy + cx;
            double sy = a10 * dx + a11 * dy + cy;
            const bool outside = sx < 0.0 || sy < 0.0 || sx > w - 1 || sy > h - 1;
            sx = std::clamp(sx, 0.0, static_cast<double>(w - 1));
            sy = std::clamp(sy, 0.0, static_cast<double>(h - 1));
            for (int k = 0; k < channels; ++k) {
                double v;
                if (outside && !nearest) {
                    v = constant;
                } else {
                    auto fetch = [&](int yy, int xx) {
                        return image[(static_cast<std::size_t>(yy) * w + xx) * channels + k];
                    };
                    v = bilinear(fetch, sx, sy, w, h);
                }
                out[(static_cast<std::size_t>(y) * w + x) * channels + k] = v;
            }
        }
    }
    return flip ? flip_horizontal(out) : out;
}

const Raster& ImageCache::get(const SampleRecord& record) {
    auto it = rasters_.find(record.id);
    if (it != rasters_.end())
        return it->second;
    auto raster = read_image(record.image_path);
    if (!raster || raster->empty())
        throw ImageLoadError(record.id);
    return rasters_.emplace(record.id, std::move(*raster)).first->second;
}

void ImageCache::preload(const std::vector<SampleRecord>& records) {
    for (const auto& r : records)
        get(r);
}

Batch make_batch(const std::vector<SampleRecord>& records, const PreprocessSpec& spec, const AugmentParams& params,
                 BatchMode mode, std::uint64_t seed, ImageCache& cache) {
    if (records.empty())
        throw EmptyBatch();
    const auto h = static_cast<std::size_t>(spec.target_height);
    const auto w = static_cast<std::size_t>(spec.target_width);
    const std::size_t per_image = h * w * 3;

    Batch batch;
    batch.images = Tensor({records.size(), h, w, 3});
    batch.targets.reserve(records.size());
    for (std::size_t i = 0; i < records.size(); ++i) {
        Tensor image = preprocess_image(cache.get(records[i]), spec);
        if (mode == BatchMode::train)
            image = augment_image(image, params, derive_seed(seed, streams::augment, i));
        std::copy(image.data.begin(), image.data.end(), batch.images.data.begin() + i * per_image);
        batch.targets.push_back(records[i].bone_age);
    }
    return batch;
}

Batch make_batch(const std::vector<SampleRecord>& records, const PreprocessSpec& spec, const AugmentParams& params,
                 BatchMode mode, std::uint64_t seed) {
    ImageCache cache;
    return make_batch(records, spec, params, mode, seed, cache);
}

PreprocessSpec default_preprocess(int side, Scaling scaling) {
    PreprocessSpec spec;
    spec.target_height = side;
    spec.target_width = side;
    spec.scaling = scaling;
    return spec;
}

std::string to_string(Scaling s) {
    switch (s) {
    case Scaling::unit_interval: return "unit_interval";
    case Scaling::symmetric: return "symmetric";
    case Scaling::mean_subtracted: return "mean_subtracted";
    }
    return "unknown";
}

Scaling scaling_from_string(const std::string& s) {
    if (s == "unit_interval")
        return Scaling::unit_interval;
    if (s == "symmetric")
        return Scaling::symmetric;
    if (s == "mean_subtracted")
        return Scaling::mean_subtracted;
    throw ConfigError("unknown scaling mode: " + s);
}

nlohmann::json to_json(const PreprocessSpec& spec) {
    nlohmann::json j = {
        {"height", spec.target_height},
        {"width", spec.target_width},
        {"scaling", to_string(spec.scaling)},
    };
    if (spec.scaling == Scaling::mean_subtracted)
        j["channel_means"] = spec.channel_means;
    return j;
}

nlohmann::json to_json(const AugmentParams& params) {
    nlohmann::json fill;
    if (std::holds_alternative<FillNearest>(params.fill))
        fill = "nearest";
    else
        fill = std::get<FillConstant>(params.fill).value;
    return {
        {"flip_probability", params.flip_probability},
        {"shear_max", params.shear_max},
        {"zoom_range", params.zoom_range},
        {"rotation_max", params.rotation_max},
        {"fill", fill},
    };
}

} // namespace baa
