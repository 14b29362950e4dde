#include "baa/models.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <cereal/archives/portable_binary.hpp>
#include <cereal/types/string.hpp>
#include <cereal/types/variant.hpp>
#include <cereal/types/vector.hpp>
#include <fmt/format.h>

#include "baa/errors.hpp"
#include "baa/random.hpp"

namespace baa {

namespace {

constexpr const char* kCheckpointMagic = "baa-checkpoint/1";
constexpr int kTinyChannels = 8;
constexpr int kTinyInputSide = 32;

std::vector<BackboneSpec> registry() {
    return {
        {"vgg16", "VGG-16", default_preprocess(224, Scaling::unit_interval), 512, PretrainedSource::imagenet},
        {"inception_v3", "Inception V3", default_preprocess(299, Scaling::symmetric), 2048, PretrainedSource::imagenet},
        {"mobilenet", "MobileNet", default_preprocess(224, Scaling::symmetric), 1024, PretrainedSource::imagenet},
        {"xception", "XceptionNet", default_preprocess(299, Scaling::symmetric), 2048, PretrainedSource::imagenet},
        {"tiny_test", "tiny_test", default_preprocess(kTinyInputSide, Scaling::unit_interval), kTinyChannels,
         PretrainedSource::random},
    };
}

void he_normal(Conv2d& conv, Rng& rng) {
    const double fan_in = double(conv.kernel) * conv.kernel * (conv.in_channels / conv.groups);
    std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / fan_in));
    for (auto& w : conv.weight.value)
        w = dist(rng);
    std::fill(conv.bias.value.begin(), conv.bias.value.end(), 0.0);
}

RegressionHead make_head(int channels, std::uint64_t seed) {
    RegressionHead head;
    head.channels = channels;
    head.gamma = Param(channels, 1.0);
    head.beta = Param(channels, 0.0);
    head.running_mean.assign(channels, 0.0);
    head.running_var.assign(channels, 1.0);
    head.dense_weight = Param(channels);
    head.dense_bias = Param(1, 0.0);

    Rng rng(derive_seed(seed, streams::head_init));
    const double limit = std::sqrt(6.0 / (channels + 1.0));
    std::uniform_real_distribution<double> dist(-limit, limit);
    for (auto& w : head.dense_weight.value)
        w = dist(rng);
    return head;
}

std::filesystem::path resolve_weights_dir(const BuildOptions& options, const std::string& id) {
    if (options.weights_dir)
        return *options.weights_dir;
    if (const char* env = std::getenv("BAA_WEIGHTS_DIR"); env && *env)
        return env;
    throw WeightsUnavailable("no pretrained weights for " + id + ": set BAA_WEIGHTS_DIR");
}

} // namespace

std::string to_string(Regime regime) { return regime == Regime::full ? "FULL" : "FROZEN"; }

Regime regime_from_string(const std::string& s) {
    std::string k = s;
    std::transform(k.begin(), k.end(), k.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    if (k == "full" || k == "method1")
        return Regime::full;
    if (k == "frozen" || k == "method2")
        return Regime::frozen;
    throw ConfigError("unknown regime: " + s + " (expected full or frozen)");
}

void HeadConfig::validate() const {
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0))
        throw ConfigError("dropout_rate must lie in [0,1)");
    if (!(batchnorm_epsilon > 0.0))
        throw ConfigError("batchnorm_epsilon must be positive");
    if (!(batchnorm_momentum > 0.0 && batchnorm_momentum < 1.0))
        throw ConfigError("batchnorm_momentum must lie in (0,1)");
}

nlohmann::json to_json(const HeadConfig& head) {
    return {{"dropout_rate", head.dropout_rate},
            {"batchnorm_epsilon", head.batchnorm_epsilon},
            {"batchnorm_momentum", head.batchnorm_momentum}};
}

HeadConfig head_config_from_json(const nlohmann::json& j) {
    HeadConfig head;
    for (const auto& [key, value] : j.items()) {
        if (key == "dropout_rate")
            head.dropout_rate = value.get<double>();
        else if (key == "batchnorm_epsilon")
            head.batchnorm_epsilon = value.get<double>();
        else if (key == "batchnorm_momentum")
            head.batchnorm_momentum = value.get<double>();
        else
            throw ConfigError("unknown head key: " + key);
    }
    head.validate();
    return head;
}

RegressionModel::RegressionModel(BackboneSpec spec, Regime regime, HeadConfig head_config, Backbone backbone,
                                 RegressionHead head)
    : spec_(std::move(spec)), regime_(regime), head_config_(head_config), backbone_(std::move(backbone)),
      head_(std::move(head)) {
    head_config_.validate();
    if (backbone_.output_channels() != head_.channels)
        throw ShapeMismatch(fmt::format("backbone emits {} channels but head expects {}", backbone_.output_channels(),
                                        head_.channels));
}

Tensor RegressionModel::forward(const Tensor& images, std::uint64_t dropout_seed) {
    const auto& in = spec_.input_spec;
    if (images.rank() != 4 || images.dim(0) < 1 || images.dim(1) != std::size_t(in.target_height) ||
        images.dim(2) != std::size_t(in.target_width) || images.dim(3) != 3)
        throw ShapeMismatch(fmt::format("{} expects [B,{},{},3], got {}", spec_.id, in.target_height,
                                        in.target_width, shape_string(images.shape)));

    traced_ = mode_ == ModelMode::train && regime_ == Regime::full;
    features_ = backbone_forward(backbone_, images, traced_ ? &trace_ : nullptr);
    if (!traced_)
        trace_ = {};
    return head_forward(features_, dropout_seed);
}

Tensor RegressionModel::head_forward(const Tensor& x, std::uint64_t dropout_seed) {
    const std::size_t batch = x.dim(0);
    const std::size_t spatial = x.dim(1) * x.dim(2);
    const std::size_t channels = x.dim(3);
    if (channels != std::size_t(head_.channels))
        throw ShapeMismatch("feature channels do not match head");
    const double count = double(batch * spatial);

    std::vector<double> mean(channels, 0.0), var(channels, 0.0);
    batch_stats_ = mode_ == ModelMode::train;
    if (batch_stats_) {
        for (std::size_t i = 0; i < batch * spatial; ++i)
            for (std::size_t c = 0; c < channels; ++c)
                mean[c] += x[i * channels + c];
        for (auto& m : mean)
            m /= count;
        for (std::size_t i = 0; i < batch * spatial; ++i)
            for (std::size_t c = 0; c < channels; ++c) {
                const double d = x[i * channels + c] - mean[c];
                var[c] += d * d;
            }
        for (auto& v : var)
            v /= count;
        const double m = head_config_.batchnorm_momentum;
        for (std::size_t c = 0; c < channels; ++c) {
            head_.running_mean[c] = m * head_.running_mean[c] + (1.0 - m) * mean[c];
            head_.running_var[c] = m * head_.running_var[c] + (1.0 - m) * var[c];
        }
    } else {
        mean = head_.running_mean;
        var = head_.running_var;
    }

    inv_std_.resize(channels);
    for (std::size_t c = 0; c < channels; ++c)
        inv_std_[c] = 1.0 / std::sqrt(var[c] + head_config_.batchnorm_epsilon);

    normalized_.resize(x.size());
    Tensor pooled({batch, channels});
    for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t s = 0; s < spatial; ++s)
            for (std::size_t c = 0; c < channels; ++c) {
                const std::size_t at = (b * spatial + s) * channels + c;
                const double xhat = (x[at] - mean[c]) * inv_std_[c];
                normalized_[at] = xhat;
                pooled[b * channels + c] += head_.gamma.value[c] * xhat + head_.beta.value[c];
            }
    for (auto& v : pooled.data)
        v /= double(spatial);

    dropout_scale_.assign(batch * channels, 1.0);
    const double rate = head_config_.dropout_rate;
    if (mode_ == ModelMode::train && rate > 0.0) {
        Rng rng(dropout_seed);
        std::bernoulli_distribution keep(1.0 - rate);
        for (auto& s : dropout_scale_)
            s = keep(rng) ? 1.0 / (1.0 - rate) : 0.0;
    }
    dropped_ = pooled;
    for (std::size_t i = 0; i < dropped_.size(); ++i)
        dropped_[i] *= dropout_scale_[i];

    const auto out = dense_output(dropped_);
    Tensor result({batch, 1});
    std::copy(out.begin(), out.end(), result.data.begin());
    return result;
}

std::vector<double> RegressionModel::dense_output(const Tensor& pooled) const {
    const std::size_t channels = std::size_t(head_.channels);
    if (pooled.rank() != 2 || pooled.dim(1) != channels)
        throw ShapeMismatch("dense layer expects [B," + std::to_string(channels) + "]");
    std::vector<double> out(pooled.dim(0), head_.dense_bias.value[0]);
    for (std::size_t b = 0; b < out.size(); ++b)
        for (std::size_t c = 0; c < channels; ++c)
            out[b] += head_.dense_weight.value[c] * pooled[b * channels + c];
    return out;
}

void RegressionModel::backward(std::span<const double> grad_output) {
    const std::size_t batch = features_.dim(0);
    const std::size_t spatial = features_.dim(1) * features_.dim(2);
    const std::size_t channels = features_.dim(3);
    if (grad_output.size() != batch)
        throw LengthMismatch(grad_output.size(), batch);
    if (regime_ == Regime::full && !traced_)
        throw std::logic_error("FULL-regime backward needs a train-mode forward pass");

    for (auto& p : parameters())
        p.param->zero_grad();

    auto& h = head_;
    std::vector<double> d_pooled(batch * channels);
    for (std::size_t b = 0; b < batch; ++b) {
        h.dense_bias.grad[0] += grad_output[b];
        for (std::size_t c = 0; c < channels; ++c) {
            h.dense_weight.grad[c] += grad_output[b] * dropped_[b * channels + c];
            d_pooled[b * channels + c] = grad_output[b] * h.dense_weight.value[c] * dropout_scale_[b * channels + c];
        }
    }

    // Through global average pooling every position of (b, c) receives
    // d_pooled / spatial, so per-channel sums reduce to per-(b, c) terms.
    std::vector<double> sum_dy(channels, 0.0), sum_dy_xhat(channels, 0.0);
    for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t s = 0; s < spatial; ++s)
            for (std::size_t c = 0; c < channels; ++c) {
                const double dy = d_pooled[b * channels + c] / double(spatial);
                sum_dy[c] += dy;
                sum_dy_xhat[c] += dy * normalized_[(b * spatial + s) * channels + c];
            }
    for (std::size_t c = 0; c < channels; ++c) {
        h.gamma.grad[c] = sum_dy_xhat[c];
        h.beta.grad[c] = sum_dy[c];
    }

    if (regime_ == Regime::frozen)
        return;

    const double count = double(batch * spatial);
    Tensor dx(features_.shape);
    for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t s = 0; s < spatial; ++s)
            for (std::size_t c = 0; c < channels; ++c) {
                const std::size_t at = (b * spatial + s) * channels + c;
                const double dy = d_pooled[b * channels + c] / double(spatial);
                const double scale = h.gamma.value[c] * inv_std_[c];
                dx[at] = batch_stats_
                             ? scale * (dy - sum_dy[c] / count - normalized_[at] * sum_dy_xhat[c] / count)
                             : scale * dy;
            }
    backbone_backward(backbone_, trace_, std::move(dx));
}

std::vector<ParamRef> RegressionModel::parameters() {
    std::vector<ParamRef> out;
    for (std::size_t i = 0; i < backbone_.layers.size(); ++i)
        if (auto* conv = std::get_if<Conv2d>(&backbone_.layers[i])) {
            out.push_back({fmt::format("backbone/layer{}/weight", i), &conv->weight});
            out.push_back({fmt::format("backbone/layer{}/bias", i), &conv->bias});
        }
    out.push_back({"head/batch_norm/gamma", &head_.gamma});
    out.push_back({"head/batch_norm/beta", &head_.beta});
    out.push_back({"head/dense/weight", &head_.dense_weight});
    out.push_back({"head/dense/bias", &head_.dense_bias});
    return out;
}

std::vector<ParamRef> RegressionModel::trainable_parameters() {
    auto all = parameters();
    if (regime_ == Regime::frozen)
        std::erase_if(all, [](const ParamRef& p) { return p.name.starts_with("backbone/"); });
    return all;
}

std::size_t RegressionModel::trainable_parameter_count() const {
    const std::size_t head = head_.trainable_count();
    return regime_ == Regime::full ? head + backbone_.parameter_count() : head;
}

std::size_t RegressionModel::total_parameter_count() const {
    return backbone_.parameter_count() + head_.trainable_count() + head_.running_mean.size() +
           head_.running_var.size();
}

std::vector<std::string> RegressionModel::describe_architecture() const {
    auto layers = backbone_.describe();
    layers.push_back(fmt::format("batch_normalization({})", head_.channels));
    layers.push_back("global_average_pooling");
    layers.push_back(fmt::format("dropout({})", head_config_.dropout_rate));
    layers.push_back("dense(1, linear)");
    return layers;
}

std::vector<BackboneSpec> list_backbones() { return registry(); }

const BackboneSpec& find_backbone(const std::string& id) {
    static const std::vector<BackboneSpec> specs = registry();
    auto it = std::find_if(specs.begin(), specs.end(), [&](const BackboneSpec& s) { return s.id == id; });
    if (it == specs.end())
        throw UnknownBackbone(id);
    return *it;
}

Backbone make_tiny_backbone(int channels, std::uint64_t seed) {
    Backbone backbone;
    backbone.id = "tiny_test";
    Rng rng(seed);
    int in = 3;
    for (int stage = 0; stage < 3; ++stage) {
        Conv2d conv = make_conv(in, channels, 3);
        he_normal(conv, rng);
        backbone.layers.emplace_back(std::move(conv));
        backbone.layers.emplace_back(Activation{ActivationKind::relu});
        backbone.layers.emplace_back(MaxPool2d{2, 2});
        in = channels;
    }
    return backbone;
}

RegressionModel build_model(const std::string& backbone_id, Regime regime, const HeadConfig& head,
                            const BuildOptions& options) {
    BackboneSpec spec = find_backbone(backbone_id);
    head.validate();

    Backbone backbone;
    if (spec.pretrained_source == PretrainedSource::random) {
        backbone = make_tiny_backbone(spec.feature_channels, derive_seed(options.seed, streams::backbone_init));
    } else {
        const auto path = resolve_weights_dir(options, backbone_id) / (backbone_id + ".baaw");
        if (!std::filesystem::exists(path))
            throw WeightsUnavailable("pretrained weights not found: " + path.string());
        try {
            backbone = load_backbone(path);
        } catch (const InputError& e) {
            throw WeightsUnavailable(e.what());
        }
        if (backbone.id != backbone_id || backbone.input_channels != 3 ||
            backbone.output_channels() != spec.feature_channels)
            throw WeightsUnavailable(fmt::format("{} does not hold a {} backbone with {} feature channels",
                                                 path.string(), backbone_id, spec.feature_channels));
    }
    if (options.input_override)
        spec.input_spec = *options.input_override;

    return RegressionModel(spec, regime, head, std::move(backbone),
                           make_head(spec.feature_channels, options.seed));
}

std::string serialize_backbone(const Backbone& backbone) {
    std::ostringstream os(std::ios::binary);
    {
        cereal::PortableBinaryOutputArchive ar(os);
        ar(backbone);
    }
    return os.str();
}

Backbone deserialize_backbone(const std::string& bytes) {
    std::istringstream is(bytes, std::ios::binary);
    Backbone backbone;
    try {
        cereal::PortableBinaryInputArchive ar(is);
        ar(backbone);
    } catch (const std::exception& e) {
        throw IoError(std::string("corrupt backbone blob: ") + e.what());
    }
    return backbone;
}

void save_backbone(const Backbone& backbone, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw IoError("cannot write " + path.string());
    const auto bytes = serialize_backbone(backbone);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out)
        throw IoError("write failed for " + path.string());
}

Backbone load_backbone(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw IoError("cannot open " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return deserialize_backbone(buf.str());
}

void save_checkpoint(const RegressionModel& model, const CheckpointInfo& info, const std::filesystem::path& blob_path,
                     const std::filesystem::path& sidecar_path) {
    {
        std::ofstream out(blob_path, std::ios::binary);
        if (!out)
            throw IoError("cannot write " + blob_path.string());
        cereal::PortableBinaryOutputArchive ar(out);
        ar(std::string(kCheckpointMagic), model.backbone(), model.head());
    }
    const nlohmann::json sidecar = {
        {"backbone_id", model.spec().id},
        {"regime", to_string(model.regime())},
        {"head_config", to_json(model.head_config())},
        {"epoch", info.epoch},
        {"val_mae", info.val_mae},
        {"seed", info.seed},
        {"input_spec", to_json(model.input_spec())},
    };
    std::ofstream out(sidecar_path);
    if (!out)
        throw IoError("cannot write " + sidecar_path.string());
    out << sidecar.dump(2) << '\n';
}

RegressionModel load_checkpoint(const std::filesystem::path& blob_path, const std::filesystem::path& sidecar_path,
                                CheckpointInfo* info) {
    nlohmann::json sidecar;
    {
        std::ifstream in(sidecar_path);
        if (!in)
            throw IoError("cannot open " + sidecar_path.string());
        try {
            in >> sidecar;
        } catch (const nlohmann::json::exception& e) {
            throw CheckpointMismatch(std::string("invalid sidecar: ") + e.what());
        }
    }

    std::string magic;
    Backbone backbone;
    RegressionHead head;
    {
        std::ifstream in(blob_path, std::ios::binary);
        if (!in)
            throw IoError("cannot open " + blob_path.string());
        try {
            cereal::PortableBinaryInputArchive ar(in);
            ar(magic, backbone, head);
        } catch (const std::exception& e) {
            throw CheckpointMismatch(std::string("corrupt checkpoint blob: ") + e.what());
        }
    }
    if (magic != kCheckpointMagic)
        throw CheckpointMismatch("not a checkpoint blob: " + blob_path.string());

    try {
        const auto sidecar_id = sidecar.at("backbone_id").get<std::string>();
        if (sidecar_id != backbone.id)
            throw CheckpointMismatch(fmt::format("sidecar backbone_id '{}' does not match blob backbone '{}'",
                                                 sidecar_id, backbone.id));
        BackboneSpec spec = find_backbone(backbone.id);
        if (sidecar.contains("input_spec")) {
            const auto& in = sidecar.at("input_spec");
            spec.input_spec.target_height = in.at("height").get<int>();
            spec.input_spec.target_width = in.at("width").get<int>();
            spec.input_spec.scaling = scaling_from_string(in.at("scaling").get<std::string>());
            if (in.contains("channel_means"))
                spec.input_spec.channel_means = in.at("channel_means").get<std::array<double, 3>>();
        }
        const Regime regime = regime_from_string(sidecar.at("regime").get<std::string>());
        const HeadConfig head_config = head_config_from_json(sidecar.at("head_config"));
        if (info) {
            info->epoch = sidecar.value("epoch", std::size_t{0});
            info->val_mae = sidecar.value("val_mae", 0.0);
            info->seed = sidecar.value("seed", std::uint64_t{0});
        }
        return RegressionModel(spec, regime, head_config, std::move(backbone), std::move(head));
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointMismatch(std::string("invalid sidecar: ") + e.what());
    }
}

} // namespace baa
