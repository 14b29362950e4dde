#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "baa/layers.hpp"
#include "baa/tensor.hpp"
#include "baa/transforms.hpp"

namespace baa {

enum class PretrainedSource { imagenet, random };

struct BackboneSpec {
    std::string id;
    std::string display_name;
    PreprocessSpec input_spec;
    int feature_channels = 0;
    PretrainedSource pretrained_source = PretrainedSource::random;
};

/// FULL retrains every layer; FROZEN trains the head only.
enum class Regime { full, frozen };

std::string to_string(Regime regime);          // "FULL" / "FROZEN"
Regime regime_from_string(const std::string& s); // case-insensitive

struct HeadConfig {
    double dropout_rate = 0.5;
    double batchnorm_epsilon = 1e-3;
    double batchnorm_momentum = 0.99;

    void validate() const;
    friend bool operator==(const HeadConfig&, const HeadConfig&) = default;
};

nlohmann::json to_json(const HeadConfig& head);
HeadConfig head_config_from_json(const nlohmann::json& j);

/// BatchNorm -> GlobalAveragePooling -> Dropout -> Dense(1, linear).
struct RegressionHead {
    int channels = 0;
    Param gamma;
    Param beta;
    std::vector<double> running_mean;
    std::vector<double> running_var;
    Param dense_weight;
    Param dense_bias;

    std::size_t trainable_count() const noexcept {
        return gamma.size() + beta.size() + dense_weight.size() + dense_bias.size();
    }

    template <class Archive>
    void serialize(Archive& ar) { ar(channels, gamma, beta, running_mean, running_var, dense_weight, dense_bias); }
};

enum class ModelMode { train, eval };

struct ParamRef {
    std::string name;
    Param* param;
};

struct BuildOptions {
    std::uint64_t seed = 0;
    /// Directory holding `<backbone_id>.baaw` blobs; falls back to
    /// $BAA_WEIGHTS_DIR when unset.
    std::optional<std::filesystem::path> weights_dir;
    /// Replaces the backbone's default input convention.
    std::optional<PreprocessSpec> input_override;
};

class RegressionModel {
public:
    RegressionModel(BackboneSpec spec, Regime regime, HeadConfig head_config, Backbone backbone, RegressionHead head);

    const BackboneSpec& spec() const noexcept { return spec_; }
    const PreprocessSpec& input_spec() const noexcept { return spec_.input_spec; }
    Regime regime() const noexcept { return regime_; }
    const HeadConfig& head_config() const noexcept { return head_config_; }
    const Backbone& backbone() const noexcept { return backbone_; }
    const RegressionHead& head() const noexcept { return head_; }
    RegressionHead& head() noexcept { return head_; }
    Backbone& backbone() noexcept { return backbone_; }

    ModelMode mode() const noexcept { return mode_; }
    void set_mode(ModelMode mode) noexcept { mode_ = mode; }

    /// [B,H,W,3] -> [B,1]. In train mode dropout draws from `dropout_seed`
    /// and BatchNorm uses (and updates) batch statistics; eval mode is
    /// deterministic. Throws ShapeMismatch.
    Tensor forward(const Tensor& images, std::uint64_t dropout_seed = 0);

    /// Gradient of the loss w.r.t. the last forward's outputs. Overwrites
    /// the gradients of every trainable parameter; frozen ones stay zero.
    void backward(std::span<const double> grad_output);

    /// Dense layer applied to pooled [B,C] features, in isolation.
    std::vector<double> dense_output(const Tensor& pooled) const;

    std::vector<ParamRef> parameters();
    std::vector<ParamRef> trainable_parameters();

    /// Scalars in the trainable partition.
    std::size_t trainable_parameter_count() const;
    /// Every scalar, BatchNorm running statistics included.
    std::size_t total_parameter_count() const;

    /// Ordered layer list: backbone layers, then the head stages.
    std::vector<std::string> describe_architecture() const;

private:
    Tensor head_forward(const Tensor& features, std::uint64_t dropout_seed);

    BackboneSpec spec_;
    Regime regime_;
    HeadConfig head_config_;
    Backbone backbone_;
    RegressionHead head_;
    ModelMode mode_ = ModelMode::eval;

    // Forward caches consumed by backward().
    BackboneTrace trace_;
    bool traced_ = false;
    Tensor features_;
    std::vector<double> normalized_; // x_hat, same layout as features_
    std::vector<double> inv_std_;
    std::vector<double> dropout_scale_; // [B,C], 0 or 1/(1-p)
    Tensor dropped_;                    // [B,C] post-dropout
    bool batch_stats_ = false;
};

std::vector<BackboneSpec> list_backbones();
const BackboneSpec& find_backbone(const std::string& id);

/// Builds backbone + fresh head. ImageNet backbones load ImageNet-derived
/// weights from `<weights_dir>/<id>.baaw`; tiny_test is randomly
/// initialised from the seed. Throws UnknownBackbone, WeightsUnavailable.
RegressionModel build_model(const std::string& backbone_id, Regime regime, const HeadConfig& head,
                            const BuildOptions& options = {});

/// The built-in CI backbone: three conv(3x3)+ReLU+maxpool stages ending in
/// `channels` feature maps.
Backbone make_tiny_backbone(int channels, std::uint64_t seed);

std::string serialize_backbone(const Backbone& backbone);
Backbone deserialize_backbone(const std::string& bytes);
void save_backbone(const Backbone& backbone, const std::filesystem::path& path);
Backbone load_backbone(const std::filesystem::path& path);

struct CheckpointInfo {
    std::size_t epoch = 0;
    double val_mae = 0.0;
    std::uint64_t seed = 0;
};

/// Weight blob plus JSON sidecar {backbone_id, regime, head_config, epoch,
/// val_mae, seed, input_spec}.
void save_checkpoint(const RegressionModel& model, const CheckpointInfo& info, const std::filesystem::path& blob_path,
                     const std::filesystem::path& sidecar_path);

/// Throws CheckpointMismatch when the sidecar's backbone_id disagrees with
/// the blob.
RegressionModel load_checkpoint(const std::filesystem::path& blob_path, const std::filesystem::path& sidecar_path,
                                CheckpointInfo* info = nullptr);

} // namespace baa
