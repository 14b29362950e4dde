#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "baa/data.hpp"
#include "baa/models.hpp"
#include "baa/transforms.hpp"

namespace baa {

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-7;
};

struct TrainConfig {
    std::size_t max_epochs = 15;
    std::size_t patience = 10;
    std::size_t batch_size = 32;
    double learning_rate = 1e-3;
    AdamConfig adam;
    std::uint64_t seed = 0;
    double min_delta = 0.0; // months

    void validate() const;
};

nlohmann::json to_json(const TrainConfig& cfg);

struct TransformsConfig {
    PreprocessSpec preprocess;
    AugmentParams augment;
};

struct EpochRecord {
    std::size_t epoch = 0;
    double train_loss = 0.0; // months^2
    double train_mae = 0.0;  // months
    double val_mae = 0.0;    // months

    friend bool operator==(const EpochRecord&, const EpochRecord&) = default;
};

struct TrainHistory {
    std::vector<EpochRecord> records;
    std::size_t best_epoch = 0;
    bool stopped_early = false;

    std::vector<double> val_mae() const;
    friend bool operator==(const TrainHistory&, const TrainHistory&) = default;
};

nlohmann::json to_json(const TrainHistory& history);
TrainHistory history_from_json(const nlohmann::json& j);

struct Prediction {
    std::string id;
    double true_age = 0.0;
    double predicted_age = 0.0;
};

struct EvalResult {
    double mae = 0.0;
    std::vector<Prediction> predictions;
};

/// Raised when training produces a non-finite loss; carries the epochs
/// completed before divergence.
class NonFiniteLoss : public std::runtime_error {
public:
    NonFiniteLoss(std::string what, TrainHistory partial)
        : std::runtime_error(std::move(what)), history_(std::move(partial)) {}
    const TrainHistory& history() const noexcept { return history_; }

private:
    TrainHistory history_;
};

/// Mean of squared differences. Throws LengthMismatch, EmptyBatch.
double mse_loss(std::span<const double> pred, std::span<const double> truth);
/// d(mse)/d(pred_i) = 2 (pred_i - truth_i) / B.
std::vector<double> mse_gradient(std::span<const double> pred, std::span<const double> truth);
/// Mean absolute difference. Throws LengthMismatch, EmptyBatch.
double mae_metric(std::span<const double> pred, std::span<const double> truth);

struct EarlyStopDecision {
    bool stop = false;
    std::size_t best_index = 0;
};

/// Patience-based stopping on a validation-MAE history. An epoch counts as
/// an improvement only when it beats the running best by more than
/// `min_delta`.
EarlyStopDecision early_stop_check(std::span<const double> val_mae_history, std::size_t patience,
                                   double min_delta = 0.0);

/// Adam with bias-corrected step size.
class AdamOptimizer {
public:
    AdamOptimizer(double learning_rate, AdamConfig cfg) : lr_(learning_rate), cfg_(cfg) {}
    void step(const std::vector<ParamRef>& params);
    std::size_t steps() const noexcept { return t_; }

private:
    struct Moments {
        std::vector<double> m, v;
    };
    double lr_;
    AdamConfig cfg_;
    std::size_t t_ = 0;
    std::vector<Moments> state_;
};

using EpochObserver = std::function<void(const EpochRecord&)>;

/// Mini-batch Adam on MSE with validation MAE tracking, patience stopping
/// and restore of the best epoch's weights. The seed fixes shuffling,
/// augmentation and dropout (head initialisation is fixed at build time).
TrainHistory train(RegressionModel& model, const std::vector<SampleRecord>& train_set,
                   const std::vector<SampleRecord>& val_set, const TransformsConfig& transforms,
                   const TrainConfig& cfg, const EpochObserver& observer = {});

/// Deterministic eval-mode predictions, one per record.
EvalResult evaluate(RegressionModel& model, const std::vector<SampleRecord>& test_set,
                    const TransformsConfig& transforms, std::size_t batch_size = 32);
EvalResult evaluate(RegressionModel& model, const std::vector<SampleRecord>& test_set,
                    const TransformsConfig& transforms, std::size_t batch_size, ImageCache& cache);

/// CSV `id,true_months,pred_months`.
void write_predictions_csv(const EvalResult& result, const std::filesystem::path& path);
EvalResult read_predictions_csv(const std::filesystem::path& path);

} // namespace baa
