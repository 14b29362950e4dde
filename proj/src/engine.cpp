#include "baa/engine.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include <fmt/format.h>

#include "baa/errors.hpp"
#include "baa/random.hpp"

namespace baa {

namespace {

void check_lengths(std::span<const double> pred, std::span<const double> truth) {
    if (pred.size() != truth.size())
        throw LengthMismatch(pred.size(), truth.size());
    if (pred.empty())
        throw EmptyBatch();
}

template <typename T>
std::vector<T> slice(const std::vector<T>& v, std::size_t begin, std::size_t end) {
    return {v.begin() + static_cast<std::ptrdiff_t>(begin), v.begin() + static_cast<std::ptrdiff_t>(end)};
}

struct Snapshot {
    Backbone backbone;
    RegressionHead head;
};

} // namespace

void TrainConfig::validate() const {
    if (max_epochs < 1)
        throw ConfigError("max_epochs must be >= 1");
    if (patience < 1)
        throw ConfigError("patience must be >= 1");
    if (batch_size < 1)
        throw ConfigError("batch_size must be >= 1");
    if (!(learning_rate > 0.0))
        throw ConfigError("learning_rate must be positive");
    if (!(min_delta >= 0.0))
        throw ConfigError("min_delta must be >= 0");
    if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0 && adam.beta2 >= 0.0 && adam.beta2 < 1.0 && adam.epsilon > 0.0))
        throw ConfigError("invalid adam parameters");
}

nlohmann::json to_json(const TrainConfig& cfg) {
    return {
        {"max_epochs", cfg.max_epochs},
        {"patience", cfg.patience},
        {"batch_size", cfg.batch_size},
        {"learning_rate", cfg.learning_rate},
        {"optimizer", {{"name", "adam"}, {"beta1", cfg.adam.beta1}, {"beta2", cfg.adam.beta2},
                       {"epsilon", cfg.adam.epsilon}}},
        {"seed", cfg.seed},
        {"min_delta", cfg.min_delta},
    };
}

std::vector<double> TrainHistory::val_mae() const {
    std::vector<double> out;
    out.reserve(records.size());
    for (const auto& r : records)
        out.push_back(r.val_mae);
    return out;
}

nlohmann::json to_json(const TrainHistory& history) {
    auto records = nlohmann::json::array();
    for (const auto& r : history.records)
        records.push_back({{"epoch", r.epoch},
                           {"train_loss", r.train_loss},
                           {"train_mae", r.train_mae},
                           {"val_mae", r.val_mae}});
    return {{"records", records}, {"best_epoch", history.best_epoch}, {"stopped_early", history.stopped_early}};
}

TrainHistory history_from_json(const nlohmann::json& j) {
    TrainHistory history;
    for (const auto& r : j.at("records"))
        history.records.push_back({r.at("epoch").get<std::size_t>(), r.at("train_loss").get<double>(),
                                   r.at("train_mae").get<double>(), r.at("val_mae").get<double>()});
    history.best_epoch = j.at("best_epoch").get<std::size_t>();
    history.stopped_early = j.at("stopped_early").get<bool>();
    return history;
}

double mse_loss(std::span<const double> pred, std::span<const double> truth) {
    check_lengths(pred, truth);
    double sum = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double d = pred[i] - truth[i];
        sum += d * d;
    }
    return sum / static_cast<double>(pred.size());
}

std::vector<double> mse_gradient(std::span<const double> pred, std::span<const double> truth) {
    check_lengths(pred, truth);
    std::vector<double> grad(pred.size());
    const double scale = 2.0 / static_cast<double>(pred.size());
    for (std::size_t i = 0; i < pred.size(); ++i)
        grad[i] = scale * (pred[i] - truth[i]);
    return grad;
}

double mae_metric(std::span<const double> pred, std::span<const double> truth) {
    check_lengths(pred, truth);
    double sum = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i)
        sum += std::abs(pred[i] - truth[i]);
    return sum / static_cast<double>(pred.size());
}

EarlyStopDecision early_stop_check(std::span<const double> history, std::size_t patience, double min_delta) {
    if (history.empty())
        throw InputError("early_stop_check needs a non-empty history");
    EarlyStopDecision decision;
    double best = history[0];
    for (std::size_t i = 1; i < history.size(); ++i) {
        if (history[i] < best - min_delta) {
            best = history[i];
            decision.best_index = i;
        }
    }
    decision.stop = (history.size() - 1 - decision.best_index) >= patience;
    return decision;
}

void AdamOptimizer::step(const std::vector<ParamRef>& params) {
    if (state_.size() != params.size()) {
        state_.clear();
        for (const auto& p : params)
            state_.push_back({std::vector<double>(p.param->size(), 0.0), std::vector<double>(p.param->size(), 0.0)});
    }
    ++t_;
    const double t = static_cast<double>(t_);
    const double lr_t = lr_ * std::sqrt(1.0 - std::pow(cfg_.beta2, t)) / (1.0 - std::pow(cfg_.beta1, t));
    for (std::size_t k = 0; k < params.size(); ++k) {
        Param& p = *params[k].param;
        auto& [m, v] = state_[k];
        for (std::size_t i = 0; i < p.size(); ++i) {
            const double g = p.grad[i];
            m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g;
            v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g * g;
            p.value[i] -= lr_t * m[i] / (std::sqrt(v[i]) + cfg_.epsilon);
        }
    }
}

TrainHistory train(RegressionModel& model, const std::vector<SampleRecord>& train_set,
                   const std::vector<SampleRecord>& val_set, const TransformsConfig& transforms,
                   const TrainConfig& cfg, const EpochObserver& observer) {
    cfg.validate();
    transforms.augment.validate();
    if (train_set.empty() || val_set.empty())
        throw InputError("train and validation sets must be non-empty");
    if (!(transforms.preprocess == model.input_spec()))
        throw ConfigError("preprocess spec does not match the model's input convention");

    ImageCache cache;
    cache.preload(train_set);
    cache.preload(val_set);

    AdamOptimizer optimizer(cfg.learning_rate, cfg.adam);
    TrainHistory history;
    Snapshot best{model.backbone(), model.head()};
    double best_val = 0.0;

    std::vector<std::size_t> order(train_set.size());
    for (std::size_t epoch = 0; epoch < cfg.max_epochs; ++epoch) {
        model.set_mode(ModelMode::train);
        std::iota(order.begin(), order.end(), std::size_t{0});
        Rng shuffle_rng(derive_seed(cfg.seed, streams::shuffle, epoch));
        std::shuffle(order.begin(), order.end(), shuffle_rng);

        double loss_sum = 0.0, abs_sum = 0.0;
        for (std::size_t start = 0, step = 0; start < order.size(); start += cfg.batch_size, ++step) {
            const std::size_t end = std::min(start + cfg.batch_size, order.size());
            std::vector<SampleRecord> records;
            records.reserve(end - start);
            for (std::size_t i = start; i < end; ++i)
                records.push_back(train_set[order[i]]);

            const auto batch = make_batch(records, transforms.preprocess, transforms.augment, BatchMode::train,
                                          derive_seed(derive_seed(cfg.seed, streams::augment, epoch), step), cache);
            const Tensor out =
                model.forward(batch.images, derive_seed(derive_seed(cfg.seed, streams::dropout, epoch), step));
            const double loss = mse_loss(out.values(), batch.targets);
            if (!std::isfinite(loss)) {
                model.set_mode(ModelMode::eval);
                throw NonFiniteLoss(fmt::format("non-finite loss at epoch {} step {}", epoch, step), history);
            }
            model.backward(mse_gradient(out.values(), batch.targets));
            optimizer.step(model.trainable_parameters());

            loss_sum += loss * static_cast<double>(records.size());
            abs_sum += mae_metric(out.values(), batch.targets) * static_cast<double>(records.size());
        }

        const auto val = evaluate(model, val_set, transforms, cfg.batch_size, cache);
        const double n = static_cast<double>(train_set.size());
        const EpochRecord record{epoch, loss_sum / n, abs_sum / n, val.mae};
        if (!std::isfinite(record.train_loss) || !std::isfinite(record.val_mae)) {
            model.set_mode(ModelMode::eval);
            throw NonFiniteLoss(fmt::format("non-finite metrics at epoch {}", epoch), history);
        }
        history.records.push_back(record);
        if (observer)
            observer(record);

        if (epoch == 0 || record.val_mae < best_val) {
            best_val = record.val_mae;
            history.best_epoch = epoch;
            best = {model.backbone(), model.head()};
        }
        if (early_stop_check(history.val_mae(), cfg.patience, cfg.min_delta).stop) {
            history.stopped_early = epoch + 1 < cfg.max_epochs;
            break;
        }
    }

    model.backbone() = std::move(best.backbone);
    model.head() = std::move(best.head);
    model.set_mode(ModelMode::eval);
    return history;
}

EvalResult evaluate(RegressionModel& model, const std::vector<SampleRecord>& test_set,
                    const TransformsConfig& transforms, std::size_t batch_size, ImageCache& cache) {
    if (test_set.empty())
        throw InputError("test set must be non-empty");
    if (batch_size < 1)
        throw ConfigError("batch_size must be >= 1");
    const ModelMode previous = model.mode();
    model.set_mode(ModelMode::eval);

    EvalResult result;
    result.predictions.reserve(test_set.size());
    std::vector<double> pred, truth;
    for (std::size_t start = 0; start < test_set.size(); start += batch_size) {
        const auto records = slice(test_set, start, std::min(start + batch_size, test_set.size()));
        const auto batch = make_batch(records, transforms.preprocess, transforms.augment, BatchMode::eval, 0, cache);
        const Tensor out = model.forward(batch.images);
        for (std::size_t i = 0; i < records.size(); ++i) {
            result.predictions.push_back({records[i].id, batch.targets[i], out[i]});
            pred.push_back(out[i]);
            truth.push_back(batch.targets[i]);
        }
    }
    result.mae = mae_metric(pred, truth);
    model.set_mode(previous);
    return result;
}

EvalResult evaluate(RegressionModel& model, const std::vector<SampleRecord>& test_set,
                    const TransformsConfig& transforms, std::size_t batch_size) {
    ImageCache cache;
    return evaluate(model, test_set, transforms, batch_size, cache);
}

void write_predictions_csv(const EvalResult& result, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out)
        throw IoError("cannot write " + path.string());
    out << "id,true_months,pred_months\n";
    for (const auto& p : result.predictions)
        out << p.id << ',' << fmt::format("{}", p.true_age) << ',' << fmt::format("{:.6f}", p.predicted_age) << '\n';
}

EvalResult read_predictions_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in)
        throw IoError("cannot open " + path.string());
    EvalResult result;
    std::string line;
    std::getline(in, line);
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty())
            continue;
        std::istringstream row(line);
        Prediction p;
        std::string true_text, pred_text;
        if (!std::getline(row, p.id, ',') || !std::getline(row, true_text, ',') || !std::getline(row, pred_text))
            throw MalformedRow(line_no, "expected id,true_months,pred_months");
        try {
            p.true_age = std::stod(true_text);
            p.predicted_age = std::stod(pred_text);
        } catch (const std::exception&) {
            throw MalformedRow(line_no, "non-numeric prediction");
        }
        result.predictions.push_back(std::move(p));
    }
    if (!result.predictions.empty()) {
        double sum = 0.0;
        for (const auto& p : result.predictions)
            sum += std::abs(p.true_age - p.predicted_age);
        result.mae = sum / static_cast<double>(result.predictions.size());
    }
    return result;
}

} // namespace baa
