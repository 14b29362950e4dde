#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "baa/data.hpp"
#include "baa/engine.hpp"
#include "baa/models.hpp"
#include "baa/plot.hpp"

namespace baa {

struct RunResult {
    std::string backbone_id;
    Regime regime = Regime::full;
    TrainHistory history;
    EvalResult eval;
    nlohmann::json config = nlohmann::json::object();
};

struct ComparisonRow {
    std::string backbone_id;
    std::optional<double> mae_full;   // method 1
    std::optional<double> mae_frozen; // method 2
};

struct BestCell {
    std::string backbone_id;
    Regime regime = Regime::full;
    double mae = 0.0;
};

struct ComparisonTable {
    std::vector<ComparisonRow> rows;
    std::optional<BestCell> best;
};

/// One row per backbone (registry order first), one column per regime.
/// Throws DuplicateCell when a (backbone, regime) pair repeats.
ComparisonTable render_comparison_table(const std::vector<RunResult>& results);

/// Markdown with MAEs to two decimals; the best cell is bolded.
std::string to_markdown(const ComparisonTable& table);
nlohmann::json to_json(const ComparisonTable& table);
/// Parses the markdown produced by to_markdown back into rows. Display
/// names are mapped back to backbone ids where known.
std::vector<ComparisonRow> parse_comparison_markdown(const std::string& markdown);

std::string display_name(const std::string& backbone_id);

enum class PlotKind { history_curve, scatter, age_distribution, gender_distribution };
using PlotPayload = std::variant<TrainHistory, EvalResult, DatasetStats>;

struct PlotOptions {
    /// Dashed +/- band around y = x on scatter plots, in months; 0 disables.
    double tolerance_band = 12.0;
};

/// Pure: builds the chart description for a payload. Throws PayloadMismatch.
PlotData build_plot(PlotKind kind, const PlotPayload& payload, const PlotOptions& options = {});

/// build_plot + render to `out_path`. Throws IoError when the file cannot
/// be written.
PlotData emit_plot(PlotKind kind, const PlotPayload& payload, const std::filesystem::path& out_path,
                   const PlotOptions& options = {});

struct AgeBand {
    int lo = 0; // inclusive, months
    int hi = 0; // exclusive
    std::size_t count = 0;
    double share = 0.0;
};

struct BandError {
    int lo = 0;
    int hi = 0;
    std::size_t n = 0;
    double mae = 0.0;
};

struct RunBandErrors {
    std::string backbone_id;
    Regime regime = Regime::full;
    std::vector<BandError> bands;
};

struct BiasReport {
    double gender_ratio = 0.0; // male / female; infinite when no females
    std::size_t male_count = 0;
    std::size_t female_count = 0;
    int band_width = 24;
    std::vector<AgeBand> bands;
    AgeBand modal_band;
    std::vector<RunBandErrors> per_band_mae;
};

/// Aggregates the stats histogram into `band_width`-month bands (which must
/// be a multiple of the histogram bin width) and, for each supplied run,
/// the MAE within each true-age band.
BiasReport write_bias_report(const DatasetStats& stats, const std::vector<RunResult>& results = {},
                             int band_width = 24);

nlohmann::json to_json(const BiasReport& report);
std::string to_text(const BiasReport& report);

} // namespace baa
