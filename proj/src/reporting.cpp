#include "baa/reporting.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <set>
#include <sstream>

#include <fmt/format.h>

#include "baa/errors.hpp"

namespace baa {

namespace {

constexpr std::array<std::uint8_t, 3> kBlue{31, 119, 180};
constexpr std::array<std::uint8_t, 3> kOrange{255, 127, 14};
constexpr std::array<std::uint8_t, 3> kGreen{44, 160, 44};
constexpr std::array<std::uint8_t, 3> kGrey{120, 120, 120};
constexpr std::array<std::uint8_t, 3> kPink{214, 39, 140};

std::string cell(const std::optional<double>& v, bool best) {
    if (!v)
        return "n/a";
    return best ? fmt::format("**{:.2f}**", *v) : fmt::format("{:.2f}", *v);
}

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t*");
    if (b == std::string::npos)
        return {};
    const auto e = s.find_last_not_of(" \t*");
    return s.substr(b, e - b + 1);
}

std::string backbone_from_display(const std::string& name) {
    for (const auto& spec : list_backbones())
        if (spec.display_name == name || spec.id == name)
            return spec.id;
    return name;
}

PlotData history_plot(const TrainHistory& history) {
    PlotData plot;
    plot.title = "MAE months vs. Epochs";
    plot.x_label = "Epoch";
    plot.y_label = "MAE (months)";
    PlotSeries train{"train_mae", SeriesStyle::line, {}, kBlue};
    PlotSeries val{"val_mae", SeriesStyle::line, {}, kOrange};
    for (const auto& r : history.records) {
        train.points.emplace_back(double(r.epoch + 1), r.train_mae);
        val.points.emplace_back(double(r.epoch + 1), r.val_mae);
    }
    plot.series = {std::move(train), std::move(val)};
    return plot;
}

PlotData scatter_plot(const EvalResult& eval, double band) {
    PlotData plot;
    plot.title = fmt::format("Actual age vs. Predicted age (MAE {:.2f} months)", eval.mae);
    plot.x_label = "Actual age (months)";
    plot.y_label = "Predicted age (months)";
    PlotSeries points{"predictions", SeriesStyle::points, {}, kBlue};
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (const auto& p : eval.predictions) {
        points.points.emplace_back(p.true_age, p.predicted_age);
        lo = std::min({lo, p.true_age, p.predicted_age});
        hi = std::max({hi, p.true_age, p.predicted_age});
    }
    if (!std::isfinite(lo)) {
        lo = kMinBoneAge;
        hi = kMaxBoneAge;
    }
    plot.series.push_back(std::move(points));
    plot.series.push_back({"y = x", SeriesStyle::line, {{lo, lo}, {hi, hi}}, kGrey});
    if (band > 0.0) {
        const std::string label = fmt::format("+/- {:g} months", band);
        plot.series.push_back({label, SeriesStyle::dashed, {{lo, lo + band}, {hi, hi + band}}, kGreen});
        plot.series.push_back({"", SeriesStyle::dashed, {{lo, lo - band}, {hi, hi - band}}, kGreen});
    }
    return plot;
}

PlotData age_plot(const DatasetStats& stats) {
    PlotData plot;
    plot.title = "Bone age distribution";
    plot.x_label = "Bone age (months)";
    plot.y_label = "Count";
    PlotSeries all{"all", SeriesStyle::bars, {}, kBlue};
    PlotSeries male{"male", SeriesStyle::line, {}, kOrange};
    PlotSeries female{"female", SeriesStyle::line, {}, kPink};
    for (const auto& [bin, count] : stats.age_histogram) {
        all.points.emplace_back(double(bin), double(count));
        const auto m = stats.male_histogram.find(bin);
        const auto f = stats.female_histogram.find(bin);
        male.points.emplace_back(double(bin), m == stats.male_histogram.end() ? 0.0 : double(m->second));
        female.points.emplace_back(double(bin), f == stats.female_histogram.end() ? 0.0 : double(f->second));
    }
    plot.series = {std::move(all), std::move(male), std::move(female)};
    return plot;
}

PlotData gender_plot(const DatasetStats& stats) {
    PlotData plot;
    plot.title = "Gender distribution";
    plot.x_label = "Gender";
    plot.y_label = "Count";
    plot.series.push_back({"male", SeriesStyle::bars, {{0.0, double(stats.male_count)}}, kBlue});
    plot.series.push_back({"female", SeriesStyle::bars, {{1.0, double(stats.female_count)}}, kPink});
    plot.x_tick_labels = {{0.0, "Male"}, {1.0, "Female"}};
    return plot;
}

int band_of(double age, int width) { return static_cast<int>(std::floor(age / width)) * width; }

} // namespace

std::string display_name(const std::string& backbone_id) {
    for (const auto& spec : list_backbones())
        if (spec.id == backbone_id)
            return spec.display_name;
    return backbone_id;
}

ComparisonTable render_comparison_table(const std::vector<RunResult>& results) {
    std::vector<std::string> order;
    for (const auto& spec : list_backbones())
        order.push_back(spec.id);
    for (const auto& r : results)
        if (std::find(order.begin(), order.end(), r.backbone_id) == order.end())
            order.push_back(r.backbone_id);

    std::map<std::string, ComparisonRow> rows;
    for (const auto& r : results) {
        auto& row = rows[r.backbone_id];
        row.backbone_id = r.backbone_id;
        auto& slot = r.regime == Regime::full ? row.mae_full : row.mae_frozen;
        if (slot)
            throw DuplicateCell(fmt::format("duplicate result for ({}, {})", r.backbone_id, to_string(r.regime)));
        slot = r.eval.mae;
    }

    ComparisonTable table;
    for (const auto& id : order) {
        auto it = rows.find(id);
        if (it != rows.end())
            table.rows.push_back(it->second);
    }
    for (const auto& row : table.rows) {
        for (Regime regime : {Regime::full, Regime::frozen}) {
            const auto& v = regime == Regime::full ? row.mae_full : row.mae_frozen;
            if (v && (!table.best || *v < table.best->mae))
                table.best = BestCell{row.backbone_id, regime, *v};
        }
    }
    return table;
}

std::string to_markdown(const ComparisonTable& table) {
    std::string out = "| Pretrained model | MAE (in months) using method 1 (FULL) | MAE (in months) using method 2 (FROZEN) |\n"
                      "|---|---:|---:|\n";
    for (const auto& row : table.rows) {
        const bool best_row = table.best && table.best->backbone_id == row.backbone_id;
        out += fmt::format("| {} | {} | {} |\n", display_name(row.backbone_id),
                           cell(row.mae_full, best_row && table.best->regime == Regime::full),
                           cell(row.mae_frozen, best_row && table.best->regime == Regime::frozen));
    }
    if (table.best)
        out += fmt::format("\nBest: {} using method {} ({}) with MAE {:.2f} months\n",
                           display_name(table.best->backbone_id), table.best->regime == Regime::full ? 1 : 2,
                           to_string(table.best->regime), table.best->mae);
    return out;
}

nlohmann::json to_json(const ComparisonTable& table) {
    auto rows = nlohmann::json::array();
    auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
    for (const auto& row : table.rows)
        rows.push_back({{"backbone_id", row.backbone_id},
                        {"display_name", display_name(row.backbone_id)},
                        {"mae_method1", opt(row.mae_full)},
                        {"mae_method2", opt(row.mae_frozen)}});
    nlohmann::json j = {{"rows", rows}, {"best_cell", nullptr}};
    if (table.best)
        j["best_cell"] = {{"backbone_id", table.best->backbone_id},
                          {"regime", to_string(table.best->regime)},
                          {"mae", table.best->mae}};
    return j;
}

std::vector<ComparisonRow> parse_comparison_markdown(const std::string& markdown) {
    std::vector<ComparisonRow> rows;
    std::istringstream in(markdown);
    std::string line;
    int table_line = 0;
    while (std::getline(in, line)) {
        if (line.empty() || line.front() != '|')
            continue;
        if (table_line++ < 2)
            continue; // header + alignment row
        std::vector<std::string> cells;
        std::size_t pos = 1;
        while (pos < line.size()) {
            const auto next = line.find('|', pos);
            if (next == std::string::npos)
                break;
            cells.push_back(trim(line.substr(pos, next - pos)));
            pos = next + 1;
        }
        if (cells.size() != 3)
            throw InputError("comparison row must have 3 cells: " + line);
        auto parse = [](const std::string& s) -> std::optional<double> {
            if (s == "n/a")
                return std::nullopt;
            return std::stod(s);
        };
        rows.push_back({backbone_from_display(cells[0]), parse(cells[1]), parse(cells[2])});
    }
    return rows;
}

PlotData build_plot(PlotKind kind, const PlotPayload& payload, const PlotOptions& options) {
    switch (kind) {
    case PlotKind::history_curve:
        if (const auto* h = std::get_if<TrainHistory>(&payload))
            return history_plot(*h);
        break;
    case PlotKind::scatter:
        if (const auto* e = std::get_if<EvalResult>(&payload))
            return scatter_plot(*e, options.tolerance_band);
        break;
    case PlotKind::age_distribution:
        if (const auto* s = std::get_if<DatasetStats>(&payload))
            return age_plot(*s);
        break;
    case PlotKind::gender_distribution:
        if (const auto* s = std::get_if<DatasetStats>(&payload))
            return gender_plot(*s);
        break;
    }
    throw PayloadMismatch("plot payload does not match the requested plot kind");
}

PlotData emit_plot(PlotKind kind, const PlotPayload& payload, const std::filesystem::path& out_path,
                   const PlotOptions& options) {
    PlotData plot = build_plot(kind, payload, options);
    if (!render_plot(plot, out_path))
        throw IoError("cannot write plot " + out_path.string());
    return plot;
}

BiasReport write_bias_report(const DatasetStats& stats, const std::vector<RunResult>& results, int band_width) {
    if (stats.total == 0)
        throw InputError("bias report needs non-empty stats");
    if (band_width < 1 || band_width % stats.bin_width != 0)
        throw ConfigError(fmt::format("band width {} must be a positive multiple of the histogram bin width {}",
                                      band_width, stats.bin_width));

    BiasReport report;
    report.band_width = band_width;
    report.male_count = stats.male_count;
    report.female_count = stats.female_count;
    report.gender_ratio = stats.female_count == 0 ? std::numeric_limits<double>::infinity()
                                                  : double(stats.male_count) / double(stats.female_count);

    std::map<int, std::size_t> band_counts;
    for (const auto& [bin, count] : stats.age_histogram)
        band_counts[band_of(bin, band_width)] += count;
    const int first = band_counts.begin()->first;
    const int last = band_counts.rbegin()->first;
    for (int lo = first; lo <= last; lo += band_width) {
        const auto it = band_counts.find(lo);
        const std::size_t count = it == band_counts.end() ? 0 : it->second;
        report.bands.push_back({lo, lo + band_width, count, double(count) / double(stats.total)});
    }
    report.modal_band = report.bands.front();
    for (const auto& band : report.bands)
        if (band.count > report.modal_band.count)
            report.modal_band = band;

    for (const auto& run : results) {
        std::map<int, std::pair<std::size_t, double>> acc;
        for (const auto& p : run.eval.predictions) {
            auto& [n, sum] = acc[band_of(p.true_age, band_width)];
            ++n;
            sum += std::abs(p.true_age - p.predicted_age);
        }
        RunBandErrors errors{run.backbone_id, run.regime, {}};
        for (const auto& [lo, v] : acc)
            errors.bands.push_back({lo, lo + band_width, v.first, v.second / double(v.first)});
        report.per_band_mae.push_back(std::move(errors));
    }
    return report;
}

nlohmann::json to_json(const BiasReport& report) {
    auto band_json = [](const AgeBand& b) {
        return nlohmann::json{{"lo", b.lo}, {"hi", b.hi}, {"count", b.count}, {"share", b.share}};
    };
    auto bands = nlohmann::json::array();
    for (const auto& b : report.bands)
        bands.push_back(band_json(b));
    nlohmann::json j = {
        {"gender_ratio", std::isfinite(report.gender_ratio) ? nlohmann::json(report.gender_ratio)
                                                            : nlohmann::json(nullptr)},
        {"male_count", report.male_count},
        {"female_count", report.female_count},
        {"band_width", report.band_width},
        {"modal_band", band_json(report.modal_band)},
        {"band_mass", bands},
    };
    if (!report.per_band_mae.empty()) {
        auto runs = nlohmann::json::array();
        for (const auto& run : report.per_band_mae) {
            auto rows = nlohmann::json::array();
            for (const auto& b : run.bands)
                rows.push_back({{"lo", b.lo}, {"hi", b.hi}, {"n", b.n}, {"mae", b.mae}});
            runs.push_back({{"backbone_id", run.backbone_id}, {"regime", to_string(run.regime)}, {"bands", rows}});
        }
        j["per_band_mae"] = runs;
    }
    return j;
}

std::string to_text(const BiasReport& report) {
    std::string out;
    out += fmt::format("Gender: {} male, {} female (ratio {:.2f})\n", report.male_count, report.female_count,
                       report.gender_ratio);
    out += fmt::format("Modal age band: {}-{} months, {} samples ({:.1f}% of total)\n", report.modal_band.lo,
                       report.modal_band.hi, report.modal_band.count, 100.0 * report.modal_band.share);
    out += fmt::format("Age bands ({} months):\n", report.band_width);
    for (const auto& b : report.bands)
        out += fmt::format("  {:>3}-{:<3} {:>6}  {:5.1f}%\n", b.lo, b.hi, b.count, 100.0 * b.share);
    for (const auto& run : report.per_band_mae) {
        out += fmt::format("Per-band MAE for {} / {}:\n", display_name(run.backbone_id), to_string(run.regime));
        for (const auto& b : run.bands)
            out += fmt::format("  {:>3}-{:<3} n={:<5} MAE {:.2f} months\n", b.lo, b.hi, b.n, b.mae);
    }
    return out;
}

} // namespace baa
