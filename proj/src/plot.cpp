#include "baa/plot.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <fmt/format.h>
#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

namespace baa {

namespace {

constexpr int kFont = cv::FONT_HERSHEY_SIMPLEX;
const cv::Scalar kBlack(0, 0, 0);
const cv::Scalar kGrid(225, 225, 225);

cv::Scalar bgr(const std::array<std::uint8_t, 3>& rgb) { return {double(rgb[2]), double(rgb[1]), double(rgb[0])}; }

double nice_step(double span, int target_ticks) {
    const double raw = span / std::max(target_ticks, 1);
    const double magnitude = std::pow(10.0, std::floor(std::log10(raw)));
    for (double m : {1.0, 2.0, 2.5, 5.0, 10.0})
        if (raw <= m * magnitude)
            return m * magnitude;
    return 10.0 * magnitude;
}

std::string tick_text(double v, double step) {
    if (step >= 1.0 && std::abs(v - std::round(v)) < 1e-9)
        return fmt::format("{:.0f}", v);
    return fmt::format("{:.2g}", v);
}

struct Range {
    double lo = std::numeric_limits<double>::infinity();
    double hi = -std::numeric_limits<double>::infinity();
    void include(double v) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    void pad_if_flat() {
        if (!std::isfinite(lo)) {
            lo = 0.0;
            hi = 1.0;
        } else if (hi - lo < 1e-12) {
            lo -= 1.0;
            hi += 1.0;
        }
    }
};

double bar_width(const PlotData& plot) {
    double width = std::numeric_limits<double>::infinity();
    for (const auto& s : plot.series) {
        if (s.style != SeriesStyle::bars)
            continue;
        std::vector<double> xs;
        for (const auto& p : s.points)
            xs.push_back(p.first);
        std::sort(xs.begin(), xs.end());
        for (std::size_t i = 1; i < xs.size(); ++i)
            if (xs[i] > xs[i - 1])
                width = std::min(width, xs[i] - xs[i - 1]);
    }
    return std::isfinite(width) ? width * 0.8 : 0.8;
}

void dashed_line(cv::Mat& img, cv::Point a, cv::Point b, const cv::Scalar& color) {
    const double len = std::hypot(b.x - a.x, b.y - a.y);
    const int dashes = std::max(1, int(len / 8.0));
    for (int i = 0; i < dashes; i += 2) {
        const double t0 = double(i) / dashes, t1 = double(std::min(i + 1, dashes)) / dashes;
        cv::line(img, {int(a.x + (b.x - a.x) * t0), int(a.y + (b.y - a.y) * t0)},
                 {int(a.x + (b.x - a.x) * t1), int(a.y + (b.y - a.y) * t1)}, color, 1, cv::LINE_AA);
    }
}

} // namespace

const PlotSeries* PlotData::find(const std::string& name) const {
    for (const auto& s : series)
        if (s.name == name)
            return &s;
    return nullptr;
}

bool render_plot(const PlotData& plot, const std::filesystem::path& path, int width, int height) {
    cv::Mat img(height, width, CV_8UC3, cv::Scalar(255, 255, 255));
    const int left = 90, right = 30, top = 50, bottom = 70;
    const int plot_w = width - left - right, plot_h = height - top - bottom;

    const double bw = bar_width(plot);
    Range xr, yr;
    for (const auto& s : plot.series)
        for (const auto& [x, y] : s.points) {
            if (s.style == SeriesStyle::bars) {
                xr.include(x - bw / 2);
                xr.include(x + bw / 2);
                yr.include(0.0);
            } else {
                xr.include(x);
            }
            yr.include(y);
        }
    for (const auto& [x, label] : plot.x_tick_labels) {
        xr.include(x - 0.5);
        xr.include(x + 0.5);
    }
    xr.pad_if_flat();
    yr.pad_if_flat();
    const double ypad = (yr.hi - yr.lo) * 0.05;
    yr.hi += ypad;
    if (yr.lo < 0.0 || yr.lo > 0.0)
        yr.lo -= ypad;

    auto to_px = [&](double x, double y) {
        return cv::Point(left + int(std::lround((x - xr.lo) / (xr.hi - xr.lo) * plot_w)),
                         top + plot_h - int(std::lround((y - yr.lo) / (yr.hi - yr.lo) * plot_h)));
    };

    // Grid and ticks.
    const double ystep = nice_step(yr.hi - yr.lo, 6);
    for (double y = std::ceil(yr.lo / ystep) * ystep; y <= yr.hi + 1e-9; y += ystep) {
        const auto p = to_px(xr.lo, y);
        cv::line(img, {left, p.y}, {left + plot_w, p.y}, kGrid, 1);
        const auto text = tick_text(y, ystep);
        int base = 0;
        const auto size = cv::getTextSize(text, kFont, 0.45, 1, &base);
        cv::putText(img, text, {left - size.width - 8, p.y + size.height / 2}, kFont, 0.45, kBlack, 1, cv::LINE_AA);
    }
    if (plot.x_tick_labels.empty()) {
        const double xstep = nice_step(xr.hi - xr.lo, 8);
        for (double x = std::ceil(xr.lo / xstep) * xstep; x <= xr.hi + 1e-9; x += xstep) {
            const auto p = to_px(x, yr.lo);
            cv::line(img, {p.x, top}, {p.x, top + plot_h}, kGrid, 1);
            const auto text = tick_text(x, xstep);
            int base = 0;
            const auto size = cv::getTextSize(text, kFont, 0.45, 1, &base);
            cv::putText(img, text, {p.x - size.width / 2, top + plot_h + 20}, kFont, 0.45, kBlack, 1, cv::LINE_AA);
        }
    } else {
        for (const auto& [x, label] : plot.x_tick_labels) {
            const auto p = to_px(x, yr.lo);
            int base = 0;
            const auto size = cv::getTextSize(label, kFont, 0.5, 1, &base);
            cv::putText(img, label, {p.x - size.width / 2, top + plot_h + 22}, kFont, 0.5, kBlack, 1, cv::LINE_AA);
        }
    }

    for (const auto& s : plot.series) {
        const auto color = bgr(s.color);
        switch (s.style) {
        case SeriesStyle::bars:
            for (const auto& [x, y] : s.points)
                cv::rectangle(img, to_px(x - bw / 2, 0.0), to_px(x + bw / 2, y), color, cv::FILLED);
            break;
        case SeriesStyle::points:
            for (const auto& [x, y] : s.points)
                cv::circle(img, to_px(x, y), 3, color, cv::FILLED, cv::LINE_AA);
            break;
        case SeriesStyle::line:
        case SeriesStyle::dashed:
            for (std::size_t i = 1; i < s.points.size(); ++i) {
                const auto a = to_px(s.points[i - 1].first, s.points[i - 1].second);
                const auto b = to_px(s.points[i].first, s.points[i].second);
                if (s.style == SeriesStyle::line)
                    cv::line(img, a, b, color, 2, cv::LINE_AA);
                else
                    dashed_line(img, a, b, color);
            }
            if (s.style == SeriesStyle::line)
                for (const auto& [x, y] : s.points)
                    cv::circle(img, to_px(x, y), 3, color, cv::FILLED, cv::LINE_AA);
            break;
        }
    }

    cv::rectangle(img, {left, top}, {left + plot_w, top + plot_h}, kBlack, 1);

    // Labels.
    int base = 0;
    auto size = cv::getTextSize(plot.title, kFont, 0.65, 2, &base);
    cv::putText(img, plot.title, {(width - size.width) / 2, top - 18}, kFont, 0.65, kBlack, 2, cv::LINE_AA);
    size = cv::getTextSize(plot.x_label, kFont, 0.55, 1, &base);
    cv::putText(img, plot.x_label, {left + (plot_w - size.width) / 2, height - 18}, kFont, 0.55, kBlack, 1,
                cv::LINE_AA);
    if (!plot.y_label.empty()) {
        size = cv::getTextSize(plot.y_label, kFont, 0.55, 1, &base);
        cv::Mat label(size.height + base + 6, size.width + 6, CV_8UC3, cv::Scalar(255, 255, 255));
        cv::putText(label, plot.y_label, {3, size.height + 3}, kFont, 0.55, kBlack, 1, cv::LINE_AA);
        cv::Mat rotated;
        cv::rotate(label, rotated, cv::ROTATE_90_COUNTERCLOCKWISE);
        const int y0 = std::max(0, top + (plot_h - rotated.rows) / 2);
        if (rotated.rows + y0 <= height && rotated.cols + 8 <= left)
            rotated.copyTo(img(cv::Rect(8, y0, rotated.cols, rotated.rows)));
    }

    // Legend.
    int ly = top + 18;
    for (const auto& s : plot.series) {
        if (s.name.empty())
            continue;
        const auto color = bgr(s.color);
        cv::line(img, {left + 12, ly - 4}, {left + 36, ly - 4}, color, 3);
        cv::putText(img, s.name, {left + 42, ly}, kFont, 0.45, kBlack, 1, cv::LINE_AA);
        ly += 18;
    }

    try {
        return cv::imwrite(path.string(), img);
    } catch (const cv::Exception&) {
        return false;
    }
}

} // namespace baa
