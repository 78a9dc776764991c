#include "kpforge/plotting.hpp"

#include <algorithm>
#include <set>

#include <opencv2/imgproc.hpp>

namespace kpforge {

namespace {

const std::array<cv::Scalar, 6> kSeriesColors = {
    cv::Scalar(215, 73, 30),  cv::Scalar(32, 115, 195), cv::Scalar(44, 160, 44),
    cv::Scalar(148, 103, 189), cv::Scalar(227, 160, 22), cv::Scalar(23, 190, 192)};

struct Axes {
    cv::Rect area;
    double x_min, x_max, y_min, y_max;

    cv::Point map(double x, double y) const {
        const double fx = (x - x_min) / (x_max - x_min);
        const double fy = (y - y_min) / (y_max - y_min);
        return {area.x + static_cast<int>(fx * area.width),
                area.y + area.height - static_cast<int>(fy * area.height)};
    }
};

void draw_frame(cv::Mat& canvas, const Axes& axes, const std::string& x_label,
                const std::string& y_label) {
    const cv::Scalar black(0, 0, 0);
    cv::rectangle(canvas, axes.area, black, 1);
    cv::putText(canvas, x_label, {axes.area.x + axes.area.width / 2 - 40,
                                  axes.area.y + axes.area.height + 35},
                cv::FONT_HERSHEY_SIMPLEX, 0.45, black, 1, cv::LINE_AA);
    cv::putText(canvas, y_label, {axes.area.x - 55, axes.area.y - 12}, cv::FONT_HERSHEY_SIMPLEX,
                0.45, black, 1, cv::LINE_AA);
    char buf[32];
    for (int i = 0; i <= 4; ++i) {
        const double fy = axes.y_min + (axes.y_max - axes.y_min) * i / 4.0;
        const cv::Point p = axes.map(axes.x_min, fy);
        std::snprintf(buf, sizeof(buf), "%.2f", fy);
        cv::putText(canvas, buf, {axes.area.x - 48, p.y + 4}, cv::FONT_HERSHEY_SIMPLEX, 0.38,
                    black, 1, cv::LINE_AA);
        cv::line(canvas, {axes.area.x - 4, p.y}, {axes.area.x, p.y}, black, 1);
    }
    for (int i = 0; i <= 4; ++i) {
        const double fx = axes.x_min + (axes.x_max - axes.x_min) * i / 4.0;
        const cv::Point p = axes.map(fx, axes.y_min);
        std::snprintf(buf, sizeof(buf), "%.2f", fx);
        cv::putText(canvas, buf, {p.x - 16, axes.area.y + axes.area.height + 18},
                    cv::FONT_HERSHEY_SIMPLEX, 0.38, black, 1, cv::LINE_AA);
        cv::line(canvas, {p.x, axes.area.y + axes.area.height},
                 {p.x, axes.area.y + axes.area.height + 4}, black, 1);
    }
}

}  // namespace

cv::Mat render_report_charts(const std::vector<EvalReport>& reports) {
    const ComparisonTable table = compare_reports(reports);  // validates shared grid

    const int width = 860;
    const int height = 900;
    cv::Mat canvas(height, width, CV_8UC3, cv::Scalar(255, 255, 255));

    // Panel 1: PCK vs alpha.
    Axes pck_axes{cv::Rect(90, 50, width - 150, 330), table.alpha_grid.front(),
                  table.alpha_grid.back(), 0.0, 1.0};
    draw_frame(canvas, pck_axes, "alpha", "PCK");
    for (std::size_t s = 0; s < table.curves.size(); ++s) {
        const cv::Scalar color = kSeriesColors[s % kSeriesColors.size()];
        for (std::size_t i = 0; i + 1 < table.alpha_grid.size(); ++i) {
            cv::line(canvas, pck_axes.map(table.alpha_grid[i], table.curves[s][i]),
                     pck_axes.map(table.alpha_grid[i + 1], table.curves[s][i + 1]), color, 2,
                     cv::LINE_AA);
        }
        cv::putText(canvas, table.rows[s].model_id,
                    {pck_axes.area.x + 12, pck_axes.area.y + 20 + 18 * static_cast<int>(s)},
                    cv::FONT_HERSHEY_SIMPLEX, 0.45, color, 1, cv::LINE_AA);
    }

    // Panel 2: mean localization error per keypoint, grouped bars per model.
    std::set<std::string> names;
    double max_error = 1.0;
    for (const auto& report : reports) {
        for (const auto& [name, stats] : report.errors.per_keypoint) {
            names.insert(name);
            max_error = std::max(max_error, stats.mean);
        }
    }
    Axes err_axes{cv::Rect(90, 480, width - 150, 330), 0.0,
                  static_cast<double>(std::max<std::size_t>(names.size(), 1)), 0.0,
                  max_error * 1.15};
    draw_frame(canvas, err_axes, "keypoint", "mean error (px)");
    int group = 0;
    for (const auto& name : names) {
        const double slot = 1.0 / (reports.size() + 1.0);
        for (std::size_t s = 0; s < reports.size(); ++s) {
            const auto it = reports[s].errors.per_keypoint.find(name);
            if (it == reports[s].errors.per_keypoint.end()) continue;
            const double x0 = group + slot * (s + 0.5);
            const cv::Point top = err_axes.map(x0, it->second.mean);
            const cv::Point bottom = err_axes.map(x0 + slot * 0.8, 0.0);
            cv::rectangle(canvas, top, bottom, kSeriesColors[s % kSeriesColors.size()],
                          cv::FILLED);
        }
        cv::putText(canvas, name,
                    {err_axes.map(group + 0.5, 0.0).x - 20,
                     err_axes.area.y + err_axes.area.height + 18},
                    cv::FONT_HERSHEY_SIMPLEX, 0.38, cv::Scalar(0, 0, 0), 1, cv::LINE_AA);
        ++group;
    }

    cv::Mat rgb;
    canvas.convertTo(rgb, CV_32FC3);
    return rgb;
}

}  // namespace kpforge
