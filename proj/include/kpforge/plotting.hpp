#pragma once

#include <vector>

#include <opencv2/core.hpp>

#include "kpforge/evaluation.hpp"

namespace kpforge {

/// Two stacked panels: overlaid PCK-vs-alpha curves (one series per report)
/// and per-keypoint mean localization error bars. Returns CV_32FC3 RGB.
cv::Mat render_report_charts(const std::vector<EvalReport>& reports);

}  // namespace kpforge
