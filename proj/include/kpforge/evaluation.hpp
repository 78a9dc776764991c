#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "kpforge/dataset.hpp"
#include "kpforge/decode.hpp"

namespace kpforge {

/// PCK at one threshold fraction alpha. A keypoint counts as correct when a
/// matching detection lies strictly below alpha * max(bbox w, bbox h) from
/// the ground truth. Every annotated keypoint counts toward the total,
/// visible or not.
struct PCKResult {
    double alpha = 0.0;
    long correct_count = 0;
    long total_count = 0;
    double pck = 0.0;
};

struct NameErrorStats {
    long count = 0;
    double mean = 0.0;
    double median = 0.0;
};

/// Pixel distances of correctly predicted keypoints at a reference alpha,
/// in the annotation's image coordinates.
struct ErrorStats {
    double reference_alpha = 0.1;
    bool empty = true;  // no correct keypoint anywhere
    long count = 0;
    double mean = 0.0;
    double median = 0.0;
    std::map<std::string, NameErrorStats> per_keypoint;
    std::string image_size = "";  // e.g. "224x224", or "mixed"
};

struct TimingSummary {
    long samples = 0;
    double mean_s = 0.0;
    double median_s = 0.0;
    double p95_s = 0.0;
};

struct EvalReport {
    std::string model_id;
    PCKResult pck_at_reference;
    std::vector<PCKResult> curve;
    ErrorStats errors;
    std::optional<TimingSummary> timing;

    std::string to_json_text() const;
    static EvalReport from_json_text(const std::string& text);
    static EvalReport load(const std::filesystem::path& path);
    void save(const std::filesystem::path& path) const;
};

using DetectionsPerImage = std::vector<std::vector<Detection>>;

PCKResult pck(const DetectionsPerImage& detections, const std::vector<SampleAnnotation>& annotations,
              const KeypointSchema& schema, double alpha);

/// One PCKResult per grid value; the grid must be strictly increasing and
/// positive. The resulting curve is non-decreasing in alpha.
std::vector<PCKResult> pck_curve(const DetectionsPerImage& detections,
                                 const std::vector<SampleAnnotation>& annotations,
                                 const KeypointSchema& schema,
                                 const std::vector<double>& alpha_grid);

ErrorStats localization_error(const DetectionsPerImage& detections,
                              const std::vector<SampleAnnotation>& annotations,
                              const KeypointSchema& schema, double reference_alpha = 0.1);

/// Side-by-side PCK table plus overlaid curve series (one per report).
/// All reports must share the alpha grid.
struct ComparisonTable {
    struct Row {
        std::string model_id;
        double pck_at_reference = 0.0;
    };
    std::vector<double> alpha_grid;
    std::vector<Row> rows;
    std::vector<std::vector<double>> curves;  // [report][alpha]

    std::string format_text() const;
};

ComparisonTable compare_reports(const std::vector<EvalReport>& reports);

}  // namespace kpforge
