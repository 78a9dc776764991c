#include "kpforge/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <json.hpp>

namespace kpforge {

using nlohmann::json;

namespace {

struct KeypointMatch {
    std::string name;
    bool matched = false;
    double distance = 0.0;
};

double euclid(double ax, double ay, double bx, double by) {
    const double dx = ax - bx;
    const double dy = ay - by;
    return std::sqrt(dx * dx + dy * dy);
}

/// Matches detections to one image's annotated keypoints. Ungrouped
/// keypoints take the highest-confidence detection of the same name.
/// Merge-group peaks are assigned greedily by ascending distance, each peak
/// used at most once.
std::vector<KeypointMatch> match_image(const std::vector<Detection>& detections,
                                       const SampleAnnotation& annotation,
                                       const KeypointSchema& schema) {
    std::vector<KeypointMatch> matches;
    const auto channels = schema.channel_names();
    for (std::size_t c = 0; c < channels.size(); ++c) {
        const auto members = schema.channel_members(static_cast<int>(c));

        std::vector<const Keypoint*> annotated;
        for (const auto& member : members) {
            if (const Keypoint* kp = annotation.find(member)) annotated.push_back(kp);
        }
        if (annotated.empty()) continue;

        std::vector<const Detection*> peaks;
        for (const auto& det : detections) {
            if (det.name == channels[c]) peaks.push_back(&det);
        }

        if (members.size() == 1 && !schema.is_grouped(members.front())) {
            KeypointMatch m{members.front(), false, 0.0};
            const Detection* best = nullptr;
            for (const Detection* det : peaks) {
                if (best == nullptr || det->confidence > best->confidence) best = det;
            }
            if (best != nullptr) {
                m.matched = true;
                m.distance = euclid(best->x, best->y, annotated[0]->x, annotated[0]->y);
            }
            matches.push_back(std::move(m));
            continue;
        }

        // Greedy one-to-one assignment: all (peak, member) pairs by ascending
        // distance, deterministic tie-break on indices.
        struct Pair {
            double distance;
            std::size_t peak, member;
        };
        std::vector<Pair> pairs;
        for (std::size_t p = 0; p < peaks.size(); ++p) {
            for (std::size_t k = 0; k < annotated.size(); ++k) {
                pairs.push_back(
                    {euclid(peaks[p]->x, peaks[p]->y, annotated[k]->x, annotated[k]->y), p, k});
            }
        }
        std::sort(pairs.begin(), pairs.end(), [](const Pair& a, const Pair& b) {
            if (a.distance != b.distance) return a.distance < b.distance;
            if (a.peak != b.peak) return a.peak < b.peak;
            return a.member < b.member;
        });
        std::vector<bool> peak_used(peaks.size(), false);
        std::vector<bool> member_done(annotated.size(), false);
        std::vector<KeypointMatch> group(annotated.size());
        for (std::size_t k = 0; k < annotated.size(); ++k) {
            group[k] = {annotated[k]->name, false, 0.0};
        }
        for (const auto& pr : pairs) {
            if (peak_used[pr.peak] || member_done[pr.member]) continue;
            peak_used[pr.peak] = true;
            member_done[pr.member] = true;
            group[pr.member].matched = true;
            group[pr.member].distance = pr.distance;
        }
        for (auto& m : group) matches.push_back(std::move(m));
    }
    return matches;
}

void check_eval_inputs(const DetectionsPerImage& detections,
                       const std::vector<SampleAnnotation>& annotations, double alpha) {
    if (!(alpha > 0.0)) throw ValidationError("pck: alpha must be positive");
    if (detections.size() != annotations.size())
        throw ValidationError("pck: detections and annotations differ in image count");
    for (const auto& ann : annotations) {
        if (!(ann.bbox.width() > 0.0 && ann.bbox.height() > 0.0))
            throw ValidationError("pck: annotation '" + ann.image_path + "' has no usable bbox");
    }
}

}  // namespace

PCKResult pck(const DetectionsPerImage& detections, const std::vector<SampleAnnotation>& annotations,
              const KeypointSchema& schema, double alpha) {
    check_eval_inputs(detections, annotations, alpha);
    PCKResult result;
    result.alpha = alpha;
    for (std::size_t i = 0; i < annotations.size(); ++i) {
        const double threshold = alpha * annotations[i].bbox.long_side();
        for (const auto& m : match_image(detections[i], annotations[i], schema)) {
            ++result.total_count;
            if (m.matched && m.distance < threshold) ++result.correct_count;
        }
    }
    result.pck = result.total_count > 0
                     ? static_cast<double>(result.correct_count) / result.total_count
                     : 0.0;
    return result;
}

std::vector<PCKResult> pck_curve(const DetectionsPerImage& detections,
                                 const std::vector<SampleAnnotation>& annotations,
                                 const KeypointSchema& schema,
                                 const std::vector<double>& alpha_grid) {
    if (alpha_grid.empty()) throw ConfigError("pck_curve: empty alpha grid");
    for (std::size_t i = 0; i < alpha_grid.size(); ++i) {
        if (!(alpha_grid[i] > 0.0)) throw ConfigError("pck_curve: alpha grid must be positive");
        if (i > 0 && !(alpha_grid[i] > alpha_grid[i - 1]))
            throw ConfigError("pck_curve: alpha grid must be strictly increasing");
    }
    std::vector<PCKResult> curve;
    curve.reserve(alpha_grid.size());
    for (double alpha : alpha_grid) curve.push_back(pck(detections, annotations, schema, alpha));
    return curve;
}

ErrorStats localization_error(const DetectionsPerImage& detections,
                              const std::vector<SampleAnnotation>& annotations,
                              const KeypointSchema& schema, double reference_alpha) {
    check_eval_inputs(detections, annotations, reference_alpha);
    ErrorStats stats;
    stats.reference_alpha = reference_alpha;

    std::vector<double> all;
    std::map<std::string, std::vector<double>> per_name;
    std::string size_ctx;
    for (std::size_t i = 0; i < annotations.size(); ++i) {
        const std::string sz =
            std::to_string(annotations[i].width) + "x" + std::to_string(annotations[i].height);
        if (size_ctx.empty())
            size_ctx = sz;
        else if (size_ctx != sz)
            size_ctx = "mixed";
        const double threshold = reference_alpha * annotations[i].bbox.long_side();
        for (const auto& m : match_image(detections[i], annotations[i], schema)) {
            if (m.matched && m.distance < threshold) {
                all.push_back(m.distance);
                per_name[m.name].push_back(m.distance);
            }
        }
    }
    stats.image_size = size_ctx;
    if (all.empty()) return stats;  // flagged empty, not an error

    auto mean_of = [](std::vector<double>& v) {
        double s = 0.0;
        for (double d : v) s += d;
        return s / static_cast<double>(v.size());
    };
    auto median_of = [](std::vector<double>& v) {
        std::sort(v.begin(), v.end());
        const std::size_t n = v.size();
        return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
    };

    stats.empty = false;
    stats.count = static_cast<long>(all.size());
    stats.mean = mean_of(all);
    stats.median = median_of(all);
    for (auto& [name, dists] : per_name) {
        NameErrorStats ns;
        ns.count = static_cast<long>(dists.size());
        ns.mean = mean_of(dists);
        ns.median = median_of(dists);
        stats.per_keypoint[name] = ns;
    }
    return stats;
}

// ---------------------------------------------------------------------------
// Report IO

namespace {

json pck_to_json(const PCKResult& r) {
    return {{"alpha", r.alpha},
            {"correct", r.correct_count},
            {"total", r.total_count},
            {"pck", r.pck}};
}

PCKResult pck_from_json(const json& j) {
    PCKResult r;
    r.alpha = j.at("alpha").get<double>();
    r.correct_count = j.at("correct").get<long>();
    r.total_count = j.at("total").get<long>();
    r.pck = j.at("pck").get<double>();
    return r;
}

}  // namespace

std::string EvalReport::to_json_text() const {
    json j;
    j["model"] = model_id;
    j["pck"] = pck_to_json(pck_at_reference);
    json curve_json = json::array();
    for (const auto& r : curve) curve_json.push_back(pck_to_json(r));
    j["curve"] = curve_json;
    json err;
    err["reference_alpha"] = errors.reference_alpha;
    err["empty"] = errors.empty;
    err["count"] = errors.count;
    err["mean"] = errors.mean;
    err["median"] = errors.median;
    err["image_size"] = errors.image_size;
    json per = json::object();
    for (const auto& [name, ns] : errors.per_keypoint) {
        per[name] = {{"count", ns.count}, {"mean", ns.mean}, {"median", ns.median}};
    }
    err["per_keypoint"] = per;
    j["errors"] = err;
    if (timing.has_value()) {
        j["timing"] = {{"samples", timing->samples},
                       {"mean_s", timing->mean_s},
                       {"median_s", timing->median_s},
                       {"p95_s", timing->p95_s}};
    } else {
        j["timing"] = nullptr;
    }
    return j.dump(2);
}

EvalReport EvalReport::from_json_text(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ParseError(std::string("report: ") + e.what());
    }
    EvalReport report;
    try {
        report.model_id = j.at("model").get<std::string>();
        report.pck_at_reference = pck_from_json(j.at("pck"));
        for (const auto& r : j.at("curve")) report.curve.push_back(pck_from_json(r));
        const auto& err = j.at("errors");
        report.errors.reference_alpha = err.at("reference_alpha").get<double>();
        report.errors.empty = err.at("empty").get<bool>();
        report.errors.count = err.at("count").get<long>();
        report.errors.mean = err.at("mean").get<double>();
        report.errors.median = err.at("median").get<double>();
        report.errors.image_size = err.at("image_size").get<std::string>();
        for (const auto& [name, ns] : err.at("per_keypoint").items()) {
            report.errors.per_keypoint[name] = {ns.at("count").get<long>(),
                                                ns.at("mean").get<double>(),
                                                ns.at("median").get<double>()};
        }
        if (j.contains("timing") && !j.at("timing").is_null()) {
            const auto& t = j.at("timing");
            report.timing = TimingSummary{t.at("samples").get<long>(), t.at("mean_s").get<double>(),
                                          t.at("median_s").get<double>(),
                                          t.at("p95_s").get<double>()};
        }
    } catch (const json::exception& e) {
        throw ParseError(std::string("report: ") + e.what());
    }
    return report;
}

EvalReport EvalReport::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open report: " + path.string());
    std::stringstream buffer;
    buffer << in.rdbuf();
    return from_json_text(buffer.str());
}

void EvalReport::save(const std::filesystem::path& path) const {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write report: " + path.string());
    out << to_json_text() << "\n";
}

ComparisonTable compare_reports(const std::vector<EvalReport>& reports) {
    if (reports.empty()) throw ValidationError("compare_reports: no reports");
    ComparisonTable table;
    for (const auto& r : reports[0].curve) table.alpha_grid.push_back(r.alpha);
    for (const auto& report : reports) {
        if (report.curve.size() != table.alpha_grid.size())
            throw ValidationError("compare_reports: alpha grids differ in length");
        std::vector<double> series;
        for (std::size_t i = 0; i < report.curve.size(); ++i) {
            if (report.curve[i].alpha != table.alpha_grid[i])
                throw ValidationError("compare_reports: alpha grids do not match");
            series.push_back(report.curve[i].pck);
        }
        table.rows.push_back({report.model_id, report.pck_at_reference.pck});
        table.curves.push_back(std::move(series));
    }
    return table;
}

std::string ComparisonTable::format_text() const {
    std::ostringstream out;
    std::size_t width = 5;
    for (const auto& row : rows) width = std::max(width, row.model_id.size());
    out << std::left << std::setw(static_cast<int>(width) + 2) << "model"
        << "pck@ref\n";
    for (const auto& row : rows) {
        out << std::left << std::setw(static_cast<int>(width) + 2) << row.model_id << std::fixed
            << std::setprecision(4) << row.pck_at_reference << "\n";
    }
    return out.str();
}

}  // namespace kpforge
