#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "kpforge/evaluation.hpp"

using namespace kpforge;
using kpforge::testing::make_annotation;
using kpforge::testing::make_schema;

namespace {

/// From-scratch PCK recomputation: per keypoint name, greedy nearest
/// assignment for groups implemented as repeated global-minimum picking.
std::pair<long, long> oracle_pck_counts(const DetectionsPerImage& detections,
                                        const std::vector<SampleAnnotation>& annotations,
                                        const KeypointSchema& schema, double alpha) {
    long correct = 0, total = 0;
    for (std::size_t i = 0; i < annotations.size(); ++i) {
        const auto& ann = annotations[i];
        const double thr = alpha * std::max(ann.bbox.width(), ann.bbox.height());
        for (const auto& channel : schema.channel_names()) {
            std::vector<const Keypoint*> members;
            for (const auto& kp : ann.keypoints) {
                const auto c = schema.channel_of(kp.name);
                if (schema.channel_names()[c] == channel) members.push_back(&kp);
            }
            if (members.empty()) continue;
            std::vector<const Detection*> peaks;
            for (const auto& det : detections[i]) {
                if (det.name == channel) peaks.push_back(&det);
            }
            total += static_cast<long>(members.size());

            if (members.size() == 1 && !schema.is_grouped(members[0]->name)) {
                const Detection* best = nullptr;
                for (const auto* det : peaks)
                    if (best == nullptr || det->confidence > best->confidence) best = det;
                if (best != nullptr &&
                    std::hypot(best->x - members[0]->x, best->y - members[0]->y) < thr)
                    ++correct;
                continue;
            }
            std::vector<bool> used_peak(peaks.size(), false), used_member(members.size(), false);
            while (true) {
                double best_d = 1e300;
                std::size_t bp = 0, bm = 0;
                bool found = false;
                for (std::size_t p = 0; p < peaks.size(); ++p) {
                    if (used_peak[p]) continue;
                    for (std::size_t m = 0; m < members.size(); ++m) {
                        if (used_member[m]) continue;
                        const double d =
                            std::hypot(peaks[p]->x - members[m]->x, peaks[p]->y - members[m]->y);
                        if (d < best_d) {
                            best_d = d;
                            bp = p;
                            bm = m;
                            found = true;
                        }
                    }
                }
                if (!found) break;
                used_peak[bp] = true;
                used_member[bm] = true;
                if (best_d < thr) ++correct;
            }
        }
    }
    return {correct, total};
}

}  // namespace

TEST_CASE("pck threshold is strict at alpha * max(w, h)") {
    const auto schema = make_schema({"tip"});
    auto ann = make_annotation(224, 224, {{"tip", 100.0, 100.0, true}});
    ann.bbox = {0.0, 0.0, 100.0, 50.0};  // threshold = 0.1 * 100 = 10 px

    DetectionsPerImage close = {{{"tip", 100.0, 109.9, 0.9}}};
    CHECK(pck(close, {ann}, schema, 0.1).pck == 1.0);

    DetectionsPerImage far = {{{"tip", 100.0, 110.1, 0.9}}};
    CHECK(pck(far, {ann}, schema, 0.1).pck == 0.0);

    DetectionsPerImage exact = {{{"tip", 100.0, 110.0, 0.9}}};
    CHECK(pck(exact, {ann}, schema, 0.1).pck == 0.0);  // strictly below
}

TEST_CASE("pck counts keypoints, missing detections count incorrect") {
    const auto schema = make_schema({"a", "b", "c", "d"});
    auto ann = make_annotation(224, 224,
                               {{"a", 10, 10, true},
                                {"b", 50, 50, true},
                                {"c", 90, 90, false},
                                {"d", 130, 130, true}});
    ann.bbox = {0, 0, 100, 100};
    DetectionsPerImage dets = {{{"a", 11, 10, 0.9},
                                {"b", 50, 52, 0.8},
                                {"c", 91, 90, 0.7}}};  // d missing
    const auto result = pck(dets, {ann}, schema, 0.1);
    CHECK(result.total_count == 4);
    CHECK(result.correct_count == 3);
    CHECK(result.pck == doctest::Approx(0.75));
}

TEST_CASE("perfect detections give pck 1 at every alpha") {
    const auto schema = make_schema({"a", "b"});
    auto ann = make_annotation(224, 224, {{"a", 10, 10, true}, {"b", 50, 50, true}});
    ann.bbox = {0, 0, 120, 90};
    DetectionsPerImage dets = {{{"a", 10, 10, 1.0}, {"b", 50, 50, 1.0}}};
    for (double alpha : {0.01, 0.05, 0.1, 0.5}) {
        CHECK(pck(dets, {ann}, schema, alpha).pck == 1.0);
    }
}

TEST_CASE("pck input validation") {
    const auto schema = make_schema({"a"});
    auto ann = make_annotation(224, 224, {{"a", 10, 10, true}});
    DetectionsPerImage dets = {{{"a", 10, 10, 1.0}}};
    CHECK_THROWS_AS(pck(dets, {ann}, schema, 0.0), ValidationError);
    CHECK_THROWS_AS(pck(dets, {ann}, schema, -0.1), ValidationError);
    auto no_box = ann;
    no_box.bbox = {0, 0, 0, 0};
    CHECK_THROWS_AS(pck(dets, {no_box}, schema, 0.1), ValidationError);
    CHECK_THROWS_AS(pck({}, {ann}, schema, 0.1), ValidationError);
}

TEST_CASE("pck_curve is monotone and validates its grid") {
    const auto schema = make_schema({"a", "b"});
    Rng rng(17);
    std::vector<SampleAnnotation> anns;
    DetectionsPerImage dets;
    for (int i = 0; i < 30; ++i) {
        auto ann = make_annotation(224, 224,
                                   {{"a", rng.uniform(20, 200), rng.uniform(20, 200), true},
                                    {"b", rng.uniform(20, 200), rng.uniform(20, 200), true}});
        ann.bbox = {10, 10, 150, 120};
        std::vector<Detection> d;
        for (const auto& kp : ann.keypoints) {
            d.push_back({kp.name, kp.x + rng.normal(0, 12), kp.y + rng.normal(0, 12), 0.9});
        }
        anns.push_back(ann);
        dets.push_back(d);
    }
    const auto curve = pck_curve(dets, anns, schema, {0.05, 0.1, 0.2, 0.4});
    REQUIRE(curve.size() == 4);
    for (std::size_t i = 1; i < curve.size(); ++i) CHECK(curve[i].pck >= curve[i - 1].pck);

    CHECK_THROWS_AS(pck_curve(dets, anns, schema, {0.2, 0.1}), ConfigError);
    CHECK_THROWS_AS(pck_curve(dets, anns, schema, {}), ConfigError);
    CHECK_THROWS_AS(pck_curve(dets, anns, schema, {-0.1, 0.1}), ConfigError);
}

TEST_CASE("localization error statistics") {
    const auto schema = make_schema({"a", "b"});
    auto ann = make_annotation(224, 224, {{"a", 100, 100, true}, {"b", 50, 50, true}});
    ann.bbox = {0, 0, 224, 224};  // threshold at 0.1 -> 22.4 px

    SUBCASE("single correct keypoint reports its distance") {
        DetectionsPerImage dets = {{{"a", 100.0, 107.9, 0.9}}};
        const auto stats = localization_error(dets, {ann}, schema, 0.1);
        CHECK_FALSE(stats.empty);
        CHECK(stats.count == 1);
        CHECK(stats.mean == doctest::Approx(7.9));
        CHECK(stats.median == doctest::Approx(7.9));
        CHECK(stats.per_keypoint.at("a").mean == doctest::Approx(7.9));
        CHECK(stats.image_size == "224x224");
    }
    SUBCASE("two correct keypoints average") {
        DetectionsPerImage dets = {{{"a", 104.0, 100.0, 0.9}, {"b", 50.0, 56.0, 0.9}}};
        const auto stats = localization_error(dets, {ann}, schema, 0.1);
        CHECK(stats.count == 2);
        CHECK(stats.mean == doctest::Approx(5.0));
        CHECK(stats.median == doctest::Approx(5.0));
    }
    SUBCASE("incorrect keypoints are excluded; none -> flagged empty") {
        DetectionsPerImage dets = {{{"a", 10.0, 10.0, 0.9}}};
        const auto stats = localization_error(dets, {ann}, schema, 0.01);
        CHECK(stats.empty);
        CHECK(stats.count == 0);
    }
}

TEST_CASE("pck equals the brute-force oracle on randomized cases") {
    const auto schema = make_schema({"tip", "a", "b", "c"}, {{"a", "b", "c"}});
    Rng rng(90210);
    std::vector<SampleAnnotation> anns;
    DetectionsPerImage dets;
    for (int i = 0; i < 120; ++i) {
        std::vector<Keypoint> kps;
        for (const auto& name : {"tip", "a", "b", "c"}) {
            if (rng.uniform() < 0.15) continue;  // sometimes absent entirely
            kps.push_back({name, rng.uniform(0, 223), rng.uniform(0, 223), rng.coin()});
        }
        auto ann = make_annotation(224, 224, kps);
        ann.bbox = {rng.uniform(0, 20), rng.uniform(0, 20), rng.uniform(100, 224),
                    rng.uniform(100, 224)};
        std::vector<Detection> d;
        const int n_tip = static_cast<int>(rng.index(2));
        for (int k = 0; k < n_tip; ++k)
            d.push_back({"tip", rng.uniform(0, 223), rng.uniform(0, 223), rng.uniform()});
        const int n_group = static_cast<int>(rng.index(5));
        for (int k = 0; k < n_group; ++k)
            d.push_back({"a+b+c", rng.uniform(0, 223), rng.uniform(0, 223), rng.uniform()});
        anns.push_back(ann);
        dets.push_back(d);
    }
    for (double alpha : {0.02, 0.05, 0.1, 0.25}) {
        const auto result = pck(dets, anns, schema, alpha);
        const auto [correct, total] = oracle_pck_counts(dets, anns, schema, alpha);
        CHECK(result.correct_count == correct);
        CHECK(result.total_count == total);
    }
}

TEST_CASE("pck is invariant under uniform scaling") {
    const auto schema = make_schema({"tip", "a", "b"}, {{"a", "b"}});
    Rng rng(2718);
    std::vector<SampleAnnotation> anns;
    DetectionsPerImage dets;
    for (int i = 0; i < 40; ++i) {
        auto ann = make_annotation(224, 224,
                                   {{"tip", rng.uniform(10, 200), rng.uniform(10, 200), true},
                                    {"a", rng.uniform(10, 200), rng.uniform(10, 200), true},
                                    {"b", rng.uniform(10, 200), rng.uniform(10, 200), true}});
        ann.bbox = {5, 5, rng.uniform(100, 224), rng.uniform(100, 224)};
        std::vector<Detection> d = {
            {"tip", rng.uniform(0, 223), rng.uniform(0, 223), 0.9},
            {"a+b", rng.uniform(0, 223), rng.uniform(0, 223), 0.8},
            {"a+b", rng.uniform(0, 223), rng.uniform(0, 223), 0.7}};
        anns.push_back(ann);
        dets.push_back(d);
    }
    const double s = 3.25;
    auto scaled_anns = anns;
    auto scaled_dets = dets;
    for (auto& ann : scaled_anns) {
        ann.width = static_cast<int>(ann.width * s);
        ann.height = static_cast<int>(ann.height * s);
        ann.bbox = {ann.bbox.x_min * s, ann.bbox.y_min * s, ann.bbox.x_max * s, ann.bbox.y_max * s};
        for (auto& kp : ann.keypoints) {
            kp.x *= s;
            kp.y *= s;
        }
    }
    for (auto& image : scaled_dets) {
        for (auto& det : image) {
            det.x *= s;
            det.y *= s;
        }
    }
    for (double alpha : {0.05, 0.1, 0.3}) {
        const auto a = pck(dets, anns, schema, alpha);
        const auto b = pck(scaled_dets, scaled_anns, schema, alpha);
        CHECK(a.correct_count == b.correct_count);
        CHECK(a.total_count == b.total_count);
    }
}

TEST_CASE("greedy group assignment uses each peak at most once") {
    const auto schema = make_schema({"a", "b"}, {{"a", "b"}});
    auto ann = make_annotation(224, 224, {{"a", 100, 100, true}, {"b", 104, 100, true}});
    ann.bbox = {0, 0, 224, 224};
    // one peak between both members: only one of them may count
    DetectionsPerImage dets = {{{"a+b", 102.0, 100.0, 0.9}}};
    const auto result = pck(dets, {ann}, schema, 0.1);
    CHECK(result.total_count == 2);
    CHECK(result.correct_count == 1);
}

TEST_CASE("report json round trip and comparisons") {
    EvalReport report;
    report.model_id = "ihm56";
    report.pck_at_reference = {0.1, 3, 4, 0.75};
    report.curve = {{0.05, 1, 4, 0.25}, {0.1, 3, 4, 0.75}};
    report.errors.reference_alpha = 0.1;
    report.errors.empty = false;
    report.errors.count = 3;
    report.errors.mean = 4.5;
    report.errors.median = 4.0;
    report.errors.image_size = "224x224";
    report.errors.per_keypoint["tip"] = {3, 4.5, 4.0};
    report.timing = TimingSummary{100, 0.02, 0.019, 0.03};

    const auto parsed = EvalReport::from_json_text(report.to_json_text());
    CHECK(parsed.model_id == report.model_id);
    CHECK(parsed.pck_at_reference.pck == report.pck_at_reference.pck);
    CHECK(parsed.curve.size() == 2);
    CHECK(parsed.errors.per_keypoint.at("tip").median == 4.0);
    CHECK(parsed.timing.has_value());
    CHECK(parsed.timing->mean_s == doctest::Approx(0.02));

    auto other = report;
    other.model_id = "hm";
    const auto table = compare_reports({report, other});
    REQUIRE(table.rows.size() == 2);
    CHECK(table.rows[0].model_id == "ihm56");
    CHECK(table.rows[0].pck_at_reference == table.rows[1].pck_at_reference);
    CHECK(table.curves[0] == table.curves[1]);

    auto mismatched = other;
    mismatched.curve[0].alpha = 0.06;
    CHECK_THROWS_AS(compare_reports({report, mismatched}), ValidationError);
}
