#include <doctest.h>

#include <fstream>
#include <set>
#include <sstream>

#include "helpers.hpp"

using namespace kpforge;
using kpforge::testing::TempDir;
using kpforge::testing::make_annotation;
using kpforge::testing::make_schema;

namespace {

std::string wrench_line(double x0 = 10.0, double y0 = 20.0, double x1 = 90.0, double y1 = 80.0) {
    std::ostringstream line;
    line << R"({"image":"img.png","width":224,"height":224,"bbox":[5,15,95,85],)"
         << R"("tool":"wrench","source":"composite2d","keypoints":[)"
         << R"({"name":"left","x":)" << x0 << R"(,"y":)" << y0 << R"(,"visible":true},)"
         << R"({"name":"right","x":)" << x1 << R"(,"y":)" << y1 << R"(,"visible":true}]})";
    return line.str();
}

std::filesystem::path write_manifest(const TempDir& dir, const std::string& contents) {
    const auto path = dir.path() / "manifest.jsonl";
    std::ofstream out(path);
    out << contents;
    return path;
}

}  // namespace

TEST_CASE("schema invariants") {
    CHECK_THROWS_AS(make_schema({}), SchemaError);
    CHECK_THROWS_AS(make_schema({"a", "a"}), SchemaError);
    CHECK_THROWS_AS(make_schema({"a"}, {{"ghost"}}), SchemaError);
    CHECK_THROWS_AS(make_schema({"a", "b", "c"}, {{"a", "b"}, {"b", "c"}}), SchemaError);

    const auto schema = make_schema({"left", "right", "pivot"}, {{"left", "right"}});
    CHECK(schema.num_channels() == 2);
    CHECK(schema.channel_names() == std::vector<std::string>{"left+right", "pivot"});
    CHECK(schema.channel_of("right") == 0);
    CHECK(schema.channel_of("pivot") == 1);
    CHECK(schema.is_grouped("left"));
    CHECK_FALSE(schema.is_grouped("pivot"));
    CHECK(schema.channel_members(0) == std::vector<std::string>{"left", "right"});
}

TEST_CASE("schema json round trip") {
    const auto schema = make_schema({"left", "right", "pivot"}, {{"left", "right"}});
    const auto parsed = KeypointSchema::from_json_text(schema.to_json_text());
    CHECK(parsed.tool_name == schema.tool_name);
    CHECK(parsed.keypoint_names == schema.keypoint_names);
    CHECK(parsed.merge_groups == schema.merge_groups);
    CHECK_THROWS_AS(KeypointSchema::from_json_text("{not json"), ParseError);
    CHECK_THROWS_AS(KeypointSchema::from_json_text(R"({"tool":"t","keypoints":["a"],"extra":1})"),
                    ParseError);
}

TEST_CASE("load_manifest accepts a minimal valid record") {
    TempDir dir("manifest");
    const auto path = write_manifest(dir, wrench_line() + "\n");
    const auto schema = make_schema({"left", "right"});
    const auto manifest = load_manifest(path, schema);
    REQUIRE(manifest.size() == 1);
    CHECK(manifest.samples[0].image_path == "img.png");
    CHECK(manifest.samples[0].keypoints.size() == 2);
    CHECK(manifest.samples[0].source == SampleSource::kComposite2d);
}

TEST_CASE("load_manifest rejects boundary violations naming the line") {
    TempDir dir("manifest");
    // x == width is outside [0, width) for a visible keypoint.
    const auto path = write_manifest(dir, wrench_line() + "\n" + wrench_line(224.0) + "\n");
    const auto schema = make_schema({"left", "right"});
    try {
        load_manifest(path, schema);
        FAIL("expected ValidationError");
    } catch (const ValidationError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("line 2") != std::string::npos);
        CHECK(msg.find("keypoints") != std::string::npos);
    }
}

TEST_CASE("load_manifest errors") {
    TempDir dir("manifest");
    const auto schema = make_schema({"left", "right"});

    SUBCASE("malformed json names the line") {
        const auto path = write_manifest(dir, wrench_line() + "\n{oops\n");
        try {
            load_manifest(path, schema);
            FAIL("expected ParseError");
        } catch (const ParseError& e) {
            CHECK(std::string(e.what()).find("line 2") != std::string::npos);
        }
    }
    SUBCASE("unknown keypoint name is a schema error") {
        std::string line = wrench_line();
        line.replace(line.find("\"left\""), 6, "\"nose\"");
        const auto path = write_manifest(dir, line + "\n");
        CHECK_THROWS_AS(load_manifest(path, schema), SchemaError);
    }
    SUBCASE("unknown key is a parse error") {
        std::string line = wrench_line();
        line.insert(1, R"("surprise":1,)");
        const auto path = write_manifest(dir, line + "\n");
        CHECK_THROWS_AS(load_manifest(path, schema), ParseError);
    }
    SUBCASE("missing key is a parse error") {
        std::string line = wrench_line();
        const auto at = line.find(R"("tool":"wrench",)");
        line.erase(at, std::string(R"("tool":"wrench",)").size());
        const auto path = write_manifest(dir, line + "\n");
        CHECK_THROWS_AS(load_manifest(path, schema), ParseError);
    }
    SUBCASE("bad bbox is a validation error naming the field") {
        std::string line = wrench_line();
        line.replace(line.find("[5,15,95,85]"), 12, "[95,15,5,85]");
        const auto path = write_manifest(dir, line + "\n");
        try {
            load_manifest(path, schema);
            FAIL("expected ValidationError");
        } catch (const ValidationError& e) {
            CHECK(std::string(e.what()).find("bbox") != std::string::npos);
        }
    }
    SUBCASE("escaping image path is rejected") {
        std::string line = wrench_line();
        line.replace(line.find("img.png"), 7, "../img.png");
        const auto path = write_manifest(dir, line + "\n");
        CHECK_THROWS_AS(load_manifest(path, schema), ValidationError);
    }
    SUBCASE("missing file is an io error") {
        CHECK_THROWS_AS(load_manifest(dir.path() / "nothing.jsonl", schema), IoError);
    }
}

TEST_CASE("load_manifest handles a 10000 record file") {
    TempDir dir("manifest10k");
    std::ostringstream contents;
    for (int i = 0; i < 10000; ++i) contents << wrench_line() << "\n";
    const auto path = write_manifest(dir, contents.str());
    const auto manifest = load_manifest(path, make_schema({"left", "right"}));
    CHECK(manifest.size() == 10000);
}

TEST_CASE("manifest write-then-load round trip is field identical") {
    TempDir dir("roundtrip");
    const auto schema = make_schema({"left", "right"});
    DatasetManifest manifest;
    manifest.root = dir.path();
    manifest.schema = schema;
    Rng rng(99);
    for (int i = 0; i < 25; ++i) {
        auto ann = make_annotation(224, 224,
                                   {{"left", rng.uniform(0.0, 223.0), rng.uniform(0.0, 223.0),
                                     rng.coin()},
                                    {"right", rng.uniform(0.0, 223.0), rng.uniform(0.0, 223.0),
                                     true}});
        ann.bbox = {rng.uniform(0.0, 10.0), rng.uniform(0.0, 10.0), rng.uniform(100.0, 224.0),
                    rng.uniform(100.0, 224.0)};
        ann.image_path = "img_" + std::to_string(i) + ".png";
        manifest.samples.push_back(std::move(ann));
    }
    const auto path = dir.path() / "manifest.jsonl";
    save_manifest(manifest, path);
    const auto loaded = load_manifest(path, schema);
    REQUIRE(loaded.size() == manifest.size());
    for (std::size_t i = 0; i < manifest.size(); ++i) {
        const auto& a = manifest.samples[i];
        const auto& b = loaded.samples[i];
        CHECK(a.image_path == b.image_path);
        CHECK(a.width == b.width);
        CHECK(a.height == b.height);
        CHECK(a.bbox.x_min == b.bbox.x_min);
        CHECK(a.bbox.y_max == b.bbox.y_max);
        REQUIRE(a.keypoints.size() == b.keypoints.size());
        for (std::size_t k = 0; k < a.keypoints.size(); ++k) {
            CHECK(a.keypoints[k].name == b.keypoints[k].name);
            CHECK(a.keypoints[k].x == b.keypoints[k].x);
            CHECK(a.keypoints[k].y == b.keypoints[k].y);
            CHECK(a.keypoints[k].visible == b.keypoints[k].visible);
        }
    }
}

namespace {

DatasetManifest dummy_manifest(int n) {
    DatasetManifest manifest;
    manifest.schema = make_schema({"left", "right"});
    for (int i = 0; i < n; ++i) {
        auto ann = make_annotation(224, 224, {{"left", 10, 10, true}, {"right", 50, 50, true}});
        ann.image_path = "img_" + std::to_string(i) + ".png";
        manifest.samples.push_back(std::move(ann));
    }
    return manifest;
}

std::set<std::string> paths_of(const DatasetManifest& m) {
    std::set<std::string> out;
    for (const auto& s : m.samples) out.insert(s.image_path);
    return out;
}

}  // namespace

TEST_CASE("split_dataset sizes and determinism") {
    const auto manifest = dummy_manifest(10);
    const auto [train1, val1] = split_dataset(manifest, 0.2, 7);
    CHECK(train1.size() == 8);
    CHECK(val1.size() == 2);
    const auto [train2, val2] = split_dataset(manifest, 0.2, 7);
    CHECK(paths_of(train1) == paths_of(train2));
    CHECK(paths_of(val1) == paths_of(val2));

    // round(0.05 * 10) clamps up to the minimum of one validation sample
    const auto [train3, val3] = split_dataset(manifest, 0.05, 7);
    CHECK(train3.size() == 9);
    CHECK(val3.size() == 1);
}

TEST_CASE("split_dataset seeds change membership, not sizes") {
    const auto manifest = dummy_manifest(10000);
    const auto [train1, val1] = split_dataset(manifest, 0.1, 1);
    const auto [train2, val2] = split_dataset(manifest, 0.1, 2);
    CHECK(val1.size() == 1000);
    CHECK(val2.size() == 1000);
    CHECK(paths_of(val1) != paths_of(val2));
}

TEST_CASE("split_dataset partitions for many seeds and fractions") {
    const auto manifest = dummy_manifest(37);
    const auto all = paths_of(manifest);
    for (std::uint64_t seed : {0ull, 3ull, 91ull}) {
        for (double fraction : {0.05, 0.33, 0.5, 0.9}) {
            const auto [train, val] = split_dataset(manifest, fraction, seed);
            CHECK(train.size() + val.size() == manifest.size());
            auto train_paths = paths_of(train);
            auto val_paths = paths_of(val);
            CHECK(train_paths.size() + val_paths.size() == all.size());
            std::set<std::string> joined = train_paths;
            joined.insert(val_paths.begin(), val_paths.end());
            CHECK(joined == all);
        }
    }
    CHECK_THROWS_AS(split_dataset(DatasetManifest{}, 0.1, 0), ValidationError);
    CHECK_THROWS_AS(split_dataset(manifest, 0.0, 0), ValidationError);
    CHECK_THROWS_AS(split_dataset(manifest, 1.0, 0), ValidationError);
}
