#include "kpforge/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include <json.hpp>

#include "kpforge/rng.hpp"

namespace kpforge {

using nlohmann::json;

std::string to_string(SampleSource source) {
    switch (source) {
        case SampleSource::kSynthetic3d: return "synthetic3d";
        case SampleSource::kComposite2d: return "composite2d";
        case SampleSource::kReal: return "real";
    }
    throw ValidationError("invalid SampleSource value");
}

SampleSource source_from_string(const std::string& text) {
    if (text == "synthetic3d") return SampleSource::kSynthetic3d;
    if (text == "composite2d") return SampleSource::kComposite2d;
    if (text == "real") return SampleSource::kReal;
    throw ValidationError("field 'source': unknown value '" + text +
                          "' (expected synthetic3d|composite2d|real)");
}

// ---------------------------------------------------------------------------
// KeypointSchema

namespace {

std::string join_names(const std::vector<std::string>& names) {
    std::string out;
    for (const auto& n : names) {
        if (!out.empty()) out += '+';
        out += n;
    }
    return out;
}

}  // namespace

void KeypointSchema::validate() const {
    if (tool_name.empty()) throw SchemaError("schema: tool name is empty");
    if (keypoint_names.empty()) throw SchemaError("schema: no keypoints defined");
    std::unordered_set<std::string> seen;
    for (const auto& name : keypoint_names) {
        if (name.empty()) throw SchemaError("schema: empty keypoint name");
        if (!seen.insert(name).second)
            throw SchemaError("schema: duplicate keypoint name '" + name + "'");
    }
    std::unordered_set<std::string> grouped;
    for (const auto& group : merge_groups) {
        if (group.empty()) throw SchemaError("schema: empty merge group");
        for (const auto& member : group) {
            if (!seen.count(member))
                throw SchemaError("schema: merge group member '" + member +
                                  "' is not a keypoint");
            if (!grouped.insert(member).second)
                throw SchemaError("schema: keypoint '" + member +
                                  "' appears in more than one merge group");
        }
    }
}

bool KeypointSchema::has_keypoint(const std::string& keypoint_name) const {
    return std::find(keypoint_names.begin(), keypoint_names.end(), keypoint_name) !=
           keypoint_names.end();
}

bool KeypointSchema::is_grouped(const std::string& keypoint_name) const {
    for (const auto& group : merge_groups) {
        if (std::find(group.begin(), group.end(), keypoint_name) != group.end()) return true;
    }
    return false;
}

std::vector<std::string> KeypointSchema::channel_names() const {
    std::vector<std::string> names;
    std::unordered_set<const std::vector<std::string>*> emitted;
    for (const auto& kp : keypoint_names) {
        const std::vector<std::string>* group = nullptr;
        for (const auto& g : merge_groups) {
            if (std::find(g.begin(), g.end(), kp) != g.end()) {
                group = &g;
                break;
            }
        }
        if (group == nullptr) {
            names.push_back(kp);
        } else if (emitted.insert(group).second) {
            names.push_back(join_names(*group));
        }
    }
    return names;
}

int KeypointSchema::num_channels() const { return static_cast<int>(channel_names().size()); }

int KeypointSchema::channel_of(const std::string& keypoint_name) const {
    const auto channels = channel_names();
    for (std::size_t c = 0; c < channels.size(); ++c) {
        for (const auto& member : channel_members(static_cast<int>(c))) {
            if (member == keypoint_name) return static_cast<int>(c);
        }
    }
    throw SchemaError("schema: unknown keypoint '" + keypoint_name + "'");
}

std::vector<std::string> KeypointSchema::channel_members(int channel) const {
    const auto channels = channel_names();
    if (channel < 0 || channel >= static_cast<int>(channels.size()))
        throw SchemaError("schema: channel index out of range");
    const std::string& name = channels[channel];
    for (const auto& g : merge_groups) {
        if (join_names(g) == name) return g;
    }
    return {name};
}

static KeypointSchema schema_from_json(const json& j) {
    if (!j.is_object()) throw ParseError("schema: expected a JSON object");
    for (const auto& [key, value] : j.items()) {
        (void)value;
        if (key != "tool" && key != "keypoints" && key != "merge_groups")
            throw ParseError("schema: unknown key '" + key + "'");
    }
    KeypointSchema schema;
    try {
        schema.tool_name = j.at("tool").get<std::string>();
        schema.keypoint_names = j.at("keypoints").get<std::vector<std::string>>();
        if (j.contains("merge_groups"))
            schema.merge_groups = j.at("merge_groups").get<std::vector<std::vector<std::string>>>();
    } catch (const json::exception& e) {
        throw ParseError(std::string("schema: ") + e.what());
    }
    schema.validate();
    return schema;
}

KeypointSchema KeypointSchema::from_json_text(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ParseError(std::string("schema: ") + e.what());
    }
    return schema_from_json(j);
}

std::string KeypointSchema::to_json_text() const {
    json j;
    j["tool"] = tool_name;
    j["keypoints"] = keypoint_names;
    j["merge_groups"] = merge_groups;
    return j.dump();
}

KeypointSchema KeypointSchema::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open schema file: " + path.string());
    std::stringstream buffer;
    buffer << in.rdbuf();
    return from_json_text(buffer.str());
}

void KeypointSchema::save(const std::filesystem::path& path) const {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write schema file: " + path.string());
    out << to_json_text() << "\n";
}

// ---------------------------------------------------------------------------
// SampleAnnotation

const Keypoint* SampleAnnotation::find(const std::string& name) const {
    for (const auto& kp : keypoints) {
        if (kp.name == name) return &kp;
    }
    return nullptr;
}

void SampleAnnotation::validate(const KeypointSchema& schema, const std::string& context) const {
    const std::string where = context.empty() ? std::string() : context + ": ";
    auto fail = [&](const std::string& field, const std::string& msg) {
        throw ValidationError(where + "field '" + field + "': " + msg);
    };
    if (image_path.empty()) fail("image", "empty path");
    if (width <= 0) fail("width", "must be positive");
    if (height <= 0) fail("height", "must be positive");
    if (!(bbox.x_min >= 0.0 && bbox.x_min < bbox.x_max && bbox.x_max <= width))
        fail("bbox", "requires 0 <= x_min < x_max <= width");
    if (!(bbox.y_min >= 0.0 && bbox.y_min < bbox.y_max && bbox.y_max <= height))
        fail("bbox", "requires 0 <= y_min < y_max <= height");
    if (tool_name != schema.tool_name)
        throw SchemaError(where + "tool '" + tool_name + "' does not match schema tool '" +
                          schema.tool_name + "'");
    std::unordered_set<std::string> seen;
    for (const auto& kp : keypoints) {
        if (!schema.has_keypoint(kp.name))
            throw SchemaError(where + "unknown keypoint name '" + kp.name + "'");
        if (!seen.insert(kp.name).second)
            fail("keypoints", "duplicate keypoint '" + kp.name + "'");
        if (!std::isfinite(kp.x) || !std::isfinite(kp.y))
            fail("keypoints", "non-finite coordinates for '" + kp.name + "'");
        if (kp.visible &&
            !(kp.x >= 0.0 && kp.x < width && kp.y >= 0.0 && kp.y < height))
            fail("keypoints", "visible keypoint '" + kp.name + "' outside [0,width)x[0,height)");
    }
}

// ---------------------------------------------------------------------------
// Manifest IO

namespace {

SampleAnnotation annotation_from_json(const json& j, const std::string& where) {
    if (!j.is_object()) throw ParseError(where + ": record is not a JSON object");
    static const std::set<std::string> kKeys = {"image", "width",  "height",
                                                "bbox",  "tool",   "source",
                                                "keypoints"};
    for (const auto& [key, value] : j.items()) {
        (void)value;
        if (!kKeys.count(key)) throw ParseError(where + ": unknown key '" + key + "'");
    }
    for (const auto& key : kKeys) {
        if (!j.contains(key)) throw ParseError(where + ": missing key '" + key + "'");
    }
    SampleAnnotation a;
    try {
        a.image_path = j.at("image").get<std::string>();
        a.width = j.at("width").get<int>();
        a.height = j.at("height").get<int>();
        const auto box = j.at("bbox").get<std::vector<double>>();
        if (box.size() != 4) throw ParseError(where + ": bbox must have 4 numbers");
        a.bbox = {box[0], box[1], box[2], box[3]};
        a.tool_name = j.at("tool").get<std::string>();
        a.source = source_from_string(j.at("source").get<std::string>());
        for (const auto& jk : j.at("keypoints")) {
            for (const auto& [key, value] : jk.items()) {
                (void)value;
                if (key != "name" && key != "x" && key != "y" && key != "visible")
                    throw ParseError(where + ": unknown keypoint key '" + key + "'");
            }
            Keypoint kp;
            kp.name = jk.at("name").get<std::string>();
            kp.x = jk.at("x").get<double>();
            kp.y = jk.at("y").get<double>();
            kp.visible = jk.at("visible").get<bool>();
            a.keypoints.push_back(std::move(kp));
        }
    } catch (const json::exception& e) {
        throw ParseError(where + ": " + e.what());
    }
    return a;
}

json annotation_to_json(const SampleAnnotation& a) {
    json j;
    j["image"] = a.image_path;
    j["width"] = a.width;
    j["height"] = a.height;
    j["bbox"] = {a.bbox.x_min, a.bbox.y_min, a.bbox.x_max, a.bbox.y_max};
    j["tool"] = a.tool_name;
    j["source"] = to_string(a.source);
    json kps = json::array();
    for (const auto& kp : a.keypoints) {
        kps.push_back({{"name", kp.name}, {"x", kp.x}, {"y", kp.y}, {"visible", kp.visible}});
    }
    j["keypoints"] = kps;
    return j;
}

void check_path_under_root(const std::string& rel, const std::string& where) {
    const std::filesystem::path p(rel);
    if (p.is_absolute()) throw ValidationError(where + ": field 'image': absolute path");
    for (const auto& part : p) {
        if (part == "..")
            throw ValidationError(where + ": field 'image': path escapes the dataset root");
    }
}

}  // namespace

DatasetManifest load_manifest(const std::filesystem::path& path, const KeypointSchema& schema) {
    schema.validate();
    std::ifstream in(path);
    if (!in) throw IoError("cannot open manifest: " + path.string());

    DatasetManifest manifest;
    manifest.root = path.has_parent_path() ? path.parent_path() : std::filesystem::path(".");
    manifest.schema = schema;

    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        const std::string where = "line " + std::to_string(line_no);
        json j;
        try {
            j = json::parse(line);
        } catch (const json::parse_error& e) {
            throw ParseError(where + ": " + e.what());
        }
        SampleAnnotation a = annotation_from_json(j, where);
        a.validate(schema, where);
        check_path_under_root(a.image_path, where);
        manifest.samples.push_back(std::move(a));
    }
    return manifest;
}

void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write manifest: " + path.string());
    for (const auto& sample : manifest.samples) {
        out << annotation_to_json(sample).dump() << "\n";
    }
    if (!out) throw IoError("manifest write failed: " + path.string());
}

std::pair<DatasetManifest, DatasetManifest> split_dataset(const DatasetManifest& manifest,
                                                          double validation_fraction,
                                                          std::uint64_t seed) {
    if (manifest.samples.empty()) throw ValidationError("split_dataset: empty manifest");
    if (!(validation_fraction > 0.0 && validation_fraction < 1.0))
        throw ValidationError("split_dataset: validation_fraction must be in (0, 1)");

    const std::size_t total = manifest.samples.size();
    auto n_val = static_cast<std::size_t>(
        std::lround(validation_fraction * static_cast<double>(total)));
    n_val = std::max<std::size_t>(n_val, 1);
    if (total >= 2) n_val = std::min(n_val, total - 1);

    std::vector<std::size_t> order(total);
    for (std::size_t i = 0; i < total; ++i) order[i] = i;
    Rng rng(seed);
    rng.shuffle(order);

    DatasetManifest train{manifest.root, manifest.schema, {}};
    DatasetManifest val{manifest.root, manifest.schema, {}};
    // Membership comes from the shuffle; original record order is kept within
    // each part so repeated runs are byte-stable.
    std::vector<bool> in_val(total, false);
    for (std::size_t i = 0; i < n_val; ++i) in_val[order[i]] = true;
    for (std::size_t i = 0; i < total; ++i) {
        (in_val[i] ? val : train).samples.push_back(manifest.samples[i]);
    }
    return {std::move(train), std::move(val)};
}

}  // namespace kpforge
