#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "kpforge/errors.hpp"

namespace kpforge {

/// Provenance of a training/evaluation image.
enum class SampleSource { kSynthetic3d, kComposite2d, kReal };

std::string to_string(SampleSource source);
SampleSource source_from_string(const std::string& text);

/// Keypoint layout of one tool. Keypoints listed in a merge group share a
/// single heatmap channel (visually indistinguishable landmarks, e.g. the two
/// ends of an open-ended wrench); every other keypoint gets its own channel.
struct KeypointSchema {
    std::string tool_name;
    std::vector<std::string> keypoint_names;
    std::vector<std::vector<std::string>> merge_groups;

    /// Channel count N = merge groups + ungrouped keypoints.
    int num_channels() const;

    /// Channel names in canonical order: keypoints in schema order, a merge
    /// group appearing once (named "a+b+...") at its first member's position.
    std::vector<std::string> channel_names() const;

    /// Index of the channel a keypoint renders into.
    int channel_of(const std::string& keypoint_name) const;

    /// Keypoints rendered into channel `c` (singleton for ungrouped).
    std::vector<std::string> channel_members(int channel) const;

    bool is_grouped(const std::string& keypoint_name) const;
    bool has_keypoint(const std::string& keypoint_name) const;

    /// Throws SchemaError on duplicate/empty names, unknown group members or
    /// overlapping groups.
    void validate() const;

    static KeypointSchema from_json_text(const std::string& text);
    std::string to_json_text() const;
    static KeypointSchema load(const std::filesystem::path& path);
    void save(const std::filesystem::path& path) const;
};

struct Keypoint {
    std::string name;
    double x = 0.0;  // continuous pixels, origin at the top-left pixel center
    double y = 0.0;
    bool visible = true;
};

struct BBox {
    double x_min = 0.0, y_min = 0.0, x_max = 0.0, y_max = 0.0;
    double width() const { return x_max - x_min; }
    double height() const { return y_max - y_min; }
    double long_side() const { return std::max(width(), height()); }
};

/// One image with its labels. Invisible (occluded/truncated) keypoints stay
/// in the record with visible=false; they still produce heatmap targets and
/// are still evaluated.
struct SampleAnnotation {
    std::string image_path;  // relative to the manifest root
    int width = 0;
    int height = 0;
    BBox bbox;
    std::vector<Keypoint> keypoints;
    std::string tool_name;
    SampleSource source = SampleSource::kComposite2d;

    const Keypoint* find(const std::string& name) const;

    /// Throws ValidationError / SchemaError. `context` prefixes messages
    /// (e.g. "line 12").
    void validate(const KeypointSchema& schema, const std::string& context = {}) const;
};

struct DatasetManifest {
    std::filesystem::path root;
    KeypointSchema schema;
    std::vector<SampleAnnotation> samples;

    std::size_t size() const { return samples.size(); }
    std::filesystem::path image_file(const SampleAnnotation& sample) const {
        return root / sample.image_path;
    }
};

/// Reads a line-delimited JSON manifest and validates every record against
/// the schema. Parse errors name the line, validation errors the field.
DatasetManifest load_manifest(const std::filesystem::path& path, const KeypointSchema& schema);

/// Writes one JSON object per line next to the dataset root.
void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);

/// Deterministic train/validation split. Validation size =
/// round(fraction * total) clamped to [1, total-1].
std::pair<DatasetManifest, DatasetManifest> split_dataset(const DatasetManifest& manifest,
                                                          double validation_fraction,
                                                          std::uint64_t seed);

}  // namespace kpforge
