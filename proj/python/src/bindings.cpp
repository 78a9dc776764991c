// Python bindings for the kpforge core operations. Images cross the
// boundary as numpy arrays: HxWx3 float32 RGB in [0,255], HxW float32 masks
// in [0,1], CxHxW float32 heatmap stacks.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <opencv2/core.hpp>

#include "kpforge/blending.hpp"
#include "kpforge/compositor.hpp"
#include "kpforge/dataset.hpp"
#include "kpforge/decode.hpp"
#include "kpforge/evaluation.hpp"
#include "kpforge/heatmap.hpp"
#include "kpforge/inference.hpp"
#include "kpforge/model.hpp"
#include "kpforge/pipeline.hpp"

namespace py = pybind11;
using namespace kpforge;

namespace {

cv::Mat image_from_numpy(const py::array_t<float, py::array::c_style | py::array::forcecast>& a) {
    if (a.ndim() == 3 && a.shape(2) == 3) {
        cv::Mat m(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)), CV_32FC3);
        std::memcpy(m.ptr<float>(), a.data(), sizeof(float) * a.size());
        return m;
    }
    if (a.ndim() == 2) {
        cv::Mat m(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)), CV_32FC1);
        std::memcpy(m.ptr<float>(), a.data(), sizeof(float) * a.size());
        return m;
    }
    throw ValidationError("expected a HxWx3 image or HxW mask array");
}

cv::Mat mask_u8_from_numpy(const py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>& a) {
    if (a.ndim() != 2) throw ValidationError("expected a HxW uint8 mask");
    cv::Mat m(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)), CV_8UC1);
    std::memcpy(m.ptr<std::uint8_t>(), a.data(), a.size());
    return m;
}

py::array_t<float> numpy_from_image(const cv::Mat& m) {
    if (m.channels() == 3) {
        py::array_t<float> out({m.rows, m.cols, 3});
        cv::Mat cont = m.isContinuous() ? m : m.clone();
        std::memcpy(out.mutable_data(), cont.ptr<float>(), sizeof(float) * out.size());
        return out;
    }
    py::array_t<float> out({m.rows, m.cols});
    cv::Mat cont = m.isContinuous() ? m : m.clone();
    std::memcpy(out.mutable_data(), cont.ptr<float>(), sizeof(float) * out.size());
    return out;
}

HeatmapStack stack_from_numpy(
    const py::array_t<float, py::array::c_style | py::array::forcecast>& a,
    const KeypointSchema& schema) {
    if (a.ndim() != 3) throw ValidationError("expected a CxHxW heatmap array");
    HeatmapStack stack;
    stack.channel_names = schema.channel_names();
    if (a.shape(0) != static_cast<py::ssize_t>(stack.channel_names.size()))
        throw SchemaError("heatmap channel count does not match the schema");
    stack.height = static_cast<int>(a.shape(1));
    stack.width = static_cast<int>(a.shape(2));
    stack.values.assign(a.data(), a.data() + a.size());
    return stack;
}

py::array_t<float> numpy_from_stack(const HeatmapStack& stack) {
    py::array_t<float> out({stack.channels(), stack.height, stack.width});
    std::memcpy(out.mutable_data(), stack.values.data(), sizeof(float) * stack.values.size());
    return out;
}

}  // namespace

PYBIND11_MODULE(_kpforge, m) {
    m.doc() = "2D tool landmark detection toolkit (C++ core)";

    // translators run newest-first: the base class goes in first so the
    // specific ones take precedence
    py::register_exception<Error>(m, "KpforgeError", PyExc_RuntimeError);
    py::register_exception<ParseError>(m, "KpforgeParseError", PyExc_ValueError);
    py::register_exception<ValidationError>(m, "KpforgeValidationError", PyExc_ValueError);
    py::register_exception<SchemaError>(m, "KpforgeSchemaError", PyExc_ValueError);
    py::register_exception<ConfigError>(m, "KpforgeConfigError", PyExc_ValueError);

    py::class_<Keypoint>(m, "Keypoint")
        .def(py::init([](std::string name, double x, double y, bool visible) {
                 return Keypoint{std::move(name), x, y, visible};
             }),
             py::arg("name"), py::arg("x"), py::arg("y"), py::arg("visible") = true)
        .def_readwrite("name", &Keypoint::name)
        .def_readwrite("x", &Keypoint::x)
        .def_readwrite("y", &Keypoint::y)
        .def_readwrite("visible", &Keypoint::visible)
        .def("__repr__", [](const Keypoint& kp) {
            return "Keypoint(" + kp.name + ", " + std::to_string(kp.x) + ", " +
                   std::to_string(kp.y) + (kp.visible ? ")" : ", hidden)");
        });

    py::class_<BBox>(m, "BBox")
        .def(py::init([](double x0, double y0, double x1, double y1) {
                 return BBox{x0, y0, x1, y1};
             }),
             py::arg("x_min"), py::arg("y_min"), py::arg("x_max"), py::arg("y_max"))
        .def_readwrite("x_min", &BBox::x_min)
        .def_readwrite("y_min", &BBox::y_min)
        .def_readwrite("x_max", &BBox::x_max)
        .def_readwrite("y_max", &BBox::y_max)
        .def_property_readonly("width", &BBox::width)
        .def_property_readonly("height", &BBox::height);

    py::class_<KeypointSchema>(m, "KeypointSchema")
        .def(py::init([](std::string tool, std::vector<std::string> names,
                         std::vector<std::vector<std::string>> groups) {
                 KeypointSchema schema{std::move(tool), std::move(names), std::move(groups)};
                 schema.validate();
                 return schema;
             }),
             py::arg("tool"), py::arg("keypoints"),
             py::arg("merge_groups") = std::vector<std::vector<std::string>>{})
        .def_readonly("tool", &KeypointSchema::tool_name)
        .def_readonly("keypoints", &KeypointSchema::keypoint_names)
        .def_readonly("merge_groups", &KeypointSchema::merge_groups)
        .def_property_readonly("num_channels", &KeypointSchema::num_channels)
        .def_property_readonly("channel_names", &KeypointSchema::channel_names)
        .def_static("load", &KeypointSchema::load, py::arg("path"))
        .def("save", &KeypointSchema::save, py::arg("path"));

    py::class_<SampleAnnotation>(m, "SampleAnnotation")
        .def(py::init([](std::string image, int width, int height, BBox bbox,
                         std::vector<Keypoint> keypoints, std::string tool, std::string source) {
                 SampleAnnotation a;
                 a.image_path = std::move(image);
                 a.width = width;
                 a.height = height;
                 a.bbox = bbox;
                 a.keypoints = std::move(keypoints);
                 a.tool_name = std::move(tool);
                 a.source = source_from_string(source);
                 return a;
             }),
             py::arg("image"), py::arg("width"), py::arg("height"), py::arg("bbox"),
             py::arg("keypoints"), py::arg("tool"), py::arg("source") = "composite2d")
        .def_readwrite("image", &SampleAnnotation::image_path)
        .def_readwrite("width", &SampleAnnotation::width)
        .def_readwrite("height", &SampleAnnotation::height)
        .def_readwrite("bbox", &SampleAnnotation::bbox)
        .def_readwrite("keypoints", &SampleAnnotation::keypoints)
        .def_readwrite("tool", &SampleAnnotation::tool_name);

    py::class_<Detection>(m, "Detection")
        .def(py::init([](std::string name, double x, double y, double confidence) {
                 return Detection{std::move(name), x, y, confidence};
             }),
             py::arg("name"), py::arg("x"), py::arg("y"), py::arg("confidence"))
        .def_readwrite("name", &Detection::name)
        .def_readwrite("x", &Detection::x)
        .def_readwrite("y", &Detection::y)
        .def_readwrite("confidence", &Detection::confidence)
        .def("__repr__", [](const Detection& d) {
            return "Detection(" + d.name + ", " + std::to_string(d.x) + ", " +
                   std::to_string(d.y) + ", " + std::to_string(d.confidence) + ")";
        });

    py::class_<PCKResult>(m, "PCKResult")
        .def_readonly("alpha", &PCKResult::alpha)
        .def_readonly("correct", &PCKResult::correct_count)
        .def_readonly("total", &PCKResult::total_count)
        .def_readonly("pck", &PCKResult::pck);

    // dataset

    m.def(
        "load_manifest",
        [](const std::filesystem::path& path, const KeypointSchema& schema) {
            auto manifest = load_manifest(path, schema);
            return py::make_tuple(manifest.root, manifest.samples);
        },
        py::arg("path"), py::arg("schema"),
        "Returns (root, annotations), validated against the schema.");

    m.def(
        "split_dataset",
        [](const std::vector<SampleAnnotation>& samples, const KeypointSchema& schema,
           double fraction, std::uint64_t seed) {
            DatasetManifest manifest{"", schema, samples};
            auto [train, val] = split_dataset(manifest, fraction, seed);
            return py::make_tuple(train.samples, val.samples);
        },
        py::arg("annotations"), py::arg("schema"), py::arg("validation_fraction"),
        py::arg("seed"));

    // heatmaps + decoding

    m.def(
        "render_targets",
        [](const SampleAnnotation& annotation, const KeypointSchema& schema, int size) {
            return numpy_from_stack(render_targets(annotation, schema, size));
        },
        py::arg("annotation"), py::arg("schema"), py::arg("size"),
        "Gaussian target stack as a CxHxW float32 array.");

    m.def(
        "render_pyramid",
        [](const SampleAnnotation& annotation, const KeypointSchema& schema,
           const std::vector<int>& sizes) {
            py::list out;
            for (const auto& stack : render_pyramid(annotation, schema, sizes).levels)
                out.append(numpy_from_stack(stack));
            return out;
        },
        py::arg("annotation"), py::arg("schema"), py::arg("level_sizes"));

    m.def(
        "decode_heatmaps",
        [](const py::array_t<float, py::array::c_style | py::array::forcecast>& stack,
           const KeypointSchema& schema, double threshold, int max_peaks, double output_scale) {
            DecodeConfig config;
            config.confidence_threshold = threshold;
            config.max_peaks_per_group = max_peaks;
            config.output_scale = output_scale;
            return decode_heatmaps(stack_from_numpy(stack, schema), schema, config);
        },
        py::arg("stack"), py::arg("schema"), py::arg("threshold") = 0.5,
        py::arg("max_peaks_per_group") = 0, py::arg("output_scale") = 1.0);

    // evaluation

    m.def(
        "pck",
        [](const DetectionsPerImage& detections, const std::vector<SampleAnnotation>& annotations,
           const KeypointSchema& schema, double alpha) {
            return pck(detections, annotations, schema, alpha);
        },
        py::arg("detections"), py::arg("annotations"), py::arg("schema"), py::arg("alpha") = 0.1);

    m.def(
        "pck_curve",
        [](const DetectionsPerImage& detections, const std::vector<SampleAnnotation>& annotations,
           const KeypointSchema& schema, const std::vector<double>& grid) {
            return pck_curve(detections, annotations, schema, grid);
        },
        py::arg("detections"), py::arg("annotations"), py::arg("schema"), py::arg("alpha_grid"));

    // blending + compositing

    m.def(
        "alpha_blend",
        [](const py::array_t<float, py::array::c_style | py::array::forcecast>& fg,
           const py::array_t<float, py::array::c_style | py::array::forcecast>& mask,
           const py::array_t<float, py::array::c_style | py::array::forcecast>& bg) {
            return numpy_from_image(
                alpha_blend(image_from_numpy(fg), image_from_numpy(mask), image_from_numpy(bg)));
        },
        py::arg("foreground"), py::arg("mask"), py::arg("background"));

    m.def(
        "poisson_blend",
        [](const py::array_t<float, py::array::c_style | py::array::forcecast>& fg,
           const py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>& mask,
           const py::array_t<float, py::array::c_style | py::array::forcecast>& bg,
           double relative_tolerance, long max_iterations) {
            PoissonOptions options;
            options.relative_tolerance = relative_tolerance;
            options.max_iterations = max_iterations;
            return numpy_from_image(poisson_blend(image_from_numpy(fg), mask_u8_from_numpy(mask),
                                                  image_from_numpy(bg), options));
        },
        py::arg("foreground"), py::arg("mask"), py::arg("background"),
        py::arg("relative_tolerance") = 1e-6, py::arg("max_iterations") = 0);

    m.def(
        "laplacian_blend",
        [](const py::array_t<float, py::array::c_style | py::array::forcecast>& fg,
           const py::array_t<float, py::array::c_style | py::array::forcecast>& mask,
           const py::array_t<float, py::array::c_style | py::array::forcecast>& bg, int levels) {
            return numpy_from_image(laplacian_blend(image_from_numpy(fg), image_from_numpy(mask),
                                                    image_from_numpy(bg), levels));
        },
        py::arg("foreground"), py::arg("mask"), py::arg("background"), py::arg("levels") = 4);

    py::class_<CompositeSpec>(m, "CompositeSpec")
        .def(py::init([](double rotation, double scale, double tx, double ty, std::string mode,
                         std::uint64_t seed) {
                 CompositeSpec spec;
                 spec.rotation_deg = rotation;
                 spec.scale = scale;
                 spec.tx = tx;
                 spec.ty = ty;
                 spec.blend_mode = blend_mode_from_string(mode);
                 spec.seed = seed;
                 return spec;
             }),
             py::arg("rotation_deg") = 0.0, py::arg("scale") = 1.0, py::arg("tx") = 0.0,
             py::arg("ty") = 0.0, py::arg("blend_mode") = "alpha", py::arg("seed") = 0)
        .def_readwrite("rotation_deg", &CompositeSpec::rotation_deg)
        .def_readwrite("scale", &CompositeSpec::scale)
        .def_readwrite("tx", &CompositeSpec::tx)
        .def_readwrite("ty", &CompositeSpec::ty);

    m.def(
        "compose_sample",
        [](const std::filesystem::path& asset_png,
           const py::array_t<float, py::array::c_style | py::array::forcecast>& background,
           const CompositeSpec& spec) -> py::object {
            const auto asset = ForegroundAsset::load(asset_png);
            auto sample = compose_sample(asset, image_from_numpy(background), spec);
            if (!sample.has_value()) return py::none();
            return py::make_tuple(numpy_from_image(sample->image),
                                  numpy_from_image(sample->foreground_mask),
                                  sample->annotation);
        },
        py::arg("asset_png"), py::arg("background"), py::arg("spec"),
        "Returns (image, foreground_mask, annotation) or None when rejected.");

    m.def("generate_dataset",
          [](const std::filesystem::path& assets, const std::filesystem::path& backgrounds,
             const std::filesystem::path& out, int count, std::uint64_t seed, int canvas,
             const std::string& distractors) {
              GenerateOptions options;
              options.assets_dir = assets;
              options.backgrounds_dir = backgrounds;
              options.out_dir = out;
              options.count = count;
              options.seed = seed;
              options.canvas = canvas;
              options.distractors_dir = distractors;
              return generate_dataset(options).samples;
          },
          py::arg("assets_dir"), py::arg("backgrounds_dir"), py::arg("out_dir"), py::arg("count"),
          py::arg("seed") = 0, py::arg("canvas") = 224, py::arg("distractors_dir") = "");

    // model inference

    py::class_<HeatmapNet>(m, "Model")
        .def_static(
            "load",
            [](const std::filesystem::path& checkpoint) {
                KeypointSchema schema;
                auto model = load_checkpoint(checkpoint, &schema);
                return py::make_tuple(model, schema);
            },
            py::arg("checkpoint_dir"), "Returns (model, schema).")
        .def_property_readonly("input_size",
                               [](HeatmapNet& model) { return model->config().input_size; })
        .def_property_readonly("head_sizes",
                               [](HeatmapNet& model) { return model->config().head_sizes(); })
        .def(
            "detect",
            [](HeatmapNet& model, const py::array_t<float, py::array::c_style | py::array::forcecast>& image,
               const KeypointSchema& schema, double threshold, int level_size) {
                DecodeConfig config;
                config.confidence_threshold = threshold;
                return detect(model, image_from_numpy(image), schema, config, level_size);
            },
            py::arg("image"), py::arg("schema"), py::arg("threshold") = 0.5,
            py::arg("level_size") = 0)
        .def(
            "predict_stack",
            [](HeatmapNet& model, const py::array_t<float, py::array::c_style | py::array::forcecast>& image,
               const KeypointSchema& schema, int level_size) {
                return numpy_from_stack(predict_stack(model, image_from_numpy(image), schema,
                                                      level_size));
            },
            py::arg("image"), py::arg("schema"), py::arg("level_size") = 0);

    m.def(
        "build_model",
        [](const std::string& variant, int num_channels, int input_size, bool allow_random,
           std::uint64_t seed) {
            BuildOptions options;
            options.allow_random_backbone = allow_random;
            options.seed = seed;
            return build_model(ModelConfig::variant(variant, num_channels, input_size), options);
        },
        py::arg("variant"), py::arg("num_channels"), py::arg("input_size") = 224,
        py::arg("allow_random_backbone") = false, py::arg("seed") = 0,
        "Builds ihm224 / ihm56 / hm (random backbone only when explicitly allowed).");
}
