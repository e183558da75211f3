// _dbat: python bindings over the C++ core. Arrays cross the boundary as
// numpy; tensors stay an implementation detail.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "dbat/analysis.hpp"

namespace py = pybind11;
using namespace dbat;

namespace {

Tensor images_to_tensor(const py::array_t<double, py::array::c_style | py::array::forcecast>& arr) {
    if (arr.ndim() != 4) throw DimensionError("images must be [N,C,H,W]");
    std::vector<int> shape(4);
    for (int i = 0; i < 4; ++i) shape[static_cast<size_t>(i)] = static_cast<int>(arr.shape(i));
    std::vector<double> data(arr.data(), arr.data() + arr.size());
    return Tensor::from_data(std::move(shape), std::move(data), DType::f32);
}

py::array_t<float> tensor_to_array(const Tensor& t) {
    std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
    py::array_t<float> out(shape);
    float* dst = out.mutable_data();
    for (int64_t i = 0; i < t.numel(); ++i)
        dst[i] = static_cast<float>(t.data()[static_cast<size_t>(i)]);
    return out;
}

LabelMap array_to_labels(const py::array_t<int32_t, py::array::c_style | py::array::forcecast>& arr) {
    if (arr.ndim() != 3) throw DimensionError("label maps must be [N,H,W]");
    LabelMap m;
    m.n = static_cast<int>(arr.shape(0));
    m.h = static_cast<int>(arr.shape(1));
    m.w = static_cast<int>(arr.shape(2));
    m.v.assign(arr.data(), arr.data() + arr.size());
    return m;
}

ActivationMatrix array_to_activations(
    const py::array_t<double, py::array::c_style | py::array::forcecast>& arr,
    const std::string& name) {
    if (arr.ndim() != 2) throw DimensionError("activation matrices must be [m, features]");
    ActivationMatrix a;
    a.layer_name = name;
    a.m = static_cast<int>(arr.shape(0));
    a.p = static_cast<int>(arr.shape(1));
    a.x.assign(arr.data(), arr.data() + arr.size());
    return a;
}

TexturePreset preset_from_string(const std::string& s) {
    if (s == "flat") return TexturePreset::flat;
    if (s == "textured") return TexturePreset::textured;
    throw ArgumentError("preset must be \"flat\" or \"textured\"");
}

// model plus the resolved run config it was built from
struct PyModel {
    RunConfig cfg;
    std::unique_ptr<DbatModel> model;

    explicit PyModel(const std::string& config_json) {
        cfg = parse_run_config(nlohmann::json::parse(config_json));
        model = std::make_unique<DbatModel>(cfg.seed, DType::f32, cfg.model_config());
    }

    static PyModel from_checkpoint(const std::filesystem::path& path) {
        CheckpointInfo info = peek_checkpoint(path);
        PyModel m(run_config_to_json(info.config).dump());
        load_checkpoint(*m.model, nullptr, path);
        return m;
    }

    PyModel(PyModel&&) = default;
    PyModel(const PyModel&) = delete;

    py::array_t<float> logits(const py::array_t<double, py::array::c_style | py::array::forcecast>& images) const {
        NoGradGuard ng;
        return tensor_to_array(model->forward(images_to_tensor(images)).logits);
    }

    py::array_t<float> attention_masks(
        const py::array_t<double, py::array::c_style | py::array::forcecast>& images) const {
        if (!model->dba) throw ArgumentError("model has no DBA module (disable_dba set)");
        NoGradGuard ng;
        ForwardOut out = model->forward(images_to_tensor(images));
        return tensor_to_array(out.attn.weights);
    }

    py::array_t<int32_t> predict(
        const py::array_t<double, py::array::c_style | py::array::forcecast>& images) const {
        NoGradGuard ng;
        LabelMap m = ops::argmax_channels(model->forward(images_to_tensor(images)).logits);
        py::array_t<int32_t> out({static_cast<py::ssize_t>(m.n), static_cast<py::ssize_t>(m.h),
                                  static_cast<py::ssize_t>(m.w)});
        std::copy(m.v.begin(), m.v.end(), out.mutable_data());
        return out;
    }

    std::string config_json() const { return run_config_to_json(cfg).dump(); }
    int64_t parameter_count() const { return model->parameter_count(); }
    std::vector<std::string> parameter_names() const {
        std::vector<std::string> names;
        for (const Parameter* p : model->parameters()) names.push_back(p->name);
        return names;
    }
};

}  // namespace

PYBIND11_MODULE(_dbat, m) {
    m.doc() = "cross-resolution attention segmentation core";

    py::register_exception<DimensionError>(m, "DimensionError", PyExc_ValueError);
    py::register_exception<ArgumentError>(m, "ArgumentError", PyExc_ValueError);
    py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
    py::register_exception<CheckpointError>(m, "CheckpointError", PyExc_IOError);
    py::register_exception<DegenerateError>(m, "DegenerateError", PyExc_ValueError);

    m.def(
        "lr_at",
        [](int64_t step, double lr_peak, int64_t warmup_steps, int64_t total_steps,
           double poly_power) {
            TrainConfig cfg;
            cfg.lr_peak = lr_peak;
            cfg.warmup_steps = warmup_steps;
            cfg.total_steps = total_steps;
            cfg.poly_power = poly_power;
            return lr_at(step, cfg);
        },
        py::arg("step"), py::arg("lr_peak"), py::arg("warmup_steps"), py::arg("total_steps"),
        py::arg("poly_power") = 1.0,
        "linear warm-up then polynomial decay");

    m.def(
        "hsic1",
        [](const py::array_t<double, py::array::c_style | py::array::forcecast>& k,
           const py::array_t<double, py::array::c_style | py::array::forcecast>& l) {
            if (k.ndim() != 2 || k.shape(0) != k.shape(1))
                throw DimensionError("K must be square");
            const int m_ = static_cast<int>(k.shape(0));
            std::vector<double> kv(k.data(), k.data() + k.size());
            std::vector<double> lv(l.data(), l.data() + l.size());
            return hsic1(kv, lv, m_);
        },
        py::arg("k"), py::arg("l"), "unbiased HSIC estimator over Gram matrices");

    m.def(
        "cka",
        [](const py::array_t<double, py::array::c_style | py::array::forcecast>& x,
           const py::array_t<double, py::array::c_style | py::array::forcecast>& y) {
            return cka(array_to_activations(x, "x"), array_to_activations(y, "y"));
        },
        py::arg("x"), py::arg("y"), "centered-kernel-alignment similarity of two layers");

    m.def(
        "generate_scene",
        [](uint64_t seed, int num_classes, int crop, double ignore_fraction,
           const std::string& preset) {
            SyntheticScene s =
                generate_scene(seed, num_classes, crop, ignore_fraction, preset_from_string(preset));
            py::dict out;
            py::array_t<float> image({static_cast<py::ssize_t>(3), static_cast<py::ssize_t>(crop),
                                      static_cast<py::ssize_t>(crop)});
            std::copy(s.image.begin(), s.image.end(), image.mutable_data());
            out["image"] = image;
            auto plane = [&](const std::vector<int32_t>& v) {
                py::array_t<int32_t> arr(
                    {static_cast<py::ssize_t>(crop), static_cast<py::ssize_t>(crop)});
                std::copy(v.begin(), v.end(), arr.mutable_data());
                return arr;
            };
            out["labels"] = plane(s.labels);
            out["texture_id"] = plane(s.texture_id);
            out["color_id"] = plane(s.color_id);
            out["shape_id"] = plane(s.shape_id);
            return out;
        },
        py::arg("seed"), py::arg("num_classes") = 4, py::arg("crop") = 64,
        py::arg("ignore_fraction") = 0.0, py::arg("preset") = "flat",
        "procedural scene with dense material labels and concept maps");

    m.def(
        "metrics",
        [](const py::array_t<int32_t, py::array::c_style | py::array::forcecast>& pred,
           const py::array_t<int32_t, py::array::c_style | py::array::forcecast>& labels,
           int num_classes) {
            MetricsReport r = compute_metrics(array_to_labels(pred), array_to_labels(labels),
                                              num_classes);
            py::dict out;
            out["pixel_acc"] = r.pixel_acc;
            out["mean_acc"] = r.mean_acc;
            out["miou"] = r.miou;
            out["per_class_acc"] = r.per_class_acc;
            out["per_class_iou"] = r.per_class_iou;
            out["confusion"] = r.confusion;
            return out;
        },
        py::arg("pred"), py::arg("labels"), py::arg("num_classes"),
        "pixel accuracy, mean class accuracy, and mIoU over non-ignored pixels");

    m.def(
        "train",
        [](const std::string& config_json, const std::filesystem::path& out_dir) {
            RunConfig cfg = parse_run_config(nlohmann::json::parse(config_json));
            TrainResult r = train_loop(cfg, out_dir);
            py::dict out;
            out["steps"] = r.steps;
            out["final_loss"] = r.final_loss;
            out["final_train_pixel_acc"] = r.final_train_pixel_acc;
            out["checkpoint"] = r.final_checkpoint.string();
            return out;
        },
        py::arg("config_json"), py::arg("out_dir"),
        "run the training loop; returns the summary dict");

    py::class_<PyModel>(m, "Model")
        .def(py::init<const std::string&>(), py::arg("config_json"))
        .def_static("from_checkpoint", &PyModel::from_checkpoint, py::arg("path"))
        .def("logits", &PyModel::logits, py::arg("images"))
        .def("predict", &PyModel::predict, py::arg("images"))
        .def("attention_masks", &PyModel::attention_masks, py::arg("images"))
        .def("config_json", &PyModel::config_json)
        .def("parameter_count", &PyModel::parameter_count)
        .def("parameter_names", &PyModel::parameter_names);

    m.attr("IGNORE_LABEL") = kIgnoreLabel;
    m.attr("__version__") = "0.1.0";
}
