// Python bindings for the core operations: tensors/datasets with numpy
// interop, model building and io, training/evaluation, the poisoning
// attacks, detection and mitigation.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "phyg/attacks.hpp"
#include "phyg/data.hpp"
#include "phyg/detector.hpp"
#include "phyg/mitigator.hpp"
#include "phyg/model.hpp"
#include "phyg/model_io.hpp"
#include "phyg/net.hpp"
#include "phyg/trainer.hpp"
#include "phyg/version.hpp"

namespace py = pybind11;
using namespace phyg;

namespace {

Tensor tensor_from_numpy(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
    std::vector<int> shape;
    for (py::ssize_t d = 0; d < a.ndim(); ++d) shape.push_back(static_cast<int>(a.shape(d)));
    std::vector<double> data(a.data(), a.data() + a.size());
    return Tensor(std::move(shape), std::move(data));
}

py::array_t<double> tensor_to_numpy(const Tensor& t) {
    std::vector<py::ssize_t> shape(t.shape.begin(), t.shape.end());
    py::array_t<double> out(shape);
    std::copy(t.data.begin(), t.data.end(), out.mutable_data());
    return out;
}

}  // namespace

PYBIND11_MODULE(phyg, m) {
    m.doc() = "data-poisoning defense toolkit: train, poison, detect, mitigate";
    m.attr("__version__") = kVersion;

    py::class_<Tensor>(m, "Tensor", py::buffer_protocol())
        .def(py::init(&tensor_from_numpy), py::arg("array"))
        .def_readonly("shape", &Tensor::shape)
        .def("numpy", &tensor_to_numpy)
        .def_buffer([](Tensor& t) {
            std::vector<py::ssize_t> shape(t.shape.begin(), t.shape.end());
            std::vector<py::ssize_t> strides(shape.size());
            py::ssize_t stride = static_cast<py::ssize_t>(sizeof(double));
            for (std::size_t i = shape.size(); i-- > 0;) {
                strides[i] = stride;
                stride *= shape[i];
            }
            return py::buffer_info(t.data.data(), sizeof(double),
                                   py::format_descriptor<double>::format(),
                                   static_cast<py::ssize_t>(shape.size()), shape, strides);
        })
        .def("__len__", [](const Tensor& t) { return t.data.size(); })
        .def("__repr__", [](const Tensor& t) {
            return "Tensor(shape=" + shape_to_string(t.shape) + ")";
        });

    py::class_<Dataset>(m, "Dataset")
        .def_readonly("labels", &Dataset::labels)
        .def_readonly("class_count", &Dataset::class_count)
        .def_readonly("name", &Dataset::name)
        .def("__len__", [](const Dataset& d) { return d.images.size(); })
        .def("image", [](const Dataset& d, std::size_t i) { return tensor_to_numpy(d.images.at(i)); })
        .def("label", [](const Dataset& d, std::size_t i) { return d.labels.at(i); });

    m.def("synth_generate", &synth_generate, py::arg("classes"), py::arg("per_class"),
          py::arg("geometry_seed"), py::arg("noise_sigma") = 0.05);
    m.def("load_idx", &load_idx, py::arg("images_path"), py::arg("labels_path"));
    m.def("save_idx", &save_idx, py::arg("dataset"), py::arg("images_path"),
          py::arg("labels_path"));
    m.def("subsample", &subsample, py::arg("dataset"), py::arg("fraction"), py::arg("seed"));
    m.def("split_disjoint", &split_disjoint, py::arg("dataset"), py::arg("parts"),
          py::arg("seed"));

    py::class_<ModelMeta>(m, "ModelMeta")
        .def_readwrite("name", &ModelMeta::name)
        .def_readwrite("train_seed", &ModelMeta::train_seed)
        .def_readwrite("provenance", &ModelMeta::provenance);

    py::class_<ArchitectureSpec>(m, "ArchitectureSpec")
        .def_static("from_text", &ArchitectureSpec::from_text, py::arg("text"))
        .def("to_text", &ArchitectureSpec::to_text)
        .def("param_count", &ArchitectureSpec::param_count)
        .def_readonly("classes", &ArchitectureSpec::classes);

    py::class_<ModelHandle>(m, "ModelHandle")
        .def_readonly("spec", &ModelHandle::spec)
        .def_readonly("meta", &ModelHandle::meta)
        .def_property_readonly("params",
                               [](const ModelHandle& h) { return tensor_to_numpy(h.params); });

    m.def("preset_names", &preset_names);
    m.def("make_preset", &make_preset, py::arg("name"), py::arg("in_h"), py::arg("in_w"),
          py::arg("in_c"), py::arg("classes"), py::arg("dropout_rate") = 0.5);
    m.def("build_model", &build_model, py::arg("spec"), py::arg("init_seed"),
          py::arg("name") = "model");
    m.def(
        "model_with_params",
        [](const ArchitectureSpec& spec,
           const py::array_t<double, py::array::c_style | py::array::forcecast>& params,
           const std::string& name) {
            spec.validate();
            ModelHandle m;
            m.spec = spec;
            m.params = tensor_from_numpy(params);
            if (m.params.size() != spec.param_count())
                throw std::invalid_argument("parameter vector does not match the architecture");
            quantize_to_f32(m.params);
            m.meta.name = name;
            return m;
        },
        py::arg("spec"), py::arg("params"), py::arg("name") = "model");
    m.def("save_model", &save_model, py::arg("model"), py::arg("path"));
    m.def("load_model", &load_model, py::arg("path"));

    m.def("forward", &forward, py::arg("model"), py::arg("input"));
    m.def("cross_entropy", &cross_entropy, py::arg("logits"), py::arg("label"));
    m.def(
        "predict",
        [](const ModelHandle& model, const Tensor& input) {
            Prediction p = predict(model, input);
            return py::make_tuple(p.label, p.confidence);
        },
        py::arg("model"), py::arg("input"));
    py::enum_<GradWhich>(m, "GradWhich")
        .value("Input", GradWhich::Input)
        .value("Params", GradWhich::Params)
        .value("Both", GradWhich::Both);
    py::class_<GradientPair>(m, "GradientPair")
        .def_property_readonly("wrt_input",
                               [](const GradientPair& g) { return tensor_to_numpy(g.wrt_input); })
        .def_property_readonly("wrt_params", [](const GradientPair& g) {
            return tensor_to_numpy(g.wrt_params);
        });
    m.def("loss_gradients", &loss_gradients, py::arg("model"), py::arg("input"), py::arg("label"),
          py::arg("which") = GradWhich::Both);
    m.def("axpy_step", &axpy_step, py::arg("x"), py::arg("grad"), py::arg("rate"));

    py::class_<TrainConfig>(m, "TrainConfig")
        .def(py::init<>())
        .def_readwrite("learning_rate", &TrainConfig::learning_rate)
        .def_readwrite("momentum", &TrainConfig::momentum)
        .def_readwrite("dropout", &TrainConfig::dropout)
        .def_readwrite("batch_size", &TrainConfig::batch_size)
        .def_readwrite("epochs", &TrainConfig::epochs)
        .def_readwrite("seed", &TrainConfig::seed)
        .def_readwrite("threads", &TrainConfig::threads);
    m.def("train", &train, py::arg("model"), py::arg("dataset"), py::arg("config"),
          py::call_guard<py::gil_scoped_release>());
    m.def("evaluate_accuracy", &evaluate_accuracy, py::arg("model"), py::arg("dataset"),
          py::arg("threads") = 0, py::call_guard<py::gil_scoped_release>());
    m.def("per_class_accuracy", &per_class_accuracy, py::arg("model"), py::arg("dataset"),
          py::arg("threads") = 0);
    m.def("attack_success_rate", &attack_success_rate, py::arg("model"), py::arg("adversarial"),
          py::arg("target_label"), py::arg("threads") = 0);

    py::enum_<Technique>(m, "Technique")
        .value("Mislabel", Technique::Mislabel)
        .value("BadNets", Technique::BadNets)
        .value("Chen", Technique::Chen)
        .value("Adaptive", Technique::Adaptive);
    py::class_<TriggerSpec>(m, "TriggerSpec")
        .def_static("patch", &TriggerSpec::patch, py::arg("h") = 4, py::arg("w") = 4,
                    py::arg("row") = -1, py::arg("col") = -1, py::arg("value") = 1.0)
        .def_static("blend", &TriggerSpec::blend, py::arg("noise_seed") = 1,
                    py::arg("transparency") = 0.1);
    py::class_<AttackSpec>(m, "AttackSpec")
        .def(py::init<>())
        .def_readwrite("technique", &AttackSpec::technique)
        .def_readwrite("target_labels", &AttackSpec::target_labels)
        .def_readwrite("source_class", &AttackSpec::source_class)
        .def_readwrite("proportion", &AttackSpec::proportion)
        .def_readwrite("triggers", &AttackSpec::triggers);
    py::class_<PoisonResult>(m, "PoisonResult")
        .def_readonly("dataset", &PoisonResult::dataset)
        .def_readonly("poisoned_indices", &PoisonResult::poisoned_indices);
    m.def("mislabel_poison", &mislabel_poison, py::arg("dataset"), py::arg("spec"),
          py::arg("seed"));
    m.def("apply_trigger", &apply_trigger, py::arg("image"), py::arg("trigger"));
    m.def("backdoor_poison", &backdoor_poison, py::arg("dataset"), py::arg("spec"),
          py::arg("seed"));
    m.def("make_adversarial_testset", &make_adversarial_testset, py::arg("test"), py::arg("spec"),
          py::arg("seed"));
    m.def("adaptive_poison", &adaptive_poison, py::arg("ensemble"), py::arg("targets"),
          py::arg("step"), py::arg("iters"), py::call_guard<py::gil_scoped_release>());

    py::class_<DetectionConfig>(m, "DetectionConfig")
        .def(py::init<>())
        .def_readwrite("alpha", &DetectionConfig::alpha)
        .def_readwrite("beta", &DetectionConfig::beta)
        .def_readwrite("gamma_fraction", &DetectionConfig::gamma_fraction)
        .def_readwrite("phase1_floor", &DetectionConfig::phase1_floor)
        .def_readwrite("max_iters", &DetectionConfig::max_iters)
        .def_readwrite("phase1_max_iters", &DetectionConfig::phase1_max_iters)
        .def_readwrite("num_samples", &DetectionConfig::num_samples)
        .def_readwrite("prob_threshold", &DetectionConfig::prob_threshold)
        .def_readwrite("lambda_iters", &DetectionConfig::lambda_iters)
        .def_readwrite("lambda_rounds", &DetectionConfig::lambda_rounds)
        .def_readwrite("gamma_starts", &DetectionConfig::gamma_starts)
        .def_readwrite("gamma_iters", &DetectionConfig::gamma_iters)
        .def_readwrite("seed", &DetectionConfig::seed)
        .def_readwrite("threads", &DetectionConfig::threads)
        .def_readwrite("record_traces", &DetectionConfig::record_traces);
    py::class_<CraftOutcome>(m, "CraftOutcome")
        .def_property_readonly("x", [](const CraftOutcome& c) { return tensor_to_numpy(c.x); })
        .def_readonly("reached", &CraftOutcome::reached)
        .def_readonly("final_loss_suspect", &CraftOutcome::final_loss_suspect)
        .def_readonly("final_loss_refs", &CraftOutcome::final_loss_refs)
        .def_readonly("phase1_exit_loss", &CraftOutcome::phase1_exit_loss)
        .def_readonly("escaped", &CraftOutcome::escaped)
        .def_readonly("trace_suspect", &CraftOutcome::trace_suspect);
    py::class_<LabelVerdict>(m, "LabelVerdict")
        .def_readonly("label", &LabelVerdict::label)
        .def_readonly("prob", &LabelVerdict::prob)
        .def_readonly("infected", &LabelVerdict::infected)
        .def_readonly("reached_count", &LabelVerdict::reached_count)
        .def_readonly("lambdas", &LabelVerdict::lambdas)
        .def_readonly("gammas", &LabelVerdict::gammas);
    py::class_<DetectionReport>(m, "DetectionReport")
        .def_readonly("verdicts", &DetectionReport::verdicts)
        .def_readonly("model_infected", &DetectionReport::model_infected)
        .def_readonly("false_positive_rate", &DetectionReport::false_positive_rate)
        .def_readonly("true_positives", &DetectionReport::true_positives)
        .def_readonly("wall_seconds", &DetectionReport::wall_seconds);
    py::register_exception<DegenerateReferenceError>(m, "DegenerateReferenceError");

    m.def("estimate_gamma",
          py::overload_cast<const ModelHandle&, int, const DetectionConfig&>(&estimate_gamma),
          py::arg("reference"), py::arg("label"), py::arg("config"),
          py::call_guard<py::gil_scoped_release>());
    m.def("tune_lambda",
          py::overload_cast<const ModelHandle&, const ModelHandle&, int, const DetectionConfig&>(
              &tune_lambda),
          py::arg("suspect"), py::arg("reference"), py::arg("label"), py::arg("config"),
          py::call_guard<py::gil_scoped_release>());
    m.def("craft_sample",
          py::overload_cast<const ModelHandle&, const std::vector<ModelHandle>&, int,
                            const std::vector<double>&, const std::vector<double>&,
                            const DetectionConfig&, std::uint64_t>(&craft_sample),
          py::arg("suspect"), py::arg("references"), py::arg("label"), py::arg("lambdas"),
          py::arg("gammas"), py::arg("config"), py::arg("sample_seed"),
          py::call_guard<py::gil_scoped_release>());
    m.def("detect_label", &detect_label, py::arg("suspect"), py::arg("references"),
          py::arg("label"), py::arg("config"), py::call_guard<py::gil_scoped_release>());
    m.def("detect_model", &detect_model, py::arg("suspect"), py::arg("references"),
          py::arg("config"), py::arg("ground_truth") = std::nullopt,
          py::call_guard<py::gil_scoped_release>());

    py::class_<MitigationConfig>(m, "MitigationConfig")
        .def(py::init<>())
        .def_readwrite("c_init", &MitigationConfig::c_init)
        .def_readwrite("d_init", &MitigationConfig::d_init)
        .def_readwrite("loss_target", &MitigationConfig::loss_target)
        .def_readwrite("samples_per_pair", &MitigationConfig::samples_per_pair)
        .def_readwrite("clean_fraction", &MitigationConfig::clean_fraction)
        .def_readwrite("adversarial_fraction", &MitigationConfig::adversarial_fraction)
        .def_readwrite("retrain_epochs", &MitigationConfig::retrain_epochs)
        .def_readwrite("alpha", &MitigationConfig::alpha)
        .def_readwrite("max_iters", &MitigationConfig::max_iters)
        .def_readwrite("seed", &MitigationConfig::seed)
        .def_readwrite("threads", &MitigationConfig::threads)
        .def_readwrite("retrain", &MitigationConfig::retrain);
    py::class_<UnlearnSample>(m, "UnlearnSample")
        .def_property_readonly("x", [](const UnlearnSample& u) { return tensor_to_numpy(u.x); })
        .def_readonly("basin_label", &UnlearnSample::basin_label)
        .def_readonly("success", &UnlearnSample::success);
    py::class_<MitigationRound>(m, "MitigationRound")
        .def_readonly("flagged_labels", &MitigationRound::flagged_labels)
        .def_readonly("crafted_success", &MitigationRound::crafted_success)
        .def_readonly("crafted_total", &MitigationRound::crafted_total);
    py::class_<MitigationResult>(m, "MitigationResult")
        .def_readonly("model", &MitigationResult::model)
        .def_readonly("rounds_used", &MitigationResult::rounds_used)
        .def_readonly("resolved", &MitigationResult::resolved)
        .def_readonly("final_report", &MitigationResult::final_report)
        .def_readonly("rounds", &MitigationResult::rounds);
    m.def("craft_unlearning_sample", &craft_unlearning_sample, py::arg("suspect"),
          py::arg("references"), py::arg("target_label"), py::arg("basin_label"),
          py::arg("config"), py::arg("seed"), py::call_guard<py::gil_scoped_release>());
    m.def("build_unlearning_set", &build_unlearning_set, py::arg("clean"), py::arg("crafted"),
          py::arg("config"), py::arg("seed"));
    m.def("unlearn", &unlearn, py::arg("suspect"), py::arg("mixed"), py::arg("config"),
          py::call_guard<py::gil_scoped_release>());
    m.def("iterate_until_clean", &iterate_until_clean, py::arg("suspect"), py::arg("references"),
          py::arg("detect_config"), py::arg("mitigation_config"), py::arg("clean"),
          py::arg("max_rounds"), py::call_guard<py::gil_scoped_release>());
}
