// Python surface of the library: dataset generation, file I/O, model
// training and inference, uncertainty measures, distillation losses and the
// calibration metrics, all over numpy arrays.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstring>
#include <memory>

#include "uqd/data.hpp"
#include "uqd/distill.hpp"
#include "uqd/metrics.hpp"
#include "uqd/segnet.hpp"
#include "uqd/train.hpp"
#include "uqd/uncertainty.hpp"

namespace py = pybind11;
using namespace uqd;

namespace {

using DArray = py::array_t<double, py::array::c_style | py::array::forcecast>;
using U8Array = py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>;

Tensor tensor_from_array(const DArray& a, const char* what) {
    if (a.ndim() != 2) throw ContractError(std::string(what) + ": expected a 2-D array");
    const int h = static_cast<int>(a.shape(0));
    const int w = static_cast<int>(a.shape(1));
    std::vector<double> vals(a.data(), a.data() + a.size());
    return Tensor::from_data({h, w}, std::move(vals));
}

Mask mask_from_array(const U8Array& a, const char* what) {
    if (a.ndim() != 2) throw ContractError(std::string(what) + ": expected a 2-D array");
    Mask m;
    m.h = static_cast<int>(a.shape(0));
    m.w = static_cast<int>(a.shape(1));
    m.v.assign(a.data(), a.data() + a.size());
    return m;
}

py::array_t<double> array_from_values(int h, int w, const std::vector<double>& vals) {
    py::array_t<double> out({h, w});
    std::memcpy(out.mutable_data(), vals.data(), vals.size() * sizeof(double));
    return out;
}

py::array_t<double> array_from_prob(const ProbMap& p) { return array_from_values(p.h, p.w, p.probs); }

ProbMap prob_from_array(const DArray& a, const char* what) {
    if (a.ndim() != 2) throw ContractError(std::string(what) + ": expected a 2-D array");
    ProbMap p;
    p.h = static_cast<int>(a.shape(0));
    p.w = static_cast<int>(a.shape(1));
    p.probs.assign(a.data(), a.data() + a.size());
    return p;
}

std::vector<ProbMap> probs_from_list(const std::vector<DArray>& arrays, const char* what) {
    std::vector<ProbMap> out;
    out.reserve(arrays.size());
    for (const DArray& a : arrays) out.push_back(prob_from_array(a, what));
    return out;
}

py::array_t<double> reliability_array(const ReliabilityTable& table) {
    const int n = static_cast<int>(table.bins.size());
    py::array_t<double> out({n, 5});
    auto view = out.mutable_unchecked<2>();
    for (int i = 0; i < n; ++i) {
        const ReliabilityBin& b = table.bins[static_cast<std::size_t>(i)];
        view(i, 0) = b.lo;
        view(i, 1) = b.hi;
        view(i, 2) = b.mean_conf;
        view(i, 3) = b.accuracy;
        view(i, 4) = static_cast<double>(b.count);
    }
    return out;
}

std::vector<Representation> reps_from_array(const DArray& a, const char* what) {
    if (a.ndim() != 2) throw ContractError(std::string(what) + ": expected an N x D array");
    std::vector<Representation> reps;
    const int n = static_cast<int>(a.shape(0));
    const int d = static_cast<int>(a.shape(1));
    auto view = a.unchecked<2>();
    for (int i = 0; i < n; ++i) {
        std::vector<double> row(static_cast<std::size_t>(d));
        for (int j = 0; j < d; ++j) row[static_cast<std::size_t>(j)] = view(i, j);
        reps.push_back({Tensor::from_data({d}, std::move(row)), -1});
    }
    return reps;
}

// Shared-ownership wrapper so ensembles can reference loaded models.
struct PyModel {
    std::shared_ptr<SegNet> net;

    explicit PyModel(SegNet n) : net(std::make_shared<SegNet>(std::move(n))) {}
};

TrainConfig make_train_config(int epochs, int batch_size, double lr, double weight_decay,
                              double eta_min, std::uint64_t seed) {
    TrainConfig cfg;
    cfg.epochs = epochs;
    cfg.batch_size = batch_size;
    cfg.lr_init = lr;
    cfg.weight_decay = weight_decay;
    cfg.eta_min = eta_min;
    cfg.seed = seed;
    return cfg;
}

LoadedDataset dataset_from_lists(const std::vector<DArray>& images,
                                 const std::vector<U8Array>& masks, const char* what) {
    LoadedDataset data;
    for (const DArray& a : images) data.images.push_back(tensor_from_array(a, what));
    for (const U8Array& a : masks) data.masks.push_back(mask_from_array(a, what));
    return data;
}

} // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Ensemble uncertainty for binary segmentation";

    py::register_exception<DimensionError>(m, "DimensionError", PyExc_ValueError);
    py::register_exception<ContractError>(m, "ContractError", PyExc_ValueError);
    py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);
    py::register_exception<FormatError>(m, "FormatError", PyExc_ValueError);
    py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
    py::register_exception<IoError>(m, "IoError", PyExc_OSError);

    py::class_<PyModel>(m, "Model")
        .def_static(
            "load", [](const std::string& path) { return PyModel(load_checkpoint(path)); },
            py::arg("path"))
        .def("save",
             [](const PyModel& self, const std::string& path) { save_checkpoint(*self.net, path); },
             py::arg("path"))
        .def("predict",
             [](const PyModel& self, const DArray& image) {
                 return array_from_prob(
                     predict_prob(*self.net, tensor_from_array(image, "predict")));
             },
             py::arg("image"))
        .def("predict_mcd",
             [](const PyModel& self, const DArray& image, int passes, std::uint64_t seed) {
                 EnsemblePrediction pred =
                     mcd_predict(*self.net, tensor_from_array(image, "predict_mcd"), passes, seed);
                 std::vector<py::array_t<double>> members;
                 for (const ProbMap& p : pred.members) members.push_back(array_from_prob(p));
                 return py::make_tuple(array_from_prob(pred.mean), members);
             },
             py::arg("image"), py::arg("passes") = 10, py::arg("seed") = 0)
        .def("checksum", [](const PyModel& self) { return param_checksum(*self.net); })
        .def_property_readonly("base_channels",
                               [](const PyModel& self) { return self.net->arch.base_channels; })
        .def_property_readonly("dropout_rate",
                               [](const PyModel& self) { return self.net->dropout_rate; })
        .def_property_readonly("rep_dim",
                               [](const PyModel& self) { return self.net->arch.rep_dim(); });

    m.def(
        "gen_data",
        [](const std::string& dir, int n, int size, std::uint64_t seed, int curves_min,
           int curves_max, double thickness_min, double thickness_max, double noise_sigma) {
            SynthConfig cfg;
            cfg.n_images = n;
            cfg.h = size;
            cfg.w = size;
            cfg.seed = seed;
            cfg.curves_min = curves_min;
            cfg.curves_max = curves_max;
            cfg.thickness_min = thickness_min;
            cfg.thickness_max = thickness_max;
            cfg.noise_sigma = noise_sigma;
            return dataset_checksum(generate_synthetic(cfg, dir));
        },
        py::arg("dir"), py::arg("n") = 30, py::arg("size") = 64, py::arg("seed") = 7,
        py::arg("curves_min") = 2, py::arg("curves_max") = 5, py::arg("thickness_min") = 1.0,
        py::arg("thickness_max") = 2.5, py::arg("noise_sigma") = 0.05,
        "Write a synthetic dataset into dir; returns its content checksum.");

    m.def(
        "load_dataset",
        [](const std::string& manifest) {
            LoadedDataset data = load_dataset(load_manifest(manifest));
            std::vector<py::array_t<double>> images;
            std::vector<py::array_t<std::uint8_t>> masks;
            for (const Tensor& t : data.images)
                images.push_back(array_from_values(t.dim(0), t.dim(1), t.data()));
            for (const Mask& mk : data.masks) {
                py::array_t<std::uint8_t> a({mk.h, mk.w});
                std::memcpy(a.mutable_data(), mk.v.data(), mk.v.size());
                masks.push_back(std::move(a));
            }
            return py::make_tuple(images, masks);
        },
        py::arg("manifest"), "Load (images, masks) listed by a manifest file or its path.");

    m.def(
        "read_pgm",
        [](const std::string& path) {
            Tensor t = read_pgm(path);
            return array_from_values(t.dim(0), t.dim(1), t.data());
        },
        py::arg("path"));
    m.def(
        "write_pgm",
        [](const std::string& path, const DArray& image) {
            write_pgm(path, tensor_from_array(image, "write_pgm"));
        },
        py::arg("path"), py::arg("image"));
    m.def(
        "read_pfm",
        [](const std::string& path) {
            int warnings = 0;
            ProbMap p = read_pfm(path, &warnings);
            return py::make_tuple(array_from_prob(p), warnings);
        },
        py::arg("path"), "Returns (values, clamp_warning_count).");
    m.def(
        "write_pfm",
        [](const std::string& path, const DArray& p) {
            write_pfm(path, prob_from_array(p, "write_pfm"));
        },
        py::arg("path"), py::arg("values"));

    m.def(
        "train",
        [](const std::vector<DArray>& images, const std::vector<U8Array>& masks, int epochs,
           int batch_size, double lr, double weight_decay, double eta_min, std::uint64_t seed,
           int base_channels, double dropout) {
            LoadedDataset data = dataset_from_lists(images, masks, "train");
            TrainConfig cfg = make_train_config(epochs, batch_size, lr, weight_decay, eta_min, seed);
            ArchConfig arch{1, base_channels};
            return PyModel(train_member(data.images, data.masks, cfg, seed, arch, dropout));
        },
        py::arg("images"), py::arg("masks"), py::arg("epochs") = 70, py::arg("batch_size") = 4,
        py::arg("lr") = 1e-4, py::arg("weight_decay") = 1e-5, py::arg("eta_min") = 0.0,
        py::arg("seed") = 0, py::arg("base_channels") = 4, py::arg("dropout") = 0.1);

    m.def(
        "distill",
        [](const std::vector<DArray>& images, const std::vector<U8Array>& masks,
           const std::vector<PyModel>& teachers, const std::string& mode, double temperature,
           double task_weight, int epochs, int batch_size, double lr, double weight_decay,
           double eta_min, std::uint64_t seed, int base_channels, double dropout) {
            LoadedDataset data = dataset_from_lists(images, masks, "distill");
            EnsembleModel ens;
            for (const PyModel& t : teachers) ens.members.push_back(*t.net);
            DistillConfig dcfg;
            if (mode == "kl") dcfg.mode = DistillMode::kl;
            else if (mode == "crd") dcfg.mode = DistillMode::crd;
            else if (mode == "kl_crd") dcfg.mode = DistillMode::kl_crd;
            else throw ConfigError("distill: mode must be kl, crd or kl_crd");
            dcfg.temperature = temperature;
            dcfg.task_loss_weight = task_weight;
            TrainConfig tcfg = make_train_config(epochs, batch_size, lr, weight_decay, eta_min, seed);
            ArchConfig arch{1, base_channels};
            return PyModel(
                distill_train(data.images, data.masks, ens, dcfg, tcfg, arch, dropout));
        },
        py::arg("images"), py::arg("masks"), py::arg("teachers"), py::arg("mode") = "kl",
        py::arg("temperature") = 0.07, py::arg("task_weight") = 1.0, py::arg("epochs") = 70,
        py::arg("batch_size") = 4, py::arg("lr") = 1e-4, py::arg("weight_decay") = 1e-5,
        py::arg("eta_min") = 0.0, py::arg("seed") = 0, py::arg("base_channels") = 4,
        py::arg("dropout") = 0.0);

    m.def(
        "ensemble_predict",
        [](const std::vector<PyModel>& members, const DArray& image) {
            EnsembleModel ens;
            for (const PyModel& t : members) ens.members.push_back(*t.net);
            EnsemblePrediction pred = ensemble_predict(ens, tensor_from_array(image, "ensemble_predict"));
            std::vector<py::array_t<double>> outs;
            for (const ProbMap& p : pred.members) outs.push_back(array_from_prob(p));
            return py::make_tuple(array_from_prob(pred.mean), outs);
        },
        py::arg("members"), py::arg("image"), "Returns (mean, member_maps).");

    m.def(
        "entropy",
        [](const DArray& p) {
            UncertaintyMap u = predictive_entropy(prob_from_array(p, "entropy"));
            return array_from_values(u.h, u.w, u.values);
        },
        py::arg("p"));
    m.def(
        "variance",
        [](const std::vector<DArray>& members) {
            UncertaintyMap u = member_variance(probs_from_list(members, "variance"));
            return array_from_values(u.h, u.w, u.values);
        },
        py::arg("members"));
    m.def(
        "mutual_information",
        [](const DArray& mean, const std::vector<DArray>& members) {
            UncertaintyMap u = mutual_information(prob_from_array(mean, "mutual_information"),
                                                  probs_from_list(members, "mutual_information"));
            return array_from_values(u.h, u.w, u.values);
        },
        py::arg("mean"), py::arg("members"));

    m.def(
        "dice",
        [](const U8Array& pred, const U8Array& gt) {
            return dice(mask_from_array(pred, "dice"), mask_from_array(gt, "dice"));
        },
        py::arg("pred"), py::arg("gt"));
    m.def(
        "mcc",
        [](const U8Array& pred, const U8Array& gt) {
            return mcc(confusion(mask_from_array(pred, "mcc"), mask_from_array(gt, "mcc")));
        },
        py::arg("pred"), py::arg("gt"));
    m.def(
        "binarize",
        [](const DArray& p, double threshold) {
            Mask mk = binarize(prob_from_array(p, "binarize"), threshold);
            py::array_t<std::uint8_t> a({mk.h, mk.w});
            std::memcpy(a.mutable_data(), mk.v.data(), mk.v.size());
            return a;
        },
        py::arg("p"), py::arg("threshold") = 0.5);
    m.def(
        "ece",
        [](const DArray& p, const U8Array& gt, int bins) {
            auto [value, table] = ece(prob_from_array(p, "ece"), mask_from_array(gt, "ece"), bins);
            return py::make_tuple(value, reliability_array(table));
        },
        py::arg("p"), py::arg("gt"), py::arg("bins") = kDefaultBins,
        "Returns (ece, bins array with columns lo, hi, mean_conf, accuracy, count).");
    m.def(
        "brier",
        [](const DArray& p, const U8Array& gt) {
            return brier(prob_from_array(p, "brier"), mask_from_array(gt, "brier"));
        },
        py::arg("p"), py::arg("gt"));
    m.def(
        "nll",
        [](const DArray& p, const U8Array& gt) {
            return nll(prob_from_array(p, "nll"), mask_from_array(gt, "nll"));
        },
        py::arg("p"), py::arg("gt"));

    m.def(
        "evaluate",
        [](const std::vector<DArray>& preds, const std::vector<U8Array>& gts, int bins) {
            std::vector<ProbMap> probs = probs_from_list(preds, "evaluate");
            std::vector<Mask> masks;
            for (const U8Array& a : gts) masks.push_back(mask_from_array(a, "evaluate"));
            CalibrationReport rep = evaluate(probs, masks, bins);
            py::dict out;
            out["dsc"] = rep.dsc;
            out["mcc"] = rep.mcc;
            out["ece"] = rep.ece;
            out["brier"] = rep.brier;
            out["nll"] = rep.nll;
            out["reliability"] = reliability_array(rep.reliability);
            const int n = static_cast<int>(rep.per_image.size());
            py::array_t<double> per({n, 5});
            auto view = per.mutable_unchecked<2>();
            for (int i = 0; i < n; ++i) {
                const ImageMetrics& im = rep.per_image[static_cast<std::size_t>(i)];
                view(i, 0) = im.dsc;
                view(i, 1) = im.mcc;
                view(i, 2) = im.ece;
                view(i, 3) = im.brier;
                view(i, 4) = im.nll;
            }
            out["per_image"] = per;
            return out;
        },
        py::arg("preds"), py::arg("gts"), py::arg("bins") = kDefaultBins);

    m.def(
        "kl_divergence",
        [](const DArray& p, const DArray& q) {
            return kl_divergence(prob_from_array(p, "kl_divergence"),
                                 prob_from_array(q, "kl_divergence"));
        },
        py::arg("p"), py::arg("q"));
    m.def(
        "crd_loss",
        [](const DArray& student, const DArray& teacher, double temperature) {
            return crd_loss(reps_from_array(student, "crd_loss"),
                            reps_from_array(teacher, "crd_loss"), temperature)
                .item();
        },
        py::arg("student"), py::arg("teacher"), py::arg("temperature") = 0.07);
}
