#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "biasfix/dataset.hpp"
#include "biasfix/errors.hpp"
#include "biasfix/eval.hpp"
#include "biasfix/finetune.hpp"
#include "biasfix/influence.hpp"
#include "biasfix/mlp.hpp"
#include "biasfix/selection.hpp"

namespace py = pybind11;
using namespace biasfix;

namespace {

std::vector<int> full_dims(const datagen::BiasedDataset& ds, const std::vector<int>& hidden) {
    std::vector<int> dims{ds.feature_dim};
    dims.insert(dims.end(), hidden.begin(), hidden.end());
    dims.push_back(ds.num_classes);
    return dims;
}

nn::LossSpec loss_from(const std::string& name, double q) {
    if (name == "ce") return nn::LossSpec::ce();
    if (name == "gce") return nn::LossSpec::gce(q);
    throw std::invalid_argument("loss: expected 'ce' or 'gce', got '" + name + "'");
}

nn::Group group_from(const std::string& name) {
    if (name == "all") return nn::Group::All;
    if (name == "aligned") return nn::Group::Aligned;
    if (name == "conflicting") return nn::Group::Conflicting;
    throw std::invalid_argument("group: expected all/aligned/conflicting, got '" + name + "'");
}

std::vector<std::pair<std::uint64_t, double>> as_pairs(
    const std::vector<influence::InfluenceRecord>& records) {
    std::vector<std::pair<std::uint64_t, double>> out;
    out.reserve(records.size());
    for (const auto& r : records) out.emplace_back(r.sample_id, r.score);
    return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "bias-conflicting sample detection and counterweight fine-tuning";

    py::register_exception<ConfigError>(m, "ConfigError");
    py::register_exception<MissingArtifactError>(m, "MissingArtifactError");
    py::register_exception<NumericalError>(m, "NumericalError");
    py::register_exception<FormatError>(m, "FormatError");

    py::class_<datagen::GenConfig>(m, "GenConfig")
        .def(py::init<>())
        .def_readwrite("n_per_class", &datagen::GenConfig::n_per_class)
        .def_readwrite("num_classes", &datagen::GenConfig::num_classes)
        .def_readwrite("d_signal", &datagen::GenConfig::d_signal)
        .def_readwrite("d_bias", &datagen::GenConfig::d_bias)
        .def_readwrite("signal_margin", &datagen::GenConfig::signal_margin)
        .def_readwrite("bias_margin", &datagen::GenConfig::bias_margin)
        .def_readwrite("noise_sigma", &datagen::GenConfig::noise_sigma)
        .def_readwrite("conflict_ratio", &datagen::GenConfig::conflict_ratio)
        .def_readwrite("seed", &datagen::GenConfig::seed)
        .def_property_readonly("feature_dim", &datagen::GenConfig::feature_dim);

    py::class_<datagen::BiasedDataset>(m, "Dataset")
        .def("__len__", &datagen::BiasedDataset::size)
        .def_readonly("num_classes", &datagen::BiasedDataset::num_classes)
        .def_readonly("feature_dim", &datagen::BiasedDataset::feature_dim)
        .def_readonly("conflict_ratio", &datagen::BiasedDataset::conflict_ratio)
        .def("empirical_conflict_fraction", &datagen::BiasedDataset::empirical_conflict_fraction)
        .def("ids",
             [](const datagen::BiasedDataset& ds) {
                 std::vector<std::uint64_t> out;
                 for (const auto& s : ds.samples) out.push_back(s.id);
                 return out;
             })
        .def("labels",
             [](const datagen::BiasedDataset& ds) {
                 std::vector<int> out;
                 for (const auto& s : ds.samples) out.push_back(s.label);
                 return out;
             })
        .def("bias_attrs",
             [](const datagen::BiasedDataset& ds) {
                 std::vector<int> out;
                 for (const auto& s : ds.samples) out.push_back(s.bias_attr);
                 return out;
             })
        .def("features",
             [](const datagen::BiasedDataset& ds, std::size_t i) {
                 return ds.samples.at(i).features;
             },
             py::arg("index"));

    m.def("generate_synthetic", &datagen::generate_synthetic, py::arg("config"));
    m.def("generate_unbiased_test", &datagen::generate_unbiased_test, py::arg("config"),
          py::arg("n_per_class"));
    m.def("load_idx_with_color_bias",
          [](const std::string& images, const std::string& labels, double r, std::uint64_t seed) {
              return datagen::load_idx_with_color_bias(images, labels, r, seed);
          },
          py::arg("images"), py::arg("labels"), py::arg("conflict_ratio"), py::arg("seed"));
    m.def("save_dataset", &datagen::save_dataset, py::arg("dataset"), py::arg("path"));
    m.def("load_dataset", &datagen::load_dataset, py::arg("path"));

    py::class_<nn::MlpParams>(m, "Mlp").def_property_readonly("dims", &nn::MlpParams::dims);

    m.def("train_mlp",
          [](const datagen::BiasedDataset& ds, const std::vector<int>& hidden_dims,
             const std::string& loss, double q, int epochs, double lr, int batch_size,
             std::uint64_t seed, double weight_decay) {
              nn::TrainConfig tc;
              tc.loss = loss_from(loss, q);
              tc.epochs = epochs;
              tc.lr = lr;
              tc.batch_size = batch_size;
              tc.seed = seed;
              tc.weight_decay = weight_decay;
              auto [params, hist] = nn::train(nn::init_mlp(full_dims(ds, hidden_dims), seed), ds, tc);
              py::dict history;
              history["mean_loss"] = hist.mean_loss;
              history["aligned_accuracy"] = hist.aligned_accuracy;
              history["conflicting_accuracy"] = hist.conflicting_accuracy;
              return py::make_tuple(params, history);
          },
          py::arg("dataset"), py::arg("hidden_dims") = std::vector<int>{100, 100},
          py::arg("loss") = "ce", py::arg("q") = 0.7, py::arg("epochs") = 5, py::arg("lr") = 1e-3,
          py::arg("batch_size") = 32, py::arg("seed") = 0, py::arg("weight_decay") = 0.0);

    m.def("accuracy",
          [](const nn::MlpParams& params, const datagen::BiasedDataset& ds,
             const std::string& group) { return nn::accuracy(params, ds, group_from(group)); },
          py::arg("model"), py::arg("dataset"), py::arg("group") = "all");

    m.def("evaluate",
          [](const nn::MlpParams& params, const datagen::BiasedDataset& ds) {
              const auto report = eval::evaluate_model(params, ds);
              py::dict out;
              out["unbiased_acc"] = report.unbiased_acc;
              out["aligned_acc"] = report.aligned_acc;
              out["conflicting_acc"] = report.conflicting_acc;
              out["worst_group_acc"] = report.worst_group_acc;
              out["group_acc"] = report.group_acc;
              return out;
          },
          py::arg("model"), py::arg("dataset"));

    m.def("save_checkpoint", &nn::save_checkpoint, py::arg("model"), py::arg("path"));
    m.def("load_checkpoint", &nn::load_checkpoint, py::arg("path"));

    m.def("bcsi_scores",
          [](const datagen::BiasedDataset& ds, const std::vector<int>& hidden_dims, int t_epochs,
             double q, double lr, int batch_size, double damping, std::uint64_t seed) {
              influence::BcsiConfig cfg{t_epochs, q, lr, batch_size, damping, seed};
              return as_pairs(influence::bcsi_scores(ds, full_dims(ds, hidden_dims), cfg));
          },
          py::arg("dataset"), py::arg("hidden_dims") = std::vector<int>{100, 100},
          py::arg("t_epochs") = 5, py::arg("q") = 0.7, py::arg("lr") = 1e-3,
          py::arg("batch_size") = 32, py::arg("damping") = 1e-3, py::arg("seed") = 0);

    m.def("si_scores",
          [](const datagen::BiasedDataset& ds, const std::vector<int>& hidden_dims, int epochs,
             double lr, int batch_size, double damping, std::uint64_t seed) {
              influence::SiConfig cfg{epochs, lr, batch_size, damping, seed};
              return as_pairs(influence::si_scores(ds, full_dims(ds, hidden_dims), cfg));
          },
          py::arg("dataset"), py::arg("hidden_dims") = std::vector<int>{100, 100},
          py::arg("epochs") = 100, py::arg("lr") = 1e-3, py::arg("batch_size") = 32,
          py::arg("damping") = 1e-3, py::arg("seed") = 0);

    py::class_<selection::PivotalSet>(m, "PivotalSet")
        .def_readonly("per_run", &selection::PivotalSet::per_run)
        .def_readonly("intersection", &selection::PivotalSet::intersection)
        .def_readonly("k", &selection::PivotalSet::k)
        .def_readonly("num_runs", &selection::PivotalSet::num_runs)
        .def_readonly("seeds", &selection::PivotalSet::seeds)
        .def_readonly("warning", &selection::PivotalSet::warning)
        .def("run_union", &selection::PivotalSet::run_union, py::arg("run"));

    m.def("build_pivotal",
          [](const datagen::BiasedDataset& ds, const std::vector<int>& hidden_dims, int k,
             int num_runs, const std::vector<std::uint64_t>& seeds, int t_epochs, double q,
             double lr, int batch_size, double damping, int jobs) {
              influence::BcsiConfig cfg{t_epochs, q, lr, batch_size, damping, 0};
              return selection::build_pivotal(ds, full_dims(ds, hidden_dims), cfg, k, num_runs,
                                              seeds, jobs);
          },
          py::arg("dataset"), py::arg("hidden_dims") = std::vector<int>{100, 100},
          py::arg("k") = 100, py::arg("num_runs") = 3,
          py::arg("seeds") = std::vector<std::uint64_t>{1, 2, 3}, py::arg("t_epochs") = 5,
          py::arg("q") = 0.7, py::arg("lr") = 1e-3, py::arg("batch_size") = 32,
          py::arg("damping") = 1e-3, py::arg("jobs") = 1);

    m.def("detection_precision",
          [](const std::vector<std::uint64_t>& ids, const datagen::BiasedDataset& ds,
             const std::string& denominator) {
              selection::PrecisionDenominator d;
              if (denominator == "selected_size")
                  d = selection::PrecisionDenominator::SelectedSize;
              else if (denominator == "ground_truth_count")
                  d = selection::PrecisionDenominator::GroundTruthCount;
              else
                  throw std::invalid_argument(
                      "denominator: expected selected_size or ground_truth_count, got '" +
                      denominator + "'");
              return selection::detection_precision(ids, ds, d);
          },
          py::arg("selected_ids"), py::arg("dataset"), py::arg("denominator") = "selected_size");

    m.def("finetune",
          [](const nn::MlpParams& params, const datagen::BiasedDataset& ds,
             const selection::PivotalSet& pivotal, double lam, int n_iter, double lr,
             double lr_final_factor, double weight_decay, bool reinit_last_layer,
             std::uint64_t seed) {
              finetune::FineTuneConfig cfg;
              cfg.lambda = lam;
              cfg.n_iter = n_iter;
              cfg.lr = lr;
              cfg.lr_final_factor = lr_final_factor;
              cfg.weight_decay = weight_decay;
              cfg.reinit_last_layer = reinit_last_layer;
              cfg.seed = seed;
              auto result = finetune::finetune(params, ds, pivotal, cfg);
              py::list trace;
              for (const auto& row : result.trace)
                  trace.append(py::make_tuple(row.iter, row.lr, row.loss_pivotal,
                                              row.loss_remain, row.loss_total));
              return py::make_tuple(result.params, trace, result.warning);
          },
          py::arg("model"), py::arg("dataset"), py::arg("pivotal"), py::arg("lambda_") = 0.1,
          py::arg("n_iter") = 100, py::arg("lr") = 1e-3, py::arg("lr_final_factor") = 1e-3,
          py::arg("weight_decay") = 1e-4, py::arg("reinit_last_layer") = true,
          py::arg("seed") = 0);
}
