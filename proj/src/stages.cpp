#include "biasfix/stages.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <stdexcept>

#include "biasfix/errors.hpp"
#include "biasfix/eval.hpp"
#include "biasfix/finetune.hpp"
#include "biasfix/influence.hpp"
#include "biasfix/selection.hpp"
#include "biasfix/util.hpp"

namespace fs = std::filesystem;

namespace biasfix::stages {

namespace {

// Maps thrown errors to the pinned exit codes (2 missing artifact, 3 config,
// 4 numerical); FormatError counts as a broken artifact.
int guarded(const std::function<int()>& body) {
    try {
        return body();
    } catch (const MissingArtifactError& e) {
        log_error(e.what());
        return 2;
    } catch (const FormatError& e) {
        log_error(e.what());
        return 2;
    } catch (const ConfigError& e) {
        log_error(e.what());
        return 3;
    } catch (const std::invalid_argument& e) {
        log_error(e.what());
        return 3;
    } catch (const NumericalError& e) {
        log_error(e.what());
        return 4;
    }
}

// The expected artifact for the current hash, or (with --force) any artifact
// of the same stage/extension already in the output directory.
std::string find_artifact(const config::PipelineConfig& cfg, const std::string& stage,
                          const std::string& ext, bool force) {
    const std::string expected = artifact_path(cfg, stage, ext);
    if (fs::exists(expected)) return expected;
    if (force && fs::is_directory(cfg.out_dir)) {
        std::vector<std::string> candidates;
        for (const auto& entry : fs::directory_iterator(cfg.out_dir)) {
            const std::string name = entry.path().filename().string();
            if (name.starts_with(stage + ".") && name.ends_with("." + ext))
                candidates.push_back(entry.path().string());
        }
        if (!candidates.empty()) {
            std::sort(candidates.begin(), candidates.end());
            log_info("force: using fallback artifact " + candidates.front());
            return candidates.front();
        }
    }
    throw MissingArtifactError(expected);
}

std::vector<int> dims_for(const config::PipelineConfig& cfg, const datagen::BiasedDataset& ds) {
    std::vector<int> dims;
    dims.push_back(ds.feature_dim);
    dims.insert(dims.end(), cfg.hidden_dims.begin(), cfg.hidden_dims.end());
    dims.push_back(ds.num_classes);
    return dims;
}

datagen::BiasedDataset load_train(const config::PipelineConfig& cfg, const Options& opt) {
    return datagen::load_dataset(find_artifact(cfg, "train_data", "bfds", opt.force));
}

nn::MlpParams trained_ce_model(const datagen::BiasedDataset& ds, const std::vector<int>& dims,
                               int epochs, double lr, int batch_size, std::uint64_t seed) {
    nn::TrainConfig tc;
    tc.loss = nn::LossSpec::ce();
    tc.epochs = epochs;
    tc.lr = lr;
    tc.batch_size = batch_size;
    tc.seed = seed;
    return nn::train(nn::init_mlp(dims, seed), ds, tc).first;
}

}  // namespace

config::PipelineConfig resolve_config(const Options& opt) {
    config::PipelineConfig cfg;
    if (!opt.config_path.empty()) {
        cfg = config::load_pipeline_config_file(opt.config_path);
    } else {
        cfg.validate();
    }
    if (!opt.out_dir.empty()) cfg.out_dir = opt.out_dir;
    if (opt.has_seed) config::apply_seed_override(cfg, opt.seed);
    return cfg;
}

std::string artifact_path(const config::PipelineConfig& cfg, const std::string& stage,
                          const std::string& ext) {
    return cfg.out_dir + "/" + stage + "." + cfg.hash8() + "." + ext;
}

int cmd_gen(const Options& opt) {
    return guarded([&] {
        const auto cfg = resolve_config(opt);
        fs::create_directories(cfg.out_dir);
        datagen::BiasedDataset train;
        if (cfg.data_source == "idx") {
            train = datagen::load_idx_with_color_bias(cfg.idx_images, cfg.idx_labels,
                                                      cfg.gen.conflict_ratio, cfg.gen.seed,
                                                      datagen::Split::Train);
        } else {
            train = datagen::generate_synthetic(cfg.gen);
        }
        datagen::save_dataset(train, artifact_path(cfg, "train_data", "bfds"));
        log_info("gen: train n=" + std::to_string(train.size()) +
                 " conflicting=" + g17(train.empirical_conflict_fraction()));

        if (cfg.data_source == "idx") {
            if (!cfg.idx_test_images.empty() && !cfg.idx_test_labels.empty()) {
                // bias attribute uniform over all classes: r = (C-1)/C
                const int c = train.num_classes;
                auto test = datagen::load_idx_with_color_bias(
                    cfg.idx_test_images, cfg.idx_test_labels, double(c - 1) / c,
                    cfg.gen.seed + 0x7e57ULL, datagen::Split::Test);
                datagen::save_dataset(test, artifact_path(cfg, "test_data", "bfds"));
            }
        } else {
            auto test = datagen::generate_unbiased_test(cfg.gen, cfg.test_per_class);
            datagen::save_dataset(test, artifact_path(cfg, "test_data", "bfds"));
        }
        return 0;
    });
}

int cmd_train(const Options& opt) {
    return guarded([&] {
        const auto cfg = resolve_config(opt);
        const auto ds = load_train(cfg, opt);
        const auto dims = dims_for(cfg, ds);
        auto [params, history] = nn::train(nn::init_mlp(dims, cfg.erm.seed), ds, cfg.erm);
        nn::save_checkpoint(params, artifact_path(cfg, "erm", "bfmp"));
        log_info("train: final mean loss " + g17(history.mean_loss.back()));
        return 0;
    });
}

int cmd_score(const Options& opt) {
    return guarded([&] {
        const auto cfg = resolve_config(opt);
        const auto ds = load_train(cfg, opt);
        const auto dims = dims_for(cfg, ds);
        const auto method = influence::method_from_name(cfg.score_method);
        std::vector<influence::InfluenceRecord> records;
        switch (method) {
            case influence::ScoreMethod::Bcsi:
                records = influence::bcsi_scores(ds, dims, cfg.bcsi);
                break;
            case influence::ScoreMethod::SelfInfluence:
                records = influence::si_scores(ds, dims, cfg.si);
                break;
            case influence::ScoreMethod::IfTrain: {
                const auto params = trained_ce_model(ds, dims, cfg.si.epochs, cfg.si.lr,
                                                     cfg.si.batch_size, cfg.si.seed);
                auto hessian = influence::assemble_hessian(params, ds, nn::LossSpec::ce(), 0.0);
                hessian = influence::add_damping(
                    hessian, influence::relative_damping(hessian, cfg.si.damping));
                records = influence::if_train_scores(params, hessian, ds, nn::LossSpec::ce(),
                                                     cfg.si.seed, cfg.si.epochs);
                break;
            }
            case influence::ScoreMethod::Loss:
            case influence::ScoreMethod::GradNorm: {
                const auto params =
                    nn::load_checkpoint(find_artifact(cfg, "erm", "bfmp", opt.force));
                records = method == influence::ScoreMethod::Loss
                              ? influence::loss_scores(params, ds, cfg.erm.seed, cfg.erm.epochs)
                              : influence::gradnorm_scores(params, ds, cfg.erm.seed,
                                                           cfg.erm.epochs);
                break;
            }
        }
        influence::write_scores_csv(records,
                                    artifact_path(cfg, "scores_" + cfg.score_method, "csv"));
        return 0;
    });
}

int cmd_pivotal(const Options& opt) {
    return guarded([&] {
        const auto cfg = resolve_config(opt);
        const auto ds = load_train(cfg, opt);
        const auto dims = dims_for(cfg, ds);
        const auto set = selection::build_pivotal(ds, dims, cfg.bcsi, cfg.k, cfg.num_runs,
                                                  cfg.run_seeds, opt.jobs);
        selection::save_pivotal_json(set, artifact_path(cfg, "pivotal", "json"), &ds,
                                     cfg.hash8());
        log_info("pivotal: |Z_P|=" + std::to_string(set.intersection.size()) + " precision=" +
                 g17(selection::detection_precision(set.intersection, ds)));
        return 0;
    });
}

int cmd_finetune(const Options& opt) {
    return guarded([&] {
        const auto cfg = resolve_config(opt);
        const auto ds = load_train(cfg, opt);
        const auto params = nn::load_checkpoint(find_artifact(cfg, "erm", "bfmp", opt.force));
        const auto set = selection::load_pivotal_json(find_artifact(cfg, "pivotal", "json", opt.force));
        const auto result = finetune::finetune(params, ds, set, cfg.ft);
        if (!result.warning.empty()) log_info("finetune: " + result.warning);
        nn::save_checkpoint(result.params, artifact_path(cfg, "finetuned", "bfmp"));
        finetune::write_trace_csv(result.trace, artifact_path(cfg, "finetune_trace", "csv"));
        return 0;
    });
}

int cmd_eval(const Options& opt) {
    return guarded([&] {
        const auto cfg = resolve_config(opt);
        const auto train_ds = load_train(cfg, opt);
        const auto test_ds =
            datagen::load_dataset(find_artifact(cfg, "test_data", "bfds", opt.force));
        const auto erm_params = nn::load_checkpoint(find_artifact(cfg, "erm", "bfmp", opt.force));
        const auto ft_params =
            nn::load_checkpoint(find_artifact(cfg, "finetuned", "bfmp", opt.force));

        eval::FullReport report;
        report.meta.dataset = cfg.data_source == "idx" ? "cmnist" : "synthetic";
        report.meta.conflict_ratio = cfg.gen.conflict_ratio;
        report.meta.seeds = cfg.eval_seeds;
        report.meta.config_hash = cfg.hash8();
        report.erm = eval::evaluate_model(erm_params, test_ds);
        report.finetuned = eval::evaluate_model(ft_params, test_ds);

        if (cfg.compare_methods) {
            eval::CompareConfig cc;
            cc.seeds = cfg.eval_seeds;
            cc.bcsi = cfg.bcsi;
            cc.si = cfg.si;
            cc.jobs = opt.jobs;
            report.precision = eval::compare_detectors(train_ds, dims_for(cfg, train_ds), cc);
        }
        if (!cfg.sweep_r.empty()) {
            eval::SweepConfig sc;
            sc.gen = cfg.gen;
            sc.hidden_dims = cfg.hidden_dims;
            sc.erm = cfg.erm;
            sc.bcsi = cfg.bcsi;
            sc.k = cfg.k;
            sc.num_runs = cfg.num_runs;
            sc.ft = cfg.ft;
            sc.seeds = cfg.eval_seeds;
            sc.test_per_class = cfg.test_per_class;
            sc.jobs = opt.jobs;
            report.sweep = eval::bias_ratio_sweep(cfg.sweep_r, sc);
            eval::write_sweep_csv(report.sweep, artifact_path(cfg, "sweep", "csv"));
        }
        eval::write_report_json(report, artifact_path(cfg, "report", "json"));
        log_info("eval: erm unbiased acc " + g17(report.erm.unbiased_acc) + ", finetuned " +
                 g17(report.finetuned.unbiased_acc));
        return 0;
    });
}

int cmd_pipeline(const Options& opt) {
    for (auto stage : {cmd_gen, cmd_train, cmd_pivotal, cmd_finetune, cmd_eval}) {
        const int rc = stage(opt);
        if (rc != 0) return rc;
    }
    return guarded([&] {
        const auto cfg = resolve_config(opt);
        const auto train_ds = load_train(cfg, opt);
        const auto test_ds =
            datagen::load_dataset(find_artifact(cfg, "test_data", "bfds", opt.force));
        const auto erm_params = nn::load_checkpoint(find_artifact(cfg, "erm", "bfmp", opt.force));
        const auto ft_params =
            nn::load_checkpoint(find_artifact(cfg, "finetuned", "bfmp", opt.force));
        const auto set =
            selection::load_pivotal_json(find_artifact(cfg, "pivotal", "json", opt.force));

        const double erm_acc = nn::accuracy(erm_params, test_ds);
        const double ft_acc = nn::accuracy(ft_params, test_ds);
        const double precision = selection::detection_precision(set.intersection, train_ds);
        std::printf("pipeline summary\n");
        std::printf("  erm unbiased accuracy        %.4f\n", erm_acc);
        std::printf("  finetuned unbiased accuracy  %.4f\n", ft_acc);
        std::printf("  pivotal precision            %.4f\n", precision);
        std::printf("  pivotal size                 %zu\n", set.intersection.size());
        return 0;
    });
}

}  // namespace biasfix::stages
