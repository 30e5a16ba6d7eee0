#include <CLI11.hpp>
#include <map>

#include "biasfix/stages.hpp"

int main(int argc, char** argv) {
    using biasfix::stages::Options;
    CLI::App app{"bias-conflicting sample detection and counterweight fine-tuning"};
    app.require_subcommand(1);

    Options opt;
    std::uint64_t seed = 0;
    const std::pair<const char*, const char*> stage_help[] = {
        {"gen", "generate the biased train set and the unbiased test set"},
        {"train", "train the ERM classifier on the generated data"},
        {"score", "score every training sample with the configured method"},
        {"pivotal", "multi-run per-class top-k scoring and intersection"},
        {"finetune", "counterweight fine-tuning on the pivotal set"},
        {"eval", "accuracy report, optional detector comparison and ratio sweep"},
        {"pipeline", "gen, train, pivotal, finetune, eval, then a summary table"},
    };
    std::map<std::string, int (*)(const Options&)> dispatch = {
        {"gen", biasfix::stages::cmd_gen},         {"train", biasfix::stages::cmd_train},
        {"score", biasfix::stages::cmd_score},     {"pivotal", biasfix::stages::cmd_pivotal},
        {"finetune", biasfix::stages::cmd_finetune}, {"eval", biasfix::stages::cmd_eval},
        {"pipeline", biasfix::stages::cmd_pipeline},
    };
    std::map<std::string, CLI::Option*> seed_opts;
    for (const auto& [name, help] : stage_help) {
        auto* sub = app.add_subcommand(name, help);
        sub->add_option("--config", opt.config_path, "key = value config file");
        sub->add_option("--out", opt.out_dir, "output directory (overrides the config)");
        seed_opts[name] = sub->add_option("--seed", seed, "re-derive every stage seed from this base");
        sub->add_option("--jobs", opt.jobs, "worker thread cap")->check(CLI::PositiveNumber);
        sub->add_flag("--force", opt.force, "accept artifacts with a different config hash");
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 3;
    }

    const CLI::App* sub = app.get_subcommands().front();
    opt.has_seed = seed_opts.at(sub->get_name())->count() > 0;
    opt.seed = seed;
    return dispatch.at(sub->get_name())(opt);
}
