#include "biasfix/eval.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <functional>
#include <limits>
#include <mutex>
#include <stdexcept>
#include <thread>
#include <unordered_map>

#include "biasfix/errors.hpp"
#include "biasfix/util.hpp"

namespace biasfix::eval {

double mean_of(const std::vector<double>& xs) {
    if (xs.empty()) return 0.0;
    double sum = 0.0;
    for (double x : xs) sum += x;
    return sum / static_cast<double>(xs.size());
}

double std_error_of(const std::vector<double>& xs) {
    if (xs.size() < 2) return 0.0;
    const double m = mean_of(xs);
    double ss = 0.0;
    for (double x : xs) ss += (x - m) * (x - m);
    const double n = static_cast<double>(xs.size());
    return std::sqrt(ss / (n - 1.0)) / std::sqrt(n);
}

EvalReport evaluate_model(const nn::MlpParams& params, const datagen::BiasedDataset& test_ds) {
    if (test_ds.empty()) throw std::invalid_argument("evaluate: empty dataset");
    EvalReport report;
    report.unbiased_acc = nn::accuracy(params, test_ds, nn::Group::All);
    const auto group_acc = [&](nn::Group g) {
        try {
            return nn::accuracy(params, test_ds, g);
        } catch (const std::invalid_argument&) {
            return std::numeric_limits<double>::quiet_NaN();
        }
    };
    report.aligned_acc = group_acc(nn::Group::Aligned);
    report.conflicting_acc = group_acc(nn::Group::Conflicting);
    report.group_acc = nn::per_group_accuracy(params, test_ds);
    report.worst_group_acc = 1.0;
    for (const auto& [key, acc] : report.group_acc)
        report.worst_group_acc = std::min(report.worst_group_acc, acc);
    return report;
}

namespace {

// Runs a list of independent cells on `jobs` workers; any cell exception is
// rethrown after join. Results land in caller-indexed slots, so output is
// identical for any worker count.
void run_cells(int n_cells, int jobs, const std::function<void(int)>& cell) {
    const int workers = std::max(1, std::min(jobs, n_cells));
    if (workers == 1) {
        for (int i = 0; i < n_cells; ++i) cell(i);
        return;
    }
    std::atomic<int> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w)
        pool.emplace_back([&] {
            for (int i = next.fetch_add(1); i < n_cells; i = next.fetch_add(1)) {
                try {
                    cell(i);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(error_mutex);
                    if (!error) error = std::current_exception();
                }
            }
        });
    for (auto& t : pool) t.join();
    if (error) std::rethrow_exception(error);
}

nn::MlpParams ce_model(const datagen::BiasedDataset& ds, const std::vector<int>& dims,
                       const influence::SiConfig& si, int epochs, std::uint64_t seed) {
    nn::TrainConfig tc;
    tc.loss = nn::LossSpec::ce();
    tc.epochs = epochs;
    tc.lr = si.lr;
    tc.batch_size = si.batch_size;
    tc.seed = seed;
    return nn::train(nn::init_mlp(dims, seed), ds, tc).first;
}

double precision_of(const std::vector<influence::InfluenceRecord>& records,
                    const datagen::BiasedDataset& ds) {
    const auto selected = selection::top_by_ground_truth_count(records, ds);
    return selection::detection_precision(selected, ds);
}

MethodPrecision summarize(influence::ScoreMethod method, std::vector<double> per_seed) {
    MethodPrecision mp;
    mp.method = method;
    mp.mean = mean_of(per_seed);
    mp.std_error = std_error_of(per_seed);
    mp.per_seed = std::move(per_seed);
    mp.denominator = selection::PrecisionDenominator::GroundTruthCount;
    return mp;
}

}  // namespace

std::vector<MethodPrecision> compare_detectors(const datagen::BiasedDataset& ds,
                                               const std::vector<int>& dims,
                                               const CompareConfig& cfg) {
    if (cfg.seeds.empty()) throw std::invalid_argument("compare: need at least one seed");
    const int n_seeds = static_cast<int>(cfg.seeds.size());
    constexpr int n_methods = 5;
    std::vector<std::vector<double>> table(n_methods, std::vector<double>(n_seeds));

    run_cells(n_seeds, cfg.jobs, [&](int i) {
        const std::uint64_t seed = cfg.seeds[static_cast<std::size_t>(i)];
        const auto params = ce_model(ds, dims, cfg.si, cfg.si.epochs, seed);
        auto hessian = influence::assemble_hessian(params, ds, nn::LossSpec::ce(), 0.0);
        hessian = influence::add_damping(hessian, influence::relative_damping(hessian, cfg.si.damping));
        table[0][i] = precision_of(influence::loss_scores(params, ds, seed, cfg.si.epochs), ds);
        table[1][i] = precision_of(influence::gradnorm_scores(params, ds, seed, cfg.si.epochs), ds);
        table[2][i] = precision_of(
            influence::self_influence_scores(params, hessian, ds, nn::LossSpec::ce(),
                                             influence::ScoreMethod::SelfInfluence, seed,
                                             cfg.si.epochs),
            ds);
        table[3][i] = precision_of(
            influence::if_train_scores(params, hessian, ds, nn::LossSpec::ce(), seed,
                                       cfg.si.epochs),
            ds);
        influence::BcsiConfig bc = cfg.bcsi;
        bc.seed = seed;
        table[4][i] = precision_of(influence::bcsi_scores(ds, dims, bc), ds);
    });

    return {summarize(influence::ScoreMethod::Loss, table[0]),
            summarize(influence::ScoreMethod::GradNorm, table[1]),
            summarize(influence::ScoreMethod::SelfInfluence, table[2]),
            summarize(influence::ScoreMethod::IfTrain, table[3]),
            summarize(influence::ScoreMethod::Bcsi, table[4])};
}

std::vector<EpochPrecision> precision_vs_epoch(const datagen::BiasedDataset& ds,
                                               const std::vector<int>& dims,
                                               const std::vector<int>& epochs_list,
                                               const CompareConfig& cfg) {
    if (cfg.seeds.empty()) throw std::invalid_argument("compare: need at least one seed");
    const int n_seeds = static_cast<int>(cfg.seeds.size());
    const int n_epochs = static_cast<int>(epochs_list.size());
    std::vector<std::vector<double>> si_table(n_epochs, std::vector<double>(n_seeds));
    std::vector<std::vector<double>> ift_table(n_epochs, std::vector<double>(n_seeds));

    run_cells(n_epochs * n_seeds, cfg.jobs, [&](int cell) {
        const int e = cell / n_seeds;
        const int i = cell % n_seeds;
        const std::uint64_t seed = cfg.seeds[static_cast<std::size_t>(i)];
        const int epochs = epochs_list[static_cast<std::size_t>(e)];
        const auto params = ce_model(ds, dims, cfg.si, epochs, seed);
        auto hessian = influence::assemble_hessian(params, ds, nn::LossSpec::ce(), 0.0);
        hessian = influence::add_damping(hessian, influence::relative_damping(hessian, cfg.si.damping));
        si_table[e][i] = precision_of(
            influence::self_influence_scores(params, hessian, ds, nn::LossSpec::ce(),
                                             influence::ScoreMethod::SelfInfluence, seed, epochs),
            ds);
        ift_table[e][i] = precision_of(
            influence::if_train_scores(params, hessian, ds, nn::LossSpec::ce(), seed, epochs), ds);
    });

    std::vector<EpochPrecision> curve(static_cast<std::size_t>(n_epochs));
    for (int e = 0; e < n_epochs; ++e) {
        curve[static_cast<std::size_t>(e)].epoch = epochs_list[static_cast<std::size_t>(e)];
        curve[static_cast<std::size_t>(e)].si =
            summarize(influence::ScoreMethod::SelfInfluence, si_table[static_cast<std::size_t>(e)]);
        curve[static_cast<std::size_t>(e)].if_train =
            summarize(influence::ScoreMethod::IfTrain, ift_table[static_cast<std::size_t>(e)]);
    }
    return curve;
}

Histogram score_histogram(const std::vector<influence::InfluenceRecord>& records,
                          const datagen::BiasedDataset& ds, int bins) {
    if (records.empty()) throw std::invalid_argument("histogram: no records");
    if (bins < 1) throw std::invalid_argument("histogram: bins must be >= 1");
    std::unordered_map<std::uint64_t, bool> conflicting;
    conflicting.reserve(ds.size());
    for (const auto& s : ds.samples) conflicting[s.id] = s.is_conflicting();

    double lo = records.front().score, hi = records.front().score;
    for (const auto& rec : records) {
        lo = std::min(lo, rec.score);
        hi = std::max(hi, rec.score);
    }
    Histogram hist;
    hist.edges.resize(static_cast<std::size_t>(bins) + 1);
    const double width = (hi - lo) / bins;
    for (int i = 0; i <= bins; ++i) hist.edges[static_cast<std::size_t>(i)] = lo + width * i;
    hist.edges.back() = hi;
    hist.aligned.assign(static_cast<std::size_t>(bins), 0);
    hist.conflicting.assign(static_cast<std::size_t>(bins), 0);
    for (const auto& rec : records) {
        const auto it = conflicting.find(rec.sample_id);
        if (it == conflicting.end())
            throw std::invalid_argument("histogram: unknown sample id " +
                                        std::to_string(rec.sample_id));
        int bin = width > 0.0 ? static_cast<int>((rec.score - lo) / width) : 0;
        bin = std::clamp(bin, 0, bins - 1);
        if (it->second)
            ++hist.conflicting[static_cast<std::size_t>(bin)];
        else
            ++hist.aligned[static_cast<std::size_t>(bin)];
    }
    return hist;
}

void write_histogram_csv(const Histogram& hist, std::ostream& out) {
    out << "bin_lo,bin_hi,aligned_count,conflicting_count\n";
    for (std::size_t i = 0; i + 1 < hist.edges.size(); ++i)
        out << g17(hist.edges[i]) << ',' << g17(hist.edges[i + 1]) << ',' << hist.aligned[i] << ','
            << hist.conflicting[i] << '\n';
}

void write_histogram_csv(const Histogram& hist, const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open for write: " + path);
    write_histogram_csv(hist, out);
    if (!out) throw std::runtime_error("write failed: " + path);
}

namespace {

struct SweepCell {
    double erm_acc = 0.0;
    double ft_acc = 0.0;
    double precision = 0.0;
    double size = 0.0;
};

std::vector<std::uint64_t> derived_run_seeds(std::uint64_t seed, int num_runs) {
    std::vector<std::uint64_t> seeds(static_cast<std::size_t>(num_runs));
    for (int i = 0; i < num_runs; ++i)
        seeds[static_cast<std::size_t>(i)] = seed * 1000 + static_cast<std::uint64_t>(i) + 1;
    return seeds;
}

}  // namespace

std::vector<SweepRow> bias_ratio_sweep(const std::vector<double>& r_list, const SweepConfig& cfg) {
    if (cfg.seeds.empty()) throw std::invalid_argument("sweep: need at least one seed");
    const int n_r = static_cast<int>(r_list.size());
    const int n_seeds = static_cast<int>(cfg.seeds.size());
    std::vector<SweepCell> cells(static_cast<std::size_t>(n_r * n_seeds));

    run_cells(n_r * n_seeds, cfg.jobs, [&](int cell) {
        const int ri = cell / n_seeds;
        const int si = cell % n_seeds;
        const std::uint64_t seed = cfg.seeds[static_cast<std::size_t>(si)];

        datagen::GenConfig gen = cfg.gen;
        gen.conflict_ratio = r_list[static_cast<std::size_t>(ri)];
        gen.seed = seed;
        const auto train_ds = datagen::generate_synthetic(gen);
        const auto test_ds = datagen::generate_unbiased_test(gen, cfg.test_per_class);

        std::vector<int> dims;
        dims.push_back(gen.feature_dim());
        dims.insert(dims.end(), cfg.hidden_dims.begin(), cfg.hidden_dims.end());
        dims.push_back(gen.num_classes);

        nn::TrainConfig erm = cfg.erm;
        erm.loss = nn::LossSpec::ce();
        erm.seed = seed;
        const auto erm_params = nn::train(nn::init_mlp(dims, seed), train_ds, erm).first;

        SweepCell& out = cells[static_cast<std::size_t>(cell)];
        out.erm_acc = nn::accuracy(erm_params, test_ds);

        const auto pivotal =
            selection::build_pivotal(train_ds, dims, cfg.bcsi, cfg.k, cfg.num_runs,
                                     derived_run_seeds(seed, cfg.num_runs), 1);
        if (pivotal.intersection.empty()) {
            log_info("sweep: empty pivotal set at r=" + g17(gen.conflict_ratio) +
                     ", seed=" + std::to_string(seed) + "; keeping the ERM model");
            out.ft_acc = out.erm_acc;
            out.precision = 0.0;
            out.size = 0.0;
            return;
        }
        out.precision = selection::detection_precision(pivotal.intersection, train_ds);
        out.size = static_cast<double>(pivotal.intersection.size());

        finetune::FineTuneConfig ft = cfg.ft;
        ft.seed = seed;
        const auto result = finetune::finetune(erm_params, train_ds, pivotal, ft);
        out.ft_acc = nn::accuracy(result.params, test_ds);
    });

    std::vector<SweepRow> rows(static_cast<std::size_t>(n_r));
    for (int ri = 0; ri < n_r; ++ri) {
        std::vector<double> erm_accs, ft_accs, precisions, sizes;
        for (int si = 0; si < n_seeds; ++si) {
            const auto& cell = cells[static_cast<std::size_t>(ri * n_seeds + si)];
            erm_accs.push_back(cell.erm_acc);
            ft_accs.push_back(cell.ft_acc);
            precisions.push_back(cell.precision);
            sizes.push_back(cell.size);
        }
        SweepRow& row = rows[static_cast<std::size_t>(ri)];
        row.r = r_list[static_cast<std::size_t>(ri)];
        row.erm_mean = mean_of(erm_accs);
        row.erm_std_error = std_error_of(erm_accs);
        row.finetuned_mean = mean_of(ft_accs);
        row.finetuned_std_error = std_error_of(ft_accs);
        row.pivotal_precision_mean = mean_of(precisions);
        row.pivotal_size_mean = mean_of(sizes);
    }
    return rows;
}

void write_sweep_csv(const std::vector<SweepRow>& rows, std::ostream& out) {
    out << "r,erm_mean,erm_std_error,finetuned_mean,finetuned_std_error,"
           "pivotal_precision_mean,pivotal_size_mean\n";
    for (const auto& row : rows)
        out << g17(row.r) << ',' << g17(row.erm_mean) << ',' << g17(row.erm_std_error) << ','
            << g17(row.finetuned_mean) << ',' << g17(row.finetuned_std_error) << ','
            << g17(row.pivotal_precision_mean) << ',' << g17(row.pivotal_size_mean) << '\n';
}

void write_sweep_csv(const std::vector<SweepRow>& rows, const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open for write: " + path);
    write_sweep_csv(rows, out);
    if (!out) throw std::runtime_error("write failed: " + path);
}

namespace {

// JSON number: 17 significant digits; non-finite values become null.
std::string jnum(double v) { return std::isfinite(v) ? g17(v) : "null"; }

void write_accuracies(std::ostream& out, const EvalReport& report, const char* indent) {
    out << "{\n";
    out << indent << "  \"unbiased\": " << jnum(report.unbiased_acc) << ",\n";
    out << indent << "  \"aligned\": " << jnum(report.aligned_acc) << ",\n";
    out << indent << "  \"conflicting\": " << jnum(report.conflicting_acc) << ",\n";
    out << indent << "  \"worst_group\": " << jnum(report.worst_group_acc) << "\n";
    out << indent << "}";
}

void write_groups(std::ostream& out, const EvalReport& report) {
    out << "[";
    bool first = true;
    for (const auto& [key, acc] : report.group_acc) {
        if (!first) out << ", ";
        first = false;
        out << "{\"label\": " << key.first << ", \"bias\": " << key.second
            << ", \"accuracy\": " << jnum(acc) << "}";
    }
    out << "]";
}

}  // namespace

void write_report_json(const FullReport& report, const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open for write: " + path);
    out << "{\n";
    out << "  \"meta\": {\"dataset\": \"" << report.meta.dataset
        << "\", \"conflict_ratio\": " << jnum(report.meta.conflict_ratio) << ", \"seeds\": [";
    for (std::size_t i = 0; i < report.meta.seeds.size(); ++i)
        out << (i ? ", " : "") << report.meta.seeds[i];
    out << "], \"config_hash\": \"" << report.meta.config_hash << "\"},\n";
    out << "  \"accuracies\": {\n    \"erm\": ";
    write_accuracies(out, report.erm, "    ");
    out << ",\n    \"finetuned\": ";
    write_accuracies(out, report.finetuned, "    ");
    out << "\n  },\n";
    out << "  \"groups\": {\n    \"erm\": ";
    write_groups(out, report.erm);
    out << ",\n    \"finetuned\": ";
    write_groups(out, report.finetuned);
    out << "\n  },\n";
    out << "  \"precision\": [";
    for (std::size_t i = 0; i < report.precision.size(); ++i) {
        const auto& mp = report.precision[i];
        out << (i ? ",\n    " : "\n    ");
        out << "{\"method\": \"" << influence::method_name(mp.method) << "\", \"denominator\": \""
            << (mp.denominator == selection::PrecisionDenominator::SelectedSize
                    ? "selected_size"
                    : "ground_truth_count")
            << "\", \"mean\": " << jnum(mp.mean) << ", \"std_error\": " << jnum(mp.std_error)
            << ", \"per_seed\": [";
        for (std::size_t s = 0; s < mp.per_seed.size(); ++s)
            out << (s ? ", " : "") << jnum(mp.per_seed[s]);
        out << "]}";
    }
    out << (report.precision.empty() ? "]" : "\n  ]") << ",\n";
    out << "  \"sweep\": [";
    for (std::size_t i = 0; i < report.sweep.size(); ++i) {
        const auto& row = report.sweep[i];
        out << (i ? ",\n    " : "\n    ");
        out << "{\"r\": " << jnum(row.r) << ", \"erm_mean\": " << jnum(row.erm_mean)
            << ", \"erm_std_error\": " << jnum(row.erm_std_error)
            << ", \"finetuned_mean\": " << jnum(row.finetuned_mean)
            << ", \"finetuned_std_error\": " << jnum(row.finetuned_std_error)
            << ", \"pivotal_precision_mean\": " << jnum(row.pivotal_precision_mean)
            << ", \"pivotal_size_mean\": " << jnum(row.pivotal_size_mean) << "}";
    }
    out << (report.sweep.empty() ? "]" : "\n  ]") << "\n}\n";
    if (!out) throw std::runtime_error("write failed: " + path);
}

}  // namespace biasfix::eval
