// Acceptance checks, one criterion per invocation: `acceptance <1-10>`.
// Each run prints a single [PASS]/[FAIL] line and exits 0/1.

#include <Eigen/Dense>

#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <unistd.h>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "biasfix/config.hpp"
#include "biasfix/dataset.hpp"
#include "biasfix/eval.hpp"
#include "biasfix/finetune.hpp"
#include "biasfix/influence.hpp"
#include "biasfix/mlp.hpp"
#include "biasfix/rng.hpp"
#include "biasfix/selection.hpp"
#include "biasfix/stages.hpp"

using namespace biasfix;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool ok = false;
    std::string detail;
};

std::string format(const char* fmt, ...) {
    char buf[512];
    va_list args;
    va_start(args, fmt);
    std::vsnprintf(buf, sizeof(buf), fmt, args);
    va_end(args);
    return buf;
}

datagen::GenConfig toy_gen(double r, std::uint64_t seed) {
    datagen::GenConfig g;  // C=5, 500/class, 10 features
    g.conflict_ratio = r;
    g.seed = seed;
    return g;
}

const std::vector<int> kToyDims = {10, 100, 100, 5};

double mean(const std::vector<double>& xs) {
    double s = 0.0;
    for (double x : xs) s += x;
    return s / static_cast<double>(xs.size());
}

// Top ground-truth-count ids by score, precision against the same count.
double precision_at_gt(const std::vector<influence::InfluenceRecord>& records,
                       const datagen::BiasedDataset& ds) {
    const auto ids = selection::top_by_ground_truth_count(records, ds);
    return selection::detection_precision(ids, ds,
                                          selection::PrecisionDenominator::GroundTruthCount);
}

// Random classification instance for the oracle checks.
datagen::BiasedDataset random_instance(Rng& rng, int n, int feature_dim, int num_classes) {
    datagen::BiasedDataset ds;
    ds.num_classes = num_classes;
    ds.feature_dim = feature_dim;
    for (int i = 0; i < n; ++i) {
        datagen::Sample s;
        s.id = static_cast<std::uint64_t>(i);
        s.label = static_cast<int>(rng.uniform_int(num_classes));
        s.bias_attr = s.label;
        s.features.resize(feature_dim);
        for (double& f : s.features) f = rng.normal();
        ds.samples.push_back(std::move(s));
    }
    return ds;
}

// Last-layer parameter perturbation in the pinned flat layout
// [weight row-major (C x h), bias (C)].
nn::MlpParams perturb_last(const nn::MlpParams& params, int flat, double delta) {
    nn::MlpParams out = params;
    auto& layer = out.layers.back();
    const int h = static_cast<int>(layer.weight.cols());
    const int cls = static_cast<int>(layer.weight.rows());
    if (flat < cls * h)
        layer.weight(flat / h, flat % h) += delta;
    else
        layer.bias(flat - cls * h) += delta;
    return out;
}

double sample_loss(const nn::MlpParams& params, const datagen::Sample& sample,
                   const nn::LossSpec& loss) {
    const auto fw = nn::forward(params, sample.features);
    const auto sc = nn::softmax_ce(fw.logits, sample.label);
    return loss.kind == nn::LossKind::CrossEntropy ? sc.loss
                                                   : nn::gce(sc.probs, sample.label, loss.q);
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

// ---------------------------------------------------------------- criterion 1
// self/cross/if_train match a dense explicit-inverse brute force on tiny nets.
Outcome criterion1() {
    Rng rng(20240901ULL);
    const auto ce = nn::LossSpec::ce();
    double max_rel = 0.0;
    const int instances = 24;
    for (int t = 0; t < instances; ++t) {
        const int d = 2 + static_cast<int>(rng.uniform_int(3));
        const int h = 2 + static_cast<int>(rng.uniform_int(3));
        const int c = 2 + static_cast<int>(rng.uniform_int(2));
        const int n = 3 + static_cast<int>(rng.uniform_int(8));
        const auto ds = random_instance(rng, n, d, c);
        const auto params = nn::init_mlp({d, h, c}, rng.next_u64());

        auto hessian = influence::assemble_hessian(params, ds, ce, 0.0);
        hessian = influence::add_damping(hessian, influence::relative_damping(hessian, 1e-2));
        if (!hessian.factor) return {false, "damped tiny Hessian was not positive definite"};
        const Eigen::MatrixXd inverse = hessian.matrix.fullPivLu().inverse();

        std::vector<Eigen::VectorXd> grads;
        Eigen::VectorXd gbar = Eigen::VectorXd::Zero(hessian.dim());
        for (const auto& s : ds.samples) {
            grads.push_back(nn::last_layer_grad(params, s, ce));
            gbar += grads.back();
        }
        gbar /= static_cast<double>(n);

        const auto rel = [&](double got, double want) {
            const double err = std::abs(got - want) / std::max(1.0, std::abs(want));
            if (err > max_rel) max_rel = err;
        };
        for (int i = 0; i < n; ++i) {
            rel(influence::self_influence(params, hessian, ds.samples[i], ce),
                grads[i].dot(inverse * grads[i]));
            rel(influence::if_train(params, hessian, ds.samples[i], ds, ce),
                grads[i].dot(inverse * gbar));
            for (int j = 0; j < n; ++j)
                rel(influence::cross_influence(params, hessian, ds.samples[i], ds.samples[j], ce),
                    grads[i].dot(inverse * grads[j]));
        }
    }
    return {max_rel <= 1e-9,
            format("influence scores vs dense inverse on %d tiny instances, max rel err %.2e "
                   "(tol 1e-9)", instances, max_rel)};
}

// ---------------------------------------------------------------- criterion 2
// Analytic gradients (CE and GCE) and the assembled Hessian match central
// finite differences.
Outcome criterion2() {
    Rng rng(42ULL);
    const auto ds = random_instance(rng, 3, 4, 3);
    const auto params = nn::init_mlp({4, 3, 3}, 7);
    const int p = params.last_layer_param_count();

    double max_grad_err = 0.0;
    const double grad_eps = 1e-5;
    for (const auto& loss : {nn::LossSpec::ce(), nn::LossSpec::gce(0.7)}) {
        for (const auto& s : ds.samples) {
            const Eigen::VectorXd analytic = nn::last_layer_grad(params, s, loss);
            for (int j = 0; j < p; ++j) {
                const double plus = sample_loss(perturb_last(params, j, grad_eps), s, loss);
                const double minus = sample_loss(perturb_last(params, j, -grad_eps), s, loss);
                const double fd = (plus - minus) / (2.0 * grad_eps);
                max_grad_err = std::max(max_grad_err, std::abs(analytic[j] - fd));
            }
        }
    }

    const auto ce = nn::LossSpec::ce();
    const Eigen::MatrixXd assembled = influence::assemble_hessian(params, ds, ce, 0.0).matrix;
    Eigen::MatrixXd fd_hessian(p, p);
    const double hess_eps = 1e-6;
    const auto mean_grad = [&](const nn::MlpParams& at) {
        Eigen::VectorXd g = Eigen::VectorXd::Zero(p);
        for (const auto& s : ds.samples) g += nn::last_layer_grad(at, s, ce);
        return Eigen::VectorXd(g / static_cast<double>(ds.size()));
    };
    for (int j = 0; j < p; ++j)
        fd_hessian.col(j) = (mean_grad(perturb_last(params, j, hess_eps)) -
                             mean_grad(perturb_last(params, j, -hess_eps))) /
                            (2.0 * hess_eps);
    const double max_hess_err = (assembled - fd_hessian).cwiseAbs().maxCoeff();

    return {max_grad_err <= 1e-6 && max_hess_err <= 1e-6,
            format("finite-difference check: gradient err %.2e, Hessian err %.2e (tol 1e-6)",
                   max_grad_err, max_hess_err)};
}

// ---------------------------------------------------------------- criterion 3
// Relative solve residual <= 1e-8 on 50 random SPD systems up to P=200.
Outcome criterion3() {
    Rng rng(77ULL);
    const int sizes[] = {5, 10, 20, 40, 60, 80, 100, 120, 160, 200};
    double worst = 0.0;
    int systems = 0;
    for (int rep = 0; rep < 5; ++rep) {
        for (int p : sizes) {
            Eigen::MatrixXd b(p, p);
            for (int i = 0; i < p; ++i)
                for (int j = 0; j < p; ++j) b(i, j) = rng.normal();
            influence::LastLayerHessian hessian;
            hessian.matrix = (b.transpose() * b) / static_cast<double>(p) +
                             1e-3 * Eigen::MatrixXd::Identity(p, p);
            hessian.n_samples = p;
            hessian = influence::add_damping(hessian, 0.0);  // factorize via the library
            if (!hessian.factor) return {false, format("SPD system P=%d failed to factor", p)};

            Eigen::VectorXd rhs(p);
            for (int i = 0; i < p; ++i) rhs[i] = rng.normal();
            const Eigen::VectorXd x = influence::solve(hessian, rhs);
            worst = std::max(worst, (hessian.matrix * x - rhs).norm() / rhs.norm());
            ++systems;
        }
    }
    return {worst <= 1e-8 && systems == 50,
            format("%d SPD solves up to P=200, worst relative residual %.2e (tol 1e-8)",
                   systems, worst)};
}

// ---------------------------------------------------------------- criterion 4
// Early-epoch GCE self-influence beats converged-CE self-influence in
// detection precision, and clears 10x the base rate, at r in {0.01, 0.05}.
Outcome criterion4() {
    std::string detail = "precision@gt:";
    bool ok = true;
    for (double r : {0.01, 0.05}) {
        std::vector<double> bcsi_p, si_p;
        for (std::uint64_t s = 1; s <= 5; ++s) {
            const auto ds = datagen::generate_synthetic(toy_gen(r, s));
            influence::BcsiConfig bcfg;
            bcfg.seed = s * 1000 + 1;
            bcsi_p.push_back(precision_at_gt(influence::bcsi_scores(ds, kToyDims, bcfg), ds));
            influence::SiConfig scfg;
            scfg.epochs = 50;
            scfg.seed = s * 1000 + 1;
            si_p.push_back(precision_at_gt(influence::si_scores(ds, kToyDims, scfg), ds));
        }
        const double bm = mean(bcsi_p), sm = mean(si_p);
        ok = ok && bm > sm && bm >= 10.0 * r;
        detail += format(" r=%.2g bcsi=%.3f si=%.3f (need > si and >= %.2f);", r, bm, sm, 10.0 * r);
    }
    return {ok, detail};
}

// ---------------------------------------------------------------- criterion 5
// Self-influence detection precision decays with the scored epoch: 5 >= 50.
Outcome criterion5() {
    std::vector<double> early, late;
    for (std::uint64_t s = 1; s <= 5; ++s) {
        const auto ds = datagen::generate_synthetic(toy_gen(0.05, s));
        influence::SiConfig cfg;
        cfg.seed = s * 1000 + 1;
        cfg.epochs = 5;
        early.push_back(precision_at_gt(influence::si_scores(ds, kToyDims, cfg), ds));
        cfg.epochs = 50;
        late.push_back(precision_at_gt(influence::si_scores(ds, kToyDims, cfg), ds));
    }
    const double e = mean(early), l = mean(late);
    return {e >= l, format("si precision@gt epoch5 %.3f >= epoch50 %.3f (5-seed mean)", e, l)};
}

// ---------------------------------------------------------------- criterion 6
// After one ERM epoch the bias-aligned train accuracy leads the conflicting
// one by >= 20 points.
Outcome criterion6() {
    std::vector<double> gaps;
    for (std::uint64_t s = 1; s <= 5; ++s) {
        const auto ds = datagen::generate_synthetic(toy_gen(0.05, s));
        nn::TrainConfig tc;
        tc.epochs = 1;
        tc.seed = s;
        const auto params = nn::train(nn::init_mlp(kToyDims, s), ds, tc).first;
        gaps.push_back(nn::accuracy(params, ds, nn::Group::Aligned) -
                       nn::accuracy(params, ds, nn::Group::Conflicting));
    }
    const double g = mean(gaps);
    return {g >= 0.20, format("epoch-1 aligned-minus-conflicting accuracy %.3f (need >= 0.20)", g)};
}

// ---------------------------------------------------------------- criterion 7
// Multi-run intersection concentrates: precision >= mean single-run precision
// and |Z_P| <= min single-run size.
Outcome criterion7() {
    std::vector<double> inter_p, single_p;
    bool sizes_ok = true;
    for (std::uint64_t s = 1; s <= 5; ++s) {
        const auto ds = datagen::generate_synthetic(toy_gen(0.05, s));
        influence::BcsiConfig cfg;
        const auto set = selection::build_pivotal(ds, kToyDims, cfg, 20, 3,
                                                  {s * 1000 + 1, s * 1000 + 2, s * 1000 + 3}, 3);
        std::size_t min_run = SIZE_MAX;
        double run_sum = 0.0;
        for (int run = 0; run < 3; ++run) {
            const auto ids = set.run_union(run);
            min_run = std::min(min_run, ids.size());
            run_sum += selection::detection_precision(ids, ds);
        }
        sizes_ok = sizes_ok && set.intersection.size() <= min_run;
        inter_p.push_back(selection::detection_precision(set.intersection, ds));
        single_p.push_back(run_sum / 3.0);
    }
    const double ip = mean(inter_p), sp = mean(single_p);
    return {ip >= sp && sizes_ok,
            format("intersection precision %.3f >= single-run mean %.3f, sizes bounded: %s",
                   ip, sp, sizes_ok ? "yes" : "no")};
}

// ---------------------------------------------------------------- criterion 8
// Counterweight fine-tuning beats ERM by >= 3 points at r=0.01 and costs at
// most 5 points on an already-unbiased set (r = (C-1)/C = 0.8).
Outcome criterion8() {
    const auto run_cell = [](double r, std::uint64_t s) {
        const auto gen = toy_gen(r, s);
        const auto ds = datagen::generate_synthetic(gen);
        const auto test = datagen::generate_unbiased_test(gen, 500);

        nn::TrainConfig erm;
        erm.epochs = 20;
        erm.batch_size = 128;
        erm.seed = s;
        const auto erm_params = nn::train(nn::init_mlp(kToyDims, s), ds, erm).first;

        influence::BcsiConfig bcfg;
        const auto set = selection::build_pivotal(ds, kToyDims, bcfg, 5, 3,
                                                  {s * 1000 + 1, s * 1000 + 2, s * 1000 + 3}, 3);

        finetune::FineTuneConfig ft;
        ft.lambda = 1.0;
        ft.n_iter = 200;
        ft.lr = 3e-4;
        ft.reinit_last_layer = false;
        ft.seed = s;
        const auto tuned = finetune::finetune(erm_params, ds, set, ft).params;
        return nn::accuracy(tuned, test) - nn::accuracy(erm_params, test);
    };

    std::vector<double> low, high;
    for (std::uint64_t s = 1; s <= 5; ++s) {
        low.push_back(run_cell(0.01, s));
        high.push_back(run_cell(0.8, s));
    }
    const double gain = mean(low), shift = mean(high);
    return {gain >= 0.03 && shift >= -0.05,
            format("finetuned-minus-erm accuracy: %+.4f at r=0.01 (need >= +0.03), "
                   "%+.4f at r=0.8 (need >= -0.05)", gain, shift)};
}

// ---------------------------------------------------------------- criterion 9
// Fine-tune contracts: lambda=0 loss identity, exact cosine endpoints,
// last-layer reinit locality, byte-identical pipeline reruns.
Outcome criterion9() {
    finetune::FineTuneConfig sched;
    sched.lr = 0.02;
    sched.lr_final_factor = 0.125;
    sched.n_iter = 7;
    if (finetune::cosine_lr(sched, 0) != 0.02) return {false, "cosine start != lr"};
    if (finetune::cosine_lr(sched, 6) != 0.02 * 0.125) return {false, "cosine end != lr*factor"};
    sched.n_iter = 1;
    if (finetune::cosine_lr(sched, 0) != 0.02) return {false, "single-iter schedule != lr"};

    datagen::GenConfig gen;
    gen.n_per_class = 20;
    gen.num_classes = 3;
    gen.d_signal = 3;
    gen.d_bias = 3;
    gen.conflict_ratio = 0.2;
    gen.seed = 5;
    const auto ds = datagen::generate_synthetic(gen);
    const auto params = nn::init_mlp({6, 8, 3}, 11);

    selection::PivotalSet pivotal;
    pivotal.intersection = {0, 1, 2, 20, 21};
    pivotal.k = 5;
    pivotal.num_runs = 1;
    finetune::FineTuneConfig ft;
    ft.lambda = 0.0;
    ft.n_iter = 5;
    ft.reinit_last_layer = false;
    ft.seed = 3;
    const auto result = finetune::finetune(params, ds, pivotal, ft);
    for (const auto& row : result.trace)
        if (row.loss_remain != 0.0 || row.loss_total != row.loss_pivotal)
            return {false, "lambda=0 loss composition identity violated"};

    const auto redrawn = finetune::reinit_last_layer(params, 99);
    for (std::size_t i = 0; i + 1 < params.layers.size(); ++i)
        if (!(params.layers[i].weight == redrawn.layers[i].weight) ||
            !(params.layers[i].bias == redrawn.layers[i].bias))
            return {false, "reinit touched a hidden layer"};
    if (params.layers.back().weight == redrawn.layers.back().weight)
        return {false, "reinit left the last layer unchanged"};
    if (!redrawn.layers.back().bias.isZero(0.0)) return {false, "reinit bias not zero"};

    // identical seeds => byte-identical artifacts, independent of out dir
    const fs::path scratch = "acceptance_scratch";
    fs::remove_all(scratch);
    fs::create_directories(scratch);
    const std::string cfg_path = (scratch / "pipeline.cfg").string();
    {
        std::ofstream out(cfg_path);
        out << "data.n_per_class = 30\ndata.num_classes = 3\ndata.d_signal = 3\n"
            << "data.d_bias = 3\ndata.r = 0.2\ndata.seed = 3\ndata.test_per_class = 20\n"
            << "model.hidden_dims = 16\nerm.epochs = 2\nbcsi.t_epochs = 1\n"
            << "pivotal.k = 4\npivotal.num_runs = 2\npivotal.seeds = 21,22\n"
            << "finetune.n_iter = 3\nfinetune.reinit_last_layer = false\n";
    }
    stages::Options opt;
    opt.config_path = cfg_path;
    std::string out_dirs[2];
    for (int i = 0; i < 2; ++i) {
        out_dirs[i] = (scratch / ("out" + std::to_string(i))).string();
        opt.out_dir = out_dirs[i];
        // keep the CLI's printf summary off the criterion output
        std::fflush(stdout);
        const int saved_fd = dup(fileno(stdout));
        if (!std::freopen("/dev/null", "w", stdout)) return {false, "stdout redirect failed"};
        const int rc = stages::cmd_pipeline(opt);
        std::fflush(stdout);
        dup2(saved_fd, fileno(stdout));
        close(saved_fd);
        if (rc != 0) return {false, "pipeline run failed"};
    }
    opt.out_dir = out_dirs[0];
    const auto cfg = stages::resolve_config(opt);
    for (const char* name : {"finetuned", "report", "pivotal"}) {
        const std::string ext = std::strcmp(name, "finetuned") == 0 ? "bfmp" : "json";
        const std::string file = std::string(name) + "." + cfg.hash8() + "." + ext;
        if (slurp(out_dirs[0] + "/" + file) != slurp(out_dirs[1] + "/" + file))
            return {false, format("pipeline artifact %s differs between reruns", name)};
    }
    return {true, "lambda=0 identity, cosine endpoints, reinit locality, deterministic pipeline"};
}

// --------------------------------------------------------------- criterion 10
// Optional real-data check on color-biased MNIST (skipped when the IDX files
// are absent).
Outcome criterion10() {
    const char* env = std::getenv("BF_MNIST_DIR");
    const fs::path dir = env != nullptr ? fs::path(env) : fs::path("data/mnist");
    const std::string train_images = (dir / "train-images-idx3-ubyte").string();
    const std::string train_labels = (dir / "train-labels-idx1-ubyte").string();
    const std::string test_images = (dir / "t10k-images-idx3-ubyte").string();
    const std::string test_labels = (dir / "t10k-labels-idx1-ubyte").string();
    for (const auto& path : {train_images, train_labels, test_images, test_labels})
        if (!fs::exists(path))
            return {true, "skipped: MNIST IDX files not found under " + dir.string()};

    const auto ds = datagen::load_idx_with_color_bias(train_images, train_labels, 0.01, 1,
                                                      datagen::Split::Train);
    const int c = ds.num_classes;
    const auto test = datagen::load_idx_with_color_bias(test_images, test_labels,
                                                        double(c - 1) / c, 1 + 0x7e57ULL,
                                                        datagen::Split::Test);
    const std::vector<int> dims = {ds.feature_dim, 100, 100, c};

    nn::TrainConfig erm;
    erm.epochs = 5;
    erm.batch_size = 256;
    erm.seed = 1;
    const auto erm_params = nn::train(nn::init_mlp(dims, 1), ds, erm).first;

    influence::BcsiConfig bcfg;
    bcfg.t_epochs = 2;
    bcfg.batch_size = 256;
    const auto set = selection::build_pivotal(ds, dims, bcfg, 100, 2, {1001, 1002}, 2);
    const double precision = selection::detection_precision(set.intersection, ds);

    finetune::FineTuneConfig ft;
    ft.lambda = 1.0;
    ft.n_iter = 100;
    ft.lr = 3e-4;
    ft.reinit_last_layer = false;
    ft.seed = 1;
    const auto tuned = finetune::finetune(erm_params, ds, set, ft).params;

    const double erm_acc = nn::accuracy(erm_params, test);
    const double ft_acc = nn::accuracy(tuned, test);
    return {ft_acc >= erm_acc && precision >= 0.10,
            format("cmnist r=0.01: finetuned %.4f >= erm %.4f, pivotal precision %.3f "
                   "(need >= 0.10, |Z_P|=%zu)", ft_acc, erm_acc, precision,
                   set.intersection.size())};
}

}  // namespace

int main(int argc, char** argv) {
    if (argc != 2) {
        std::fprintf(stderr, "usage: acceptance <criterion 1-10>\n");
        return 64;
    }
    const int n = std::atoi(argv[1]);
    using Criterion = Outcome (*)();
    static const Criterion criteria[] = {criterion1, criterion2, criterion3, criterion4,
                                         criterion5, criterion6, criterion7, criterion8,
                                         criterion9, criterion10};
    if (n < 1 || n > 10) {
        std::fprintf(stderr, "unknown criterion %d\n", n);
        return 64;
    }
    const auto start = std::chrono::steady_clock::now();
    Outcome outcome;
    try {
        outcome = criteria[n - 1]();
    } catch (const std::exception& e) {
        outcome = {false, std::string("exception: ") + e.what()};
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::printf("[%s] criterion %d: %s [%.1fs]\n", outcome.ok ? "PASS" : "FAIL", n,
                outcome.detail.c_str(), secs);
    return outcome.ok ? 0 : 1;
}
