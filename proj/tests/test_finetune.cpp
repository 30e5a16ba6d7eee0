#include <doctest.h>

#include <cmath>
#include <sstream>
#include <vector>

#include "biasfix/dataset.hpp"
#include "biasfix/errors.hpp"
#include "biasfix/finetune.hpp"
#include "biasfix/mlp.hpp"
#include "biasfix/selection.hpp"

using namespace biasfix;
using finetune::FineTuneConfig;
using finetune::FineTuneTraceRow;
using finetune::cosine_lr;
using finetune::reinit_last_layer;
using finetune::write_trace_csv;

namespace {

datagen::BiasedDataset toy_train(std::uint64_t seed = 3, double r = 0.1) {
    datagen::GenConfig gen;
    gen.n_per_class = 30;
    gen.num_classes = 2;
    gen.d_signal = 2;
    gen.d_bias = 2;
    gen.conflict_ratio = r;
    gen.seed = seed;
    return datagen::generate_synthetic(gen);
}

selection::PivotalSet pivotal_of(std::vector<std::uint64_t> ids) {
    selection::PivotalSet set;
    set.k = static_cast<int>(ids.size());
    set.num_runs = 1;
    set.seeds = {1};
    set.intersection = std::move(ids);
    return set;
}

bool same_params(const nn::MlpParams& a, const nn::MlpParams& b) {
    if (a.layers.size() != b.layers.size()) return false;
    for (std::size_t l = 0; l < a.layers.size(); ++l)
        if (a.layers[l].weight != b.layers[l].weight || a.layers[l].bias != b.layers[l].bias)
            return false;
    return true;
}

}  // namespace

TEST_CASE("cosine schedule endpoints are exact") {
    FineTuneConfig cfg;
    cfg.lr = 2e-3;
    cfg.lr_final_factor = 1e-2;
    cfg.n_iter = 100;
    CHECK(cosine_lr(cfg, 0) == cfg.lr);                          // bitwise
    CHECK(cosine_lr(cfg, 99) == cfg.lr * cfg.lr_final_factor);   // bitwise
    // monotone nonincreasing in between
    for (int i = 1; i < 100; ++i) CHECK(cosine_lr(cfg, i) <= cosine_lr(cfg, i - 1));
    // halfway point of the cosine
    cfg.n_iter = 3;
    const double lr_end = cfg.lr * cfg.lr_final_factor;
    CHECK(cosine_lr(cfg, 1) == doctest::Approx(lr_end + (cfg.lr - lr_end) * 0.5).epsilon(1e-15));
    cfg.n_iter = 1;
    CHECK(cosine_lr(cfg, 0) == cfg.lr);
}

TEST_CASE("last-layer reinit touches only the last layer") {
    const auto params = nn::init_mlp({4, 6, 5, 3}, 9);
    const auto re = reinit_last_layer(params, 42);
    REQUIRE(re.layers.size() == 3);
    CHECK(re.layers[0].weight == params.layers[0].weight);
    CHECK(re.layers[0].bias == params.layers[0].bias);
    CHECK(re.layers[1].weight == params.layers[1].weight);
    CHECK(re.layers[2].weight != params.layers[2].weight);
    CHECK(re.layers[2].bias.isZero());
    const double lim = std::sqrt(6.0 / params.penultimate_dim());
    CHECK(re.layers[2].weight.cwiseAbs().maxCoeff() <= lim);

    const auto re2 = reinit_last_layer(params, 42);
    CHECK(re2.layers[2].weight == re.layers[2].weight);
    const auto re3 = reinit_last_layer(params, 43);
    CHECK(re3.layers[2].weight != re.layers[2].weight);
}

TEST_CASE("lambda zero reduces to pure pivotal fitting") {
    const auto ds = toy_train();
    const auto params = nn::init_mlp({4, 8, 2}, 1);
    FineTuneConfig cfg;
    cfg.lambda = 0.0;
    cfg.n_iter = 12;
    cfg.reinit_last_layer = false;
    const auto result = finetune::finetune(params, ds, pivotal_of({0, 5, 31, 40}), cfg);

    REQUIRE(result.trace.size() == 12);
    for (const auto& row : result.trace) {
        CHECK(row.loss_remain == 0.0);
        CHECK(row.loss_total == row.loss_pivotal);  // composition identity, bitwise
    }
    CHECK(result.trace.back().loss_pivotal < result.trace.front().loss_pivotal);
    CHECK(result.warning.empty());
}

TEST_CASE("trace rows carry the schedule and the loss composition") {
    const auto ds = toy_train();
    const auto params = nn::init_mlp({4, 8, 2}, 2);
    FineTuneConfig cfg;
    cfg.lambda = 0.7;
    cfg.n_iter = 9;
    cfg.reinit_last_layer = false;
    const auto result = finetune::finetune(params, ds, pivotal_of({1, 2, 33}), cfg);

    REQUIRE(result.trace.size() == 9);
    for (int i = 0; i < 9; ++i) {
        const auto& row = result.trace[static_cast<std::size_t>(i)];
        CHECK(row.iter == i);
        CHECK(row.lr == cosine_lr(cfg, i));
        // Approx guards against fused-multiply-add contraction in this expression
        CHECK(row.loss_total ==
              doctest::Approx(row.loss_pivotal + cfg.lambda * row.loss_remain).epsilon(1e-15));
        CHECK(row.loss_remain > 0.0);
        CHECK(std::isfinite(row.loss_total));
    }
}

TEST_CASE("chunked pivotal gradient is exact") {
    // a cap smaller than |Z_P| must reproduce the unchunked run bit-for-bit
    const auto ds = toy_train(7, 0.15);
    const auto params = nn::init_mlp({4, 8, 2}, 3);
    const auto pivotal = pivotal_of({0, 3, 9, 17, 31, 44, 58});
    FineTuneConfig small, big;
    small.n_iter = big.n_iter = 10;
    small.reinit_last_layer = big.reinit_last_layer = false;
    small.full_batch_cap = 3;
    big.full_batch_cap = 4096;
    const auto a = finetune::finetune(params, ds, pivotal, small);
    const auto b = finetune::finetune(params, ds, pivotal, big);
    CHECK(same_params(a.params, b.params));
    REQUIRE(a.trace.size() == b.trace.size());
    for (std::size_t i = 0; i < a.trace.size(); ++i) {
        CHECK(a.trace[i].loss_pivotal == b.trace[i].loss_pivotal);
        CHECK(a.trace[i].loss_remain == b.trace[i].loss_remain);
    }
}

TEST_CASE("empty remaining set disables the counterweight with a warning") {
    const auto ds = toy_train(11);
    std::vector<std::uint64_t> all_ids;
    for (const auto& s : ds.samples) all_ids.push_back(s.id);
    const auto params = nn::init_mlp({4, 8, 2}, 4);
    FineTuneConfig cfg;
    cfg.lambda = 0.5;
    cfg.n_iter = 3;
    cfg.reinit_last_layer = false;
    const auto result = finetune::finetune(params, ds, pivotal_of(all_ids), cfg);
    CHECK(!result.warning.empty());
    for (const auto& row : result.trace) {
        CHECK(row.loss_remain == 0.0);
        CHECK(row.loss_total == row.loss_pivotal);
    }
}

TEST_CASE("finetune is deterministic and seed-sensitive") {
    const auto ds = toy_train(13);
    const auto params = nn::init_mlp({4, 8, 2}, 5);
    FineTuneConfig cfg;
    cfg.n_iter = 6;
    cfg.seed = 21;
    const auto pivotal = pivotal_of({2, 12, 35});
    const auto a = finetune::finetune(params, ds, pivotal, cfg);
    const auto b = finetune::finetune(params, ds, pivotal, cfg);
    CHECK(same_params(a.params, b.params));
    FineTuneConfig other = cfg;
    other.seed = 22;
    const auto c = finetune::finetune(params, ds, pivotal, other);
    CHECK(!same_params(a.params, c.params));  // reinit and draws move together
}

TEST_CASE("finetune validates its inputs") {
    const auto ds = toy_train();
    const auto params = nn::init_mlp({4, 8, 2}, 6);
    const auto pivotal = pivotal_of({0, 1});
    FineTuneConfig cfg;

    FineTuneConfig bad = cfg;
    bad.n_iter = 0;
    CHECK_THROWS_AS(finetune::finetune(params, ds, pivotal, bad), std::invalid_argument);
    bad = cfg;
    bad.lr = 0.0;
    CHECK_THROWS_AS(finetune::finetune(params, ds, pivotal, bad), std::invalid_argument);
    bad = cfg;
    bad.lambda = -0.5;
    CHECK_THROWS_AS(finetune::finetune(params, ds, pivotal, bad), std::invalid_argument);
    bad = cfg;
    bad.full_batch_cap = 0;
    CHECK_THROWS_AS(finetune::finetune(params, ds, pivotal, bad), std::invalid_argument);

    CHECK_THROWS_AS(finetune::finetune(params, ds, pivotal_of({}), cfg), std::invalid_argument);
    CHECK_THROWS_AS(finetune::finetune(params, ds, pivotal_of({9999}), cfg), std::invalid_argument);
}

TEST_CASE("trace csv format") {
    std::vector<FineTuneTraceRow> trace{{0, 1e-3, 0.5, 0.25, 0.525}, {1, 5e-4, 0.4, 0.3, 0.43}};
    std::ostringstream out;
    write_trace_csv(trace, out);
    std::istringstream in(out.str());
    std::string line;
    std::getline(in, line);
    CHECK(line == "iter,lr,loss_pivotal,loss_remain,loss_total");
    std::getline(in, line);
    CHECK(line.rfind("0,0.001", 0) == 0);
    int rows = 1;
    while (std::getline(in, line))
        if (!line.empty()) ++rows;
    CHECK(rows == 2);
}
