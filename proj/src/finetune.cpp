#include "biasfix/finetune.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>
#include <unordered_map>

#include "batch.hpp"
#include "optim.hpp"
#include "biasfix/errors.hpp"
#include "biasfix/rng.hpp"
#include "biasfix/util.hpp"

namespace biasfix::finetune {

double cosine_lr(const FineTuneConfig& cfg, int iter) {
    if (cfg.n_iter <= 1) return cfg.lr;
    const double lr_end = cfg.lr * cfg.lr_final_factor;
    const double phase = M_PI * static_cast<double>(iter) / static_cast<double>(cfg.n_iter - 1);
    return lr_end + (cfg.lr - lr_end) * 0.5 * (1.0 + std::cos(phase));
}

nn::MlpParams reinit_last_layer(const nn::MlpParams& params, std::uint64_t seed) {
    if (params.layers.empty()) throw std::invalid_argument("reinit: no layers");
    nn::MlpParams out = params;
    const int fan_in = params.penultimate_dim();
    const int fan_out = params.output_dim();
    const double lim = std::sqrt(6.0 / fan_in);
    Rng rng(seed);
    auto& last = out.layers.back();
    for (int r = 0; r < fan_out; ++r)
        for (int c = 0; c < fan_in; ++c) last.weight(r, c) = rng.uniform(-lim, lim);
    last.bias.setZero();
    return out;
}

FineTuneResult finetune(const nn::MlpParams& params0, const datagen::BiasedDataset& ds_train,
                        const selection::PivotalSet& pivotal, const FineTuneConfig& cfg) {
    if (cfg.n_iter < 1) throw std::invalid_argument("finetune: n_iter must be >= 1");
    if (cfg.lr <= 0.0) throw std::invalid_argument("finetune: lr must be > 0");
    if (cfg.lambda < 0.0) throw std::invalid_argument("finetune: lambda must be >= 0");
    if (cfg.full_batch_cap < 1) throw std::invalid_argument("finetune: full_batch_cap must be >= 1");
    if (pivotal.intersection.empty()) throw std::invalid_argument("finetune: empty pivotal set");

    std::unordered_map<std::uint64_t, std::size_t> index_of;
    index_of.reserve(ds_train.size());
    for (std::size_t i = 0; i < ds_train.size(); ++i) index_of[ds_train.samples[i].id] = i;

    std::vector<std::size_t> pivotal_idx;
    pivotal_idx.reserve(pivotal.intersection.size());
    std::vector<char> in_pivotal(ds_train.size(), 0);
    for (const auto id : pivotal.intersection) {
        const auto it = index_of.find(id);
        if (it == index_of.end())
            throw std::invalid_argument("finetune: pivotal id " + std::to_string(id) +
                                        " not in the training set");
        pivotal_idx.push_back(it->second);
        in_pivotal[it->second] = 1;
    }
    std::vector<std::size_t> remain_idx;
    remain_idx.reserve(ds_train.size() - pivotal_idx.size());
    for (std::size_t i = 0; i < ds_train.size(); ++i)
        if (!in_pivotal[i]) remain_idx.push_back(i);

    FineTuneResult result;
    if (remain_idx.empty()) {
        result.warning = "remaining set is empty; counterweight term disabled";
        log_info("finetune: " + result.warning);
    }

    const Eigen::MatrixXd x_all = detail::features_matrix(ds_train);
    const Eigen::Index n_p = static_cast<Eigen::Index>(pivotal_idx.size());
    Eigen::MatrixXd x_p(x_all.rows(), n_p);
    std::vector<int> y_p(pivotal_idx.size());
    for (Eigen::Index j = 0; j < n_p; ++j) {
        x_p.col(j) = x_all.col(static_cast<Eigen::Index>(pivotal_idx[static_cast<std::size_t>(j)]));
        y_p[static_cast<std::size_t>(j)] =
            ds_train.samples[pivotal_idx[static_cast<std::size_t>(j)]].label;
    }

    nn::MlpParams params =
        cfg.reinit_last_layer ? reinit_last_layer(params0, cfg.seed) : params0;
    detail::AdamState adam(params);
    Rng draw_rng(cfg.seed + 1);  // distinct stream from the last-layer reinit

    const std::size_t n_layers = params.layers.size();
    std::vector<Eigen::MatrixXd> gw(n_layers), gw_r(n_layers);
    std::vector<Eigen::VectorXd> gb(n_layers), gb_r(n_layers);
    const auto zero_grads = [&](std::vector<Eigen::MatrixXd>& w, std::vector<Eigen::VectorXd>& b) {
        for (std::size_t l = 0; l < n_layers; ++l) {
            w[l] = Eigen::MatrixXd::Zero(params.layers[l].weight.rows(),
                                         params.layers[l].weight.cols());
            b[l] = Eigen::VectorXd::Zero(params.layers[l].bias.size());
        }
    };

    const bool use_counterweight = cfg.lambda > 0.0 && !remain_idx.empty();
    result.trace.reserve(static_cast<std::size_t>(cfg.n_iter));
    for (int iter = 0; iter < cfg.n_iter; ++iter) {
        const double lr = cosine_lr(cfg, iter);

        // full-batch CE over the pivotal set, chunked but exact
        zero_grads(gw, gb);
        double loss_p_sum = 0.0;
        for (Eigen::Index start = 0; start < n_p; start += cfg.full_batch_cap) {
            const Eigen::Index b = std::min<Eigen::Index>(cfg.full_batch_cap, n_p - start);
            std::vector<int> labels(y_p.begin() + start, y_p.begin() + start + b);
            detail::ce_loss_and_grad_sum(params, x_p.middleCols(start, b), labels, gw, gb,
                                         loss_p_sum);
        }
        const double loss_pivotal = loss_p_sum / static_cast<double>(n_p);
        for (std::size_t l = 0; l < n_layers; ++l) {
            gw[l] /= static_cast<double>(n_p);
            gb[l] /= static_cast<double>(n_p);
        }

        // counterweight: n_p uniform-with-replacement draws from the rest
        double loss_remain = 0.0;
        if (use_counterweight) {
            Eigen::MatrixXd x_r(x_all.rows(), n_p);
            std::vector<int> y_r(static_cast<std::size_t>(n_p));
            for (Eigen::Index j = 0; j < n_p; ++j) {
                const std::size_t pick = remain_idx[static_cast<std::size_t>(
                    draw_rng.uniform_int(remain_idx.size()))];
                x_r.col(j) = x_all.col(static_cast<Eigen::Index>(pick));
                y_r[static_cast<std::size_t>(j)] = ds_train.samples[pick].label;
            }
            zero_grads(gw_r, gb_r);
            double loss_r_sum = 0.0;
            detail::ce_loss_and_grad_sum(params, x_r, y_r, gw_r, gb_r, loss_r_sum);
            loss_remain = loss_r_sum / static_cast<double>(n_p);
            for (std::size_t l = 0; l < n_layers; ++l) {
                gw[l] += cfg.lambda / static_cast<double>(n_p) * gw_r[l];
                gb[l] += cfg.lambda / static_cast<double>(n_p) * gb_r[l];
            }
        }

        const double loss_total = loss_pivotal + cfg.lambda * loss_remain;
        if (!std::isfinite(loss_total))
            throw NumericalError("finetune: non-finite loss at iteration " + std::to_string(iter));
        detail::apply_update(params, gw, gb, nn::Optimizer::Adam, cfg.adam, lr, cfg.weight_decay,
                             &adam);
        result.trace.push_back({iter, lr, loss_pivotal, loss_remain, loss_total});
    }
    result.params = std::move(params);
    return result;
}

void write_trace_csv(const std::vector<FineTuneTraceRow>& trace, std::ostream& out) {
    out << "iter,lr,loss_pivotal,loss_remain,loss_total\n";
    for (const auto& row : trace)
        out << row.iter << ',' << g17(row.lr) << ',' << g17(row.loss_pivotal) << ','
            << g17(row.loss_remain) << ',' << g17(row.loss_total) << '\n';
}

void write_trace_csv(const std::vector<FineTuneTraceRow>& trace, const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open for write: " + path);
    write_trace_csv(trace, out);
    if (!out) throw std::runtime_error("write failed: " + path);
}

}  // namespace biasfix::finetune
