#include "biasfix/selection.hpp"

#include <algorithm>
#include <atomic>
#include <fstream>
#include <mutex>
#include <stdexcept>
#include <thread>
#include <unordered_map>

#include <json.hpp>

#include "biasfix/errors.hpp"
#include "biasfix/util.hpp"

namespace biasfix::selection {

std::vector<std::uint64_t> PivotalSet::run_union(int run) const {
    std::vector<std::uint64_t> ids;
    for (const auto& cls : per_run.at(static_cast<std::size_t>(run)))
        ids.insert(ids.end(), cls.begin(), cls.end());
    std::sort(ids.begin(), ids.end());
    return ids;
}

std::vector<std::vector<std::uint64_t>> topk_per_class(
    const std::vector<influence::InfluenceRecord>& records, const datagen::BiasedDataset& ds,
    int k) {
    if (k < 1) throw std::invalid_argument("topk: k must be >= 1");
    std::unordered_map<std::uint64_t, double> score;
    score.reserve(records.size());
    for (const auto& rec : records) score[rec.sample_id] = rec.score;

    // (score desc, id asc) per class
    std::vector<std::vector<std::pair<double, std::uint64_t>>> ranked(
        static_cast<std::size_t>(ds.num_classes));
    for (const auto& s : ds.samples) {
        const auto it = score.find(s.id);
        if (it == score.end())
            throw std::invalid_argument("topk: missing score for sample " + std::to_string(s.id));
        ranked[static_cast<std::size_t>(s.label)].push_back({it->second, s.id});
    }
    std::vector<std::vector<std::uint64_t>> out(static_cast<std::size_t>(ds.num_classes));
    for (std::size_t c = 0; c < ranked.size(); ++c) {
        auto& cls = ranked[c];
        std::sort(cls.begin(), cls.end(), [](const auto& a, const auto& b) {
            if (a.first != b.first) return a.first > b.first;
            return a.second < b.second;
        });
        const std::size_t take = std::min<std::size_t>(static_cast<std::size_t>(k), cls.size());
        out[c].reserve(take);
        for (std::size_t i = 0; i < take; ++i) out[c].push_back(cls[i].second);
    }
    return out;
}

namespace {

std::vector<std::uint64_t> intersect_sorted(const std::vector<std::uint64_t>& a,
                                            const std::vector<std::uint64_t>& b) {
    std::vector<std::uint64_t> out;
    std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out));
    return out;
}

}  // namespace

PivotalSet build_pivotal(const datagen::BiasedDataset& ds, const std::vector<int>& dims,
                         const influence::BcsiConfig& cfg, int k, int num_runs,
                         const std::vector<std::uint64_t>& seeds, int jobs) {
    if (num_runs < 1) throw std::invalid_argument("pivotal: num_runs must be >= 1");
    if (static_cast<int>(seeds.size()) != num_runs)
        throw std::invalid_argument("pivotal: need one seed per run");
    for (std::size_t i = 0; i < seeds.size(); ++i)
        for (std::size_t j = i + 1; j < seeds.size(); ++j)
            if (seeds[i] == seeds[j]) throw std::invalid_argument("pivotal: seeds must be distinct");

    PivotalSet set;
    set.k = k;
    set.num_runs = num_runs;
    set.method = influence::ScoreMethod::Bcsi;
    set.seeds = seeds;
    set.per_run.resize(static_cast<std::size_t>(num_runs));

    const auto run_one = [&](int run) {
        influence::BcsiConfig run_cfg = cfg;
        run_cfg.seed = seeds[static_cast<std::size_t>(run)];
        const auto records = influence::bcsi_scores(ds, dims, run_cfg);
        set.per_run[static_cast<std::size_t>(run)] = topk_per_class(records, ds, k);
    };

    const int workers = std::max(1, std::min(jobs, num_runs));
    if (workers == 1) {
        for (int run = 0; run < num_runs; ++run) run_one(run);
    } else {
        std::atomic<int> next{0};
        std::exception_ptr error;
        std::mutex error_mutex;
        std::vector<std::thread> pool;
        for (int w = 0; w < workers; ++w)
            pool.emplace_back([&] {
                for (int run = next.fetch_add(1); run < num_runs; run = next.fetch_add(1)) {
                    try {
                        run_one(run);
                    } catch (...) {
                        std::lock_guard<std::mutex> lock(error_mutex);
                        if (!error) error = std::current_exception();
                    }
                }
            });
        for (auto& t : pool) t.join();
        if (error) std::rethrow_exception(error);
    }

    set.intersection = set.run_union(0);
    for (int run = 1; run < num_runs; ++run)
        set.intersection = intersect_sorted(set.intersection, set.run_union(run));
    if (set.intersection.empty() && num_runs > 2) {
        set.intersection = intersect_sorted(set.run_union(0), set.run_union(1));
        set.warning = "empty intersection across all runs; fell back to the first two runs";
        log_info("pivotal: " + set.warning);
    }
    if (set.intersection.empty() && set.warning.empty()) {
        set.warning = "empty intersection";
        log_info("pivotal: " + set.warning);
    }
    return set;
}

double detection_precision(const std::vector<std::uint64_t>& selected_ids,
                           const datagen::BiasedDataset& ds, PrecisionDenominator denominator) {
    if (selected_ids.empty()) throw std::invalid_argument("precision: empty selection");
    std::unordered_map<std::uint64_t, bool> conflicting;
    conflicting.reserve(ds.size());
    for (const auto& s : ds.samples) conflicting[s.id] = s.is_conflicting();
    std::size_t hits = 0;
    for (const auto id : selected_ids) {
        const auto it = conflicting.find(id);
        if (it == conflicting.end())
            throw std::invalid_argument("precision: unknown sample id " + std::to_string(id));
        if (it->second) ++hits;
    }
    std::size_t denom = selected_ids.size();
    if (denominator == PrecisionDenominator::GroundTruthCount) {
        denom = 0;
        for (const auto& s : ds.samples)
            if (s.is_conflicting()) ++denom;
        if (denom == 0) throw std::invalid_argument("precision: no conflicting samples in dataset");
    }
    return static_cast<double>(hits) / static_cast<double>(denom);
}

std::vector<std::uint64_t> top_by_ground_truth_count(
    const std::vector<influence::InfluenceRecord>& records, const datagen::BiasedDataset& ds) {
    std::size_t count = 0;
    for (const auto& s : ds.samples)
        if (s.is_conflicting()) ++count;
    std::vector<std::pair<double, std::uint64_t>> ranked;
    ranked.reserve(records.size());
    for (const auto& rec : records) ranked.push_back({rec.score, rec.sample_id});
    std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return a.second < b.second;
    });
    const std::size_t take = std::min(count, ranked.size());
    std::vector<std::uint64_t> out;
    out.reserve(take);
    for (std::size_t i = 0; i < take; ++i) out.push_back(ranked[i].second);
    return out;
}

void save_pivotal_json(const PivotalSet& set, const std::string& path,
                       const datagen::BiasedDataset* ground_truth,
                       const std::string& config_hash) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open for write: " + path);
    const auto id_list = [](const std::vector<std::uint64_t>& ids) {
        std::string s = "[";
        for (std::size_t i = 0; i < ids.size(); ++i) {
            if (i) s += ",";
            s += std::to_string(ids[i]);
        }
        return s + "]";
    };
    out << "{\n";
    out << "  \"meta\": {\"config_hash\": \"" << config_hash << "\"},\n";
    out << "  \"k\": " << set.k << ",\n";
    out << "  \"num_runs\": " << set.num_runs << ",\n";
    out << "  \"method\": \"" << influence::method_name(set.method) << "\",\n";
    out << "  \"seeds\": " << id_list(set.seeds) << ",\n";
    out << "  \"warning\": \"" << set.warning << "\",\n";
    out << "  \"per_run\": [";
    for (std::size_t run = 0; run < set.per_run.size(); ++run) {
        out << (run ? ", [" : "[");
        for (std::size_t c = 0; c < set.per_run[run].size(); ++c)
            out << (c ? ", " : "") << id_list(set.per_run[run][c]);
        out << "]";
    }
    out << "],\n";
    out << "  \"intersection\": " << id_list(set.intersection);
    if (ground_truth != nullptr) {
        out << ",\n  \"precision\": {\"per_run\": [";
        for (int run = 0; run < set.num_runs; ++run) {
            const auto ids = set.run_union(run);
            out << (run ? ", " : "")
                << (ids.empty() ? "null" : g17(detection_precision(ids, *ground_truth)));
        }
        out << "], \"intersection\": "
            << (set.intersection.empty() ? "null"
                                         : g17(detection_precision(set.intersection, *ground_truth)))
            << "}";
    }
    out << "\n}\n";
    if (!out) throw std::runtime_error("write failed: " + path);
}

PivotalSet load_pivotal_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw MissingArtifactError(path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("pivotal json: " + std::string(e.what()));
    }
    try {
        PivotalSet set;
        set.k = j.at("k").get<int>();
        set.num_runs = j.at("num_runs").get<int>();
        set.method = influence::method_from_name(j.at("method").get<std::string>());
        set.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
        set.warning = j.value("warning", "");
        set.per_run = j.at("per_run").get<std::vector<std::vector<std::vector<std::uint64_t>>>>();
        set.intersection = j.at("intersection").get<std::vector<std::uint64_t>>();
        return set;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("pivotal json: " + std::string(e.what()));
    }
}

}  // namespace biasfix::selection
