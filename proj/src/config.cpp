#include "biasfix/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>

#include "biasfix/errors.hpp"
#include "biasfix/util.hpp"

namespace biasfix::config {

namespace {

std::string trim(const std::string& s) {
    const auto begin = s.find_first_not_of(" \t\r\n");
    if (begin == std::string::npos) return "";
    const auto end = s.find_last_not_of(" \t\r\n");
    return s.substr(begin, end - begin + 1);
}

std::vector<std::string> split_list(const std::string& value) {
    std::vector<std::string> parts;
    std::string item;
    std::stringstream ss(value);
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) parts.push_back(item);
    }
    return parts;
}

}  // namespace

KvConfig KvConfig::parse(std::istream& in) {
    KvConfig kv;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const std::string stripped = trim(line);
        if (stripped.empty() || stripped[0] == '#') continue;
        const auto eq = stripped.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value");
        const std::string key = trim(stripped.substr(0, eq));
        if (key.empty())
            throw ConfigError("config line " + std::to_string(line_no) + ": empty key");
        kv.values_[key] = trim(stripped.substr(eq + 1));
    }
    return kv;
}

KvConfig KvConfig::parse_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    return parse(in);
}

std::string KvConfig::get_string(const std::string& key, const std::string& fallback) {
    used_.insert(key);
    const auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
}

bool KvConfig::get_bool(const std::string& key, bool fallback) {
    const std::string raw = get_string(key, fallback ? "true" : "false");
    if (raw == "true" || raw == "1") return true;
    if (raw == "false" || raw == "0") return false;
    throw ConfigError(key + ": expected true/false, got '" + raw + "'");
}

int KvConfig::get_int(const std::string& key, int fallback) {
    used_.insert(key);
    const auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    int v = 0;
    const auto [p, ec] = std::from_chars(it->second.data(), it->second.data() + it->second.size(), v);
    if (ec != std::errc() || p != it->second.data() + it->second.size())
        throw ConfigError(key + ": expected integer, got '" + it->second + "'");
    return v;
}

std::uint64_t KvConfig::get_u64(const std::string& key, std::uint64_t fallback) {
    used_.insert(key);
    const auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    std::uint64_t v = 0;
    const auto [p, ec] = std::from_chars(it->second.data(), it->second.data() + it->second.size(), v);
    if (ec != std::errc() || p != it->second.data() + it->second.size())
        throw ConfigError(key + ": expected unsigned integer, got '" + it->second + "'");
    return v;
}

double KvConfig::get_double(const std::string& key, double fallback) {
    used_.insert(key);
    const auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    try {
        std::size_t pos = 0;
        const double v = std::stod(it->second, &pos);
        if (pos != it->second.size()) throw std::invalid_argument("");
        return v;
    } catch (const std::exception&) {
        throw ConfigError(key + ": expected number, got '" + it->second + "'");
    }
}

std::vector<int> KvConfig::get_int_list(const std::string& key, const std::vector<int>& fallback) {
    used_.insert(key);
    const auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    std::vector<int> out;
    for (const auto& item : split_list(it->second)) {
        int v = 0;
        const auto [p, ec] = std::from_chars(item.data(), item.data() + item.size(), v);
        if (ec != std::errc() || p != item.data() + item.size())
            throw ConfigError(key + ": expected integer list, got '" + it->second + "'");
        out.push_back(v);
    }
    return out;
}

std::vector<double> KvConfig::get_double_list(const std::string& key,
                                              const std::vector<double>& fallback) {
    used_.insert(key);
    const auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    std::vector<double> out;
    for (const auto& item : split_list(it->second)) {
        try {
            std::size_t pos = 0;
            out.push_back(std::stod(item, &pos));
            if (pos != item.size()) throw std::invalid_argument("");
        } catch (const std::exception&) {
            throw ConfigError(key + ": expected number list, got '" + it->second + "'");
        }
    }
    return out;
}

std::vector<std::uint64_t> KvConfig::get_u64_list(const std::string& key,
                                                  const std::vector<std::uint64_t>& fallback) {
    used_.insert(key);
    const auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    std::vector<std::uint64_t> out;
    for (const auto& item : split_list(it->second)) {
        std::uint64_t v = 0;
        const auto [p, ec] = std::from_chars(item.data(), item.data() + item.size(), v);
        if (ec != std::errc() || p != item.data() + item.size())
            throw ConfigError(key + ": expected unsigned integer list, got '" + it->second + "'");
        out.push_back(v);
    }
    return out;
}

std::vector<std::string> KvConfig::unused_keys() const {
    std::vector<std::string> out;
    for (const auto& [key, value] : values_)
        if (used_.count(key) == 0) out.push_back(key);
    return out;
}

std::vector<int> PipelineConfig::dims() const {
    std::vector<int> d;
    d.push_back(data_source == "idx" ? 3 * 28 * 28 : gen.feature_dim());
    d.insert(d.end(), hidden_dims.begin(), hidden_dims.end());
    d.push_back(num_classes());
    return d;
}

int PipelineConfig::num_classes() const { return data_source == "idx" ? 10 : gen.num_classes; }

void PipelineConfig::validate() const {
    if (data_source != "synthetic" && data_source != "idx")
        throw ConfigError("data.source: expected synthetic or idx, got '" + data_source + "'");
    if (data_source == "idx") {
        if (idx_images.empty() || idx_labels.empty())
            throw ConfigError("data.idx_images / data.idx_labels required for data.source = idx");
    } else {
        try {
            gen.validate();
        } catch (const std::invalid_argument& e) {
            throw ConfigError(std::string("data: ") + e.what());
        }
    }
    if (test_per_class < 1) throw ConfigError("data.test_per_class: must be >= 1");
    for (int h : hidden_dims)
        if (h < 1) throw ConfigError("model.hidden_dims: entries must be >= 1");
    if (erm.epochs < 1) throw ConfigError("erm.epochs: must be >= 1");
    if (erm.lr <= 0.0) throw ConfigError("erm.lr: must be > 0");
    if (erm.batch_size < 1) throw ConfigError("erm.batch_size: must be >= 1");
    try {
        influence::method_from_name(score_method);
    } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("score.method: ") + e.what());
    }
    if (bcsi.t_epochs < 1) throw ConfigError("bcsi.t_epochs: must be >= 1");
    if (bcsi.q <= 0.0 || bcsi.q > 1.0) throw ConfigError("bcsi.q: must be in (0,1]");
    if (bcsi.lr <= 0.0) throw ConfigError("bcsi.lr: must be > 0");
    if (bcsi.batch_size < 1) throw ConfigError("bcsi.batch_size: must be >= 1");
    if (bcsi.damping < 0.0) throw ConfigError("bcsi.damping: must be >= 0");
    if (si.epochs < 1) throw ConfigError("si.epochs: must be >= 1");
    if (si.lr <= 0.0) throw ConfigError("si.lr: must be > 0");
    if (si.batch_size < 1) throw ConfigError("si.batch_size: must be >= 1");
    if (si.damping < 0.0) throw ConfigError("si.damping: must be >= 0");
    if (k < 1) throw ConfigError("pivotal.k: must be >= 1");
    if (num_runs < 1) throw ConfigError("pivotal.num_runs: must be >= 1");
    if (static_cast<int>(run_seeds.size()) != num_runs)
        throw ConfigError("pivotal.seeds: need exactly pivotal.num_runs entries");
    for (std::size_t i = 0; i < run_seeds.size(); ++i)
        for (std::size_t j = i + 1; j < run_seeds.size(); ++j)
            if (run_seeds[i] == run_seeds[j])
                throw ConfigError("pivotal.seeds: entries must be distinct");
    if (ft.lambda < 0.0) throw ConfigError("finetune.lambda: must be >= 0");
    if (ft.n_iter < 1) throw ConfigError("finetune.n_iter: must be >= 1");
    if (ft.lr <= 0.0) throw ConfigError("finetune.lr: must be > 0");
    if (ft.full_batch_cap < 1) throw ConfigError("finetune.full_batch_cap: must be >= 1");
    if (eval_seeds.empty()) throw ConfigError("eval.seeds: need at least one seed");
    for (std::size_t i = 0; i < eval_seeds.size(); ++i)
        for (std::size_t j = i + 1; j < eval_seeds.size(); ++j)
            if (eval_seeds[i] == eval_seeds[j])
                throw ConfigError("eval.seeds: entries must be distinct");
    for (double r : sweep_r)
        if (r < 0.0 || r > 1.0) throw ConfigError("eval.sweep_r: entries must be in [0,1]");
    if (out_dir.empty()) throw ConfigError("out.dir: must be nonempty");
}

std::string PipelineConfig::canonical() const {
    std::ostringstream out;
    const auto u64s = [](const std::vector<std::uint64_t>& xs) {
        std::string s;
        for (std::size_t i = 0; i < xs.size(); ++i)
            s += (i ? "," : "") + std::to_string(xs[i]);
        return s;
    };
    out << "data.source = " << data_source << "\n";
    if (data_source == "idx") {
        out << "data.idx_images = " << idx_images << "\n";
        out << "data.idx_labels = " << idx_labels << "\n";
        out << "data.idx_test_images = " << idx_test_images << "\n";
        out << "data.idx_test_labels = " << idx_test_labels << "\n";
        out << "data.r = " << g17(gen.conflict_ratio) << "\n";
        out << "data.seed = " << gen.seed << "\n";
    } else {
        out << "data.n_per_class = " << gen.n_per_class << "\n";
        out << "data.num_classes = " << gen.num_classes << "\n";
        out << "data.d_signal = " << gen.d_signal << "\n";
        out << "data.d_bias = " << gen.d_bias << "\n";
        out << "data.signal_margin = " << g17(gen.signal_margin) << "\n";
        out << "data.bias_margin = " << g17(gen.bias_margin) << "\n";
        out << "data.noise_sigma = " << g17(gen.noise_sigma) << "\n";
        out << "data.r = " << g17(gen.conflict_ratio) << "\n";
        out << "data.seed = " << gen.seed << "\n";
    }
    out << "data.test_per_class = " << test_per_class << "\n";
    out << "model.hidden_dims = ";
    for (std::size_t i = 0; i < hidden_dims.size(); ++i)
        out << (i ? "," : "") << hidden_dims[i];
    out << "\n";
    out << "erm.epochs = " << erm.epochs << "\n";
    out << "erm.lr = " << g17(erm.lr) << "\n";
    out << "erm.batch_size = " << erm.batch_size << "\n";
    out << "erm.weight_decay = " << g17(erm.weight_decay) << "\n";
    out << "erm.optimizer = " << (erm.optimizer == nn::Optimizer::Adam ? "adam" : "sgd") << "\n";
    out << "erm.seed = " << erm.seed << "\n";
    out << "score.method = " << score_method << "\n";
    out << "bcsi.t_epochs = " << bcsi.t_epochs << "\n";
    out << "bcsi.q = " << g17(bcsi.q) << "\n";
    out << "bcsi.lr = " << g17(bcsi.lr) << "\n";
    out << "bcsi.batch_size = " << bcsi.batch_size << "\n";
    out << "bcsi.damping = " << g17(bcsi.damping) << "\n";
    out << "bcsi.seed = " << bcsi.seed << "\n";
    out << "si.epochs = " << si.epochs << "\n";
    out << "si.lr = " << g17(si.lr) << "\n";
    out << "si.batch_size = " << si.batch_size << "\n";
    out << "si.damping = " << g17(si.damping) << "\n";
    out << "si.seed = " << si.seed << "\n";
    out << "pivotal.k = " << k << "\n";
    out << "pivotal.num_runs = " << num_runs << "\n";
    out << "pivotal.seeds = " << u64s(run_seeds) << "\n";
    out << "finetune.lambda = " << g17(ft.lambda) << "\n";
    out << "finetune.n_iter = " << ft.n_iter << "\n";
    out << "finetune.lr = " << g17(ft.lr) << "\n";
    out << "finetune.lr_final_factor = " << g17(ft.lr_final_factor) << "\n";
    out << "finetune.weight_decay = " << g17(ft.weight_decay) << "\n";
    out << "finetune.reinit_last_layer = " << (ft.reinit_last_layer ? "true" : "false") << "\n";
    out << "finetune.full_batch_cap = " << ft.full_batch_cap << "\n";
    out << "finetune.seed = " << ft.seed << "\n";
    out << "eval.seeds = " << u64s(eval_seeds) << "\n";
    out << "eval.sweep_r = ";
    for (std::size_t i = 0; i < sweep_r.size(); ++i)
        out << (i ? "," : "") << g17(sweep_r[i]);
    out << "\n";
    out << "eval.compare_methods = " << (compare_methods ? "true" : "false") << "\n";
    return out.str();
}

std::string PipelineConfig::hash8() const {
    const std::uint64_t h = fnv1a64(canonical());
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return std::string(buf).substr(0, 8);
}

PipelineConfig load_pipeline_config(KvConfig& kv) {
    PipelineConfig cfg;
    cfg.data_source = kv.get_string("data.source", cfg.data_source);
    cfg.gen.n_per_class = kv.get_int("data.n_per_class", cfg.gen.n_per_class);
    cfg.gen.num_classes = kv.get_int("data.num_classes", cfg.gen.num_classes);
    cfg.gen.d_signal = kv.get_int("data.d_signal", cfg.gen.d_signal);
    cfg.gen.d_bias = kv.get_int("data.d_bias", cfg.gen.d_bias);
    cfg.gen.signal_margin = kv.get_double("data.signal_margin", cfg.gen.signal_margin);
    cfg.gen.bias_margin = kv.get_double("data.bias_margin", cfg.gen.bias_margin);
    cfg.gen.noise_sigma = kv.get_double("data.noise_sigma", cfg.gen.noise_sigma);
    cfg.gen.conflict_ratio = kv.get_double("data.r", cfg.gen.conflict_ratio);
    cfg.gen.seed = kv.get_u64("data.seed", cfg.gen.seed);
    cfg.idx_images = kv.get_string("data.idx_images", cfg.idx_images);
    cfg.idx_labels = kv.get_string("data.idx_labels", cfg.idx_labels);
    cfg.idx_test_images = kv.get_string("data.idx_test_images", cfg.idx_test_images);
    cfg.idx_test_labels = kv.get_string("data.idx_test_labels", cfg.idx_test_labels);
    cfg.test_per_class = kv.get_int("data.test_per_class", cfg.test_per_class);
    cfg.hidden_dims = kv.get_int_list("model.hidden_dims", cfg.hidden_dims);
    cfg.erm.epochs = kv.get_int("erm.epochs", cfg.erm.epochs);
    cfg.erm.lr = kv.get_double("erm.lr", cfg.erm.lr);
    cfg.erm.batch_size = kv.get_int("erm.batch_size", cfg.erm.batch_size);
    cfg.erm.weight_decay = kv.get_double("erm.weight_decay", cfg.erm.weight_decay);
    const std::string opt = kv.get_string("erm.optimizer", "adam");
    if (opt == "adam")
        cfg.erm.optimizer = nn::Optimizer::Adam;
    else if (opt == "sgd")
        cfg.erm.optimizer = nn::Optimizer::Sgd;
    else
        throw ConfigError("erm.optimizer: expected adam or sgd, got '" + opt + "'");
    cfg.erm.seed = kv.get_u64("erm.seed", cfg.erm.seed);
    cfg.score_method = kv.get_string("score.method", cfg.score_method);
    cfg.bcsi.t_epochs = kv.get_int("bcsi.t_epochs", cfg.bcsi.t_epochs);
    cfg.bcsi.q = kv.get_double("bcsi.q", cfg.bcsi.q);
    cfg.bcsi.lr = kv.get_double("bcsi.lr", cfg.bcsi.lr);
    cfg.bcsi.batch_size = kv.get_int("bcsi.batch_size", cfg.bcsi.batch_size);
    cfg.bcsi.damping = kv.get_double("bcsi.damping", cfg.bcsi.damping);
    cfg.bcsi.seed = kv.get_u64("bcsi.seed", cfg.bcsi.seed);
    cfg.si.epochs = kv.get_int("si.epochs", cfg.si.epochs);
    cfg.si.lr = kv.get_double("si.lr", cfg.si.lr);
    cfg.si.batch_size = kv.get_int("si.batch_size", cfg.si.batch_size);
    cfg.si.damping = kv.get_double("si.damping", cfg.si.damping);
    cfg.si.seed = kv.get_u64("si.seed", cfg.si.seed);
    cfg.k = kv.get_int("pivotal.k", cfg.k);
    cfg.num_runs = kv.get_int("pivotal.num_runs", cfg.num_runs);
    cfg.run_seeds = kv.get_u64_list("pivotal.seeds", cfg.run_seeds);
    cfg.ft.lambda = kv.get_double("finetune.lambda", cfg.ft.lambda);
    cfg.ft.n_iter = kv.get_int("finetune.n_iter", cfg.ft.n_iter);
    cfg.ft.lr = kv.get_double("finetune.lr", cfg.ft.lr);
    cfg.ft.lr_final_factor = kv.get_double("finetune.lr_final_factor", cfg.ft.lr_final_factor);
    cfg.ft.weight_decay = kv.get_double("finetune.weight_decay", cfg.ft.weight_decay);
    cfg.ft.reinit_last_layer = kv.get_bool("finetune.reinit_last_layer", cfg.ft.reinit_last_layer);
    cfg.ft.full_batch_cap = kv.get_int("finetune.full_batch_cap", cfg.ft.full_batch_cap);
    cfg.ft.seed = kv.get_u64("finetune.seed", cfg.ft.seed);
    cfg.eval_seeds = kv.get_u64_list("eval.seeds", cfg.eval_seeds);
    cfg.sweep_r = kv.get_double_list("eval.sweep_r", cfg.sweep_r);
    cfg.compare_methods = kv.get_bool("eval.compare_methods", cfg.compare_methods);
    cfg.out_dir = kv.get_string("out.dir", cfg.out_dir);

    const auto unknown = kv.unused_keys();
    if (!unknown.empty()) throw ConfigError("unknown config key: " + unknown.front());
    cfg.validate();
    return cfg;
}

PipelineConfig load_pipeline_config_file(const std::string& path) {
    KvConfig kv = KvConfig::parse_file(path);
    return load_pipeline_config(kv);
}

void apply_seed_override(PipelineConfig& cfg, std::uint64_t base) {
    cfg.gen.seed = base;
    cfg.erm.seed = base + 1;
    cfg.ft.seed = base + 2;
    cfg.bcsi.seed = base + 3;
    cfg.si.seed = base + 4;
    for (std::size_t i = 0; i < cfg.run_seeds.size(); ++i)
        cfg.run_seeds[i] = base + 10 + static_cast<std::uint64_t>(i);
    for (std::size_t i = 0; i < cfg.eval_seeds.size(); ++i)
        cfg.eval_seeds[i] = base + 100 + static_cast<std::uint64_t>(i);
}

}  // namespace biasfix::config
