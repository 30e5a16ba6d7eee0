#include "biasfix/dataset.hpp"

#include <cmath>
#include <stdexcept>

#include "binio.hpp"
#include "biasfix/errors.hpp"
#include "biasfix/rng.hpp"

namespace biasfix::datagen {

double BiasedDataset::empirical_conflict_fraction() const {
    if (samples.empty()) return 0.0;
    std::size_t n = 0;
    for (const auto& s : samples)
        if (s.is_conflicting()) ++n;
    return static_cast<double>(n) / static_cast<double>(samples.size());
}

void GenConfig::validate() const {
    if (n_per_class < 1) throw std::invalid_argument("gen: n_per_class must be >= 1");
    if (num_classes < 2) throw std::invalid_argument("gen: num_classes must be >= 2");
    if (d_signal < num_classes) throw std::invalid_argument("gen: d_signal must be >= num_classes");
    if (d_bias < num_classes) throw std::invalid_argument("gen: d_bias must be >= num_classes");
    if (signal_margin <= 0.0) throw std::invalid_argument("gen: signal_margin must be > 0");
    if (bias_margin <= 0.0) throw std::invalid_argument("gen: bias_margin must be > 0");
    if (bias_margin <= signal_margin)
        throw std::invalid_argument("gen: bias_margin must exceed signal_margin");
    if (noise_sigma <= 0.0) throw std::invalid_argument("gen: noise_sigma must be > 0");
    if (conflict_ratio < 0.0 || conflict_ratio > 1.0)
        throw std::invalid_argument("gen: conflict_ratio must be in [0,1]");
}

namespace {

// Shared feature model: one-hot class mean in the signal block, one-hot bias
// mean in the bias block, i.i.d. Gaussian noise everywhere. Draw order per
// sample is part of the determinism contract: bias_attr first, then signal
// noise, then bias noise.
Sample make_sample(std::uint64_t id, int label, int bias_attr, const GenConfig& cfg, Rng& rng) {
    Sample s;
    s.id = id;
    s.label = label;
    s.bias_attr = bias_attr;
    s.features.resize(static_cast<std::size_t>(cfg.feature_dim()));
    for (int j = 0; j < cfg.d_signal; ++j) {
        const double mean = j == label ? cfg.signal_margin : 0.0;
        s.features[static_cast<std::size_t>(j)] = mean + cfg.noise_sigma * rng.normal();
    }
    for (int j = 0; j < cfg.d_bias; ++j) {
        const double mean = j == bias_attr ? cfg.bias_margin : 0.0;
        s.features[static_cast<std::size_t>(cfg.d_signal + j)] =
            mean + cfg.noise_sigma * rng.normal();
    }
    return s;
}

}  // namespace

BiasedDataset generate_synthetic(const GenConfig& cfg) {
    cfg.validate();
    Rng rng(cfg.seed);
    BiasedDataset ds;
    ds.num_classes = cfg.num_classes;
    ds.conflict_ratio = cfg.conflict_ratio;
    ds.split = Split::Train;
    ds.feature_dim = cfg.feature_dim();
    ds.samples.reserve(static_cast<std::size_t>(cfg.n_per_class) * cfg.num_classes);
    std::uint64_t id = 0;
    for (int y = 0; y < cfg.num_classes; ++y) {
        for (int i = 0; i < cfg.n_per_class; ++i) {
            int bias_attr = y;
            if (rng.uniform() < cfg.conflict_ratio) {
                // uniform over the other C-1 classes
                const auto shift = 1 + rng.uniform_int(static_cast<std::uint64_t>(cfg.num_classes - 1));
                bias_attr = static_cast<int>((static_cast<std::uint64_t>(y) + shift) % cfg.num_classes);
            }
            ds.samples.push_back(make_sample(id++, y, bias_attr, cfg, rng));
        }
    }
    return ds;
}

BiasedDataset generate_unbiased_test(const GenConfig& cfg, int n_per_class) {
    cfg.validate();
    if (n_per_class < 1) throw std::invalid_argument("gen: test n_per_class must be >= 1");
    Rng rng(cfg.seed + 0x7e57ULL);  // decouple from the train stream
    BiasedDataset ds;
    ds.num_classes = cfg.num_classes;
    ds.conflict_ratio = static_cast<double>(cfg.num_classes - 1) / cfg.num_classes;
    ds.split = Split::Test;
    ds.feature_dim = cfg.feature_dim();
    ds.samples.reserve(static_cast<std::size_t>(n_per_class) * cfg.num_classes);
    std::uint64_t id = 0;
    for (int y = 0; y < cfg.num_classes; ++y) {
        for (int i = 0; i < n_per_class; ++i) {
            const int bias_attr =
                static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(cfg.num_classes)));
            ds.samples.push_back(make_sample(id++, y, bias_attr, cfg, rng));
        }
    }
    return ds;
}

const std::array<std::array<double, 3>, 10> kColorPalette = {{
    {1.0, 0.0, 0.0},  // red
    {0.0, 1.0, 0.0},  // green
    {0.0, 0.0, 1.0},  // blue
    {1.0, 1.0, 0.0},  // yellow
    {1.0, 0.0, 1.0},  // magenta
    {0.0, 1.0, 1.0},  // cyan
    {1.0, 0.5, 0.0},  // orange
    {0.5, 0.0, 0.5},  // purple
    {0.0, 0.5, 0.5},  // teal
    {0.5, 0.5, 0.0},  // olive
}};

namespace {

std::uint32_t be32(const unsigned char* p) {
    return (std::uint32_t(p[0]) << 24) | (std::uint32_t(p[1]) << 16) | (std::uint32_t(p[2]) << 8) |
           std::uint32_t(p[3]);
}

}  // namespace

BiasedDataset load_idx_with_color_bias(const std::string& images_path,
                                       const std::string& labels_path, double conflict_ratio,
                                       std::uint64_t seed, Split split) {
    if (conflict_ratio < 0.0 || conflict_ratio > 1.0)
        throw std::invalid_argument("idx: conflict_ratio must be in [0,1]");
    const std::string img = detail::read_file(images_path);
    const std::string lab = detail::read_file(labels_path);
    const auto* ip = reinterpret_cast<const unsigned char*>(img.data());
    const auto* lp = reinterpret_cast<const unsigned char*>(lab.data());
    if (img.size() < 16 || be32(ip) != 0x00000803u)
        throw FormatError("idx: bad image magic in " + images_path);
    if (lab.size() < 8 || be32(lp) != 0x00000801u)
        throw FormatError("idx: bad label magic in " + labels_path);
    const std::uint32_t n = be32(ip + 4);
    const std::uint32_t rows = be32(ip + 8);
    const std::uint32_t cols = be32(ip + 12);
    if (be32(lp + 4) != n) throw FormatError("idx: image/label count mismatch");
    const std::size_t pixels = std::size_t(rows) * cols;
    if (img.size() != 16 + std::size_t(n) * pixels) throw FormatError("idx: image payload size");
    if (lab.size() != 8 + std::size_t(n)) throw FormatError("idx: label payload size");

    Rng rng(seed);
    BiasedDataset ds;
    ds.num_classes = 10;
    ds.conflict_ratio = conflict_ratio;
    ds.split = split;
    ds.feature_dim = static_cast<int>(3 * pixels);
    ds.samples.resize(n);
    for (std::uint32_t i = 0; i < n; ++i) {
        Sample& s = ds.samples[i];
        s.id = i;
        s.label = lp[8 + i];
        if (s.label > 9) throw FormatError("idx: label out of range");
        int color = s.label;
        if (rng.uniform() < conflict_ratio) {
            const auto shift = 1 + rng.uniform_int(9);
            color = static_cast<int>((static_cast<std::uint64_t>(color) + shift) % 10);
        }
        s.bias_attr = color;
        // planar RGB: channel-major [R plane | G plane | B plane], [0,1] scale
        s.features.resize(3 * pixels);
        const unsigned char* px = ip + 16 + std::size_t(i) * pixels;
        for (int c = 0; c < 3; ++c) {
            const double tint = kColorPalette[static_cast<std::size_t>(color)][static_cast<std::size_t>(c)];
            for (std::size_t p = 0; p < pixels; ++p)
                s.features[static_cast<std::size_t>(c) * pixels + p] = tint * (px[p] / 255.0);
        }
    }
    return ds;
}

// ---------------------------------------------------------------------------
// BFDS dataset file
//   magic "BFDS" | version u8=1 | num_classes u16 | feature_dim u32 |
//   conflict_ratio f64 | split u8 | sample count u64 |
//   per sample: id u64, label u16, bias_attr u16, features f64[d] |
//   crc32 u32 of all preceding bytes. Everything little-endian.
// ---------------------------------------------------------------------------

void save_dataset(const BiasedDataset& ds, const std::string& path) {
    detail::Writer w;
    w.raw("BFDS", 4);
    w.u8(1);
    w.u16(static_cast<std::uint16_t>(ds.num_classes));
    w.u32(static_cast<std::uint32_t>(ds.feature_dim));
    w.f64(ds.conflict_ratio);
    w.u8(static_cast<std::uint8_t>(ds.split));
    w.u64(ds.samples.size());
    for (const auto& s : ds.samples) {
        w.u64(s.id);
        w.u16(static_cast<std::uint16_t>(s.label));
        w.u16(static_cast<std::uint16_t>(s.bias_attr));
        for (double f : s.features) w.f64(f);
    }
    detail::write_file_with_crc(path, w);
}

BiasedDataset load_dataset(const std::string& path) {
    const std::string body = detail::read_file_check_crc(path, "BFDS", 28);
    detail::Reader r{reinterpret_cast<const unsigned char*>(body.data()), body.size(), 4};
    const std::uint8_t version = r.u8();
    if (version != 1) throw FormatError("bfds: unsupported version " + std::to_string(version));
    BiasedDataset ds;
    ds.num_classes = r.u16();
    ds.feature_dim = static_cast<int>(r.u32());
    ds.conflict_ratio = r.f64();
    const std::uint8_t split = r.u8();
    if (split > 2) throw FormatError("bfds: bad split tag");
    ds.split = static_cast<Split>(split);
    const std::uint64_t count = r.u64();
    ds.samples.resize(count);
    for (std::uint64_t i = 0; i < count; ++i) {
        Sample& s = ds.samples[i];
        s.id = r.u64();
        s.label = r.u16();
        s.bias_attr = r.u16();
        if (s.label >= ds.num_classes || s.bias_attr >= ds.num_classes)
            throw FormatError("bfds: label out of range");
        s.features.resize(static_cast<std::size_t>(ds.feature_dim));
        for (auto& f : s.features) f = r.f64();
    }
    if (r.off != body.size()) throw FormatError("bfds: trailing bytes");
    return ds;
}

}  // namespace biasfix::datagen
