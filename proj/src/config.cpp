#include "cavad/config.hpp"

#include <cstdio>
#include <fstream>
#include <map>
#include <memory>
#include <sstream>
#include <stdexcept>

namespace cavad {

namespace {

std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

int parse_int(const std::string& key, const std::string& v) {
    size_t pos = 0;
    int out;
    try {
        out = std::stoi(v, &pos);
    } catch (...) {
        throw std::runtime_error("config: key '" + key + "' expects an integer, got '" + v + "'");
    }
    if (pos != v.size())
        throw std::runtime_error("config: key '" + key + "' expects an integer, got '" + v + "'");
    return out;
}

long parse_long(const std::string& key, const std::string& v) {
    size_t pos = 0;
    long out;
    try {
        out = std::stol(v, &pos);
    } catch (...) {
        throw std::runtime_error("config: key '" + key + "' expects an integer, got '" + v + "'");
    }
    if (pos != v.size())
        throw std::runtime_error("config: key '" + key + "' expects an integer, got '" + v + "'");
    return out;
}

real parse_real(const std::string& key, const std::string& v) {
    size_t pos = 0;
    real out;
    try {
        out = std::stod(v, &pos);
    } catch (...) {
        throw std::runtime_error("config: key '" + key + "' expects a number, got '" + v + "'");
    }
    if (pos != v.size())
        throw std::runtime_error("config: key '" + key + "' expects a number, got '" + v + "'");
    return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw std::runtime_error("config: key '" + key + "' expects true/false, got '" + v + "'");
}

std::string render_real(real x) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", x);
    return buf;
}

template <typename C>
struct Entry {
    ConfigKey key;
    std::function<void(C&, const std::string&)> set;
    std::function<std::string(const C&)> get;
};

template <typename C>
Entry<C> ikey(const char* name, int C::* m, const char* def, const char* help) {
    return {ConfigKey{name, "int", def, help},
            [name, m](C& c, const std::string& v) { c.*m = parse_int(name, v); },
            [m](const C& c) { return std::to_string(c.*m); }};
}

template <typename C>
Entry<C> lkey(const char* name, long C::* m, const char* def, const char* help) {
    return {ConfigKey{name, "int", def, help},
            [name, m](C& c, const std::string& v) { c.*m = parse_long(name, v); },
            [m](const C& c) { return std::to_string(c.*m); }};
}

template <typename C>
Entry<C> rkey(const char* name, real C::* m, const char* def, const char* help) {
    return {ConfigKey{name, "real", def, help},
            [name, m](C& c, const std::string& v) { c.*m = parse_real(name, v); },
            [m](const C& c) { return render_real(c.*m); }};
}

template <typename C>
Entry<C> bkey(const char* name, bool C::* m, const char* def, const char* help) {
    return {ConfigKey{name, "bool", def, help},
            [name, m](C& c, const std::string& v) { c.*m = parse_bool(name, v); },
            [m](const C& c) { return std::string(c.*m ? "true" : "false"); }};
}

template <typename C>
Entry<C> skey(const char* name, std::string C::* m, const char* def, const char* help) {
    return {ConfigKey{name, "string", def, help},
            [m](C& c, const std::string& v) { c.*m = v; },
            [m](const C& c) { return c.*m; }};
}

const std::vector<Entry<TrainConfig>>& train_entries() {
    using T = TrainConfig;
    static const std::vector<Entry<T>> e = {
        skey<T>("dataset", &T::dataset, "synth",
                "preset (synth|ped2|avenue|shanghaitech); sets lambda/k and, for synth, "
                "desk-scale shapes"),
        ikey<T>("b", &T::b, "8", "batch size (also the scoring window length)"),
        rkey<T>("lr", &T::lr, "8e-05", "Adam learning rate"),
        ikey<T>("phase1_epochs", &T::phase1_epochs, "20", "epochs without clustering"),
        ikey<T>("phase2_epochs", &T::phase2_epochs, "20", "epochs with per-epoch K-means"),
        rkey<T>("lambda", &T::lambda, "10", "weight on the C1 term of the correlation loss"),
        ikey<T>("k", &T::k, "8", "top-k memory read width"),
        ikey<T>("n", &T::n, "32", "causal representation width"),
        ikey<T>("N_mem", &T::N_mem, "50", "memory items"),
        ikey<T>("K_clusters", &T::K_clusters, "10", "K-means centers"),
        rkey<T>("margin_m", &T::margin_m, "1", "memory separateness margin"),
        rkey<T>("margin_alpha_m", &T::margin_alpha_m, "1", "triplet consistency margin"),
        rkey<T>("w_mem", &T::w_mem, "1", "weight on compactness+separateness"),
        rkey<T>("w_cluster", &T::w_cluster, "1", "weight on the cluster loss"),
        rkey<T>("w_sdl", &T::w_sdl, "1", "weight on the scene-debiasing losses"),
        lkey<T>("seed", &T::seed, "1", "master RNG seed"),
        ikey<T>("frame_size", &T::frame_size, "224", "input frames resized to this square"),
        ikey<T>("clip_len", &T::clip_len, "8", "frames per clip (T)"),
        ikey<T>("clip_stride", &T::clip_stride, "1", "clip window stride"),
        ikey<T>("feat_h", &T::feat_h, "16", "feature map height H"),
        ikey<T>("feat_w", &T::feat_w, "16", "feature map width W"),
        ikey<T>("em_base", &T::em_base, "16",
                "motion trunk base width; feature channels C = 4*em_base"),
        ikey<T>("d_c", &T::d_c, "16", "compressed channels in temporal attention (D_c < C)"),
        ikey<T>("cic_width", &T::cic_width, "64", "characterizer trunk base width"),
        ikey<T>("cic_blocks", &T::cic_blocks, "4", "characterizer residual blocks"),
        bkey<T>("filtering", &T::filtering, "true", "top-k read filtering (off: k = N)"),
        bkey<T>("temporal_attention", &T::temporal_attention, "true",
                "variance-map gating in the motion encoder"),
        bkey<T>("avg_pool", &T::avg_pool, "true", "average-pool difference gate (alpha path)"),
        bkey<T>("max_pool", &T::max_pool, "true", "max-pool difference gate (beta path)"),
        bkey<T>("c1_term", &T::c1_term, "true", "cross-branch correlation term"),
        bkey<T>("c2_term", &T::c2_term, "true", "shared-branch correlation term"),
        bkey<T>("c3_term", &T::c3_term, "true", "private-branch correlation term"),
        bkey<T>("clustering", &T::clustering, "true", "phase-2 cluster loss and scoring D"),
        bkey<T>("sdl", &T::sdl, "true", "scene-debiasing learning (auto-off when N_s = 1)"),
    };
    return e;
}

const std::vector<Entry<SynthConfig>>& synth_entries() {
    using S = SynthConfig;
    static const std::vector<Entry<S>> e = {
        ikey<S>("scenes", &S::scenes, "2", "number of distinct scenes (N_s)"),
        ikey<S>("train_videos_per_scene", &S::train_videos_per_scene, "2",
                "normal-only videos per scene"),
        ikey<S>("test_videos_per_scene", &S::test_videos_per_scene, "1",
                "labeled videos per scene"),
        ikey<S>("frames_per_video", &S::frames_per_video, "144", "frames in every video"),
        ikey<S>("frame_px", &S::frame_px, "48", "generated frame resolution (square)"),
        ikey<S>("sprites_per_video", &S::sprites_per_video, "2", "moving sprites per video"),
        ikey<S>("anomalies_per_test_video", &S::anomalies_per_test_video, "1",
                "anomaly intervals per test video"),
        ikey<S>("anomaly_len", &S::anomaly_len, "48", "frames per anomaly interval"),
    };
    return e;
}

template <typename C>
void apply_key(const std::vector<Entry<C>>& entries, C& cfg, const std::string& key,
               const std::string& value, const char* what) {
    for (const auto& e : entries)
        if (e.key.name == key) {
            e.set(cfg, value);
            return;
        }
    throw std::runtime_error(std::string("config: unknown ") + what + " key '" + key + "'");
}

std::vector<std::pair<std::string, std::string>> read_kv_file(const std::string& path) {
    std::vector<std::pair<std::string, std::string>> pairs;
    if (path.empty()) return pairs;
    std::ifstream in(path);
    if (!in) throw std::runtime_error("config: cannot open '" + path + "'");
    std::map<std::string, int> seen;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw std::runtime_error("config: line " + std::to_string(lineno) +
                                     ": expected key = value");
        std::string key = trim(line.substr(0, eq));
        std::string value = trim(line.substr(eq + 1));
        if (key.empty())
            throw std::runtime_error("config: line " + std::to_string(lineno) + ": empty key");
        if (seen.count(key))
            throw std::runtime_error("config: duplicate key '" + key + "' (lines " +
                                     std::to_string(seen[key]) + " and " +
                                     std::to_string(lineno) + ")");
        seen[key] = lineno;
        pairs.emplace_back(key, value);
    }
    return pairs;
}

std::vector<std::pair<std::string, std::string>> split_overrides(
    const std::vector<std::string>& overrides) {
    std::vector<std::pair<std::string, std::string>> pairs;
    for (const auto& o : overrides) {
        size_t eq = o.find('=');
        if (eq == std::string::npos)
            throw std::runtime_error("config: override '" + o + "' is not KEY=VALUE");
        pairs.emplace_back(trim(o.substr(0, eq)), trim(o.substr(eq + 1)));
    }
    return pairs;
}

void apply_preset(TrainConfig& c, const std::string& name) {
    if (name == "synth") {
        c.lambda = 10.0;
        c.k = 6;
        c.frame_size = 48;
        c.feat_h = 6;
        c.feat_w = 6;
        c.em_base = 8;
        c.d_c = 8;
        c.cic_width = 24;
        c.cic_blocks = 2;
        // n <= b: with batch-defined column cosines, more factors than batch
        // items leaves an irreducible correlation floor that buries the score.
        c.n = 8;
        c.N_mem = 30;
        c.K_clusters = 8;
    } else if (name == "ped2") {
        c.lambda = 10.0;
        c.k = 8;
    } else if (name == "avenue") {
        c.lambda = 18.0;
        c.k = 8;
    } else if (name == "shanghaitech") {
        c.lambda = 20.0;
        c.k = 24;
    } else {
        throw std::runtime_error("config: unknown dataset preset '" + name + "'");
    }
}

template <typename C>
std::string dump_impl(const std::vector<Entry<C>>& entries, const C& cfg) {
    std::ostringstream out;
    for (const auto& e : entries) out << e.key.name << " = " << e.get(cfg) << "\n";
    return out.str();
}

}  // namespace

const std::vector<ConfigKey>& train_config_keys() {
    static const std::vector<ConfigKey> keys = [] {
        std::vector<ConfigKey> k;
        for (const auto& e : train_entries()) k.push_back(e.key);
        return k;
    }();
    return keys;
}

const std::vector<ConfigKey>& synth_config_keys() {
    static const std::vector<ConfigKey> keys = [] {
        std::vector<ConfigKey> k;
        for (const auto& e : synth_entries()) k.push_back(e.key);
        return k;
    }();
    return keys;
}

void set_train_key(TrainConfig& cfg, const std::string& key, const std::string& value) {
    apply_key(train_entries(), cfg, key, value, "training");
}

void set_synth_key(SynthConfig& cfg, const std::string& key, const std::string& value) {
    apply_key(synth_entries(), cfg, key, value, "synth");
}

TrainConfig parse_train_config(const std::string& path,
                               const std::vector<std::string>& overrides) {
    auto pairs = read_kv_file(path);
    auto extra = split_overrides(overrides);
    pairs.insert(pairs.end(), extra.begin(), extra.end());

    TrainConfig cfg;
    // the last dataset assignment decides the preset, applied before all keys
    std::string preset;
    for (const auto& [k, v] : pairs)
        if (k == "dataset") preset = v;
    if (!preset.empty()) {
        apply_preset(cfg, preset);
        cfg.dataset = preset;
    }
    for (const auto& [k, v] : pairs) set_train_key(cfg, k, v);
    validate(cfg);
    return cfg;
}

SynthConfig parse_synth_config(const std::string& path,
                               const std::vector<std::string>& overrides) {
    auto pairs = read_kv_file(path);
    auto extra = split_overrides(overrides);
    pairs.insert(pairs.end(), extra.begin(), extra.end());
    SynthConfig cfg;
    for (const auto& [k, v] : pairs) set_synth_key(cfg, k, v);
    validate(cfg);
    return cfg;
}

namespace {

void require(bool ok, const char* msg) {
    if (!ok) throw std::runtime_error(std::string("config: ") + msg);
}

}  // namespace

void validate(const TrainConfig& c) {
    require(c.b >= 2, "b must be >= 2 (batch correlations need multiple samples)");
    require(c.lr > 0.0, "lr must be positive");
    require(c.phase1_epochs >= 0 && c.phase2_epochs >= 0, "epoch counts must be >= 0");
    require(c.lambda > 0.0, "lambda must be positive");
    require(c.k >= 1, "k must be >= 1");
    require(c.N_mem >= 2, "N_mem must be >= 2");
    require(c.k <= c.N_mem, "k must be <= N_mem");
    require(c.n >= 2, "n must be >= 2");
    require(c.K_clusters >= 1, "K_clusters must be >= 1");
    require(c.margin_m >= 0.0 && c.margin_alpha_m >= 0.0, "margins must be >= 0");
    require(c.w_mem > 0.0 && c.w_cluster > 0.0 && c.w_sdl > 0.0, "loss weights must be positive");
    require(c.frame_size >= 8, "frame_size must be >= 8");
    require(c.clip_len >= 2, "clip_len must be >= 2");
    require(c.clip_stride >= 1, "clip_stride must be >= 1");
    require(c.feat_h >= 2 && c.feat_w >= 2, "feature map must be at least 2x2");
    require(c.em_base >= 1, "em_base must be >= 1");
    require(c.d_c >= 1 && c.d_c < c.channels(), "d_c must satisfy 1 <= d_c < channels");
    require(c.cic_width >= 4, "cic_width must be >= 4");
    require(c.cic_blocks >= 1, "cic_blocks must be >= 1");
}

void validate(const SynthConfig& c) {
    require(c.scenes >= 1, "scenes must be >= 1");
    require(c.train_videos_per_scene >= 1, "train_videos_per_scene must be >= 1");
    require(c.test_videos_per_scene >= 0, "test_videos_per_scene must be >= 0");
    require(c.frames_per_video >= 1, "frames_per_video must be >= 1");
    require(c.frame_px >= 16, "frame_px must be >= 16");
    require(c.sprites_per_video >= 1, "sprites_per_video must be >= 1");
    require(c.anomalies_per_test_video >= 0, "anomalies_per_test_video must be >= 0");
    require(c.anomaly_len >= 1, "anomaly_len must be >= 1");
    if (c.anomalies_per_test_video > 0)
        require(c.anomaly_len * c.anomalies_per_test_video <= c.frames_per_video,
                "anomaly intervals do not fit in the video");
}

std::string dump_config(const TrainConfig& cfg) { return dump_impl(train_entries(), cfg); }
std::string dump_config(const SynthConfig& cfg) { return dump_impl(synth_entries(), cfg); }

std::string config_help_text() {
    std::ostringstream out;
    out << "training config keys (train/score/eval/report):\n";
    for (const auto& k : train_config_keys())
        out << "  " << k.name << " (" << k.type << ", default " << k.def << "): " << k.help
            << "\n";
    out << "\nsynth config keys (synth):\n";
    for (const auto& k : synth_config_keys())
        out << "  " << k.name << " (" << k.type << ", default " << k.def << "): " << k.help
            << "\n";
    return out.str();
}

}  // namespace cavad
