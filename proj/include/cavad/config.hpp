#pragma once

// Flat key=value experiment configuration with dataset presets.
// A single registry per config type drives parsing, --help text and the
// canonical dump, so the three can never drift apart.

#include <functional>
#include <string>
#include <vector>

#include "cavad/tensor.hpp"

namespace cavad {

struct TrainConfig {
    std::string dataset = "synth";  // preset: synth | ped2 | avenue | shanghaitech
    int b = 8;
    real lr = 8e-5;
    int phase1_epochs = 20;
    int phase2_epochs = 20;
    real lambda = 10.0;
    int k = 8;
    int n = 32;
    int N_mem = 50;
    int K_clusters = 10;
    real margin_m = 1.0;
    real margin_alpha_m = 1.0;
    real w_mem = 1.0;
    real w_cluster = 1.0;
    real w_sdl = 1.0;
    long seed = 1;
    int frame_size = 224;
    int clip_len = 8;
    int clip_stride = 1;
    int feat_h = 16;
    int feat_w = 16;
    int em_base = 16;  // 3D trunk widths em_base -> 2x -> 4x; feature channels C = 4*em_base
    int d_c = 16;      // compressed channel count inside temporal attention
    int cic_width = 64;
    int cic_blocks = 4;
    // ablation switches (Table-3-style rows)
    bool filtering = true;
    bool temporal_attention = true;
    bool avg_pool = true;
    bool max_pool = true;
    bool c1_term = true;
    bool c2_term = true;
    bool c3_term = true;
    bool clustering = true;
    bool sdl = true;

    int channels() const { return 4 * em_base; }
};

struct SynthConfig {
    int scenes = 2;
    int train_videos_per_scene = 2;
    int test_videos_per_scene = 1;
    int frames_per_video = 144;
    int frame_px = 48;
    int sprites_per_video = 2;
    int anomalies_per_test_video = 1;
    int anomaly_len = 48;
};

struct ConfigKey {
    std::string name;
    std::string type;  // int | real | bool | string
    std::string def;   // default rendered as text
    std::string help;
};

const std::vector<ConfigKey>& train_config_keys();
const std::vector<ConfigKey>& synth_config_keys();

// Applies one key=value assignment; throws on unknown key or bad value.
void set_train_key(TrainConfig& cfg, const std::string& key, const std::string& value);
void set_synth_key(SynthConfig& cfg, const std::string& key, const std::string& value);

// Reads a flat config file ('#' comments, blank lines ignored) plus --set
// overrides. The dataset preset is applied first, then file keys in file
// order, then overrides in argv order. Empty path = all defaults.
TrainConfig parse_train_config(const std::string& path,
                               const std::vector<std::string>& overrides);
SynthConfig parse_synth_config(const std::string& path,
                               const std::vector<std::string>& overrides);

void validate(const TrainConfig& cfg);
void validate(const SynthConfig& cfg);

// Canonical key=value text, one key per line in registry order.
std::string dump_config(const TrainConfig& cfg);
std::string dump_config(const SynthConfig& cfg);

std::string config_help_text();  // every key of both configs with defaults

}  // namespace cavad
