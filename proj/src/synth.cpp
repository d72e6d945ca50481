#include "cavad/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <vector>

#include "cavad/image.hpp"
#include "cavad/rng.hpp"

namespace fs = std::filesystem;

namespace cavad {

namespace {

constexpr real kPi = 3.14159265358979323846;

enum class Shape { Square, Disc, Triangle };
enum class AnomalyType { Speed, Shape, Reverse };

struct Sprite {
    Shape shape;
    real x, y;    // center
    real vx, vy;  // per-frame velocity
    int half;     // half extent in pixels
    unsigned char color[3];
};

struct Interval {
    int begin;
    int end;  // exclusive
    AnomalyType type;
};

ImageU8 render_background(int scene, int n_scenes, int px) {
    const real base =
        n_scenes > 1 ? 40.0 + 150.0 * scene / static_cast<real>(n_scenes - 1) : 100.0;
    static const real tint[3][3] = {{1.0, 0.85, 0.7}, {0.7, 1.0, 0.85}, {0.85, 0.7, 1.0}};
    const real freq = 2.0 + scene;
    ImageU8 img(px, px);
    for (int y = 0; y < px; ++y)
        for (int x = 0; x < px; ++x) {
            const real coord = (scene % 2 == 0) ? static_cast<real>(x) : static_cast<real>(y);
            const real stripe = 18.0 * std::sin(2.0 * kPi * freq * coord / px);
            for (int c = 0; c < 3; ++c) {
                real v = base * tint[scene % 3][c] + stripe;
                img.at(y, x, c) =
                    static_cast<unsigned char>(std::clamp(std::lround(v), 0L, 255L));
            }
        }
    return img;
}

void draw_sprite(ImageU8& img, const Sprite& s, Shape shape) {
    const int px = img.w;
    const int cy = static_cast<int>(std::lround(s.y));
    const int cx = static_cast<int>(std::lround(s.x));
    for (int dy = -s.half; dy <= s.half; ++dy)
        for (int dx = -s.half; dx <= s.half; ++dx) {
            bool hit = false;
            switch (shape) {
                case Shape::Square: hit = true; break;
                case Shape::Disc: hit = dx * dx + dy * dy <= s.half * s.half; break;
                case Shape::Triangle: hit = 2 * std::abs(dx) <= dy + s.half; break;
            }
            if (!hit) continue;
            const int y = ((cy + dy) % px + px) % px;  // toroidal wrap
            const int x = ((cx + dx) % px + px) % px;
            for (int c = 0; c < 3; ++c) img.at(y, x, c) = s.color[c];
        }
}

std::vector<Interval> place_intervals(const SynthConfig& cfg, Rng& rng, int type_offset) {
    std::vector<Interval> out;
    int prev_end = 0;
    for (int j = 0; j < cfg.anomalies_per_test_video; ++j) {
        const int nominal = (j + 1) * cfg.frames_per_video / (cfg.anomalies_per_test_video + 1) -
                            cfg.anomaly_len / 2;
        const int jitter = static_cast<int>(rng.bounded(7)) - 3;
        int begin = std::clamp(nominal + jitter, prev_end, cfg.frames_per_video - cfg.anomaly_len);
        if (begin < prev_end || begin + cfg.anomaly_len > cfg.frames_per_video)
            throw std::runtime_error("synth_generate: anomaly interval outside video length");
        out.push_back({begin, begin + cfg.anomaly_len,
                       static_cast<AnomalyType>((type_offset + j) % 3)});
        prev_end = begin + cfg.anomaly_len;
    }
    return out;
}

std::string frame_name(int idx) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "frame_%06d.png", idx);
    return buf;
}

void write_video(const SynthConfig& cfg, long seed, int video_id, int scene, bool test,
                 int type_offset, const fs::path& dir) {
    fs::create_directories(dir);
    Rng rng(static_cast<uint64_t>(seed) ^
            (static_cast<uint64_t>(video_id + 1) * 0x9E3779B97F4A7C15ULL));

    const int px = cfg.frame_px;
    const int half = std::max(3, px / 12);
    const real angle = (kPi / 2.0) * scene;  // scene-consistent direction
    static const unsigned char palette[4][3] = {
        {220, 40, 40}, {40, 80, 220}, {40, 200, 80}, {230, 200, 40}};

    std::vector<Sprite> sprites;
    for (int i = 0; i < cfg.sprites_per_video; ++i) {
        Sprite s;
        s.shape = (i % 2 == 0) ? Shape::Square : Shape::Disc;  // Triangle reserved for anomalies
        s.x = half + rng.uniform() * (px - 2 * half - 1);
        s.y = half + rng.uniform() * (px - 2 * half - 1);
        const real speed = 1.2 + 0.6 * rng.uniform();
        s.vx = speed * std::cos(angle);
        s.vy = speed * std::sin(angle);
        s.half = half;
        for (int c = 0; c < 3; ++c) s.color[c] = palette[i % 4][c];
        sprites.push_back(s);
    }

    std::vector<Interval> intervals;
    if (test && cfg.anomalies_per_test_video > 0)
        intervals = place_intervals(cfg, rng, type_offset);

    ImageU8 background = render_background(scene, cfg.scenes, px);
    std::vector<int> labels(static_cast<size_t>(cfg.frames_per_video), 0);

    for (int t = 0; t < cfg.frames_per_video; ++t) {
        const Interval* active = nullptr;
        for (const auto& iv : intervals)
            if (t >= iv.begin && t < iv.end) active = &iv;
        if (active) labels[static_cast<size_t>(t)] = 1;

        if (t > 0) {
            for (size_t i = 0; i < sprites.size(); ++i) {
                real mult = 1.0;
                if (active && i == 0) {
                    if (active->type == AnomalyType::Speed) mult = 4.0;
                    if (active->type == AnomalyType::Reverse) mult = -1.0;
                }
                sprites[i].x += sprites[i].vx * mult;
                sprites[i].y += sprites[i].vy * mult;
            }
        }

        ImageU8 img = background;
        for (size_t i = 0; i < sprites.size(); ++i) {
            Shape shape = sprites[i].shape;
            if (active && i == 0 && active->type == AnomalyType::Shape)
                shape = Shape::Triangle;
            draw_sprite(img, sprites[i], shape);
        }
        write_png((dir / frame_name(t)).string(), img);
    }

    if (test) {
        std::ofstream lab(dir / "labels.csv");
        lab << "frame_index,label\n";
        for (int t = 0; t < cfg.frames_per_video; ++t) lab << t << "," << labels[t] << "\n";
    }
}

}  // namespace

void synth_generate(const SynthConfig& cfg, long seed, const std::string& out_root) {
    validate(cfg);
    const fs::path root(out_root);
    fs::create_directories(root);

    std::ofstream meta(root / "meta.csv");
    if (!meta) throw std::runtime_error("synth_generate: cannot write meta.csv under " + out_root);
    meta << "video_id,split,scene_id,num_frames\n";

    int vid = 0;
    for (int s = 0; s < cfg.scenes; ++s)
        for (int i = 0; i < cfg.train_videos_per_scene; ++i, ++vid) {
            write_video(cfg, seed, vid, s, false, 0,
                        root / "train" / ("video_" + std::to_string(vid)));
            meta << vid << ",train," << s << "," << cfg.frames_per_video << "\n";
        }
    int test_counter = 0;
    for (int s = 0; s < cfg.scenes; ++s)
        for (int i = 0; i < cfg.test_videos_per_scene; ++i, ++vid, ++test_counter) {
            write_video(cfg, seed, vid, s, true, test_counter,
                        root / "test" / ("video_" + std::to_string(vid)));
            meta << vid << ",test," << s << "," << cfg.frames_per_video << "\n";
        }
}

}  // namespace cavad
