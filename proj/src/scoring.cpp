#include "cavad/scoring.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <stdexcept>

namespace cavad {

WindowScore raw_window_score(Model& model, const Tensor& window_clips) {
    if (window_clips.ndim() != 5 || window_clips.dim(0) != model.cfg.b)
        throw std::runtime_error("raw_window_score: expects a window of b = " +
                                 std::to_string(model.cfg.b) + " clips, got " +
                                 window_clips.shape_str());
    Tape tape;
    model.params.bind(tape);
    BranchOutput out = model.motion_branch(tape.leaf(window_clips, false), false);

    WindowScore ws;
    ws.c1 = out.triple.c1.val();
    const int n = ws.c1.dim(0);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            const real d = ws.c1.at(i, j) - (i == j ? 1.0 : 0.0);
            ws.fnorm_sq += d * d;
        }

    if (model.cfg.clustering && model.clusters.fitted) {
        const int b = out.r_shared.val().dim(0);
        Tensor rep({out.r_shared.val().dim(1)});
        for (int j = 0; j < rep.dim(0); ++j) rep[j] = out.r_shared.val().at(b - 1, j);
        ws.dist = nearest_center_distance(rep, model.clusters);
    }
    return ws;
}

std::vector<real> maxmin_normalize(const std::vector<real>& raw) {
    std::vector<real> out(raw.size(), 0.0);
    if (raw.empty()) return out;
    const auto [mn_it, mx_it] = std::minmax_element(raw.begin(), raw.end());
    const real mn = *mn_it, mx = *mx_it;
    if (mx <= mn) return out;  // constant series reads as non-anomalous
    for (size_t i = 0; i < raw.size(); ++i) out[i] = (raw[i] - mn) / (mx - mn);
    return out;
}

ScoreSeries score_video(Model& model, FrameStore& store, const DatasetManifest& m,
                        int video_index) {
    const int b = model.cfg.b;
    const VideoInfo& video = m.videos[static_cast<size_t>(video_index)];
    std::vector<ClipRef> clips = make_clips(m, video_index);
    const int n_clips = static_cast<int>(clips.size());

    // per-clip raw scores; the first b-1 clips reuse the earliest full window
    std::vector<real> clip_raw(static_cast<size_t>(n_clips), 0.0);
    const int first_full = std::min(b - 1, n_clips - 1);
    for (int ci = first_full; ci < n_clips; ++ci) {
        std::vector<ClipRef> window;
        window.reserve(static_cast<size_t>(b));
        for (int w = ci - b + 1; w <= ci; ++w)
            window.push_back(clips[static_cast<size_t>(std::max(w, 0))]);
        WindowScore ws = raw_window_score(model, store.batch_tensor(window));
        clip_raw[static_cast<size_t>(ci)] = ws.raw();
    }
    for (int ci = 0; ci < first_full; ++ci)
        clip_raw[static_cast<size_t>(ci)] = clip_raw[static_cast<size_t>(first_full)];

    ScoreSeries series;
    series.video_id = video.video_id;
    series.raw.assign(static_cast<size_t>(video.num_frames), 0.0);

    // land each clip score on its last frame, then fill: frames before the
    // first scored frame copy it, later gaps carry the previous score forward
    std::vector<char> scored(static_cast<size_t>(video.num_frames), 0);
    for (int ci = 0; ci < n_clips; ++ci) {
        const int f = clip_last_frame(m, clips[static_cast<size_t>(ci)]);
        series.raw[static_cast<size_t>(f)] = clip_raw[static_cast<size_t>(ci)];
        scored[static_cast<size_t>(f)] = 1;
    }
    int first_scored = 0;
    while (first_scored < video.num_frames && !scored[static_cast<size_t>(first_scored)])
        ++first_scored;
    for (int f = 0; f < first_scored; ++f)
        series.raw[static_cast<size_t>(f)] = series.raw[static_cast<size_t>(first_scored)];
    for (int f = first_scored + 1; f < video.num_frames; ++f)
        if (!scored[static_cast<size_t>(f)])
            series.raw[static_cast<size_t>(f)] = series.raw[static_cast<size_t>(f - 1)];

    series.normalized = maxmin_normalize(series.raw);
    return series;
}

void write_score_csvs(const std::vector<ScoreSeries>& series, const std::string& out_dir) {
    const std::filesystem::path dir = std::filesystem::path(out_dir) / "scores";
    std::filesystem::create_directories(dir);
    for (const ScoreSeries& s : series) {
        const std::string path = (dir / ("video_" + std::to_string(s.video_id) + ".csv")).string();
        std::FILE* f = std::fopen(path.c_str(), "w");
        if (!f) throw std::runtime_error("write_score_csvs: cannot write " + path);
        std::fprintf(f, "frame_index,raw,normalized\n");
        for (size_t i = 0; i < s.raw.size(); ++i)
            std::fprintf(f, "%zu,%.9g,%.9g\n", i, s.raw[i], s.normalized[i]);
        std::fclose(f);
    }
}

}  // namespace cavad
