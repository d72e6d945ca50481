#pragma once

// Frame-level anomaly scoring: correlation-matrix deviation times cluster
// distance over sliding windows of the b most recent clips, then per-video
// max-min normalization.

#include <string>
#include <vector>

#include "cavad/data.hpp"
#include "cavad/model.hpp"

namespace cavad {

struct WindowScore {
    real fnorm_sq = 0.0;  // ||C1 - I||_F^2 over the window batch
    real dist = 1.0;      // last clip's shared representation to nearest center
    Tensor c1;            // n x n, kept for matrix exports
    real raw() const { return fnorm_sq * dist; }
};

struct ScoreSeries {
    int video_id = -1;
    std::vector<real> raw;         // one per frame
    std::vector<real> normalized;  // max-min normalized to [0,1]
};

// Forward the motion path over one window batch (b,3,T,S,S) with the pool
// frozen. When the cluster model is unfitted (clustering disabled or phase 2
// never ran) the distance factor is fixed at 1.
WindowScore raw_window_score(Model& model, const Tensor& window_clips);

// Max-min normalization; a constant series maps to all zeros.
std::vector<real> maxmin_normalize(const std::vector<real>& raw);

// Scores every frame of one video: each window's score lands on its last
// frame, earlier frames copy the earliest available score, gaps between
// strided clips carry the previous score forward.
ScoreSeries score_video(Model& model, FrameStore& store, const DatasetManifest& m,
                        int video_index);

// scores/video_<id>.csv with columns frame_index,raw,normalized.
void write_score_csvs(const std::vector<ScoreSeries>& series, const std::string& out_dir);

}  // namespace cavad
