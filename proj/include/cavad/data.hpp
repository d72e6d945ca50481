#pragma once

// Frame-folder dataset ingestion and clip/batch assembly.
// Layout: root/{train|test}/video_<id>/frame_<000000>.png
//         root/{train|test}/video_<id>/labels.csv   (test only)
//         root/meta.csv  (video_id,split,scene_id,num_frames)

#include <string>
#include <vector>

#include "cavad/config.hpp"
#include "cavad/rng.hpp"
#include "cavad/tensor.hpp"

namespace cavad {

struct VideoInfo {
    int video_id = -1;
    std::string dir;
    int scene_id = 0;
    int num_frames = 0;
    std::vector<int> labels;  // per-frame anomaly flags, test split only
};

struct DatasetManifest {
    std::string root;
    std::string split;
    int n_scenes = 0;  // N_s over the whole meta file, both splits
    int clip_len = 8;
    int clip_stride = 1;
    std::vector<VideoInfo> videos;
};

struct ClipRef {
    int video_index = -1;  // index into manifest.videos
    int begin = 0;         // first frame index
};

DatasetManifest load_frame_dataset(const std::string& root, const std::string& split,
                                   const TrainConfig& cfg);

// Sliding windows of clip_len with clip_stride; throws if the video is shorter
// than one clip. Each clip's identity is (video_index, begin).
std::vector<ClipRef> make_clips(const DatasetManifest& m, int video_index);

// Caches preprocessed frames (frame_size x frame_size x 3 in [-1,1]) per video.
class FrameStore {
public:
    FrameStore(const DatasetManifest& m, int frame_size) : m_(&m), frame_size_(frame_size) {}

    const Tensor& frame(int video_index, int frame_idx);

    // Clip pixels as (3, T, H, W).
    Tensor clip_tensor(const ClipRef& ref);

    // Batch as (B, 3, T, H, W).
    Tensor batch_tensor(const std::vector<ClipRef>& refs);

private:
    const DatasetManifest* m_;
    int frame_size_;
    std::vector<std::vector<Tensor>> cache_;
};

// All clips of every video, shuffled (optionally) into batches of exactly b;
// the final short batch is dropped. Throws for b < 2.
std::vector<std::vector<ClipRef>> epoch_batches(const DatasetManifest& m, int b, bool shuffle,
                                                Rng& rng);

int clip_last_frame(const DatasetManifest& m, const ClipRef& ref);
int clip_scene(const DatasetManifest& m, const ClipRef& ref);

}  // namespace cavad
