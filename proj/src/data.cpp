#include "cavad/data.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "cavad/image.hpp"

namespace fs = std::filesystem;

namespace cavad {

namespace {

std::string frame_name(int idx) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "frame_%06d.png", idx);
    return buf;
}

std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : line) {
        if (ch == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (ch != '\r') {
            cur += ch;
        }
    }
    out.push_back(cur);
    return out;
}

bool numeric_first_field(const std::string& line) {
    for (char ch : line) {
        if (ch == ',') break;
        if (!std::isdigit(static_cast<unsigned char>(ch)) && ch != '-' && ch != ' ')
            return false;
    }
    return !line.empty();
}

std::vector<int> read_labels(const std::string& path, int num_frames) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("load_frame_dataset: missing labels file " + path);
    std::vector<int> labels(static_cast<size_t>(num_frames), -1);
    std::string line;
    int seen = 0;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        if (!numeric_first_field(line)) continue;  // header
        auto fields = split_csv(line);
        if (fields.size() != 2)
            throw std::runtime_error("load_frame_dataset: bad label line '" + line + "' in " +
                                     path);
        int idx = std::stoi(fields[0]);
        int lab = std::stoi(fields[1]);
        if (idx < 0 || idx >= num_frames)
            throw std::runtime_error("load_frame_dataset: label frame index out of range in " +
                                     path);
        if (lab != 0 && lab != 1)
            throw std::runtime_error("load_frame_dataset: labels must be 0/1 in " + path);
        labels[static_cast<size_t>(idx)] = lab;
        ++seen;
    }
    if (seen != num_frames)
        throw std::runtime_error("load_frame_dataset: " + path + " covers " +
                                 std::to_string(seen) + " of " + std::to_string(num_frames) +
                                 " frames");
    return labels;
}

}  // namespace

DatasetManifest load_frame_dataset(const std::string& root, const std::string& split,
                                   const TrainConfig& cfg) {
    if (split != "train" && split != "test")
        throw std::runtime_error("load_frame_dataset: split must be train or test");
    const fs::path meta_path = fs::path(root) / "meta.csv";
    std::ifstream meta(meta_path);
    if (!meta)
        throw std::runtime_error("load_frame_dataset: missing meta.csv under " + root);

    DatasetManifest m;
    m.root = root;
    m.split = split;
    m.clip_len = cfg.clip_len;
    m.clip_stride = cfg.clip_stride;

    std::string line;
    int max_scene = -1;
    while (std::getline(meta, line)) {
        if (line.empty()) continue;
        if (!numeric_first_field(line)) continue;  // header
        auto fields = split_csv(line);
        if (fields.size() != 4)
            throw std::runtime_error("load_frame_dataset: bad meta line '" + line + "'");
        VideoInfo v;
        v.video_id = std::stoi(fields[0]);
        const std::string vsplit = fields[1];
        v.scene_id = std::stoi(fields[2]);
        v.num_frames = std::stoi(fields[3]);
        if (v.scene_id < 0)
            throw std::runtime_error("load_frame_dataset: negative scene id in meta.csv");
        max_scene = std::max(max_scene, v.scene_id);
        if (vsplit != split) continue;
        if (v.num_frames <= 0)
            throw std::runtime_error("load_frame_dataset: empty video " +
                                     std::to_string(v.video_id));
        const fs::path dir = fs::path(root) / split / ("video_" + std::to_string(v.video_id));
        if (!fs::is_directory(dir))
            throw std::runtime_error("load_frame_dataset: missing video directory " +
                                     dir.string());
        for (int i = 0; i < v.num_frames; ++i)
            if (!fs::exists(dir / frame_name(i)))
                throw std::runtime_error(
                    "load_frame_dataset: non-contiguous frame indices in " + dir.string() +
                    " (missing " + frame_name(i) + ")");
        v.dir = dir.string();
        if (split == "test") v.labels = read_labels((dir / "labels.csv").string(), v.num_frames);
        m.videos.push_back(std::move(v));
    }
    if (max_scene < 0)
        throw std::runtime_error("load_frame_dataset: meta.csv lists no videos");
    if (m.videos.empty())
        throw std::runtime_error("load_frame_dataset: no videos for split " + split);
    m.n_scenes = max_scene + 1;
    return m;
}

std::vector<ClipRef> make_clips(const DatasetManifest& m, int video_index) {
    const VideoInfo& v = m.videos.at(static_cast<size_t>(video_index));
    if (v.num_frames < m.clip_len)
        throw std::runtime_error("make_clips: video " + std::to_string(v.video_id) +
                                 " too short (" + std::to_string(v.num_frames) + " < " +
                                 std::to_string(m.clip_len) + " frames)");
    std::vector<ClipRef> clips;
    for (int begin = 0; begin + m.clip_len <= v.num_frames; begin += m.clip_stride)
        clips.push_back(ClipRef{video_index, begin});
    return clips;
}

const Tensor& FrameStore::frame(int video_index, int frame_idx) {
    if (cache_.empty()) cache_.resize(m_->videos.size());
    auto& vid = cache_[static_cast<size_t>(video_index)];
    if (vid.empty()) {
        const VideoInfo& v = m_->videos[static_cast<size_t>(video_index)];
        vid.reserve(static_cast<size_t>(v.num_frames));
        for (int i = 0; i < v.num_frames; ++i) {
            ImageU8 img = read_png((fs::path(v.dir) / frame_name(i)).string());
            vid.push_back(preprocess_frame(img, frame_size_));
        }
    }
    return vid[static_cast<size_t>(frame_idx)];
}

Tensor FrameStore::clip_tensor(const ClipRef& ref) {
    const int T = m_->clip_len;
    const int S = frame_size_;
    Tensor out({3, T, S, S});
    for (int t = 0; t < T; ++t) {
        const Tensor& f = frame(ref.video_index, ref.begin + t);
        for (int y = 0; y < S; ++y)
            for (int x = 0; x < S; ++x)
                for (int c = 0; c < 3; ++c) out.at(c, t, y, x) = f.at(y, x, c);
    }
    return out;
}

Tensor FrameStore::batch_tensor(const std::vector<ClipRef>& refs) {
    const int B = static_cast<int>(refs.size());
    const int T = m_->clip_len;
    const int S = frame_size_;
    Tensor out({B, 3, T, S, S});
    const long item = 3L * T * S * S;
    for (int i = 0; i < B; ++i) {
        Tensor one = clip_tensor(refs[static_cast<size_t>(i)]);
        std::copy(one.data(), one.data() + item, out.data() + i * item);
    }
    return out;
}

std::vector<std::vector<ClipRef>> epoch_batches(const DatasetManifest& m, int b, bool shuffle,
                                                Rng& rng) {
    if (b < 2) throw std::runtime_error("epoch_batches: b must be >= 2");
    std::vector<ClipRef> all;
    for (size_t vi = 0; vi < m.videos.size(); ++vi) {
        auto clips = make_clips(m, static_cast<int>(vi));
        all.insert(all.end(), clips.begin(), clips.end());
    }
    if (shuffle) rng.shuffle(all);
    std::vector<std::vector<ClipRef>> batches;
    for (size_t i = 0; i + static_cast<size_t>(b) <= all.size(); i += static_cast<size_t>(b))
        batches.emplace_back(all.begin() + static_cast<long>(i),
                             all.begin() + static_cast<long>(i) + b);
    return batches;
}

int clip_last_frame(const DatasetManifest& m, const ClipRef& ref) {
    return ref.begin + m.clip_len - 1;
}

int clip_scene(const DatasetManifest& m, const ClipRef& ref) {
    return m.videos.at(static_cast<size_t>(ref.video_index)).scene_id;
}

}  // namespace cavad
