#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <vector>

#include "cavad/data.hpp"
#include "cavad/image.hpp"
#include "cavad/synth.hpp"
#include "doctest.h"
#include "support.hpp"

using namespace cavad;
using namespace testsup;
namespace fs = std::filesystem;

namespace {

std::vector<char> slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::vector<char>(std::istreambuf_iterator<char>(in),
                             std::istreambuf_iterator<char>());
}

// Relative path -> file bytes for every regular file under root.
std::map<std::string, std::vector<char>> tree_bytes(const std::string& root) {
    std::map<std::string, std::vector<char>> out;
    for (const auto& e : fs::recursive_directory_iterator(root))
        if (e.is_regular_file())
            out[fs::relative(e.path(), root).generic_string()] = slurp(e.path());
    return out;
}

TrainConfig synth_train_config() {
    return parse_train_config("", {"dataset=synth"});
}

}  // namespace

TEST_CASE("synth generation is byte-deterministic in (config, seed)") {
    TempDir tmp("cavad_test");
    SynthConfig cfg = parse_synth_config("", {});
    synth_generate(cfg, 5, tmp.str() + "/a");
    synth_generate(cfg, 5, tmp.str() + "/b");
    synth_generate(cfg, 6, tmp.str() + "/c");

    auto a = tree_bytes(tmp.str() + "/a");
    auto b = tree_bytes(tmp.str() + "/b");
    REQUIRE(!a.empty());
    CHECK(a == b);

    auto c = tree_bytes(tmp.str() + "/c");
    REQUIRE(a.size() == c.size());
    bool any_diff = false;
    for (const auto& [rel, bytes] : a)
        if (c.at(rel) != bytes) any_diff = true;
    CHECK(any_diff);
}

TEST_CASE("generated tree loads back into the declared manifest") {
    TempDir tmp("cavad_test");
    SynthConfig cfg = parse_synth_config("", {});
    synth_generate(cfg, 11, tmp.str());
    TrainConfig tc = synth_train_config();

    DatasetManifest train = load_frame_dataset(tmp.str(), "train", tc);
    DatasetManifest test = load_frame_dataset(tmp.str(), "test", tc);

    CHECK(static_cast<int>(train.videos.size()) == cfg.scenes * cfg.train_videos_per_scene);
    CHECK(static_cast<int>(test.videos.size()) == cfg.scenes * cfg.test_videos_per_scene);
    CHECK(train.n_scenes == cfg.scenes);
    CHECK(test.n_scenes == cfg.scenes);

    std::set<int> train_scenes, test_scenes;
    for (const auto& v : train.videos) {
        CHECK(v.num_frames == cfg.frames_per_video);
        CHECK(v.labels.empty());
        train_scenes.insert(v.scene_id);
    }
    CHECK(static_cast<int>(train_scenes.size()) == cfg.scenes);

    const int expected_anomalous = cfg.anomalies_per_test_video * cfg.anomaly_len;
    for (const auto& v : test.videos) {
        CHECK(v.num_frames == cfg.frames_per_video);
        REQUIRE(static_cast<int>(v.labels.size()) == v.num_frames);
        int sum = 0;
        for (int l : v.labels) {
            CHECK((l == 0 || l == 1));
            sum += l;
        }
        CHECK(sum == expected_anomalous);
        test_scenes.insert(v.scene_id);
    }
    CHECK(static_cast<int>(test_scenes.size()) == cfg.scenes);
}

TEST_CASE("preprocess maps pixel extremes to [-1,1] and is exact at native size") {
    ImageU8 img(4, 4);
    for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 4; ++x)
            for (int c = 0; c < 3; ++c) img.at(y, x, c) = static_cast<unsigned char>(
                (y * 4 + x) * 16 + c);
    img.at(0, 0, 0) = 0;
    img.at(3, 3, 2) = 255;

    Tensor t = preprocess_frame(img, 4);  // same size: half-pixel centers hit input pixels
    CHECK(t.dim(0) == 4);
    CHECK(t.dim(2) == 3);
    CHECK(t.at(0, 0, 0) == doctest::Approx(-1.0).epsilon(1e-12));
    CHECK(t.at(3, 3, 2) == doctest::Approx(1.0).epsilon(1e-12));
    for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 4; ++x)
            for (int c = 0; c < 3; ++c)
                CHECK(t.at(y, x, c) ==
                      doctest::Approx(img.at(y, x, c) / 127.5 - 1.0).epsilon(1e-12));
}

TEST_CASE("downsampling a checkerboard preserves the mean") {
    ImageU8 img(448, 448);
    for (int y = 0; y < 448; ++y)
        for (int x = 0; x < 448; ++x) {
            unsigned char v = ((y + x) % 2 == 0) ? 0 : 255;
            for (int c = 0; c < 3; ++c) img.at(y, x, c) = v;
        }
    double in_mean = 0.0;
    for (unsigned char v : img.px) in_mean += v / 127.5 - 1.0;
    in_mean /= static_cast<double>(img.px.size());

    Tensor t = preprocess_frame(img, 224);
    double out_mean = 0.0;
    for (long i = 0; i < t.numel(); ++i) out_mean += t[i];
    out_mean /= static_cast<double>(t.numel());
    CHECK(std::abs(out_mean - in_mean) < 1e-6);
}

TEST_CASE("clip windows cover each video with the configured stride") {
    TempDir tmp("cavad_test");
    SynthConfig cfg = parse_synth_config("", {});
    synth_generate(cfg, 3, tmp.str());
    TrainConfig tc = synth_train_config();
    DatasetManifest m = load_frame_dataset(tmp.str(), "train", tc);

    auto clips = make_clips(m, 0);
    CHECK(static_cast<int>(clips.size()) == cfg.frames_per_video - tc.clip_len + 1);
    CHECK(clips.front().begin == 0);
    CHECK(clips.back().begin == cfg.frames_per_video - tc.clip_len);
    CHECK(clip_last_frame(m, clips.back()) == cfg.frames_per_video - 1);

    m.clip_stride = 4;
    auto strided = make_clips(m, 0);
    for (size_t i = 1; i < strided.size(); ++i)
        CHECK(strided[i].begin - strided[i - 1].begin == 4);

    m.clip_len = cfg.frames_per_video + 1;
    CHECK_THROWS_WITH_AS(make_clips(m, 0), doctest::Contains("too short"),
                         std::runtime_error);
}

TEST_CASE("epoch batches are exact-size, cover clips once, and shuffle deterministically") {
    TempDir tmp("cavad_test");
    SynthConfig cfg = parse_synth_config("", {});
    synth_generate(cfg, 3, tmp.str());
    TrainConfig tc = synth_train_config();
    DatasetManifest m = load_frame_dataset(tmp.str(), "train", tc);

    int total_clips = 0;
    for (size_t v = 0; v < m.videos.size(); ++v)
        total_clips += static_cast<int>(make_clips(m, static_cast<int>(v)).size());

    const int b = 8;
    Rng rng(99);
    auto batches = epoch_batches(m, b, true, rng);
    CHECK(static_cast<int>(batches.size()) == total_clips / b);
    std::set<std::pair<int, int>> seen;
    for (const auto& batch : batches) {
        CHECK(static_cast<int>(batch.size()) == b);
        for (const auto& ref : batch) seen.insert({ref.video_index, ref.begin});
    }
    CHECK(static_cast<int>(seen.size()) == static_cast<int>(batches.size()) * b);

    Rng rng2(99);
    auto batches2 = epoch_batches(m, b, true, rng2);
    REQUIRE(batches2.size() == batches.size());
    for (size_t i = 0; i < batches.size(); ++i)
        for (size_t j = 0; j < batches[i].size(); ++j) {
            CHECK(batches2[i][j].video_index == batches[i][j].video_index);
            CHECK(batches2[i][j].begin == batches[i][j].begin);
        }

    Rng rng3(1);
    CHECK_THROWS_AS(epoch_batches(m, 1, false, rng3), std::runtime_error);
}

TEST_CASE("clip tensors lay frames out as channel x time x space") {
    TempDir tmp("cavad_test");
    SynthConfig cfg = parse_synth_config("", {});
    synth_generate(cfg, 3, tmp.str());
    TrainConfig tc = synth_train_config();
    DatasetManifest m = load_frame_dataset(tmp.str(), "train", tc);
    FrameStore store(m, tc.frame_size);

    ClipRef ref{0, 5};
    Tensor clip = store.clip_tensor(ref);
    REQUIRE(clip.dim(0) == 3);
    REQUIRE(clip.dim(1) == tc.clip_len);
    REQUIRE(clip.dim(2) == tc.frame_size);

    for (int t = 0; t < tc.clip_len; t += 3) {
        const Tensor& f = store.frame(0, ref.begin + t);  // (H, W, 3)
        for (int y = 0; y < tc.frame_size; y += 7)
            for (int x = 0; x < tc.frame_size; x += 7)
                for (int c = 0; c < 3; ++c)
                    CHECK(clip.at(c, t, y, x) == f.at(y, x, c));
    }

    Tensor batch = store.batch_tensor({ref, ClipRef{1, 0}});
    REQUIRE(batch.dim(0) == 2);
    CHECK(batch.at(0, 1, 2, 3, 4) == clip.at(1, 2, 3, 4));
}

TEST_CASE("scenes render visibly different backgrounds") {
    TempDir tmp("cavad_test");
    SynthConfig cfg = parse_synth_config("", {});
    synth_generate(cfg, 3, tmp.str());
    TrainConfig tc = synth_train_config();
    DatasetManifest m = load_frame_dataset(tmp.str(), "train", tc);

    int v0 = -1, v1 = -1;
    for (size_t i = 0; i < m.videos.size(); ++i) {
        if (m.videos[i].scene_id == 0 && v0 < 0) v0 = static_cast<int>(i);
        if (m.videos[i].scene_id == 1 && v1 < 0) v1 = static_cast<int>(i);
    }
    REQUIRE(v0 >= 0);
    REQUIRE(v1 >= 0);

    FrameStore store(m, tc.frame_size);
    const Tensor& a = store.frame(v0, 0);
    const Tensor& b = store.frame(v1, 0);
    double diff = 0.0;
    for (long i = 0; i < a.numel(); ++i) diff += std::abs(a[i] - b[i]);
    diff /= static_cast<double>(a.numel());
    CHECK(diff > 0.2);
}

TEST_CASE("loader rejects broken trees") {
    TempDir tmp("cavad_test");
    SynthConfig cfg = parse_synth_config("", {});
    synth_generate(cfg, 3, tmp.str());
    TrainConfig tc = synth_train_config();

    SUBCASE("missing meta") {
        CHECK_THROWS_AS(load_frame_dataset(tmp.str() + "/nope", "train", tc),
                        std::runtime_error);
    }
    SUBCASE("missing frame breaks contiguity") {
        DatasetManifest m = load_frame_dataset(tmp.str(), "train", tc);
        fs::path victim = fs::path(m.videos[0].dir) / "frame_000010.png";
        REQUIRE(fs::exists(victim));
        fs::remove(victim);
        CHECK_THROWS_WITH_AS(load_frame_dataset(tmp.str(), "train", tc),
                             doctest::Contains("non-contiguous"), std::runtime_error);
    }
    SUBCASE("missing labels in test split") {
        DatasetManifest m = load_frame_dataset(tmp.str(), "test", tc);
        fs::remove(fs::path(m.videos[0].dir) / "labels.csv");
        CHECK_THROWS_AS(load_frame_dataset(tmp.str(), "test", tc), std::runtime_error);
    }
}

TEST_CASE("png round trip preserves pixels") {
    TempDir tmp("cavad_test");
    ImageU8 img(9, 13);
    Rng rng(4);
    for (auto& p : img.px) p = static_cast<unsigned char>(rng.bounded(256));
    std::string path = tmp.str() + "/rt.png";
    write_png(path, img);
    ImageU8 back = read_png(path);
    REQUIRE(back.h == img.h);
    REQUIRE(back.w == img.w);
    CHECK(back.px == img.px);
}
