#include "cavad/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace cavad {

namespace {

void check_two_classes(const std::vector<real>& scores, const std::vector<int>& labels) {
    if (scores.size() != labels.size())
        throw std::runtime_error("eval: scores and labels differ in length");
    if (scores.empty()) throw std::runtime_error("eval: empty input");
    const long pos = std::count(labels.begin(), labels.end(), 1);
    if (pos == 0 || pos == static_cast<long>(labels.size()))
        throw std::runtime_error("eval: labels contain a single class");
}

}  // namespace

real roc_auc(const std::vector<real>& scores, const std::vector<int>& labels) {
    check_two_classes(scores, labels);
    const size_t n = scores.size();
    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](size_t a, size_t b) { return scores[a] < scores[b]; });

    // average ranks over tie groups, 1-based
    std::vector<real> rank(n, 0.0);
    size_t i = 0;
    while (i < n) {
        size_t j = i;
        while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
        const real avg = (static_cast<real>(i + 1) + static_cast<real>(j + 1)) / 2.0;
        for (size_t t = i; t <= j; ++t) rank[order[t]] = avg;
        i = j + 1;
    }

    real pos_rank_sum = 0.0;
    long n_pos = 0;
    for (size_t t = 0; t < n; ++t)
        if (labels[t] == 1) {
            pos_rank_sum += rank[t];
            ++n_pos;
        }
    const long n_neg = static_cast<long>(n) - n_pos;
    const real u = pos_rank_sum - static_cast<real>(n_pos) * (n_pos + 1.0) / 2.0;
    return u / (static_cast<real>(n_pos) * static_cast<real>(n_neg));
}

std::vector<RocPoint> roc_points(const std::vector<real>& scores,
                                 const std::vector<int>& labels) {
    check_two_classes(scores, labels);
    const size_t n = scores.size();
    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](size_t a, size_t b) { return scores[a] > scores[b]; });

    real n_pos = 0.0, n_neg = 0.0;
    for (int l : labels) (l == 1 ? n_pos : n_neg) += 1.0;

    std::vector<RocPoint> points;
    points.push_back({0.0, 0.0, std::numeric_limits<real>::infinity()});
    real tp = 0.0, fp = 0.0;
    size_t i = 0;
    while (i < n) {
        const real thr = scores[order[i]];
        while (i < n && scores[order[i]] == thr) {
            if (labels[order[i]] == 1)
                tp += 1.0;
            else
                fp += 1.0;
            ++i;
        }
        points.push_back({fp / n_neg, tp / n_pos, thr});
    }
    return points;
}

real eer(const std::vector<real>& scores, const std::vector<int>& labels) {
    const std::vector<RocPoint> pts = roc_points(scores, labels);
    // find where fpr - (1 - tpr) crosses zero; it is -1 at (0,0) and +1 at (1,1)
    for (size_t i = 1; i < pts.size(); ++i) {
        const real d0 = pts[i - 1].fpr - (1.0 - pts[i - 1].tpr);
        const real d1 = pts[i].fpr - (1.0 - pts[i].tpr);
        if (d1 < 0.0) continue;
        if (d1 == 0.0) return pts[i].fpr;
        // linear interpolation between the two ROC points
        const real t = (0.0 - d0) / (d1 - d0);
        return pts[i - 1].fpr + t * (pts[i].fpr - pts[i - 1].fpr);
    }
    return pts.back().fpr;  // unreachable for two-class input
}

void fnorm_gap_report(Model& model, FrameStore& store, const DatasetManifest& test,
                      EvalReport& report) {
    const int b = model.cfg.b;
    real sum_normal = 0.0, sum_abnormal = 0.0;
    long n_normal = 0, n_abnormal = 0;

    for (size_t vi = 0; vi < test.videos.size(); ++vi) {
        const VideoInfo& video = test.videos[vi];
        if (static_cast<int>(video.labels.size()) != video.num_frames)
            throw std::runtime_error("fnorm_gap_report: video " +
                                     std::to_string(video.video_id) + " lacks labels");
        std::vector<ClipRef> clips = make_clips(test, static_cast<int>(vi));
        const int n_clips = static_cast<int>(clips.size());
        const int first_full = std::min(b - 1, n_clips - 1);
        for (int ci = first_full; ci < n_clips; ++ci) {
            std::vector<ClipRef> window;
            for (int w = ci - b + 1; w <= ci; ++w)
                window.push_back(clips[static_cast<size_t>(std::max(w, 0))]);
            WindowScore ws = raw_window_score(model, store.batch_tensor(window));
            const real fnorm = std::sqrt(ws.fnorm_sq);
            const int last = clip_last_frame(test, clips[static_cast<size_t>(ci)]);
            if (video.labels[static_cast<size_t>(last)] == 1) {
                sum_abnormal += fnorm;
                ++n_abnormal;
            } else {
                sum_normal += fnorm;
                ++n_normal;
            }
        }
    }
    if (n_abnormal == 0) throw std::runtime_error("fnorm_gap_report: no abnormal frames");
    if (n_normal == 0) throw std::runtime_error("fnorm_gap_report: no normal frames");
    report.fnorm_normal_mean = sum_normal / static_cast<real>(n_normal);
    report.fnorm_abnormal_mean = sum_abnormal / static_cast<real>(n_abnormal);
    report.fnorm_gap = report.fnorm_abnormal_mean - report.fnorm_normal_mean;
}

EvalBundle evaluate_test_set(Model& model, FrameStore& store, const DatasetManifest& test) {
    EvalBundle eb;
    std::vector<real> scores;
    std::vector<int> labels;
    for (size_t vi = 0; vi < test.videos.size(); ++vi) {
        const VideoInfo& video = test.videos[vi];
        if (static_cast<int>(video.labels.size()) != video.num_frames)
            throw std::runtime_error("evaluate_test_set: video " +
                                     std::to_string(video.video_id) + " lacks labels");
        ScoreSeries s = score_video(model, store, test, static_cast<int>(vi));
        scores.insert(scores.end(), s.normalized.begin(), s.normalized.end());
        labels.insert(labels.end(), video.labels.begin(), video.labels.end());
        const long pos = std::count(video.labels.begin(), video.labels.end(), 1);
        if (pos > 0 && pos < static_cast<long>(video.labels.size()))
            eb.report.per_video_auc.emplace_back(video.video_id,
                                                 roc_auc(s.normalized, video.labels));
        eb.series.push_back(std::move(s));
    }
    eb.report.auc = roc_auc(scores, labels);
    eb.report.eer = eer(scores, labels);
    eb.points = roc_points(scores, labels);
    fnorm_gap_report(model, store, test, eb.report);
    return eb;
}

void write_roc_csv(const std::string& path, const std::vector<RocPoint>& points) {
    std::FILE* f = std::fopen(path.c_str(), "w");
    if (!f) throw std::runtime_error("write_roc_csv: cannot write " + path);
    std::fprintf(f, "fpr,tpr,threshold\n");
    for (const RocPoint& p : points)
        std::fprintf(f, "%.9g,%.9g,%.9g\n", p.fpr, p.tpr, p.threshold);
    std::fclose(f);
}

void write_report_csv(const std::string& path, const EvalReport& report) {
    std::FILE* f = std::fopen(path.c_str(), "w");
    if (!f) throw std::runtime_error("write_report_csv: cannot write " + path);
    std::fprintf(f, "metric,value\n");
    std::fprintf(f, "auc,%.9g\n", report.auc);
    std::fprintf(f, "eer,%.9g\n", report.eer);
    std::fprintf(f, "fnorm_normal_mean,%.9g\n", report.fnorm_normal_mean);
    std::fprintf(f, "fnorm_abnormal_mean,%.9g\n", report.fnorm_abnormal_mean);
    std::fprintf(f, "fnorm_gap,%.9g\n", report.fnorm_gap);
    for (const auto& [vid, auc] : report.per_video_auc)
        std::fprintf(f, "auc_video_%d,%.9g\n", vid, auc);
    std::fclose(f);
}

void write_c1_matrix(const std::string& path, const Tensor& c1) {
    std::FILE* f = std::fopen(path.c_str(), "w");
    if (!f) throw std::runtime_error("write_c1_matrix: cannot write " + path);
    for (int i = 0; i < c1.dim(0); ++i) {
        for (int j = 0; j < c1.dim(1); ++j)
            std::fprintf(f, "%s%.9g", j ? "," : "", c1.at(i, j));
        std::fprintf(f, "\n");
    }
    std::fclose(f);
}

void export_curves(const EvalReport& report, const std::vector<RocPoint>& points,
                   const std::vector<ScoreSeries>& series, const std::string& out_dir) {
    std::filesystem::create_directories(out_dir);
    write_report_csv((std::filesystem::path(out_dir) / "report.csv").string(), report);
    write_roc_csv((std::filesystem::path(out_dir) / "roc.csv").string(), points);
    write_score_csvs(series, out_dir);
}

void export_extreme_c1(Model& model, FrameStore& store, const DatasetManifest& test,
                       const std::string& out_dir) {
    struct Pick {
        bool set = false;
        real raw = 0.0;
        int video_id = 0;
        int frame = 0;
        Tensor c1;
    };
    Pick lowest_normal, highest_abnormal;
    const int b = model.cfg.b;
    for (size_t vi = 0; vi < test.videos.size(); ++vi) {
        const VideoInfo& video = test.videos[vi];
        if (static_cast<int>(video.labels.size()) != video.num_frames) continue;
        std::vector<ClipRef> clips = make_clips(test, static_cast<int>(vi));
        const int n_clips = static_cast<int>(clips.size());
        const int first_full = std::min(b - 1, n_clips - 1);
        for (int ci = first_full; ci < n_clips; ++ci) {
            std::vector<ClipRef> window;
            for (int w = ci - b + 1; w <= ci; ++w)
                window.push_back(clips[static_cast<size_t>(std::max(w, 0))]);
            WindowScore ws = raw_window_score(model, store.batch_tensor(window));
            const int last = clip_last_frame(test, clips[static_cast<size_t>(ci)]);
            const bool abnormal = video.labels[static_cast<size_t>(last)] == 1;
            Pick& p = abnormal ? highest_abnormal : lowest_normal;
            const bool better = !p.set || (abnormal ? ws.raw() > p.raw : ws.raw() < p.raw);
            if (better) p = {true, ws.raw(), video.video_id, last, ws.c1};
        }
    }
    std::filesystem::create_directories(out_dir);
    auto dump = [&](const Pick& p, const char* tag) {
        if (!p.set) return;
        const std::string name = std::string("c1_matrix_") + tag + "_v" +
                                 std::to_string(p.video_id) + "_f" + std::to_string(p.frame) +
                                 ".csv";
        write_c1_matrix((std::filesystem::path(out_dir) / name).string(), p.c1);
    };
    dump(lowest_normal, "normal");
    dump(highest_abnormal, "abnormal");
}

}  // namespace cavad
