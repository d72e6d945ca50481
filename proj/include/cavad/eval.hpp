#pragma once

// Frame-level ROC/AUC and EER, the F-norm gap between normal and abnormal
// windows, and the CSV exports backing score curves and matrix dumps.

#include <string>
#include <vector>

#include "cavad/data.hpp"
#include "cavad/model.hpp"
#include "cavad/scoring.hpp"

namespace cavad {

struct RocPoint {
    real fpr = 0.0;
    real tpr = 0.0;
    real threshold = 0.0;
};

struct EvalReport {
    real auc = 0.0;
    real eer = 0.0;
    std::vector<std::pair<int, real>> per_video_auc;  // single-class videos skipped
    real fnorm_normal_mean = 0.0;
    real fnorm_abnormal_mean = 0.0;
    real fnorm_gap = 0.0;  // abnormal - normal
};

// Mann-Whitney AUC with average ranks; ties count one half.
real roc_auc(const std::vector<real>& scores, const std::vector<int>& labels);

// ROC curve over descending thresholds; always starts at (0,0), ends at (1,1).
std::vector<RocPoint> roc_points(const std::vector<real>& scores,
                                 const std::vector<int>& labels);

// Rate where FPR = 1 - TPR, linearly interpolated between ROC points.
real eer(const std::vector<real>& scores, const std::vector<int>& labels);

// Mean ||C1 - I||_F over windows with a normal vs abnormal last frame.
// Fills the fnorm_* fields of the report; other fields untouched.
void fnorm_gap_report(Model& model, FrameStore& store, const DatasetManifest& test,
                      EvalReport& report);

struct EvalBundle {
    EvalReport report;
    std::vector<RocPoint> points;
    std::vector<ScoreSeries> series;  // one per test video, manifest order
};

// Scores every test video, concatenates normalized frame scores against the
// ground-truth labels (micro AUC/EER plus per-video AUCs where both classes
// appear) and fills the F-norm gap fields.
EvalBundle evaluate_test_set(Model& model, FrameStore& store, const DatasetManifest& test);

void write_roc_csv(const std::string& path, const std::vector<RocPoint>& points);
void write_report_csv(const std::string& path, const EvalReport& report);
void write_c1_matrix(const std::string& path, const Tensor& c1);

// Dumps c1_matrix_normal_*.csv / c1_matrix_abnormal_*.csv for the windows
// with the lowest normal and highest abnormal raw score; a class with no
// windows is skipped silently.
void export_extreme_c1(Model& model, FrameStore& store, const DatasetManifest& test,
                       const std::string& out_dir);

// report.csv + roc.csv + per-video score CSVs under out_dir.
void export_curves(const EvalReport& report, const std::vector<RocPoint>& points,
                   const std::vector<ScoreSeries>& series, const std::string& out_dir);

}  // namespace cavad
