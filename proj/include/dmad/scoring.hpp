#pragma once

#include <string>
#include <vector>

#include "dmad/memory_bank.hpp"
#include "dmad/tensor.hpp"

namespace dmad {

// Prediction quality for one frame. "perfect" marks a zero-error prediction
// whose PSNR is unbounded; "bad_peak" marks a nonpositive prediction maximum,
// for which the log-ratio form is undefined. Both are resolved per video by
// resolve_psnr_series before normalization.
struct PsnrOutcome {
    double value = 0.0;
    bool perfect = false;
    bool bad_peak = false;
};

// 10 * log10(max(pred) / mean squared error).
PsnrOutcome psnr(const Tensor& pred, const Tensor& target);

// Replaces sentinels with the series extremes: perfect frames get the max
// finite value, bad-peak frames the min finite value. An all-sentinel series
// resolves to zeros.
std::vector<double> resolve_psnr_series(const std::vector<PsnrOutcome>& series);

// Mean over queries of the squared distance to the nearest normality item.
double compactness_distance(const Tensor& qn_rows, const MemoryBank& bank_n);

// (x - min) / (max - min); a constant series maps to all zeros.
std::vector<double> minmax_normalize(const std::vector<double>& xs);

// S_t = gamma * (1 - g(P_t)) + (1 - gamma) * g(D_t), both inputs normalized
// per video before the call.
std::vector<double> abnormality_score(const std::vector<double>& psnr_norm,
                                      const std::vector<double>& dist_norm, double gamma);

// Area under the ROC curve via average ranks; ties share their mid-rank.
// Labels are 0 (normal) or 1 (abnormal); needs both classes present.
double frame_auc(const std::vector<double>& scores, const std::vector<int>& labels);

// Mean over queries of the (non-squared) L2 distance to the nearest item,
// for both query sets against both banks.
struct ClipDistances {
    double dnn = 0.0;  // normality queries vs normality bank
    double dna = 0.0;  // normality queries vs abnormality bank
    double dan = 0.0;  // abnormality queries vs normality bank
    double daa = 0.0;  // abnormality queries vs abnormality bank
};

ClipDistances clip_bank_distances(const Tensor& qn_rows, const Tensor& qa_rows,
                                  const MemoryBank& bank_n, const MemoryBank& bank_a);

// r_normal aggregates normal clips (sum dnn / sum dna), r_abnormal aggregates
// abnormal clips (sum daa / sum dan). Values below 1 mean queries sit closer
// to their own bank.
struct RatioResult {
    double r_normal = 0.0;
    double r_abnormal = 0.0;
};

RatioResult distance_ratios(const std::vector<ClipDistances>& normal_clips,
                            const std::vector<ClipDistances>& abnormal_clips);

struct ScoreRecord {
    std::string video;
    int frame = 0;
    double psnr = 0.0;
    double dist = 0.0;
    double score = 0.0;
    int label = 0;
};

void write_scores_csv(const std::string& path, const std::vector<ScoreRecord>& records);
std::vector<ScoreRecord> read_scores_csv(const std::string& path);

}  // namespace dmad
