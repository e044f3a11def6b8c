#include "dmad/scoring.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include "dmad/errors.hpp"

namespace dmad {

PsnrOutcome psnr(const Tensor& pred, const Tensor& target) {
    if (!pred.same_shape(target)) throw ConfigError("psnr: shapes differ");
    if (pred.numel() == 0) throw ConfigError("psnr: empty tensors");

    const double peak = *std::max_element(pred.data.begin(), pred.data.end());
    const double sse = sq_dist(pred.data.data(), target.data.data(), pred.numel());

    PsnrOutcome out;
    if (sse == 0.0) {
        out.perfect = true;
        return out;
    }
    if (peak <= 0.0) {
        out.bad_peak = true;
        return out;
    }
    const double mse = sse / static_cast<double>(pred.numel());
    out.value = 10.0 * std::log10(peak / mse);
    return out;
}

std::vector<double> resolve_psnr_series(const std::vector<PsnrOutcome>& series) {
    double lo = std::numeric_limits<double>::infinity();
    double hi = -std::numeric_limits<double>::infinity();
    bool any_finite = false;
    for (const PsnrOutcome& p : series) {
        if (p.perfect || p.bad_peak) continue;
        any_finite = true;
        lo = std::min(lo, p.value);
        hi = std::max(hi, p.value);
    }
    std::vector<double> out(series.size(), 0.0);
    for (std::size_t i = 0; i < series.size(); ++i) {
        if (series[i].perfect)
            out[i] = any_finite ? hi : 0.0;
        else if (series[i].bad_peak)
            out[i] = any_finite ? lo : 0.0;
        else
            out[i] = series[i].value;
    }
    return out;
}

double compactness_distance(const Tensor& qn_rows, const MemoryBank& bank_n) {
    if (qn_rows.ndim() != 2 || qn_rows.shape[1] != bank_n.channels())
        throw ConfigError("compactness_distance: query width does not match bank");
    const int K = qn_rows.shape[0];
    if (K == 0) throw ConfigError("compactness_distance: empty query set");
    const int C = bank_n.channels();
    double acc = 0.0;
    for (int k = 0; k < K; ++k) {
        const double* q = &qn_rows.data[static_cast<std::size_t>(k) * C];
        double best = std::numeric_limits<double>::infinity();
        for (int m = 0; m < bank_n.items(); ++m)
            best = std::min(best, sq_dist(q, bank_n.row(m), static_cast<std::size_t>(C)));
        acc += best;
    }
    return acc / static_cast<double>(K);
}

std::vector<double> minmax_normalize(const std::vector<double>& xs) {
    if (xs.empty()) return {};
    const auto [lo_it, hi_it] = std::minmax_element(xs.begin(), xs.end());
    const double lo = *lo_it, hi = *hi_it;
    std::vector<double> out(xs.size(), 0.0);
    if (hi == lo) return out;
    const double inv = 1.0 / (hi - lo);
    for (std::size_t i = 0; i < xs.size(); ++i) out[i] = (xs[i] - lo) * inv;
    return out;
}

std::vector<double> abnormality_score(const std::vector<double>& psnr_norm,
                                      const std::vector<double>& dist_norm, double gamma) {
    if (psnr_norm.size() != dist_norm.size())
        throw ConfigError("abnormality_score: series lengths differ");
    if (!(gamma >= 0.0 && gamma <= 1.0))
        throw ConfigError("abnormality_score: gamma outside [0, 1]");
    std::vector<double> out(psnr_norm.size());
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = gamma * (1.0 - psnr_norm[i]) + (1.0 - gamma) * dist_norm[i];
    return out;
}

double frame_auc(const std::vector<double>& scores, const std::vector<int>& labels) {
    if (scores.size() != labels.size()) throw ConfigError("frame_auc: size mismatch");
    const std::size_t n = scores.size();
    std::size_t n_pos = 0;
    for (int l : labels) {
        if (l != 0 && l != 1) throw ConfigError("frame_auc: labels must be 0 or 1");
        n_pos += static_cast<std::size_t>(l);
    }
    const std::size_t n_neg = n - n_pos;
    if (n_pos == 0 || n_neg == 0) throw ConfigError("frame_auc: needs both classes");

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&scores](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

    // Sum of positive ranks with mid-ranks on ties.
    double rank_sum = 0.0;
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
        const double mid_rank = 0.5 * static_cast<double>(i + j) + 1.0;
        for (std::size_t k = i; k <= j; ++k)
            if (labels[order[k]] == 1) rank_sum += mid_rank;
        i = j + 1;
    }
    const double np = static_cast<double>(n_pos), nn = static_cast<double>(n_neg);
    return (rank_sum - np * (np + 1.0) / 2.0) / (np * nn);
}

namespace {

double mean_min_l2(const Tensor& rows, const MemoryBank& bank) {
    const int K = rows.shape[0];
    const int C = bank.channels();
    double acc = 0.0;
    for (int k = 0; k < K; ++k) {
        const double* q = &rows.data[static_cast<std::size_t>(k) * C];
        double best = std::numeric_limits<double>::infinity();
        for (int m = 0; m < bank.items(); ++m)
            best = std::min(best, sq_dist(q, bank.row(m), static_cast<std::size_t>(C)));
        acc += std::sqrt(best);
    }
    return acc / static_cast<double>(K);
}

void check_rows(const Tensor& rows, int channels, const char* who) {
    if (rows.ndim() != 2 || rows.shape[1] != channels)
        throw ConfigError(std::string(who) + ": query width does not match banks");
    if (rows.shape[0] == 0) throw ConfigError(std::string(who) + ": empty query set");
}

}  // namespace

ClipDistances clip_bank_distances(const Tensor& qn_rows, const Tensor& qa_rows,
                                  const MemoryBank& bank_n, const MemoryBank& bank_a) {
    if (bank_n.channels() != bank_a.channels())
        throw ConfigError("clip_bank_distances: bank widths differ");
    check_rows(qn_rows, bank_n.channels(), "clip_bank_distances");
    check_rows(qa_rows, bank_n.channels(), "clip_bank_distances");
    ClipDistances d;
    d.dnn = mean_min_l2(qn_rows, bank_n);
    d.dna = mean_min_l2(qn_rows, bank_a);
    d.dan = mean_min_l2(qa_rows, bank_n);
    d.daa = mean_min_l2(qa_rows, bank_a);
    return d;
}

RatioResult distance_ratios(const std::vector<ClipDistances>& normal_clips,
                            const std::vector<ClipDistances>& abnormal_clips) {
    if (normal_clips.empty() || abnormal_clips.empty())
        throw ConfigError("distance_ratios: both clip sets must be nonempty");
    double snn = 0.0, sna = 0.0, san = 0.0, saa = 0.0;
    for (const ClipDistances& d : normal_clips) {
        snn += d.dnn;
        sna += d.dna;
    }
    for (const ClipDistances& d : abnormal_clips) {
        san += d.dan;
        saa += d.daa;
    }
    if (sna == 0.0 || san == 0.0)
        throw NumericError("distance_ratios: zero cross-bank distance sum");
    return RatioResult{snn / sna, saa / san};
}

void write_scores_csv(const std::string& path, const std::vector<ScoreRecord>& records) {
    std::ofstream os(path);
    if (!os) throw DataError("cannot open for writing: " + path);
    os << "video_id,frame,psnr,dist,score,label\n";
    char buf[256];
    for (const ScoreRecord& r : records) {
        std::snprintf(buf, sizeof buf, "%s,%d,%.17g,%.17g,%.17g,%d\n", r.video.c_str(), r.frame,
                      r.psnr, r.dist, r.score, r.label);
        os << buf;
    }
    if (!os) throw DataError("failed writing " + path);
}

std::vector<ScoreRecord> read_scores_csv(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw DataError("cannot open: " + path);
    std::string line;
    if (!std::getline(is, line)) throw DataError("empty scores file: " + path);
    std::vector<ScoreRecord> out;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::istringstream ss(line);
        ScoreRecord r;
        std::string field;
        std::getline(ss, r.video, ',');
        std::getline(ss, field, ',');
        r.frame = std::stoi(field);
        std::getline(ss, field, ',');
        r.psnr = std::stod(field);
        std::getline(ss, field, ',');
        r.dist = std::stod(field);
        std::getline(ss, field, ',');
        r.score = std::stod(field);
        std::getline(ss, field, ',');
        r.label = std::stoi(field);
        out.push_back(std::move(r));
    }
    return out;
}

}  // namespace dmad
