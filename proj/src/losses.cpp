#include "dmad/losses.hpp"

#include <algorithm>

#include "dmad/errors.hpp"

namespace dmad {

double triplet_loss(const Tensor& anchor, const Tensor& positive, const Tensor& negative,
                    double beta) {
    if (!anchor.same_shape(positive) || !anchor.same_shape(negative))
        throw ConfigError("triplet_loss: feature shapes differ");
    const double dp = sq_dist(anchor.data.data(), positive.data.data(), anchor.numel());
    const double dn = sq_dist(anchor.data.data(), negative.data.data(), anchor.numel());
    return std::max(0.0, dp - dn + beta);
}

double reconstruction_loss(const Tensor& pred, const Tensor& target) {
    if (!pred.same_shape(target)) throw ConfigError("reconstruction_loss: shapes differ");
    return sq_dist(pred.data.data(), target.data.data(), pred.numel());
}

namespace {

// Indices of the two largest-similarity items, ties to the lowest index.
void two_nearest_by_dot(const double* q, const MemoryBank& bank, int* first, int* second) {
    const int M = bank.items();
    const int C = bank.channels();
    int best = 0, runner = -1;
    double best_s = dot(q, bank.row(0), static_cast<std::size_t>(C));
    double runner_s = 0.0;
    for (int m = 1; m < M; ++m) {
        const double s = dot(q, bank.row(m), static_cast<std::size_t>(C));
        if (s > best_s) {
            runner = best;
            runner_s = best_s;
            best = m;
            best_s = s;
        } else if (runner < 0 || s > runner_s) {
            runner = m;
            runner_s = s;
        }
    }
    *first = best;
    *second = runner;
}

void check_queries(const Tensor& queries, const MemoryBank& bank, const char* who) {
    if (queries.ndim() != 2 || queries.shape[1] != bank.channels())
        throw ConfigError(std::string(who) + ": query width does not match bank channels");
    if (queries.shape[0] == 0) throw ConfigError(std::string(who) + ": empty query set");
}

}  // namespace

double compactness_loss(const Tensor& queries, const MemoryBank& bank) {
    check_queries(queries, bank, "compactness_loss");
    const int K = queries.shape[0];
    const int C = bank.channels();
    double acc = 0.0;
    for (int k = 0; k < K; ++k) {
        int first = 0, second = 0;
        const double* q = &queries.data[static_cast<std::size_t>(k) * C];
        two_nearest_by_dot(q, bank, &first, &second);
        acc += sq_dist(q, bank.row(first), static_cast<std::size_t>(C));
    }
    return acc;
}

double separateness_loss(const Tensor& queries, const MemoryBank& bank, double alpha) {
    check_queries(queries, bank, "separateness_loss");
    if (bank.items() < 2) throw ConfigError("separateness_loss: bank needs at least 2 items");
    const int K = queries.shape[0];
    const int C = bank.channels();
    double acc = 0.0;
    for (int k = 0; k < K; ++k) {
        int first = 0, second = 0;
        const double* q = &queries.data[static_cast<std::size_t>(k) * C];
        two_nearest_by_dot(q, bank, &first, &second);
        const double dp = sq_dist(q, bank.row(first), static_cast<std::size_t>(C));
        const double dn = sq_dist(q, bank.row(second), static_cast<std::size_t>(C));
        acc += std::max(0.0, dp - dn + alpha);
    }
    return acc;
}

std::vector<TripletIdx> sample_triplets(const std::vector<SampleLabel>& labels, Rng& rng) {
    std::vector<int> normals, abnormals;
    for (int i = 0; i < static_cast<int>(labels.size()); ++i) {
        (labels[i] == SampleLabel::normal ? normals : abnormals).push_back(i);
    }
    std::vector<TripletIdx> out;
    if (normals.size() < 2 || abnormals.empty()) return out;
    out.reserve(normals.size());
    for (std::size_t a = 0; a < normals.size(); ++a) {
        // Draw from the other normals by skipping the anchor's slot.
        std::uint64_t p = rng.below(normals.size() - 1);
        if (p >= a) ++p;
        const std::uint64_t n = rng.below(abnormals.size());
        out.push_back({normals[a], normals[p], abnormals[n]});
    }
    return out;
}

LossBundle total_loss(const std::vector<SampleOutputs>& batch, const MemoryBank& bank_n,
                      const MemoryBank& bank_a, const LossWeights& w,
                      const std::vector<TripletIdx>& triplets) {
    if (batch.empty()) throw ConfigError("total_loss: empty batch");
    const double B = static_cast<double>(batch.size());

    LossBundle out;
    int n_normal = 0;
    for (const SampleOutputs& s : batch) {
        if (s.label == SampleLabel::normal) {
            ++n_normal;
            out.rec += reconstruction_loss(s.pred, s.target);
            out.com_n += compactness_loss(s.qn_rows, bank_n);
            out.sep_n += separateness_loss(s.qn_rows, bank_n, w.alpha);
        } else {
            out.com_a += compactness_loss(s.qa_rows, bank_a);
            out.sep_a += separateness_loss(s.qa_rows, bank_a, w.alpha);
        }
    }
    if (n_normal == 0) throw ConfigError("total_loss: batch has no normal samples");

    for (const TripletIdx& t : triplets) {
        out.tri_n += triplet_loss(batch[t.anchor].feat_n, batch[t.positive].feat_n,
                                  batch[t.negative].feat_n, w.beta);
        out.tri_a += triplet_loss(batch[t.anchor].feat_a, batch[t.positive].feat_a,
                                  batch[t.negative].feat_a, w.beta);
    }

    out.rec /= B;
    out.com_n /= B;
    out.sep_n /= B;
    out.tri_n /= B;
    out.com_a /= B;
    out.sep_a /= B;
    out.tri_a /= B;
    out.total = out.rec + w.lambda_n * out.com_n + w.mu_n * out.sep_n + w.nu_n * out.tri_n +
                w.lambda_a * out.com_a + w.mu_a * out.sep_a + w.nu_a * out.tri_a;
    return out;
}

}  // namespace dmad
