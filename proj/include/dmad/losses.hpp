#pragma once

#include <vector>

#include "dmad/memory_bank.hpp"
#include "dmad/rng.hpp"
#include "dmad/tensor.hpp"

namespace dmad {

struct LossWeights {
    // Branch weights for compactness / separateness / triplet terms.
    double lambda_n = 0.1, mu_n = 0.1, nu_n = 0.1;
    double lambda_a = 0.1, mu_a = 0.1, nu_a = 0.1;
    double alpha = 1.0;  // separateness margin
    double beta = 1.0;   // triplet margin
};

struct LossBundle {
    double rec = 0.0;
    double com_n = 0.0, sep_n = 0.0, tri_n = 0.0;
    double com_a = 0.0, sep_a = 0.0, tri_a = 0.0;
    double total = 0.0;
};

// Hinge on squared distances between discriminator features.
double triplet_loss(const Tensor& anchor, const Tensor& positive, const Tensor& negative,
                    double beta);

// Sum of squared pixel differences, no averaging.
double reconstruction_loss(const Tensor& pred, const Tensor& target);

// Sum over queries of the squared distance to the nearest memory item.
double compactness_loss(const Tensor& queries, const MemoryBank& bank);

// Hinge pushing the second-nearest item away from each query. Needs >= 2 items.
double separateness_loss(const Tensor& queries, const MemoryBank& bank, double alpha);

struct TripletIdx {
    int anchor;
    int positive;
    int negative;
};

// Anchors iterate over normal samples; positive is a random other normal,
// negative a random abnormal. Empty when either class is missing or the
// batch has a single normal sample.
std::vector<TripletIdx> sample_triplets(const std::vector<SampleLabel>& labels, Rng& rng);

// Per-sample forward outputs needed to aggregate the batch objective.
struct SampleOutputs {
    SampleLabel label = SampleLabel::normal;
    Tensor pred;     // predicted frame (normal samples only need it)
    Tensor target;   // ground-truth frame
    Tensor qn_rows;  // [K, C] normality-head queries
    Tensor qa_rows;  // [K, C] abnormality-head queries (dual mode)
    Tensor feat_n;   // [D] discriminator feature, normality branch
    Tensor feat_a;   // [D] discriminator feature, abnormality branch
};

// Batch objective for the dual model. Every component is a sum over its
// contributing samples divided by the batch size, so
//   total = rec + ln*com_n + mn*sep_n + nn*tri_n + la*com_a + ma*sep_a + na*tri_a
// holds exactly. Throws ConfigError when the batch has no normal samples.
LossBundle total_loss(const std::vector<SampleOutputs>& batch, const MemoryBank& bank_n,
                      const MemoryBank& bank_a, const LossWeights& w,
                      const std::vector<TripletIdx>& triplets);

}  // namespace dmad
