// Brute-force reference implementations, deliberately written as literal
// double loops independent of the library code paths they check.
#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "dmad/graph.hpp"
#include "dmad/memory_bank.hpp"
#include "dmad/tensor.hpp"

namespace oracle {

using dmad::Tensor;

// Read: w_km = exp(q_k.p_m) / sum_m' exp(q_k.p_m'), augmented row =
// [sum_m w_km p_m, q_k]. Plain exponentials, no max subtraction.
inline void read_reference(const Tensor& queries, const Tensor& bank, Tensor* augmented,
                           Tensor* weights) {
    const int K = queries.shape[0], C = queries.shape[1], M = bank.shape[0];
    *weights = Tensor({K, M});
    *augmented = Tensor({K, 2 * C});
    for (int k = 0; k < K; ++k) {
        double denom = 0.0;
        for (int m = 0; m < M; ++m) {
            double d = 0.0;
            for (int c = 0; c < C; ++c) d += queries.data[k * C + c] * bank.data[m * C + c];
            weights->data[k * M + m] = std::exp(d);
            denom += weights->data[k * M + m];
        }
        for (int m = 0; m < M; ++m) weights->data[k * M + m] /= denom;
        for (int c = 0; c < C; ++c) {
            double r = 0.0;
            for (int m = 0; m < M; ++m) r += weights->data[k * M + m] * bank.data[m * C + c];
            augmented->data[k * 2 * C + c] = r;
            augmented->data[k * 2 * C + C + c] = queries.data[k * C + c];
        }
    }
}

// Update: per memory m, U_m = queries whose highest-similarity item is m
// (ties to the lowest index); v_km = vertical softmax over all queries for
// fixed m, then restricted to U_m and renormalized; p_m <- normalize(p_m +
// sum_{k in U_m} v'_km q_k). Rows with empty U_m stay untouched.
inline Tensor update_reference(const Tensor& queries, const Tensor& bank) {
    const int K = queries.shape[0], C = queries.shape[1], M = bank.shape[0];
    std::vector<int> nearest(K);
    for (int k = 0; k < K; ++k) {
        int best = 0;
        double best_s = -1e300;
        for (int m = 0; m < M; ++m) {
            double d = 0.0;
            for (int c = 0; c < C; ++c) d += queries.data[k * C + c] * bank.data[m * C + c];
            if (d > best_s) {
                best_s = d;
                best = m;
            }
        }
        nearest[k] = best;
    }

    Tensor out = bank;
    for (int m = 0; m < M; ++m) {
        // vertical softmax over queries for this memory
        std::vector<double> v(K);
        double denom = 0.0;
        for (int k = 0; k < K; ++k) {
            double d = 0.0;
            for (int c = 0; c < C; ++c) d += queries.data[k * C + c] * bank.data[m * C + c];
            v[k] = std::exp(d);
            denom += v[k];
        }
        for (int k = 0; k < K; ++k) v[k] /= denom;

        double restricted = 0.0;
        for (int k = 0; k < K; ++k)
            if (nearest[k] == m) restricted += v[k];
        if (restricted == 0.0) continue;

        for (int k = 0; k < K; ++k) {
            if (nearest[k] != m) continue;
            const double w = v[k] / restricted;
            for (int c = 0; c < C; ++c) out.data[m * C + c] += w * queries.data[k * C + c];
        }
        double norm = 0.0;
        for (int c = 0; c < C; ++c) norm += out.data[m * C + c] * out.data[m * C + c];
        norm = std::sqrt(norm);
        if (norm > 1e-12)
            for (int c = 0; c < C; ++c) out.data[m * C + c] /= norm;
        else  // exact cancellation: the row stays put
            for (int c = 0; c < C; ++c) out.data[m * C + c] = bank.data[m * C + c];
    }
    return out;
}

// Stride-1, zero-padded 3x3 (or any odd k) convolution.
inline Tensor conv2d_reference(const Tensor& x, const Tensor& w, const Tensor& b) {
    const int IC = x.shape[0], H = x.shape[1], W = x.shape[2];
    const int OC = w.shape[0], KH = w.shape[2], KW = w.shape[3];
    const int ph = KH / 2, pw = KW / 2;
    Tensor y({OC, H, W});
    for (int oc = 0; oc < OC; ++oc)
        for (int oy = 0; oy < H; ++oy)
            for (int ox = 0; ox < W; ++ox) {
                double acc = b.data[oc];
                for (int ic = 0; ic < IC; ++ic)
                    for (int ky = 0; ky < KH; ++ky)
                        for (int kx = 0; kx < KW; ++kx) {
                            const int iy = oy + ky - ph, ix = ox + kx - pw;
                            if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
                            acc += x.data[(ic * H + iy) * W + ix] *
                                   w.data[((oc * IC + ic) * KH + ky) * KW + kx];
                        }
                y.data[(oc * H + oy) * W + ox] = acc;
            }
    return y;
}

// Pairwise AUC: P(score_pos > score_neg) with half credit for ties.
inline double auc_reference(const std::vector<double>& scores, const std::vector<int>& labels) {
    double wins = 0.0;
    std::size_t np = 0, nn = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (labels[i] != 1) continue;
        ++np;
        for (std::size_t j = 0; j < scores.size(); ++j) {
            if (labels[j] != 0) continue;
            if (scores[i] > scores[j])
                wins += 1.0;
            else if (scores[i] == scores[j])
                wins += 0.5;
        }
    }
    for (int l : labels) nn += (l == 0);
    return wins / (static_cast<double>(np) * static_cast<double>(nn));
}

// Central-difference check of d(scalar)/d(leaf) for every element of every
// listed leaf. `forward` must rebuild the graph from current leaf values and
// return the scalar root. Returns the worst relative error encountered.
inline double max_rel_grad_err(const std::vector<dmad::Var>& leaves,
                               const std::function<dmad::Var()>& forward, double h = 1e-5) {
    using dmad::backward;
    for (const auto& leaf : leaves) leaf->grad = Tensor(leaf->value.shape);
    dmad::Var root = forward();
    backward(root);
    std::vector<Tensor> analytic;
    analytic.reserve(leaves.size());
    for (const auto& leaf : leaves) analytic.push_back(leaf->grad);

    double worst = 0.0;
    for (std::size_t li = 0; li < leaves.size(); ++li) {
        Tensor& value = leaves[li]->value;
        for (std::size_t i = 0; i < value.data.size(); ++i) {
            const double saved = value.data[i];
            value.data[i] = saved + h;
            const double fp = forward()->value.data[0];
            value.data[i] = saved - h;
            const double fm = forward()->value.data[0];
            value.data[i] = saved;

            const double fd = (fp - fm) / (2.0 * h);
            const double an = analytic[li].data[i];
            const double scale = std::max(std::abs(fd), std::abs(an));
            if (scale < 1e-7) continue;  // both effectively zero
            worst = std::max(worst, std::abs(fd - an) / std::max(scale, 1e-4));
        }
    }
    return worst;
}

}  // namespace oracle
