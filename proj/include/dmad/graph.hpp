#pragma once

#include <functional>
#include <memory>
#include <utility>
#include <vector>

#include "dmad/tensor.hpp"

namespace dmad {

// Minimal reverse-mode autodiff over Tensor. Nodes form a DAG; backward()
// topologically sorts from the root and accumulates into .grad. Ops that
// pick a nearest neighbor or a hinge branch freeze the selection made at
// forward time, as is standard for these losses.
class Node;
using Var = std::shared_ptr<Node>;

class Node {
public:
    Tensor value;
    Tensor grad;  // allocated on demand, same shape as value
    bool requires_grad = false;
    std::vector<Var> parents;
    std::function<void(Node&)> backward_fn;

    void ensure_grad();
};

Var make_leaf(Tensor value, bool requires_grad = false);

// Runs reverse-mode accumulation from a scalar (or any) root, seeding the
// root gradient with ones.
void backward(const Var& root);

// --- image ops ([C, H, W] layout) ------------------------------------------

// 3x3 (or any odd k) convolution, stride 1, zero padding k/2.
Var conv2d(const Var& x, const Var& w, const Var& b);
Var avg_pool2(const Var& x);
Var upsample2(const Var& x);
Var concat_channels(const Var& a, const Var& b);
Var relu(const Var& x);
Var tanh_activation(const Var& x);
Var global_avg_pool(const Var& x);  // [C,H,W] -> [C]

// --- grid ops ----------------------------------------------------------------

// [C, H, W] -> [H*W, C] rows of per-location channel vectors, and back.
Var chw_to_rows(const Var& x);
Var rows_to_chw(const Var& x, int height, int width);
Var l2_normalize_rows(const Var& x, double eps = 1e-12);
Var softmax_rows(const Var& x);
// x [K, C] times constant [M, C]^T -> [K, M]
Var matmul_const_nt(const Var& x, const Tensor& mat);
// x [K, M] times constant [M, C] -> [K, C]
Var matmul_const_nn(const Var& x, const Tensor& mat);
Var concat_rows_cols(const Var& a, const Var& b);  // [K,Ca],[K,Cb] -> [K,Ca+Cb]

// --- scalar ops (shape {1}) ---------------------------------------------------

Var sum_sq_diff(const Var& a, const Tensor& target);
Var scale(const Var& a, double s);
Var weighted_sum(const std::vector<std::pair<double, Var>>& terms);

// Hinged feature-triplet penalty on flat feature vectors:
// max(0, |a-p|^2 - |a-n|^2 + margin).
Var triplet_op(const Var& anchor, const Var& positive, const Var& negative, double margin);

// Sum over rows of squared distance to the nearest bank row (nearest by
// dot product; ties to the lowest index). Bank is constant.
Var compactness_op(const Var& queries, const Tensor& bank);

// Sum over rows of max(0, d(q, nearest)^2 - d(q, second)^2 + margin).
// Requires at least two bank rows.
Var separateness_op(const Var& queries, const Tensor& bank, double margin);

}  // namespace dmad
