#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "dmad/tensor.hpp"

namespace dmad {

enum class Branch { normality, abnormality };
enum class SampleLabel { normal, abnormal };

const char* to_string(Branch b);
const char* to_string(SampleLabel l);
Branch branch_from_string(const std::string& s);

// A set of M unit-norm prototype vectors for one branch of the feature
// space. Rows stay unit-norm through every update.
struct MemoryBank {
    Branch branch = Branch::normality;
    Tensor vectors;  // [M, C]

    int items() const { return vectors.dim(0); }
    int channels() const { return vectors.dim(1); }
    const double* row(int m) const { return vectors.data.data() + static_cast<std::size_t>(m) * channels(); }
};

// H*W unit-norm query vectors from one encoder head, flattened to [K, C].
// Carries the head it came from and the label of the producing sample so
// the update restriction can be enforced.
struct QueryGrid {
    Branch branch = Branch::normality;
    SampleLabel label = SampleLabel::normal;
    Tensor vectors;  // [K, C], rows normalized at construction

    QueryGrid() = default;
    QueryGrid(Tensor raw, Branch br, SampleLabel lb);

    int count() const { return vectors.dim(0); }
    int channels() const { return vectors.dim(1); }
    const double* row(int k) const { return vectors.data.data() + static_cast<std::size_t>(k) * channels(); }
};

struct ReadResult {
    Tensor augmented;  // [K, 2C]: retrieved vector then query, per row
    Tensor weights;    // [K, M], each row sums to 1
};

// M unit rows drawn i.i.d. from an isotropic normal then normalized.
// Deterministic given the seed.
MemoryBank init_bank(int items, int channels, std::uint64_t seed, Branch branch);

// Softmax-weighted retrieval: weights_km = softmax over m of q_k.p_m, each
// augmented row is concat(sum_m w_km p_m, q_k). The bank is not modified.
ReadResult read(const QueryGrid& queries, const MemoryBank& bank);

// Moves each memory toward the queries assigned to it by nearest-neighbor
// (argmax of q.p, ties to the lowest memory index). Assigned queries are
// weighted by a softmax over the query axis restricted to the assigned set
// and renormalized to sum to 1; then p_m <- normalize(p_m + sum v_km q_k).
// Memories with no assigned query are left bit-identical. The grid's label
// must match the bank's branch (normal->normality, abnormal->abnormality).
void update(MemoryBank& bank, const QueryGrid& queries);

// Same rule without the label/branch restriction. The checked `update` is
// the public path; ablation models that fold both classes into one space
// call this directly.
void update_unchecked(MemoryBank& bank, const QueryGrid& queries);

// Versioned binary tensor file (shape + row-major float64) plus a JSON
// sidecar at <path>.meta.json carrying the branch tag.
void save_bank(const MemoryBank& bank, const std::filesystem::path& path);
MemoryBank load_bank(const std::filesystem::path& path);

}  // namespace dmad
