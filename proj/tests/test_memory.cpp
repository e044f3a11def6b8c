#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "dmad/errors.hpp"
#include "dmad/graph.hpp"
#include "dmad/memory_bank.hpp"
#include "dmad/rng.hpp"
#include "oracles.hpp"

using namespace dmad;

namespace {

Tensor random_unit_rows(int rows, int cols, Rng& rng) {
    Tensor t({rows, cols});
    for (double& v : t.data) v = rng.normal();
    l2_normalize_rows_inplace(t);
    return t;
}

}  // namespace

TEST_SUITE("memory") {
    TEST_CASE("init_bank rows are unit and deterministic") {
        MemoryBank a = init_bank(6, 5, 99, Branch::normality);
        MemoryBank b = init_bank(6, 5, 99, Branch::normality);
        MemoryBank c = init_bank(6, 5, 100, Branch::normality);
        CHECK(a.items() == 6);
        CHECK(a.channels() == 5);
        CHECK(max_abs_diff(a.vectors, b.vectors) == 0.0);
        CHECK(max_abs_diff(a.vectors, c.vectors) > 0.0);
        for (int m = 0; m < a.items(); ++m) {
            double n = 0.0;
            for (int ch = 0; ch < a.channels(); ++ch) n += a.row(m)[ch] * a.row(m)[ch];
            CHECK(std::abs(std::sqrt(n) - 1.0) < 1e-12);
        }
    }

    TEST_CASE("read matches brute-force reference") {
        Rng rng(2024);
        for (int trial = 0; trial < 50; ++trial) {
            const int K = 1 + static_cast<int>(rng.below(16));
            const int M = 1 + static_cast<int>(rng.below(8));
            const int C = 1 + static_cast<int>(rng.below(8));
            MemoryBank bank = init_bank(M, C, rng.below(1u << 30), Branch::normality);
            QueryGrid q(random_unit_rows(K, C, rng), Branch::normality, SampleLabel::normal);
            ReadResult r = read(q, bank);

            Tensor aug_ref, w_ref;
            oracle::read_reference(q.vectors, bank.vectors, &aug_ref, &w_ref);
            CHECK(max_abs_diff(r.augmented, aug_ref) < 1e-10);
            CHECK(max_abs_diff(r.weights, w_ref) < 1e-10);
        }
    }

    TEST_CASE("read weights are a distribution, augmented embeds the query") {
        Rng rng(5);
        MemoryBank bank = init_bank(4, 6, 8, Branch::abnormality);
        QueryGrid q(random_unit_rows(9, 6, rng), Branch::abnormality, SampleLabel::abnormal);
        ReadResult r = read(q, bank);
        for (int k = 0; k < 9; ++k) {
            double s = 0.0;
            for (int m = 0; m < 4; ++m) {
                CHECK(r.weights(k, m) > 0.0);
                s += r.weights(k, m);
            }
            CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
            for (int c = 0; c < 6; ++c) CHECK(r.augmented(k, 6 + c) == q.vectors(k, c));
        }
    }

    TEST_CASE("update matches brute-force reference") {
        Rng rng(77);
        for (int trial = 0; trial < 50; ++trial) {
            const int K = 1 + static_cast<int>(rng.below(16));
            const int M = 1 + static_cast<int>(rng.below(8));
            const int C = 1 + static_cast<int>(rng.below(8));
            MemoryBank bank = init_bank(M, C, rng.below(1u << 30), Branch::normality);
            QueryGrid q(random_unit_rows(K, C, rng), Branch::normality, SampleLabel::normal);

            const Tensor expected = oracle::update_reference(q.vectors, bank.vectors);
            update(bank, q);
            CHECK(max_abs_diff(bank.vectors, expected) < 1e-10);
        }
    }

    TEST_CASE("update keeps rows unit") {
        Rng rng(13);
        MemoryBank bank = init_bank(5, 7, 3, Branch::normality);
        for (int round = 0; round < 300; ++round) {
            const int K = 1 + static_cast<int>(rng.below(12));
            QueryGrid q(random_unit_rows(K, 7, rng), Branch::normality, SampleLabel::normal);
            update(bank, q);
        }
        for (int m = 0; m < bank.items(); ++m) {
            double n = 0.0;
            for (int c = 0; c < 7; ++c) n += bank.row(m)[c] * bank.row(m)[c];
            CHECK(std::abs(std::sqrt(n) - 1.0) < 1e-6);
        }
    }

    TEST_CASE("unassigned memory rows stay bit-identical") {
        // Queries clustered on e0; the opposing row -e0 attracts nothing.
        MemoryBank bank;
        bank.branch = Branch::normality;
        bank.vectors = Tensor({2, 3});
        bank.vectors(0, 0) = 1.0;
        bank.vectors(1, 0) = -1.0;
        Tensor qrows({3, 3});
        for (int k = 0; k < 3; ++k) {
            qrows(k, 0) = 1.0;
            qrows(k, 1) = 0.01 * k;
        }
        QueryGrid q(std::move(qrows), Branch::normality, SampleLabel::normal);
        const Tensor before = bank.vectors;
        update(bank, q);
        CHECK(bank.vectors(1, 0) == before(1, 0));
        CHECK(bank.vectors(1, 1) == before(1, 1));
        CHECK(bank.vectors(1, 2) == before(1, 2));
        CHECK(max_abs_diff(bank.vectors, before) > 0.0);  // row 0 moved
    }

    TEST_CASE("similarity ties assign to the lowest index") {
        MemoryBank bank;
        bank.branch = Branch::normality;
        bank.vectors = Tensor({3, 2});
        bank.vectors(0, 0) = 1.0;  // rows 0 and 1 identical
        bank.vectors(1, 0) = 1.0;
        bank.vectors(2, 1) = -1.0;
        Tensor qrows({2, 2});
        qrows(0, 0) = 1.0;
        qrows(0, 1) = 0.3;  // off-axis so the absorbing row actually moves
        qrows(1, 0) = 1.0;
        QueryGrid q(std::move(qrows), Branch::normality, SampleLabel::normal);
        const Tensor before = bank.vectors;
        update(bank, q);
        // all queries land on row 0; row 1 keeps its bits despite equal similarity
        CHECK(bank.vectors(1, 0) == before(1, 0));
        CHECK(bank.vectors(1, 1) == before(1, 1));
        CHECK(bank.vectors(2, 1) == before(2, 1));
        CHECK(max_abs_diff(bank.vectors, before) > 0.0);  // row 0 absorbed them
    }

    TEST_CASE("update enforces label-branch pairing") {
        Rng rng(19);
        MemoryBank bank = init_bank(3, 4, 1, Branch::normality);
        QueryGrid wrong(random_unit_rows(2, 4, rng), Branch::normality, SampleLabel::abnormal);
        CHECK_THROWS_AS(update(bank, wrong), ConfigError);
        const Tensor before = bank.vectors;
        update_unchecked(bank, wrong);  // ablation path ignores labels
        CHECK(max_abs_diff(bank.vectors, before) > 0.0);
    }

    TEST_CASE("read rejects mismatched widths") {
        Rng rng(21);
        MemoryBank bank = init_bank(3, 4, 1, Branch::normality);
        QueryGrid q(random_unit_rows(2, 5, rng), Branch::normality, SampleLabel::normal);
        CHECK_THROWS_AS(read(q, bank), ConfigError);
    }

    TEST_CASE("differentiable read path reproduces read()") {
        Rng rng(29);
        MemoryBank bank = init_bank(6, 5, 4, Branch::normality);
        QueryGrid q(random_unit_rows(7, 5, rng), Branch::normality, SampleLabel::normal);
        ReadResult r = read(q, bank);

        Var q_leaf = make_leaf(q.vectors, true);
        Var weights = softmax_rows(matmul_const_nt(q_leaf, bank.vectors));
        Var retrieved = matmul_const_nn(weights, bank.vectors);
        Var augmented = concat_rows_cols(retrieved, q_leaf);
        CHECK(max_abs_diff(weights->value, r.weights) < 1e-12);
        CHECK(max_abs_diff(augmented->value, r.augmented) < 1e-12);

        // gradients reach the queries; the bank tensor is never touched
        const Tensor bank_before = bank.vectors;
        Tensor probe({7, 10});
        for (double& v : probe.data) v = rng.uniform(-1.0, 1.0);
        backward(sum_sq_diff(augmented, probe));
        double gn = 0.0;
        for (double g : q_leaf->grad.data) gn += g * g;
        CHECK(gn > 0.0);
        CHECK(max_abs_diff(bank.vectors, bank_before) == 0.0);
    }

    TEST_CASE("bank file roundtrip") {
        namespace fs = std::filesystem;
        const fs::path dir = fs::temp_directory_path() / "dmad_bank_test";
        fs::create_directories(dir);
        const fs::path path = dir / "bank.bin";

        MemoryBank bank = init_bank(4, 3, 55, Branch::abnormality);
        save_bank(bank, path);
        MemoryBank loaded = load_bank(path);
        CHECK(loaded.branch == Branch::abnormality);
        CHECK(max_abs_diff(loaded.vectors, bank.vectors) == 0.0);
        CHECK(fs::exists(dir / "bank.bin.meta.json"));

        std::ofstream bad(path, std::ios::binary);
        bad << "NOTABANK";
        bad.close();
        CHECK_THROWS_AS(load_bank(path), DataError);
        fs::remove_all(dir);
    }
}
