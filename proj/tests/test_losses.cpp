#include <doctest.h>

#include <cmath>

#include "dmad/errors.hpp"
#include "dmad/graph.hpp"
#include "dmad/losses.hpp"
#include "dmad/rng.hpp"
#include "oracles.hpp"

using namespace dmad;

namespace {

Tensor vec(std::initializer_list<double> xs) {
    Tensor t({static_cast<int>(xs.size())});
    t.data.assign(xs.begin(), xs.end());
    return t;
}

Tensor rows(int r, int c, std::initializer_list<double> xs) {
    Tensor t({r, c});
    t.data.assign(xs.begin(), xs.end());
    return t;
}

MemoryBank bank_from(int m, int c, std::initializer_list<double> xs) {
    MemoryBank b;
    b.branch = Branch::normality;
    b.vectors = rows(m, c, xs);
    return b;
}

Tensor random_unit_rows(int r, int c, Rng& rng) {
    Tensor t({r, c});
    for (double& v : t.data) v = rng.normal();
    l2_normalize_rows_inplace(t);
    return t;
}

}  // namespace

TEST_SUITE("losses") {
    TEST_CASE("triplet hinge values") {
        const Tensor a = vec({0.0, 0.0});
        const Tensor p = vec({0.0, 0.0});
        // inactive: d(a,p)=0, d(a,n)=1, margin 1 -> max(0, 0-1+1) = 0
        CHECK(triplet_loss(a, p, vec({1.0, 0.0}), 1.0) == 0.0);
        // active: d(a,n)=0.25 -> 0.75
        CHECK(triplet_loss(a, p, vec({0.5, 0.0}), 1.0) == doctest::Approx(0.75).epsilon(1e-15));
        CHECK_THROWS_AS(triplet_loss(a, p, vec({1.0, 0.0, 0.0}), 1.0), ConfigError);
    }

    TEST_CASE("reconstruction is a plain squared sum") {
        const Tensor pred = rows(1, 3, {1.0, 2.0, 3.0});
        const Tensor target = rows(1, 3, {1.5, 2.0, 1.0});
        CHECK(reconstruction_loss(pred, target) == doctest::Approx(0.25 + 4.0).epsilon(1e-15));
        CHECK_THROWS_AS(reconstruction_loss(pred, vec({1.0})), ConfigError);
    }

    TEST_CASE("compactness pulls to the most similar item") {
        // bank rows e0 and e1; q = (0.6, 0.8) is most similar to e1
        const MemoryBank b = bank_from(2, 2, {1.0, 0.0, 0.0, 1.0});
        const Tensor q = rows(1, 2, {0.6, 0.8});
        CHECK(compactness_loss(q, b) == doctest::Approx(0.36 + 0.04).epsilon(1e-12));
        // q = e0 sits on its prototype
        CHECK(compactness_loss(rows(1, 2, {1.0, 0.0}), b) == doctest::Approx(0.0));
    }

    TEST_CASE("separateness pushes the runner-up away") {
        const MemoryBank b = bank_from(2, 2, {1.0, 0.0, 0.0, 1.0});
        const Tensor q = rows(1, 2, {0.6, 0.8});
        // nearest e1 (d^2 = 0.4), second e0 (d^2 = 0.8): max(0, 0.4 - 0.8 + 1) = 0.6
        CHECK(separateness_loss(q, b, 1.0) == doctest::Approx(0.6).epsilon(1e-12));
        // large separation deactivates the hinge
        CHECK(separateness_loss(q, b, 0.1) == doctest::Approx(0.0).epsilon(1e-12));

        const MemoryBank solo = bank_from(1, 2, {1.0, 0.0});
        CHECK_THROWS_AS(separateness_loss(q, solo, 1.0), ConfigError);
    }

    TEST_CASE("loss ops agree with plain implementations") {
        Rng rng(314);
        for (int trial = 0; trial < 20; ++trial) {
            const int K = 1 + static_cast<int>(rng.below(10));
            const int C = 2 + static_cast<int>(rng.below(6));
            const int M = 2 + static_cast<int>(rng.below(6));
            MemoryBank bank;
            bank.branch = Branch::normality;
            bank.vectors = random_unit_rows(M, C, rng);
            const Tensor q = random_unit_rows(K, C, rng);

            Var q_leaf = make_leaf(q, true);
            CHECK(compactness_op(q_leaf, bank.vectors)->value.data[0] ==
                  doctest::Approx(compactness_loss(q, bank)).epsilon(1e-13));
            CHECK(separateness_op(q_leaf, bank.vectors, 1.0)->value.data[0] ==
                  doctest::Approx(separateness_loss(q, bank, 1.0)).epsilon(1e-13));

            const Tensor a = random_unit_rows(1, 5, rng);
            const Tensor p = random_unit_rows(1, 5, rng);
            const Tensor n = random_unit_rows(1, 5, rng);
            CHECK(triplet_op(make_leaf(a), make_leaf(p), make_leaf(n), 1.0)->value.data[0] ==
                  doctest::Approx(triplet_loss(a, p, n, 1.0)).epsilon(1e-13));
        }
    }

    TEST_CASE("triplet sampling covers anchors and respects classes") {
        const std::vector<SampleLabel> labels = {SampleLabel::normal, SampleLabel::abnormal,
                                                 SampleLabel::normal, SampleLabel::normal};
        Rng rng(5);
        const auto triplets = sample_triplets(labels, rng);
        REQUIRE(triplets.size() == 3);  // one per normal sample
        CHECK(triplets[0].anchor == 0);
        CHECK(triplets[1].anchor == 2);
        CHECK(triplets[2].anchor == 3);
        for (const TripletIdx& t : triplets) {
            CHECK(labels[t.anchor] == SampleLabel::normal);
            CHECK(labels[t.positive] == SampleLabel::normal);
            CHECK(t.positive != t.anchor);
            CHECK(labels[t.negative] == SampleLabel::abnormal);
        }

        Rng r2(5);
        const auto again = sample_triplets(labels, r2);
        for (std::size_t i = 0; i < triplets.size(); ++i) {
            CHECK(again[i].positive == triplets[i].positive);
            CHECK(again[i].negative == triplets[i].negative);
        }
    }

    TEST_CASE("triplet sampling degenerates to empty") {
        Rng rng(1);
        CHECK(sample_triplets({SampleLabel::normal, SampleLabel::normal}, rng).empty());
        CHECK(sample_triplets({SampleLabel::normal, SampleLabel::abnormal}, rng).empty());
        CHECK(sample_triplets({SampleLabel::abnormal, SampleLabel::abnormal}, rng).empty());
    }

    TEST_CASE("total loss is the exact weighted sum of its parts") {
        Rng rng(2718);
        const int C = 4, M = 3, K = 5, D = 3;
        MemoryBank bank_n, bank_a;
        bank_n.branch = Branch::normality;
        bank_a.branch = Branch::abnormality;
        bank_n.vectors = random_unit_rows(M, C, rng);
        bank_a.vectors = random_unit_rows(M, C, rng);

        auto sample = [&](SampleLabel label) {
            SampleOutputs s;
            s.label = label;
            s.pred = random_unit_rows(2, 6, rng);
            s.target = random_unit_rows(2, 6, rng);
            s.qn_rows = random_unit_rows(K, C, rng);
            s.qa_rows = random_unit_rows(K, C, rng);
            s.feat_n = random_unit_rows(1, D, rng);
            s.feat_a = random_unit_rows(1, D, rng);
            return s;
        };
        std::vector<SampleOutputs> batch = {sample(SampleLabel::normal),
                                            sample(SampleLabel::normal),
                                            sample(SampleLabel::abnormal),
                                            sample(SampleLabel::abnormal)};
        LossWeights w;
        w.lambda_n = 0.1;
        w.mu_n = 0.2;
        w.nu_n = 0.3;
        w.lambda_a = 0.4;
        w.mu_a = 0.5;
        w.nu_a = 0.6;

        Rng trng(9);
        std::vector<SampleLabel> labels;
        for (const auto& s : batch) labels.push_back(s.label);
        const auto triplets = sample_triplets(labels, trng);
        const LossBundle out = total_loss(batch, bank_n, bank_a, w, triplets);

        const double expect = out.rec + w.lambda_n * out.com_n + w.mu_n * out.sep_n +
                              w.nu_n * out.tri_n + w.lambda_a * out.com_a + w.mu_a * out.sep_a +
                              w.nu_a * out.tri_a;
        CHECK(out.total == doctest::Approx(expect).epsilon(1e-15));

        // components are sums over contributors divided by batch size
        const double rec_direct = (reconstruction_loss(batch[0].pred, batch[0].target) +
                                   reconstruction_loss(batch[1].pred, batch[1].target)) /
                                  4.0;
        CHECK(out.rec == doctest::Approx(rec_direct).epsilon(1e-15));
        const double com_a_direct = (compactness_loss(batch[2].qa_rows, bank_a) +
                                     compactness_loss(batch[3].qa_rows, bank_a)) /
                                    4.0;
        CHECK(out.com_a == doctest::Approx(com_a_direct).epsilon(1e-15));
    }

    TEST_CASE("all-normal batch drops the abnormal terms") {
        Rng rng(11);
        const int C = 3, M = 2, K = 4;
        MemoryBank bank_n, bank_a;
        bank_n.branch = Branch::normality;
        bank_a.branch = Branch::abnormality;
        bank_n.vectors = random_unit_rows(M, C, rng);
        bank_a.vectors = random_unit_rows(M, C, rng);

        SampleOutputs s;
        s.label = SampleLabel::normal;
        s.pred = random_unit_rows(2, 2, rng);
        s.target = random_unit_rows(2, 2, rng);
        s.qn_rows = random_unit_rows(K, C, rng);
        const LossBundle out = total_loss({s, s}, bank_n, bank_a, LossWeights{}, {});
        CHECK(out.com_a == 0.0);
        CHECK(out.sep_a == 0.0);
        CHECK(out.tri_n == 0.0);
        CHECK(out.tri_a == 0.0);
        CHECK(out.total == doctest::Approx(out.rec + 0.1 * out.com_n + 0.1 * out.sep_n));
    }

    TEST_CASE("batch without normal samples is rejected") {
        Rng rng(12);
        MemoryBank bank_n, bank_a;
        bank_n.branch = Branch::normality;
        bank_a.branch = Branch::abnormality;
        bank_n.vectors = random_unit_rows(2, 3, rng);
        bank_a.vectors = random_unit_rows(2, 3, rng);
        SampleOutputs s;
        s.label = SampleLabel::abnormal;
        s.qa_rows = random_unit_rows(4, 3, rng);
        CHECK_THROWS_AS(total_loss({s}, bank_n, bank_a, LossWeights{}, {}), ConfigError);
        CHECK_THROWS_AS(total_loss({}, bank_n, bank_a, LossWeights{}, {}), ConfigError);
    }

    TEST_CASE("loss op gradients match finite differences") {
        Rng rng(617);
        const int K = 4, C = 3, M = 3;
        MemoryBank bank;
        bank.branch = Branch::normality;
        bank.vectors = random_unit_rows(M, C, rng);
        Var q = make_leaf(random_unit_rows(K, C, rng), true);

        auto fwd_com = [&]() { return compactness_op(q, bank.vectors); };
        CHECK(oracle::max_rel_grad_err({q}, fwd_com) < 1e-6);

        auto fwd_sep = [&]() { return separateness_op(q, bank.vectors, 1.0); };
        CHECK(oracle::max_rel_grad_err({q}, fwd_sep) < 1e-6);

        Var a = make_leaf(random_unit_rows(1, 5, rng), true);
        Var p = make_leaf(random_unit_rows(1, 5, rng), true);
        Var n = make_leaf(random_unit_rows(1, 5, rng), true);
        const double dp = sq_dist(a->value.data.data(), p->value.data.data(), 5);
        const double dn = sq_dist(a->value.data.data(), n->value.data.data(), 5);
        REQUIRE(std::abs(dp - dn + 1.0) > 0.05);  // away from the hinge kink
        auto fwd_tri = [&]() { return triplet_op(a, p, n, 1.0); };
        CHECK(oracle::max_rel_grad_err({a, p, n}, fwd_tri) < 1e-6);

        Var pred = make_leaf(random_unit_rows(2, 4, rng), true);
        const Tensor target = random_unit_rows(2, 4, rng);
        auto fwd_rec = [&]() { return sum_sq_diff(pred, target); };
        CHECK(oracle::max_rel_grad_err({pred}, fwd_rec) < 1e-6);
    }
}
