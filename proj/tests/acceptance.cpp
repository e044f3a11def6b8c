// Acceptance gates for the full pipeline. Standalone runner: each criterion
// prints one [PASS]/[FAIL] line with the measured values, and the process
// exits nonzero if any gate failed. Criterion 6 consumes the artifacts of
// criterion 5, so order is fixed.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "dmad/data.hpp"
#include "dmad/errors.hpp"
#include "dmad/graph.hpp"
#include "dmad/harness.hpp"
#include "dmad/losses.hpp"
#include "dmad/memory_bank.hpp"
#include "dmad/network.hpp"
#include "dmad/rng.hpp"
#include "dmad/scoring.hpp"
#include "oracles.hpp"

using namespace dmad;
namespace fs = std::filesystem;

namespace {

int g_failures = 0;

double now_s() {
    using clock = std::chrono::steady_clock;
    return std::chrono::duration<double>(clock::now().time_since_epoch()).count();
}

void gate(int idx, const char* name, bool ok, const std::string& detail) {
    std::printf("[%s] %d %-22s %s\n", ok ? "PASS" : "FAIL", idx, name, detail.c_str());
    std::fflush(stdout);
    if (!ok) ++g_failures;
}

std::string fmt(const char* f, ...) {
    char buf[512];
    va_list ap;
    va_start(ap, f);
    std::vsnprintf(buf, sizeof buf, f, ap);
    va_end(ap);
    return buf;
}

Tensor random_tensor(const std::vector<int>& shape, Rng& rng, double scale = 1.0) {
    Tensor t(shape);
    for (double& v : t.data) v = scale * rng.normal();
    return t;
}

// --- 1: read/update vs brute-force references -------------------------------

void criterion_mechanism() {
    const double t0 = now_s();
    const int kInstances = 120;
    const double kTol = 1e-10;
    Rng rng(101);
    double worst = 0.0;
    for (int i = 0; i < kInstances; ++i) {
        const int K = 1 + static_cast<int>(rng.below(16));
        const int M = 1 + static_cast<int>(rng.below(8));
        const int C = 2 + static_cast<int>(rng.below(7));
        const QueryGrid q(random_tensor({K, C}, rng), Branch::normality, SampleLabel::normal);
        MemoryBank bank = init_bank(M, C, rng.next_u64(), Branch::normality);

        const ReadResult got = read(q, bank);
        Tensor aug, w;
        oracle::read_reference(q.vectors, bank.vectors, &aug, &w);
        worst = std::max(worst, max_abs_diff(got.augmented, aug));
        worst = std::max(worst, max_abs_diff(got.weights, w));

        const Tensor expect = oracle::update_reference(q.vectors, bank.vectors);
        update(bank, q);
        worst = std::max(worst, max_abs_diff(bank.vectors, expect));
    }
    const double dt = now_s() - t0;
    gate(1, "mechanism fidelity", worst <= kTol && dt < 10.0,
         fmt("max |err| %.2e over %d instances, tol %.0e (%.1f s)", worst, kInstances, kTol, dt));
}

// --- 2: row norms after repeated updates -------------------------------------

void criterion_norms() {
    const double kTol = 1e-6;
    Rng rng(202);
    MemoryBank bank = init_bank(10, 16, 77, Branch::normality);
    for (int i = 0; i < 1000; ++i) {
        const int K = 4 + static_cast<int>(rng.below(29));
        const QueryGrid q(random_tensor({K, 16}, rng), Branch::normality, SampleLabel::normal);
        update_unchecked(bank, q);
    }
    double worst = 0.0;
    for (int m = 0; m < bank.items(); ++m) {
        double sq = 0.0;
        for (int c = 0; c < bank.channels(); ++c) sq += bank.row(m)[c] * bank.row(m)[c];
        worst = std::max(worst, std::abs(std::sqrt(sq) - 1.0));
    }
    gate(2, "norm preservation", worst <= kTol,
         fmt("max |norm-1| %.2e after 1000 updates, tol %.0e", worst, kTol));
}

// --- 3: analytic vs central-difference gradients ------------------------------

void criterion_gradients() {
    const double t0 = now_s();
    const double kTol = 1e-4;
    Rng rng(303);
    double worst = 0.0;

    // reconstruction: smooth everywhere
    for (int trial = 0; trial < 8; ++trial) {
        const Var pred = make_leaf(random_tensor({3, 6, 6}, rng, 0.5), true);
        const Tensor target = random_tensor({3, 6, 6}, rng, 0.5);
        worst = std::max(worst, oracle::max_rel_grad_err(
                                    {pred}, [&] { return sum_sq_diff(pred, target); }));
    }

    // triplet: sample away from the hinge kink, half active, half inactive
    for (int trial = 0; trial < 16; ++trial) {
        Tensor a, p, n;
        double arg = 0.0;
        do {
            a = random_tensor({8}, rng, 0.5);
            p = random_tensor({8}, rng, 0.5);
            n = random_tensor({8}, rng, 0.5);
            double dp = 0.0, dn = 0.0;
            for (int i = 0; i < 8; ++i) {
                dp += (a.data[i] - p.data[i]) * (a.data[i] - p.data[i]);
                dn += (a.data[i] - n.data[i]) * (a.data[i] - n.data[i]);
            }
            arg = dp - dn + 1.0;
        } while (std::abs(arg) < 0.05 || (trial % 2 == 0) != (arg > 0.0));
        const Var va = make_leaf(a, true), vp = make_leaf(p, true), vn = make_leaf(n, true);
        worst = std::max(worst, oracle::max_rel_grad_err({va, vp, vn}, [&] {
            return triplet_op(va, vp, vn, 1.0);
        }));
    }

    // compactness and separateness: keep the item assignment and hinge stable
    // under the finite-difference step
    for (int trial = 0; trial < 12; ++trial) {
        const int K = 4, C = 6, M = 4;
        const MemoryBank bank = init_bank(M, C, 1000 + trial, Branch::normality);
        Tensor q;
        bool stable = false;
        while (!stable) {
            q = random_tensor({K, C}, rng, 0.8);
            stable = true;
            for (int k = 0; k < K && stable; ++k) {
                std::vector<double> dots(M);
                for (int m = 0; m < M; ++m) {
                    double d = 0.0;
                    for (int c = 0; c < C; ++c) d += q.data[k * C + c] * bank.row(m)[c];
                    dots[m] = d;
                }
                std::sort(dots.begin(), dots.end(), std::greater<>());
                const double hinge = 1.0 - 2.0 * (dots[0] - dots[1]);
                stable = dots[0] - dots[1] > 0.01 && dots[1] - dots[2] > 0.01 &&
                         std::abs(hinge) > 0.05;
            }
        }
        const Var vq = make_leaf(q, true);
        worst = std::max(worst, oracle::max_rel_grad_err(
                                    {vq}, [&] { return compactness_op(vq, bank.vectors); }));
        worst = std::max(worst, oracle::max_rel_grad_err(
                                    {vq}, [&] { return separateness_op(vq, bank.vectors, 1.0); }));
    }

    // generator output w.r.t. its fused input, parameters frozen
    {
        ModelConfig mc;
        mc.frame_size = 16;
        mc.base_width = 2;
        mc.query_channels = 4;
        mc.disc_channels = 4;
        mc.mem_items = 4;
        const Model model(mc, 9);
        model.set_trainable(false);
        std::vector<Tensor> frames;
        for (int t = 0; t < mc.t_window; ++t) {
            Tensor f({3, 16, 16});
            for (double& v : f.data) v = rng.uniform(-0.9, 0.9);
            frames.push_back(std::move(f));
        }
        const EncodeResult enc = model.encode(frames);
        const int g = mc.grid_size();
        const Var fused = make_leaf(random_tensor({mc.fused_channels(), g, g}, rng, 0.3), true);
        const Tensor target = random_tensor({3, 16, 16}, rng, 0.3);
        worst = std::max(worst, oracle::max_rel_grad_err({fused}, [&] {
            return sum_sq_diff(model.generate(fused, enc), target);
        }));
    }

    const double dt = now_s() - t0;
    gate(3, "gradient suite", worst <= kTol && dt < 60.0,
         fmt("max rel err %.2e, tol %.0e (%.1f s)", worst, kTol, dt));
}

// --- 4: score algebra vs direct formulas --------------------------------------

void criterion_scores() {
    const double kTol = 1e-8;
    Rng rng(404);
    double worst = 0.0;
    bool in_range = true, endpoints = true;

    for (int trial = 0; trial < 200; ++trial) {
        const int n = 2 + static_cast<int>(rng.below(63));
        Tensor pred({n}), gt({n});
        for (int i = 0; i < n; ++i) {
            pred.data[i] = rng.uniform(-1.0, 1.0);
            gt.data[i] = rng.uniform(-1.0, 1.0);
        }
        pred.data[static_cast<int>(rng.below(n))] = rng.uniform(0.1, 1.0);  // positive peak

        const PsnrOutcome got = psnr(pred, gt);
        double peak = pred.data[0], sse = 0.0;
        for (int i = 0; i < n; ++i) {
            peak = std::max(peak, pred.data[i]);
            sse += (pred.data[i] - gt.data[i]) * (pred.data[i] - gt.data[i]);
        }
        const double direct = 10.0 * std::log10(peak / (sse / n));
        worst = std::max(worst, std::abs(got.value - direct));
    }

    for (int trial = 0; trial < 100; ++trial) {
        const int n = 3 + static_cast<int>(rng.below(30));
        std::vector<double> p(n), d(n);
        for (int i = 0; i < n; ++i) {
            p[i] = rng.uniform(5.0, 40.0);
            d[i] = rng.uniform(0.0, 2.0);
        }
        const double gamma = rng.uniform(0.0, 1.0);
        const std::vector<double> gp = minmax_normalize(p);
        const std::vector<double> gd = minmax_normalize(d);
        const std::vector<double> s = abnormality_score(gp, gd, gamma);

        double lo = p[0], hi = p[0];
        for (double v : p) {
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
        for (int i = 0; i < n; ++i) {
            const double g_direct = (p[i] - lo) / (hi - lo);
            worst = std::max(worst, std::abs(gp[i] - g_direct));
            const double s_direct = gamma * (1.0 - gp[i]) + (1.0 - gamma) * gd[i];
            worst = std::max(worst, std::abs(s[i] - s_direct));
            in_range = in_range && s[i] >= 0.0 && s[i] <= 1.0;
        }

        // blend endpoints are identities, not approximations
        const std::vector<double> s1 = abnormality_score(gp, gd, 1.0);
        const std::vector<double> s0 = abnormality_score(gp, gd, 0.0);
        for (int i = 0; i < n; ++i) {
            endpoints = endpoints && s1[i] == 1.0 - gp[i];
            endpoints = endpoints && s0[i] == gd[i];
        }
    }

    gate(4, "score algebra", worst <= kTol && in_range && endpoints,
         fmt("max |err| %.2e, tol %.0e, S in [0,1] %s, endpoints exact %s", worst, kTol,
             in_range ? "yes" : "NO", endpoints ? "yes" : "NO"));
}

// --- 5 and 6: synthetic benchmark ---------------------------------------------

struct BenchmarkArtifacts {
    bool ran = false;
    RunReport dual;
};

BenchmarkArtifacts criterion_benchmark(const fs::path& scratch) {
    const double t0 = now_s();
    const int kEpochs = 1;
    const double kLr = 2e-3;
    const double kBudgetS = 900.0;

    SynthConfig sc;
    sc.frame_size = 64;
    sc.n_normal_train = 16;
    sc.n_normal_test = 4;
    sc.n_abnormal = 4;
    sc.normal_len_min = 12;
    sc.normal_len_max = 16;
    sc.abnormal_len = 24;
    sc.onset_min = 10;
    sc.onset_max = 14;
    sc.seed = 4242;
    const Dataset ds = synth_generate(sc, scratch / "bench_data");
    const Split split = rate_split(ds, 0.10, 4242, 4);

    const ModelMode modes[3] = {ModelMode::dual, ModelMode::single_disc, ModelMode::single};
    const char* names[3] = {"dual", "single_disc", "single"};
    double auc[3] = {0.0, 0.0, 0.0};
    BenchmarkArtifacts out;

    for (int i = 0; i < 3; ++i) {
        TrainConfig cfg;
        cfg.model.mode = modes[i];
        cfg.epochs = kEpochs;
        cfg.lr = kLr;
        cfg.seed = 4242;
        const double m0 = now_s();
        const TrainResult tr = train(cfg, ds, split, scratch / names[i]);
        const RunReport rep =
            evaluate(tr.model, tr.banks, ds, split.test_videos, cfg.gamma, tr.epoch_means,
                     nlohmann::json(cfg), scratch / names[i] / "eval");
        auc[i] = rep.auc;
        std::printf("        %-12s auc %.4f  (%.0f s)\n", names[i], rep.auc, now_s() - m0);
        std::fflush(stdout);
        if (modes[i] == ModelMode::dual) out.dual = rep;
    }

    const double dt = now_s() - t0;
    const bool ok = auc[0] >= 0.90 && auc[0] > auc[1] && auc[0] > auc[2] && dt < kBudgetS;
    gate(5, "synthetic benchmark", ok,
         fmt("dual %.4f (>= 0.90) vs single_disc %.4f, single %.4f (%.0f s, budget %.0f)",
             auc[0], auc[1], auc[2], dt, kBudgetS));
    out.ran = true;
    return out;
}

void criterion_distances(const BenchmarkArtifacts& bench) {
    if (!bench.ran || !bench.dual.distances.has_value()) {
        gate(6, "distance separation", false, "no dual-branch benchmark report available");
        return;
    }
    const DistanceSummary& d = *bench.dual.distances;
    const bool ok = d.mean_dnn < d.mean_dna && d.mean_daa < d.mean_dan;
    gate(6, "distance separation", ok,
         fmt("dNN %.4f < dNA %.4f %s; dAA %.4f < dAN %.4f %s; r_normal %.4f r_abnormal %.4f",
             d.mean_dnn, d.mean_dna, d.mean_dnn < d.mean_dna ? "yes" : "NO", d.mean_daa,
             d.mean_dan, d.mean_daa < d.mean_dan ? "yes" : "NO", d.r_normal, d.r_abnormal));
}

// --- 7: split protocol properties ----------------------------------------------

Dataset random_meta_dataset(Rng& rng, int n_abnormal) {
    Dataset ds;
    ds.frame_size = 32;
    char buf[32];
    auto add = [&](const char* group, int idx, int len, int onset) {
        VideoMeta v;
        std::snprintf(buf, sizeof buf, "%s%03d", group, idx);
        v.id = buf;
        v.group = group;
        v.n_frames = len;
        v.labels.assign(len, 0);
        if (onset >= 0)
            for (int f = onset; f < len; ++f) v.labels[f] = 1;
        ds.videos.push_back(std::move(v));
    };
    const int n_train = 3 + static_cast<int>(rng.below(4));
    const int n_test = 1 + static_cast<int>(rng.below(2));
    for (int i = 0; i < n_train; ++i) add("normal_train", i, 15 + static_cast<int>(rng.below(16)), -1);
    for (int i = 0; i < n_test; ++i) add("normal_test", i, 15 + static_cast<int>(rng.below(16)), -1);
    for (int i = 0; i < n_abnormal; ++i) {
        const int len = 40 + static_cast<int>(rng.below(21));
        const int onset = len / 2 + static_cast<int>(rng.below(7)) - 3;
        add("abnormal", i, len, onset);
    }
    return ds;
}

std::string check_split(const Dataset& ds, const Split& s, int t_window) {
    std::set<std::string> test_set(s.test_videos.begin(), s.test_videos.end());
    std::set<std::pair<std::string, int>> seen;
    for (const ClipRef& c : s.train_clips) {
        if (test_set.count(c.video)) return "train clip from test video " + c.video;
        if (!seen.insert({c.video, c.start}).second) return "duplicate clip " + c.video;
        const VideoMeta& v = ds.video(c.video);
        if (c.start < 0 || c.start + t_window >= v.n_frames) return "clip range " + c.video;
        const bool ab = v.labels[c.start + t_window] == 1;
        if (ab != (c.label == SampleLabel::abnormal)) return "label mismatch " + c.video;
    }
    for (const VideoMeta& v : ds.videos)
        if (v.group == "normal_test" && !test_set.count(v.id))
            return "normal test video missing from " + v.id;
    return "";
}

void criterion_protocols() {
    const double t0 = now_s();
    const double rates[6] = {0.01, 0.05, 0.10, 0.15, 0.20, 0.25};
    Rng rng(707);
    int violations = 0;
    std::string first;
    const int kTrials = 1000;

    for (int trial = 0; trial < kTrials; ++trial) {
        const int n_abnormal = 10 + static_cast<int>(rng.below(3));
        const Dataset ds = random_meta_dataset(rng, n_abnormal);
        auto fail = [&](const std::string& why) {
            ++violations;
            if (first.empty()) first = fmt("trial %d: %s", trial, why.c_str());
        };

        // kfold: one abnormal fold trains, everything else tests
        const int fold = static_cast<int>(rng.below(10));
        const Split kf = kfold_split(ds, 10, fold, 4);
        std::string err = check_split(ds, kf, 4);
        if (!err.empty()) fail("kfold " + err);
        int injected = 0, expected_injected = 0;
        {
            std::set<std::string> train_videos;
            for (const ClipRef& c : kf.train_clips) train_videos.insert(c.video);
            std::vector<std::string> ab_ids;
            for (const VideoMeta& v : ds.videos)
                if (v.group == "abnormal") ab_ids.push_back(v.id);
            std::sort(ab_ids.begin(), ab_ids.end());
            for (int i = 0; i < static_cast<int>(ab_ids.size()); ++i) {
                const bool in_fold = i % 10 == fold;
                expected_injected += in_fold;
                injected += train_videos.count(ab_ids[i]) > 0;
                const bool in_test = std::find(kf.test_videos.begin(), kf.test_videos.end(),
                                               ab_ids[i]) != kf.test_videos.end();
                if (in_fold == in_test) fail("kfold video on wrong side");
            }
            if (injected != expected_injected) fail("kfold fold size");
        }

        // rate: reserved half, exact abnormal clip count
        const double rate = rates[rng.below(6)];
        const Split rs = rate_split(ds, rate, rng.next_u64(), 4);
        err = check_split(ds, rs, 4);
        if (!err.empty()) fail("rate " + err);
        std::size_t base_normal = 0;
        for (const VideoMeta& v : ds.videos)
            if (v.group == "normal_train") base_normal += static_cast<std::size_t>(v.n_frames - 4);
        const auto expected_ab = static_cast<std::size_t>(std::max<long long>(
            1, std::llround(rate / (1.0 - rate) * static_cast<double>(base_normal))));
        std::size_t got_ab = 0;
        int reserved = 0;
        for (const ClipRef& c : rs.train_clips) got_ab += (c.label == SampleLabel::abnormal);
        for (const std::string& id : rs.test_videos) reserved += ds.video(id).group == "abnormal";
        if (got_ab != expected_ab) fail("rate abnormal count");
        if (reserved != (n_abnormal + 1) / 2) fail("rate reserved count");
    }

    const double dt = now_s() - t0;
    gate(7, "protocol properties", violations == 0,
         fmt("%d trials, %d violations%s%s (%.1f s)", kTrials, violations,
             first.empty() ? "" : "; first: ", first.c_str(), dt));
}

// --- 8: bit-identical reports ---------------------------------------------------

void criterion_determinism(const fs::path& scratch) {
    const double t0 = now_s();
    SynthConfig sc;
    sc.frame_size = 32;
    sc.n_normal_train = 3;
    sc.n_normal_test = 1;
    sc.n_abnormal = 2;
    sc.normal_len_min = 8;
    sc.normal_len_max = 10;
    sc.abnormal_len = 16;
    sc.onset_min = 5;
    sc.onset_max = 8;
    sc.square_size = 5;
    sc.disc_radius = 3;
    sc.seed = 808;

    TrainConfig cfg;
    cfg.model.frame_size = 32;
    cfg.model.base_width = 4;
    cfg.model.query_channels = 8;
    cfg.model.disc_channels = 8;
    cfg.model.mem_items = 4;
    cfg.batch_size = 2;
    cfg.epochs = 2;
    cfg.lr = 1e-3;
    cfg.seed = 808;

    std::string bytes[2];
    for (int run = 0; run < 2; ++run) {
        const fs::path dir = scratch / fmt("det%d", run);
        const Dataset ds = synth_generate(sc, dir / "data");
        const Split split = rate_split(ds, 0.2, 808, 4);
        const TrainResult tr = train(cfg, ds, split, dir / "run");
        const RunReport rep = evaluate(tr.model, tr.banks, ds, split.test_videos, cfg.gamma,
                                       tr.epoch_means, nlohmann::json(cfg), dir / "eval");
        bytes[run] = rep.canonical_json();
    }
    const double dt = now_s() - t0;
    gate(8, "determinism", !bytes[0].empty() && bytes[0] == bytes[1],
         fmt("two runs, %zu report bytes, identical %s (%.0f s)", bytes[0].size(),
             bytes[0] == bytes[1] ? "yes" : "NO", dt));
}

}  // namespace

int main() {
    const double t0 = now_s();
    const fs::path scratch = fs::temp_directory_path() / "dmad_acceptance";
    fs::remove_all(scratch);
    fs::create_directories(scratch);
    std::printf("acceptance suite, scratch at %s\n", scratch.string().c_str());

    BenchmarkArtifacts bench;
    struct Step {
        int idx;
        const char* name;
        std::function<void()> run;
    };
    const std::vector<Step> steps = {
        {1, "mechanism fidelity", [] { criterion_mechanism(); }},
        {2, "norm preservation", [] { criterion_norms(); }},
        {3, "gradient suite", [] { criterion_gradients(); }},
        {4, "score algebra", [] { criterion_scores(); }},
        {5, "synthetic benchmark", [&] { bench = criterion_benchmark(scratch); }},
        {6, "distance separation", [&] { criterion_distances(bench); }},
        {7, "protocol properties", [] { criterion_protocols(); }},
        {8, "determinism", [&] { criterion_determinism(scratch); }},
    };
    for (const Step& s : steps) {
        try {
            s.run();
        } catch (const std::exception& e) {
            gate(s.idx, s.name, false, fmt("exception: %s", e.what()));
        }
    }

    std::printf("%d/8 criteria passed (%.0f s total)\n", 8 - g_failures, now_s() - t0);
    return g_failures == 0 ? 0 : 1;
}
