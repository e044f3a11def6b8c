#include "dmad/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "dmad/errors.hpp"
#include "dmad/rng.hpp"

namespace dmad {

namespace fs = std::filesystem;

void TrainConfig::validate() const {
    model.validate();
    if (!(lr > 0.0)) throw ConfigError("lr must be positive");
    if (!(adam_beta1 > 0.0 && adam_beta1 < 1.0) || !(adam_beta2 > 0.0 && adam_beta2 < 1.0))
        throw ConfigError("adam betas must lie in (0, 1)");
    if (!(adam_eps > 0.0)) throw ConfigError("adam_eps must be positive");
    if (batch_size < 2) throw ConfigError("batch_size must be at least 2");
    if (epochs < 1) throw ConfigError("epochs must be positive");
    if (!(gamma >= 0.0 && gamma <= 1.0)) throw ConfigError("gamma outside [0, 1]");
    if (weights.alpha <= 0.0 || weights.beta <= 0.0)
        throw ConfigError("margins must be positive");
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
    j = nlohmann::json{{"model", c.model},
                       {"lr", c.lr},
                       {"adam_beta1", c.adam_beta1},
                       {"adam_beta2", c.adam_beta2},
                       {"adam_eps", c.adam_eps},
                       {"batch_size", c.batch_size},
                       {"epochs", c.epochs},
                       {"lambda_n", c.weights.lambda_n},
                       {"mu_n", c.weights.mu_n},
                       {"nu_n", c.weights.nu_n},
                       {"lambda_a", c.weights.lambda_a},
                       {"mu_a", c.weights.mu_a},
                       {"nu_a", c.weights.nu_a},
                       {"alpha", c.weights.alpha},
                       {"beta", c.weights.beta},
                       {"gamma", c.gamma},
                       {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
    if (j.contains("model")) c.model = j.at("model").get<ModelConfig>();
    c.lr = j.value("lr", c.lr);
    c.adam_beta1 = j.value("adam_beta1", c.adam_beta1);
    c.adam_beta2 = j.value("adam_beta2", c.adam_beta2);
    c.adam_eps = j.value("adam_eps", c.adam_eps);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.epochs = j.value("epochs", c.epochs);
    c.weights.lambda_n = j.value("lambda_n", c.weights.lambda_n);
    c.weights.mu_n = j.value("mu_n", c.weights.mu_n);
    c.weights.nu_n = j.value("nu_n", c.weights.nu_n);
    c.weights.lambda_a = j.value("lambda_a", c.weights.lambda_a);
    c.weights.mu_a = j.value("mu_a", c.weights.mu_a);
    c.weights.nu_a = j.value("nu_a", c.weights.nu_a);
    c.weights.alpha = j.value("alpha", c.weights.alpha);
    c.weights.beta = j.value("beta", c.weights.beta);
    c.gamma = j.value("gamma", c.gamma);
    c.seed = j.value("seed", c.seed);
}

void to_json(nlohmann::json& j, const LossBundle& b) {
    j = nlohmann::json{{"rec", b.rec},     {"com_n", b.com_n}, {"sep_n", b.sep_n},
                       {"tri_n", b.tri_n}, {"com_a", b.com_a}, {"sep_a", b.sep_a},
                       {"tri_a", b.tri_a}, {"total", b.total}};
}

void from_json(const nlohmann::json& j, LossBundle& b) {
    b.rec = j.value("rec", 0.0);
    b.com_n = j.value("com_n", 0.0);
    b.sep_n = j.value("sep_n", 0.0);
    b.tri_n = j.value("tri_n", 0.0);
    b.com_a = j.value("com_a", 0.0);
    b.sep_a = j.value("sep_a", 0.0);
    b.tri_a = j.value("tri_a", 0.0);
    b.total = j.value("total", 0.0);
}

TrainConfig paper_scale_config() {
    TrainConfig cfg;
    cfg.model.frame_size = 256;
    cfg.model.base_width = 64;
    cfg.model.query_channels = 256;
    cfg.model.disc_channels = 64;
    return cfg;
}

const std::vector<Tensor>& FrameStore::frames(const std::string& video_id) {
    auto it = cache_.find(video_id);
    if (it != cache_.end()) return it->second;
    auto [ins, ok] = cache_.emplace(video_id, load_video_frames(*ds_, ds_->video(video_id)));
    return ins->second;
}

void Adam::step(const std::vector<std::pair<std::string, Var>>& params, double lr) {
    if (m.empty()) {
        for (const auto& [name, p] : params) {
            (void)name;
            m.emplace_back(p->value.shape);
            v.emplace_back(p->value.shape);
        }
    }
    ++t;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor& value = params[i].second->value;
        const Tensor& grad = params[i].second->grad;
        if (grad.data.empty()) continue;  // parameter unused by this graph
        double* mp = m[i].data.data();
        double* vp = v[i].data.data();
        double* xp = value.data.data();
        const double* gp = grad.data.data();
        for (std::size_t k = 0; k < value.data.size(); ++k) {
            mp[k] = beta1 * mp[k] + (1.0 - beta1) * gp[k];
            vp[k] = beta2 * vp[k] + (1.0 - beta2) * gp[k] * gp[k];
            const double mhat = mp[k] / bc1;
            const double vhat = vp[k] / bc2;
            xp[k] -= lr * mhat / (std::sqrt(vhat) + eps);
        }
    }
}

double cosine_lr(double lr0, int epoch, int total_epochs) {
    return lr0 * 0.5 * (1.0 + std::cos(3.14159265358979323846 * static_cast<double>(epoch) /
                                       static_cast<double>(total_epochs)));
}

// ============================================================================
// Shared forward pipeline
// ============================================================================

namespace {

struct SampleGraph {
    EncodeResult enc;
    Var aug_n_rows, aug_a_rows;  // [K, 2C]
    Var feat_n, feat_a;          // [D]
    Var pred;                    // built on demand by callers
    Var fused_chw;
};

Var read_graph(const Var& q_rows, const MemoryBank& bank, Var* aug_rows) {
    Var weights = softmax_rows(matmul_const_nt(q_rows, bank.vectors));
    Var retrieved = matmul_const_nn(weights, bank.vectors);
    *aug_rows = concat_rows_cols(retrieved, q_rows);
    return *aug_rows;
}

SampleGraph build_sample_graph(const Model& model, const std::vector<MemoryBank>& banks,
                               const std::vector<Tensor>& frames, bool want_disc) {
    const ModelConfig& mc = model.config();
    const int g = mc.grid_size();

    SampleGraph sg;
    sg.enc = model.encode(frames);
    read_graph(sg.enc.qn_rows, banks[0], &sg.aug_n_rows);
    Var aug_n_chw = rows_to_chw(sg.aug_n_rows, g, g);
    if (mc.mode == ModelMode::dual) {
        read_graph(sg.enc.qa_rows, banks[1], &sg.aug_a_rows);
        Var aug_a_chw = rows_to_chw(sg.aug_a_rows, g, g);
        sg.fused_chw = concat_channels(aug_n_chw, aug_a_chw);
        if (want_disc) {
            sg.feat_n = model.discriminate(aug_n_chw, Branch::normality);
            sg.feat_a = model.discriminate(aug_a_chw, Branch::abnormality);
        }
    } else {
        sg.fused_chw = aug_n_chw;
        if (want_disc && model.has_discriminator())
            sg.feat_n = model.discriminate(aug_n_chw, Branch::normality);
    }
    return sg;
}

std::vector<Tensor> clip_input_frames(const std::vector<Tensor>& video, int start, int t) {
    return {video.begin() + start, video.begin() + start + t};
}

nlohmann::json grad_diagnostics(const Model& model) {
    nlohmann::json out = nlohmann::json::object();
    for (const auto& [name, p] : model.named_params()) {
        double vn = 0.0, gn = 0.0;
        for (double x : p->value.data) vn += x * x;
        for (double x : p->grad.data) gn += x * x;
        out[name] = {{"value_l2", std::sqrt(vn)}, {"grad_l2", std::sqrt(gn)}};
    }
    return out;
}

void write_loss_log(const fs::path& path, const std::vector<IterationLog>& trace) {
    std::ofstream os(path);
    if (!os) throw DataError("cannot write loss log: " + path.string());
    os << "epoch,iter,lr,rec,com_n,sep_n,tri_n,com_a,sep_a,tri_a,total\n";
    char buf[512];
    for (const IterationLog& r : trace) {
        std::snprintf(buf, sizeof buf,
                      "%d,%d,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", r.epoch,
                      r.iter, r.lr, r.loss.rec, r.loss.com_n, r.loss.sep_n, r.loss.tri_n,
                      r.loss.com_a, r.loss.sep_a, r.loss.tri_a, r.loss.total);
        os << buf;
    }
}

}  // namespace

// ============================================================================
// Training
// ============================================================================

TrainResult train(const TrainConfig& cfg, const Dataset& ds, const Split& split,
                  const fs::path& run_dir) {
    cfg.validate();
    if (split.train_clips.empty()) throw DataError("train: empty training set");
    if (split.params.contains("t_window") &&
        split.params.at("t_window").get<int>() != cfg.model.t_window)
        throw ConfigError("train: split t_window does not match model config");

    std::vector<std::size_t> abnormal_idx;
    std::size_t n_normal = 0;
    for (std::size_t i = 0; i < split.train_clips.size(); ++i) {
        if (split.train_clips[i].label == SampleLabel::abnormal)
            abnormal_idx.push_back(i);
        else
            ++n_normal;
    }
    if (n_normal == 0) throw DataError("train: training set has no normal clips");

    const bool dual = cfg.model.mode == ModelMode::dual;
    const int B = cfg.batch_size;
    const std::size_t n_batches = split.train_clips.size() / static_cast<std::size_t>(B);
    if (n_batches == 0) throw DataError("train: training set smaller than one batch");

    Model model(cfg.model, mix_seed(cfg.seed, 1));
    model.set_trainable(true);
    const auto params = model.named_params();

    std::vector<MemoryBank> banks;
    banks.push_back(init_bank(cfg.model.mem_items, cfg.model.query_dim(), mix_seed(cfg.seed, 2),
                              Branch::normality));
    if (dual)
        banks.push_back(init_bank(cfg.model.mem_items, cfg.model.query_dim(),
                                  mix_seed(cfg.seed, 3), Branch::abnormality));

    FrameStore store(ds);
    Adam opt(cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
    Rng order_rng(mix_seed(cfg.seed, 4));
    Rng triplet_rng(mix_seed(cfg.seed, 5));

    TrainResult result{std::move(model), std::move(banks), {}, {}, {}};
    Model& net = result.model;
    const int T = cfg.model.t_window;

    std::vector<std::size_t> order(split.train_clips.size());
    std::iota(order.begin(), order.end(), 0);

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const double lr_e = cosine_lr(cfg.lr, epoch, cfg.epochs);
        order_rng.shuffle(order);
        LossBundle epoch_acc;

        for (std::size_t b = 0; b < n_batches; ++b) {
            std::vector<std::size_t> batch(order.begin() + static_cast<std::ptrdiff_t>(b * B),
                                           order.begin() + static_cast<std::ptrdiff_t>((b + 1) * B));
            if (!abnormal_idx.empty()) {
                const bool has_ab = std::any_of(batch.begin(), batch.end(), [&](std::size_t i) {
                    return split.train_clips[i].label == SampleLabel::abnormal;
                });
                if (!has_ab)
                    batch[order_rng.below(batch.size())] =
                        abnormal_idx[order_rng.below(abnormal_idx.size())];
            }

            std::vector<SampleLabel> labels;
            std::vector<SampleGraph> graphs;
            std::vector<const Tensor*> targets;
            labels.reserve(batch.size());
            graphs.reserve(batch.size());
            for (std::size_t idx : batch) {
                const ClipRef& c = split.train_clips[idx];
                const auto& video = store.frames(c.video);
                graphs.push_back(build_sample_graph(net, result.banks,
                                                    clip_input_frames(video, c.start, T),
                                                    net.has_discriminator()));
                targets.push_back(&video[static_cast<std::size_t>(c.start + T)]);
                labels.push_back(c.label);
            }

            // Per-sample loss terms. Reconstruction covers normal samples in
            // labeled modes and every sample in the unsupervised ablation.
            std::vector<Var> rec_terms, com_n_terms, sep_n_terms, com_a_terms, sep_a_terms;
            for (std::size_t i = 0; i < graphs.size(); ++i) {
                const bool normal = labels[i] == SampleLabel::normal;
                const bool want_rec = cfg.model.mode == ModelMode::single || normal;
                if (want_rec) {
                    graphs[i].pred = net.generate(graphs[i].fused_chw, graphs[i].enc);
                    rec_terms.push_back(sum_sq_diff(graphs[i].pred, *targets[i]));
                }
                if (dual) {
                    if (normal) {
                        com_n_terms.push_back(
                            compactness_op(graphs[i].enc.qn_rows, result.banks[0].vectors));
                        sep_n_terms.push_back(separateness_op(
                            graphs[i].enc.qn_rows, result.banks[0].vectors, cfg.weights.alpha));
                    } else {
                        com_a_terms.push_back(
                            compactness_op(graphs[i].enc.qa_rows, result.banks[1].vectors));
                        sep_a_terms.push_back(separateness_op(
                            graphs[i].enc.qa_rows, result.banks[1].vectors, cfg.weights.alpha));
                    }
                } else {
                    com_n_terms.push_back(
                        compactness_op(graphs[i].enc.qn_rows, result.banks[0].vectors));
                    sep_n_terms.push_back(separateness_op(graphs[i].enc.qn_rows,
                                                          result.banks[0].vectors,
                                                          cfg.weights.alpha));
                }
            }

            std::vector<Var> tri_n_terms, tri_a_terms;
            if (net.has_discriminator()) {
                for (const TripletIdx& tr : sample_triplets(labels, triplet_rng)) {
                    tri_n_terms.push_back(triplet_op(graphs[tr.anchor].feat_n,
                                                     graphs[tr.positive].feat_n,
                                                     graphs[tr.negative].feat_n,
                                                     cfg.weights.beta));
                    if (dual)
                        tri_a_terms.push_back(triplet_op(graphs[tr.anchor].feat_a,
                                                         graphs[tr.positive].feat_a,
                                                         graphs[tr.negative].feat_a,
                                                         cfg.weights.beta));
                }
            }

            const double inv_b = 1.0 / static_cast<double>(B);
            auto component = [inv_b](const std::vector<Var>& terms) -> Var {
                if (terms.empty()) return nullptr;
                std::vector<std::pair<double, Var>> scaled;
                scaled.reserve(terms.size());
                for (const Var& t : terms) scaled.emplace_back(inv_b, t);
                return weighted_sum(scaled);
            };
            Var rec_c = component(rec_terms);
            Var com_n_c = component(com_n_terms);
            Var sep_n_c = component(sep_n_terms);
            Var tri_n_c = component(tri_n_terms);
            Var com_a_c = component(com_a_terms);
            Var sep_a_c = component(sep_a_terms);
            Var tri_a_c = component(tri_a_terms);

            std::vector<std::pair<double, Var>> total_terms;
            auto add_term = [&total_terms](double w, const Var& v) {
                if (v) total_terms.emplace_back(w, v);
            };
            add_term(1.0, rec_c);
            add_term(cfg.weights.lambda_n, com_n_c);
            add_term(cfg.weights.mu_n, sep_n_c);
            add_term(cfg.weights.nu_n, tri_n_c);
            add_term(cfg.weights.lambda_a, com_a_c);
            add_term(cfg.weights.mu_a, sep_a_c);
            add_term(cfg.weights.nu_a, tri_a_c);
            Var total = weighted_sum(total_terms);

            IterationLog row;
            row.epoch = epoch;
            row.iter = static_cast<int>(b);
            row.lr = lr_e;
            auto val = [](const Var& v) { return v ? v->value.data[0] : 0.0; };
            row.loss.rec = val(rec_c);
            row.loss.com_n = val(com_n_c);
            row.loss.sep_n = val(sep_n_c);
            row.loss.tri_n = val(tri_n_c);
            row.loss.com_a = val(com_a_c);
            row.loss.sep_a = val(sep_a_c);
            row.loss.tri_a = val(tri_a_c);
            row.loss.total = total->value.data[0];

            if (!std::isfinite(row.loss.total)) {
                nlohmann::json diag;
                diag["epoch"] = epoch;
                diag["iter"] = static_cast<int>(b);
                diag["loss"] = row.loss;
                diag["params"] = grad_diagnostics(net);
                if (!run_dir.empty()) {
                    fs::create_directories(run_dir);
                    std::ofstream os(run_dir / "diagnostic.json");
                    os << diag.dump(2) << "\n";
                }
                throw NumericError("train: non-finite loss at epoch " + std::to_string(epoch) +
                                   " iter " + std::to_string(b));
            }

            net.zero_grads();
            backward(total);
            opt.step(params, lr_e);

            // One bank update per batch from post-step queries, class-pure in
            // dual mode, label-free in the single-bank ablations.
            net.set_trainable(false);
            std::vector<double> qn_pool, qa_pool;
            const int qd = cfg.model.query_dim();
            for (std::size_t i = 0; i < batch.size(); ++i) {
                const ClipRef& c = split.train_clips[batch[i]];
                const auto& video = store.frames(c.video);
                EncodeResult enc = net.encode(clip_input_frames(video, c.start, T));
                const bool normal = labels[i] == SampleLabel::normal;
                if (!dual || normal) {
                    const auto& d = enc.qn_rows->value.data;
                    qn_pool.insert(qn_pool.end(), d.begin(), d.end());
                }
                if (dual && !normal) {
                    const auto& d = enc.qa_rows->value.data;
                    qa_pool.insert(qa_pool.end(), d.begin(), d.end());
                }
            }
            net.set_trainable(true);
            if (!qn_pool.empty()) {
                Tensor rows({static_cast<int>(qn_pool.size()) / qd, qd});
                rows.data = std::move(qn_pool);
                QueryGrid q(std::move(rows), Branch::normality, SampleLabel::normal);
                if (dual)
                    update(result.banks[0], q);
                else
                    update_unchecked(result.banks[0], q);
            }
            if (dual && !qa_pool.empty()) {
                Tensor rows({static_cast<int>(qa_pool.size()) / qd, qd});
                rows.data = std::move(qa_pool);
                QueryGrid q(std::move(rows), Branch::abnormality, SampleLabel::abnormal);
                update(result.banks[1], q);
            }

            epoch_acc.rec += row.loss.rec;
            epoch_acc.com_n += row.loss.com_n;
            epoch_acc.sep_n += row.loss.sep_n;
            epoch_acc.tri_n += row.loss.tri_n;
            epoch_acc.com_a += row.loss.com_a;
            epoch_acc.sep_a += row.loss.sep_a;
            epoch_acc.tri_a += row.loss.tri_a;
            epoch_acc.total += row.loss.total;
            result.trace.push_back(row);
        }

        const double inv_n = 1.0 / static_cast<double>(n_batches);
        LossBundle mean;
        mean.rec = epoch_acc.rec * inv_n;
        mean.com_n = epoch_acc.com_n * inv_n;
        mean.sep_n = epoch_acc.sep_n * inv_n;
        mean.tri_n = epoch_acc.tri_n * inv_n;
        mean.com_a = epoch_acc.com_a * inv_n;
        mean.sep_a = epoch_acc.sep_a * inv_n;
        mean.tri_a = epoch_acc.tri_a * inv_n;
        mean.total = epoch_acc.total * inv_n;
        result.epoch_means.push_back(mean);
    }

    if (!run_dir.empty()) {
        fs::create_directories(run_dir);
        nlohmann::json extra;
        extra["train_config"] = cfg;
        extra["epoch_means"] = result.epoch_means;
        result.checkpoint_path = run_dir / "checkpoint.bin";
        save_checkpoint(result.checkpoint_path, result.model, result.banks, extra,
                        mix_seed(cfg.seed, 1));
        write_loss_log(run_dir / "loss_log.csv", result.trace);
        nlohmann::json cfg_json = cfg;
        std::ofstream os(run_dir / "config.json");
        if (!os) throw DataError("cannot write config snapshot");
        os << cfg_json.dump(2) << "\n";
    }
    return result;
}

// ============================================================================
// Evaluation
// ============================================================================

std::string RunReport::canonical_json() const {
    nlohmann::json j = full_json();
    j.erase("wall_seconds");
    return j.dump();
}

nlohmann::json RunReport::full_json() const {
    nlohmann::json j;
    j["config"] = config;
    j["epoch_means"] = epoch_means;
    j["auc"] = auc;
    if (distances) {
        j["distances"] = {{"mean_dnn", distances->mean_dnn},
                          {"mean_dna", distances->mean_dna},
                          {"mean_dan", distances->mean_dan},
                          {"mean_daa", distances->mean_daa},
                          {"r_normal", distances->r_normal},
                          {"r_abnormal", distances->r_abnormal},
                          {"n_normal_clips", distances->n_normal_clips},
                          {"n_abnormal_clips", distances->n_abnormal_clips}};
    } else {
        j["distances"] = nullptr;
    }
    j["records"] = nlohmann::json::array();
    for (const ScoreRecord& r : records) {
        j["records"].push_back({{"video", r.video},
                                {"frame", r.frame},
                                {"psnr", r.psnr},
                                {"dist", r.dist},
                                {"score", r.score},
                                {"label", r.label}});
    }
    j["wall_seconds"] = wall_seconds;
    return j;
}

RunReport evaluate(const Model& model, const std::vector<MemoryBank>& banks, const Dataset& ds,
                   const std::vector<std::string>& test_videos, double gamma,
                   const std::vector<LossBundle>& epoch_means,
                   const nlohmann::json& config_snapshot, const fs::path& out_dir) {
    if (test_videos.empty()) throw DataError("evaluate: no test videos");
    if (banks.empty()) throw ConfigError("evaluate: no memory banks");
    const auto t0 = std::chrono::steady_clock::now();

    model.set_trainable(false);
    const ModelConfig& mc = model.config();
    const bool dual = mc.mode == ModelMode::dual;
    const int T = mc.t_window;
    FrameStore store(ds);

    RunReport report;
    report.config = config_snapshot;
    report.epoch_means = epoch_means;

    std::vector<ClipDistances> normal_dists, abnormal_dists;

    for (const std::string& vid : test_videos) {
        const VideoMeta& meta = ds.video(vid);
        const auto& video = store.frames(vid);
        const auto clips = make_clips(meta, T);

        std::vector<PsnrOutcome> psnrs;
        std::vector<double> dists;
        psnrs.reserve(clips.size());
        for (const ClipRef& c : clips) {
            SampleGraph sg = build_sample_graph(model, banks,
                                                clip_input_frames(video, c.start, T), false);
            Var pred = model.generate(sg.fused_chw, sg.enc);
            psnrs.push_back(psnr(pred->value, video[static_cast<std::size_t>(c.start + T)]));
            dists.push_back(compactness_distance(sg.enc.qn_rows->value, banks[0]));

            if (dual) {
                ClipDistances cd = clip_bank_distances(sg.enc.qn_rows->value,
                                                       sg.enc.qa_rows->value, banks[0], banks[1]);
                (c.label == SampleLabel::abnormal ? abnormal_dists : normal_dists).push_back(cd);
            }
        }

        const std::vector<double> psnr_resolved = resolve_psnr_series(psnrs);
        const std::vector<double> scores =
            abnormality_score(minmax_normalize(psnr_resolved), minmax_normalize(dists), gamma);
        for (std::size_t i = 0; i < clips.size(); ++i) {
            ScoreRecord r;
            r.video = vid;
            r.frame = clips[i].start + T;
            r.psnr = psnr_resolved[i];
            r.dist = dists[i];
            r.score = scores[i];
            r.label = clips[i].label == SampleLabel::abnormal ? 1 : 0;
            report.records.push_back(std::move(r));
        }
    }

    std::vector<double> all_scores;
    std::vector<int> all_labels;
    for (const ScoreRecord& r : report.records) {
        all_scores.push_back(r.score);
        all_labels.push_back(r.label);
    }
    try {
        report.auc = frame_auc(all_scores, all_labels);
    } catch (const ConfigError& e) {
        throw DataError(std::string("evaluate: ") + e.what());
    }

    if (dual && !normal_dists.empty() && !abnormal_dists.empty()) {
        DistanceSummary s;
        auto mean_of = [](const std::vector<ClipDistances>& v, auto member) {
            double acc = 0.0;
            for (const ClipDistances& d : v) acc += d.*member;
            return acc / static_cast<double>(v.size());
        };
        s.mean_dnn = mean_of(normal_dists, &ClipDistances::dnn);
        s.mean_dna = mean_of(normal_dists, &ClipDistances::dna);
        s.mean_dan = mean_of(abnormal_dists, &ClipDistances::dan);
        s.mean_daa = mean_of(abnormal_dists, &ClipDistances::daa);
        const RatioResult r = distance_ratios(normal_dists, abnormal_dists);
        s.r_normal = r.r_normal;
        s.r_abnormal = r.r_abnormal;
        s.n_normal_clips = static_cast<int>(normal_dists.size());
        s.n_abnormal_clips = static_cast<int>(abnormal_dists.size());
        report.distances = s;
    }

    report.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    if (!out_dir.empty()) {
        fs::create_directories(out_dir);
        std::ofstream os(out_dir / "report.json");
        if (!os) throw DataError("cannot write report.json");
        os << report.full_json().dump(2) << "\n";
        write_scores_csv((out_dir / "scores.csv").string(), report.records);
        nlohmann::json dj = report.full_json();
        std::ofstream ds_os(out_dir / "distances.json");
        ds_os << dj["distances"].dump(2) << "\n";
    }
    return report;
}

RunReport evaluate_checkpoint(const fs::path& ckpt_path, const Dataset& ds,
                              const std::vector<std::string>& test_videos,
                              const fs::path& out_dir) {
    const Checkpoint ckpt = load_checkpoint(ckpt_path);
    Model model = model_from_checkpoint(ckpt);
    model.set_trainable(false);

    std::vector<LossBundle> epoch_means;
    double gamma = TrainConfig{}.gamma;
    nlohmann::json snapshot = nlohmann::json::object();
    if (ckpt.extra.contains("train_config")) {
        snapshot = ckpt.extra.at("train_config");
        gamma = snapshot.value("gamma", gamma);
    }
    if (ckpt.extra.contains("epoch_means"))
        epoch_means = ckpt.extra.at("epoch_means").get<std::vector<LossBundle>>();

    return evaluate(model, ckpt.banks, ds, test_videos, gamma, epoch_means, snapshot, out_dir);
}

// ============================================================================
// Feature export
// ============================================================================

void export_features(const fs::path& ckpt_path, const Dataset& ds,
                     const std::vector<std::string>& videos, const fs::path& out_csv) {
    const Checkpoint ckpt = load_checkpoint(ckpt_path);
    Model model = model_from_checkpoint(ckpt);
    model.set_trainable(false);
    if (!model.has_discriminator())
        throw ConfigError("export_features: model has no discriminator features");
    const bool dual = model.config().mode == ModelMode::dual;
    const int T = model.config().t_window;
    const int D = model.config().disc_channels;

    std::ofstream os(out_csv);
    if (!os) throw DataError("cannot write feature table: " + out_csv.string());
    os << "video,start,label";
    for (int i = 0; i < D; ++i) os << ",fn_" << i;
    if (dual)
        for (int i = 0; i < D; ++i) os << ",fa_" << i;
    os << "\n";

    FrameStore store(ds);
    char buf[64];
    for (const std::string& vid : videos) {
        const VideoMeta& meta = ds.video(vid);
        const auto& video = store.frames(vid);
        for (const ClipRef& c : make_clips(meta, T)) {
            SampleGraph sg = build_sample_graph(model, ckpt.banks,
                                                clip_input_frames(video, c.start, T), true);
            os << vid << "," << c.start << ","
               << (c.label == SampleLabel::abnormal ? 1 : 0);
            for (double v : sg.feat_n->value.data) {
                std::snprintf(buf, sizeof buf, ",%.17g", v);
                os << buf;
            }
            if (dual) {
                for (double v : sg.feat_a->value.data) {
                    std::snprintf(buf, sizeof buf, ",%.17g", v);
                    os << buf;
                }
            }
            os << "\n";
        }
    }
    if (!os) throw DataError("failed writing feature table");
}

}  // namespace dmad
