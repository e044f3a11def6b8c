// Command-line front end: dataset synthesis, split construction, training,
// evaluation, and diagnostics export for the dual-memory anomaly detector.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "dmad/data.hpp"
#include "dmad/errors.hpp"
#include "dmad/harness.hpp"
#include "dmad/network.hpp"
#include "dmad/scoring.hpp"

namespace {

using namespace dmad;

nlohmann::json load_json_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open config file: " + path);
    try {
        nlohmann::json j;
        is >> j;
        return j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("bad JSON in " + path + ": " + e.what());
    }
}

std::vector<std::string> resolve_videos(const Dataset& ds, const std::string& split_path,
                                        bool test_only) {
    if (!split_path.empty()) return load_split(split_path).test_videos;
    std::vector<std::string> out;
    for (const VideoMeta& v : ds.videos)
        if (!test_only || v.group != "normal_train") out.push_back(v.id);
    return out;
}

int run(int argc, char** argv) {
    CLI::App app{"dual-memory video anomaly detection"};
    app.require_subcommand(1);

    // --- synth ---------------------------------------------------------
    auto* synth = app.add_subcommand("synth", "generate a synthetic video dataset");
    std::string synth_out, synth_cfg_path;
    std::optional<std::uint64_t> synth_seed;
    std::optional<int> synth_size;
    synth->add_option("--out", synth_out, "output dataset directory")->required();
    synth->add_option("--config", synth_cfg_path, "JSON file with generator parameters");
    synth->add_option("--seed", synth_seed, "generator seed");
    synth->add_option("--frame-size", synth_size, "frame edge");

    // --- split ---------------------------------------------------------
    auto* split_cmd = app.add_subcommand("split", "build a train/test split file");
    std::string split_data, split_out, split_protocol = "kfold";
    int split_k = 10, split_fold = 0, split_t = 4;
    double split_rate = 0.1;
    std::uint64_t split_seed = 0;
    split_cmd->add_option("--data", split_data, "dataset directory")->required();
    split_cmd->add_option("--out", split_out, "output split JSON")->required();
    split_cmd->add_option("--protocol", split_protocol, "kfold or rate");
    split_cmd->add_option("--k", split_k, "fold count (kfold)");
    split_cmd->add_option("--fold", split_fold, "injected fold index (kfold)");
    split_cmd->add_option("--rate", split_rate, "abnormal clip share (rate)");
    split_cmd->add_option("--seed", split_seed, "selection seed (rate)");
    split_cmd->add_option("--t-window", split_t, "input frames per clip");

    // --- train ---------------------------------------------------------
    auto* train_cmd = app.add_subcommand("train", "train a model on a split");
    std::string train_data, train_split, train_run, train_cfg_path, train_mode;
    bool paper_scale = false;
    std::optional<std::uint64_t> train_seed;
    std::optional<int> train_epochs, train_batch;
    std::optional<double> train_lr, train_gamma;
    train_cmd->add_option("--data", train_data, "dataset directory")->required();
    train_cmd->add_option("--split", train_split, "split JSON")->required();
    train_cmd->add_option("--run", train_run, "run output directory")->required();
    train_cmd->add_option("--config", train_cfg_path, "JSON training config");
    train_cmd->add_flag("--paper-scale", paper_scale, "use published-scale dimensions");
    train_cmd->add_option("--mode", train_mode, "dual, single_disc, or single");
    train_cmd->add_option("--seed", train_seed, "training seed");
    train_cmd->add_option("--epochs", train_epochs, "epoch count");
    train_cmd->add_option("--batch", train_batch, "batch size");
    train_cmd->add_option("--lr", train_lr, "initial learning rate");
    train_cmd->add_option("--gamma", train_gamma, "score blend weight");

    // --- eval ----------------------------------------------------------
    auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on test videos");
    std::string eval_data, eval_split, eval_ckpt, eval_out;
    eval_cmd->add_option("--data", eval_data, "dataset directory")->required();
    eval_cmd->add_option("--split", eval_split, "split JSON (test videos)")->required();
    eval_cmd->add_option("--checkpoint", eval_ckpt, "checkpoint file")->required();
    eval_cmd->add_option("--out", eval_out, "evaluation output directory")->required();

    // --- score ---------------------------------------------------------
    auto* score_cmd = app.add_subcommand("score", "recompute AUC from a scores CSV");
    std::string score_csv;
    score_cmd->add_option("--scores", score_csv, "scores.csv from eval")->required();

    // --- diagnose ------------------------------------------------------
    auto* diag_cmd = app.add_subcommand("diagnose", "bank distance summary for test clips");
    std::string diag_data, diag_split, diag_ckpt, diag_out;
    diag_cmd->add_option("--data", diag_data, "dataset directory")->required();
    diag_cmd->add_option("--split", diag_split, "split JSON")->required();
    diag_cmd->add_option("--checkpoint", diag_ckpt, "checkpoint file")->required();
    diag_cmd->add_option("--out", diag_out, "output JSON (default stdout)");

    // --- export-features -------------------------------------------------
    auto* feat_cmd = app.add_subcommand("export-features",
                                        "per-clip discriminator features as CSV");
    std::string feat_data, feat_split, feat_ckpt, feat_out;
    bool feat_all = false;
    feat_cmd->add_option("--data", feat_data, "dataset directory")->required();
    feat_cmd->add_option("--checkpoint", feat_ckpt, "checkpoint file")->required();
    feat_cmd->add_option("--out", feat_out, "output CSV")->required();
    feat_cmd->add_option("--split", feat_split, "split JSON (use its test videos)");
    feat_cmd->add_flag("--all", feat_all, "export every video in the dataset");

    // --- report ----------------------------------------------------------
    auto* report_cmd = app.add_subcommand("report", "print a summary of an eval run");
    std::string report_dir;
    report_cmd->add_option("--run", report_dir, "directory containing report.json")->required();

    CLI11_PARSE(app, argc, argv);

    if (synth->parsed()) {
        SynthConfig synth_cfg;
        if (!synth_cfg_path.empty()) from_json(load_json_file(synth_cfg_path), synth_cfg);
        if (synth_seed) synth_cfg.seed = *synth_seed;
        if (synth_size) synth_cfg.frame_size = *synth_size;
        const Dataset ds = synth_generate(synth_cfg, synth_out);
        std::printf("wrote %zu videos under %s\n", ds.videos.size(), synth_out.c_str());
        return kExitOk;
    }

    if (split_cmd->parsed()) {
        const Dataset ds = load_dataset(split_data);
        Split s;
        if (split_protocol == "kfold")
            s = kfold_split(ds, split_k, split_fold, split_t);
        else if (split_protocol == "rate")
            s = rate_split(ds, split_rate, split_seed, split_t);
        else
            throw ConfigError("unknown protocol: " + split_protocol);
        save_split(split_out, s);
        std::printf("%s split: %zu train clips, %zu test videos -> %s\n",
                    split_protocol.c_str(), s.train_clips.size(), s.test_videos.size(),
                    split_out.c_str());
        return kExitOk;
    }

    if (train_cmd->parsed()) {
        TrainConfig cfg = paper_scale ? paper_scale_config() : TrainConfig{};
        if (!train_cfg_path.empty()) from_json(load_json_file(train_cfg_path), cfg);
        if (!train_mode.empty()) cfg.model.mode = model_mode_from_string(train_mode);
        if (train_seed) cfg.seed = *train_seed;
        if (train_epochs) cfg.epochs = *train_epochs;
        if (train_batch) cfg.batch_size = *train_batch;
        if (train_lr) cfg.lr = *train_lr;
        if (train_gamma) cfg.gamma = *train_gamma;

        const Dataset ds = load_dataset(train_data);
        const Split split = load_split(train_split);
        const TrainResult res = train(cfg, ds, split, train_run);
        const LossBundle& last = res.epoch_means.back();
        std::printf("trained %d epochs, final mean total loss %.6g -> %s\n", cfg.epochs,
                    last.total, res.checkpoint_path.string().c_str());
        return kExitOk;
    }

    if (eval_cmd->parsed()) {
        const Dataset ds = load_dataset(eval_data);
        const Split split = load_split(eval_split);
        const RunReport report = evaluate_checkpoint(eval_ckpt, ds, split.test_videos, eval_out);
        std::printf("frame AUC %.6f over %zu frames -> %s\n", report.auc,
                    report.records.size(), eval_out.c_str());
        if (report.distances) {
            std::printf("r_normal %.4f  r_abnormal %.4f\n", report.distances->r_normal,
                        report.distances->r_abnormal);
        }
        return kExitOk;
    }

    if (score_cmd->parsed()) {
        const auto records = read_scores_csv(score_csv);
        std::vector<double> scores;
        std::vector<int> labels;
        for (const ScoreRecord& r : records) {
            scores.push_back(r.score);
            labels.push_back(r.label);
        }
        std::printf("frame AUC %.6f over %zu frames\n", frame_auc(scores, labels),
                    records.size());
        return kExitOk;
    }

    if (diag_cmd->parsed()) {
        const Dataset ds = load_dataset(diag_data);
        const Split split = load_split(diag_split);
        const RunReport report = evaluate_checkpoint(diag_ckpt, ds, split.test_videos, "");
        if (!report.distances)
            throw ConfigError("diagnose: checkpoint has no dual-branch distances");
        nlohmann::json j = report.full_json()["distances"];
        if (diag_out.empty()) {
            std::printf("%s\n", j.dump(2).c_str());
        } else {
            std::ofstream os(diag_out);
            if (!os) throw DataError("cannot write " + diag_out);
            os << j.dump(2) << "\n";
            std::printf("wrote %s\n", diag_out.c_str());
        }
        return kExitOk;
    }

    if (feat_cmd->parsed()) {
        const Dataset ds = load_dataset(feat_data);
        if (feat_split.empty() && !feat_all)
            throw ConfigError("export-features: pass --split or --all");
        const auto videos = feat_all ? resolve_videos(ds, "", false)
                                     : resolve_videos(ds, feat_split, true);
        export_features(feat_ckpt, ds, videos, feat_out);
        std::printf("wrote %s\n", feat_out.c_str());
        return kExitOk;
    }

    if (report_cmd->parsed()) {
        const nlohmann::json j =
            load_json_file((std::filesystem::path(report_dir) / "report.json").string());
        std::printf("frame AUC: %.6f\n", j.at("auc").get<double>());
        if (j.contains("distances") && !j.at("distances").is_null()) {
            const auto& d = j.at("distances");
            std::printf("normal clips:   dNN %.4f  vs dNA %.4f  (r_normal %.4f)\n",
                        d.at("mean_dnn").get<double>(), d.at("mean_dna").get<double>(),
                        d.at("r_normal").get<double>());
            std::printf("abnormal clips: dAA %.4f  vs dAN %.4f  (r_abnormal %.4f)\n",
                        d.at("mean_daa").get<double>(), d.at("mean_dan").get<double>(),
                        d.at("r_abnormal").get<double>());
        }
        const auto& means = j.at("epoch_means");
        if (!means.empty())
            std::printf("final epoch mean total loss: %.6g\n",
                        means.back().at("total").get<double>());
        std::printf("wall seconds: %.2f\n", j.value("wall_seconds", 0.0));
        return kExitOk;
    }

    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return kExitConfigError;
    } catch (const DataError& e) {
        std::fprintf(stderr, "data error: %s\n", e.what());
        return kExitDataError;
    } catch (const NumericError& e) {
        std::fprintf(stderr, "numeric error: %s\n", e.what());
        return kExitNumericError;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
}
