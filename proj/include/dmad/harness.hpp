#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "dmad/data.hpp"
#include "dmad/losses.hpp"
#include "dmad/network.hpp"
#include "dmad/scoring.hpp"

namespace dmad {

struct TrainConfig {
    ModelConfig model;
    double lr = 2e-5;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    int batch_size = 4;
    int epochs = 60;
    LossWeights weights;
    double gamma = 0.6;  // prediction-vs-distance blend at evaluation
    std::uint64_t seed = 0;

    void validate() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

void to_json(nlohmann::json& j, const LossBundle& b);
void from_json(const nlohmann::json& j, LossBundle& b);

// Frame/channel dimensions matching the published experiments; the built-in
// defaults are sized for single-core desk runs instead.
TrainConfig paper_scale_config();

// Caches decoded videos; all loading goes through the dataset manifest.
class FrameStore {
public:
    explicit FrameStore(const Dataset& ds) : ds_(&ds) {}
    const std::vector<Tensor>& frames(const std::string& video_id);

private:
    const Dataset* ds_;
    std::map<std::string, std::vector<Tensor>> cache_;
};

struct Adam {
    double beta1, beta2, eps;
    std::int64_t t = 0;
    std::vector<Tensor> m, v;

    Adam(double b1, double b2, double e) : beta1(b1), beta2(b2), eps(e) {}
    void step(const std::vector<std::pair<std::string, Var>>& params, double lr);
};

double cosine_lr(double lr0, int epoch, int total_epochs);

struct IterationLog {
    int epoch = 0;
    int iter = 0;
    double lr = 0.0;
    LossBundle loss;
};

struct TrainResult {
    Model model;
    std::vector<MemoryBank> banks;  // [normality] or [normality, abnormality]
    std::vector<LossBundle> epoch_means;
    std::vector<IterationLog> trace;
    std::filesystem::path checkpoint_path;  // empty when run_dir was empty
};

// Full training loop: per batch forward, batch objective, backward, Adam
// step, then one memory update from re-encoded post-step queries. With a
// run_dir it writes checkpoint.bin, loss_log.csv, and config.json.
TrainResult train(const TrainConfig& cfg, const Dataset& ds, const Split& split,
                  const std::filesystem::path& run_dir);

struct DistanceSummary {
    double mean_dnn = 0.0, mean_dna = 0.0, mean_dan = 0.0, mean_daa = 0.0;
    double r_normal = 0.0, r_abnormal = 0.0;
    int n_normal_clips = 0, n_abnormal_clips = 0;
};

struct RunReport {
    nlohmann::json config;
    std::vector<LossBundle> epoch_means;
    double auc = 0.0;
    std::optional<DistanceSummary> distances;  // dual-branch checkpoints only
    double wall_seconds = 0.0;
    std::vector<ScoreRecord> records;

    // Deterministic serialization; wall-clock time is reported separately
    // and kept out of these bytes.
    std::string canonical_json() const;
    nlohmann::json full_json() const;
};

// Banks stay frozen. Per video: PSNR and compactness-distance series,
// min-max normalized, blended with gamma; AUC pools all test frames.
// With an out_dir it writes report.json, scores.csv, and distances.json.
RunReport evaluate(const Model& model, const std::vector<MemoryBank>& banks,
                   const Dataset& ds, const std::vector<std::string>& test_videos,
                   double gamma, const std::vector<LossBundle>& epoch_means,
                   const nlohmann::json& config_snapshot,
                   const std::filesystem::path& out_dir);
RunReport evaluate_checkpoint(const std::filesystem::path& ckpt_path, const Dataset& ds,
                              const std::vector<std::string>& test_videos,
                              const std::filesystem::path& out_dir);

// Per clip: pooled discriminator features of each available branch plus the
// clip label, one CSV row.
void export_features(const std::filesystem::path& ckpt_path, const Dataset& ds,
                     const std::vector<std::string>& videos,
                     const std::filesystem::path& out_csv);

}  // namespace dmad
