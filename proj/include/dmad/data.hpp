#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "dmad/memory_bank.hpp"
#include "dmad/tensor.hpp"

namespace dmad {

// Scene parameters for the synthetic corpus. Normal videos show a small
// square translating at slow constant speed over a textured background;
// abnormal videos additionally get a disc moving at several times that
// speed from a per-video onset frame. Anomalies therefore differ in both
// appearance and motion.
struct SynthConfig {
    int frame_size = 64;
    int n_normal_train = 12;
    int n_normal_test = 4;
    int n_abnormal = 4;
    int normal_len_min = 28;
    int normal_len_max = 36;
    int abnormal_len = 64;
    int onset_min = 20;
    int onset_max = 28;
    double normal_speed = 1.0;
    double abnormal_speed = 3.5;
    int square_size = 9;   // side in pixels
    int disc_radius = 6;
    std::uint64_t seed = 1;

    void validate() const;
};

void to_json(nlohmann::json& j, const SynthConfig& c);
void from_json(const nlohmann::json& j, SynthConfig& c);

struct VideoMeta {
    std::string id;
    std::string group;  // normal_train | normal_test | abnormal
    int n_frames = 0;
    std::vector<int> labels;  // per frame, 0 normal / 1 abnormal
    nlohmann::json scenario;
};

struct Dataset {
    std::filesystem::path root;
    int frame_size = 0;
    std::uint64_t seed = 0;
    nlohmann::json synth_config;
    std::vector<VideoMeta> videos;

    const VideoMeta& video(const std::string& id) const;
    std::vector<const VideoMeta*> group(const std::string& name) const;
};

// Writes frames as binary PPM plus a dataset.json manifest under out_root.
Dataset synth_generate(const SynthConfig& cfg, const std::filesystem::path& out_root);
Dataset load_dataset(const std::filesystem::path& root);

// Frames on disk are 8-bit; loading maps [0, 255] onto [-1, 1] exactly.
Tensor load_frame(const Dataset& ds, const VideoMeta& v, int frame_idx);
std::vector<Tensor> load_video_frames(const Dataset& ds, const VideoMeta& v);

void write_ppm(const std::filesystem::path& path, const std::vector<std::uint8_t>& rgb,
               int width, int height);
std::vector<std::uint8_t> read_ppm(const std::filesystem::path& path, int* width, int* height);

// One training sample: frames [start, start+T) predict frame start+T.
// The clip label is the target frame's label.
struct ClipRef {
    std::string video;
    int start = 0;
    SampleLabel label = SampleLabel::normal;

    bool operator==(const ClipRef& o) const = default;
};

std::vector<ClipRef> make_clips(const VideoMeta& v, int t_window);

struct Split {
    std::string protocol;  // kfold | rate
    nlohmann::json params;
    std::vector<ClipRef> train_clips;
    std::vector<std::string> test_videos;
};

// Abnormal videos are partitioned into K near-equal folds by sorted id;
// fold `fold` joins training (its abnormal-target clips as abnormal samples,
// its remaining clips as normal data), the rest stay in the test set.
Split kfold_split(const Dataset& ds, int K, int fold, int t_window);

// Reserves half the abnormal videos (shuffled by seed) for the test set and
// selects abnormal clips from the remainder so that the share of abnormal
// training clips is approximately `rate`, at least one clip.
Split rate_split(const Dataset& ds, double rate, std::uint64_t seed, int t_window);

void save_split(const std::filesystem::path& path, const Split& split);
Split load_split(const std::filesystem::path& path);

}  // namespace dmad
