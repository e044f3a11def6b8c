#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "dmad/graph.hpp"
#include "dmad/memory_bank.hpp"
#include "dmad/tensor.hpp"

namespace dmad {

// dual        : two query heads, two banks, two discriminators
// single_disc : one head/bank updated by all samples, one discriminator
// single      : one head/bank, no discriminator, labels ignored
enum class ModelMode { dual, single_disc, single };

const char* to_string(ModelMode m);
ModelMode model_mode_from_string(const std::string& s);

struct ModelConfig {
    int frame_channels = 3;
    int frame_size = 64;   // square frames; 256 at paper scale
    int t_window = 4;      // consecutive input frames per clip
    int base_width = 8;    // encoder width at full resolution
    int query_channels = 16;  // per-head channels C (dual mode)
    int disc_channels = 16;
    int mem_items = 10;
    ModelMode mode = ModelMode::dual;

    // Three 2x downsamplings between frame and query grid.
    int grid_size() const { return frame_size / 8; }
    int clip_channels() const { return t_window * frame_channels; }
    // Single-branch ablations double the head width so the fused generator
    // input (and parameter count) stays comparable with the dual model.
    int query_dim() const { return mode == ModelMode::dual ? query_channels : 2 * query_channels; }
    int fused_channels() const { return 4 * query_channels; }

    void validate() const;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

struct ConvLayer {
    Var w;  // [OC, IC, 3, 3]
    Var b;  // [OC]
};

struct EncodeResult {
    Var qn_rows;  // [K, C] unit rows; the only head in single modes
    Var qa_rows;  // dual mode only, otherwise null
    Var skip1, skip2, skip3;
};

// UNet-style predictor: shared encoder trunk, one or two query heads split
// off after the trunk, skip connections into the frame generator, and a
// one-conv-plus-pooling discriminator per branch.
class Model {
public:
    explicit Model(const ModelConfig& cfg, std::uint64_t seed);

    Model(const Model&) = delete;
    Model& operator=(const Model&) = delete;
    Model(Model&&) = default;
    Model& operator=(Model&&) = default;

    const ModelConfig& config() const { return cfg_; }

    // Encoder over T stacked frames. Frames must be [C, S, S] in [-1, 1].
    EncodeResult encode(const std::vector<Tensor>& frames) const;

    // Next-frame prediction from the fused read output plus encoder skips.
    Var generate(const Var& fused, const EncodeResult& enc) const;

    // Shallow branch feature: 3x3 conv then global average pooling.
    Var discriminate(const Var& augmented_chw, Branch branch) const;

    bool has_abnormality_head() const { return cfg_.mode == ModelMode::dual; }
    bool has_discriminator() const { return cfg_.mode != ModelMode::single; }

    // Parameter leaves in a fixed order (optimizer + checkpoint order).
    std::vector<std::pair<std::string, Var>> named_params() const;
    // Toggles gradient tracking on the parameter leaves; with it off, graph
    // building degenerates to a cheap forward pass.
    void set_trainable(bool trainable) const;
    void zero_grads();

private:
    ModelConfig cfg_;
    ConvLayer enc1a_, enc1b_, enc2a_, enc2b_, enc3a_, enc3b_;
    ConvLayer head_n1_, head_n2_, head_a1_, head_a2_;
    ConvLayer dec0_, dec3_, dec2_, dec1a_, dec1b_;
    ConvLayer disc_n_, disc_a_;
};

Tensor stack_clip(const std::vector<Tensor>& frames, const ModelConfig& cfg);

// Versioned container with the config snapshot, every parameter tensor,
// both memory banks, and an opaque extra blob (training history etc.).
struct Checkpoint {
    ModelConfig config;
    std::vector<std::pair<std::string, Tensor>> params;
    std::vector<MemoryBank> banks;  // [normality] or [normality, abnormality]
    nlohmann::json extra;
    std::uint64_t model_seed = 0;
};

void save_checkpoint(const std::filesystem::path& path, const Model& model,
                     const std::vector<MemoryBank>& banks, const nlohmann::json& extra,
                     std::uint64_t model_seed);
Checkpoint load_checkpoint(const std::filesystem::path& path);
Model model_from_checkpoint(const Checkpoint& ckpt);

}  // namespace dmad
