#include "dmad/network.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include "dmad/errors.hpp"
#include "dmad/rng.hpp"

namespace dmad {

const char* to_string(ModelMode m) {
    switch (m) {
        case ModelMode::dual: return "dual";
        case ModelMode::single_disc: return "single_disc";
        case ModelMode::single: return "single";
    }
    throw ConfigError("unknown model mode");
}

ModelMode model_mode_from_string(const std::string& s) {
    if (s == "dual") return ModelMode::dual;
    if (s == "single_disc") return ModelMode::single_disc;
    if (s == "single") return ModelMode::single;
    throw ConfigError("unknown model mode: " + s);
}

void ModelConfig::validate() const {
    if (frame_channels < 1) throw ConfigError("frame_channels must be positive");
    if (frame_size < 8 || frame_size % 8 != 0)
        throw ConfigError("frame_size must be a positive multiple of 8");
    if (t_window < 1) throw ConfigError("t_window must be positive");
    if (base_width < 1) throw ConfigError("base_width must be positive");
    if (query_channels < 1) throw ConfigError("query_channels must be positive");
    if (disc_channels < 1) throw ConfigError("disc_channels must be positive");
    if (mem_items < 1) throw ConfigError("mem_items must be positive");
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
    j = nlohmann::json{{"frame_channels", c.frame_channels},
                       {"frame_size", c.frame_size},
                       {"t_window", c.t_window},
                       {"base_width", c.base_width},
                       {"query_channels", c.query_channels},
                       {"disc_channels", c.disc_channels},
                       {"mem_items", c.mem_items},
                       {"mode", to_string(c.mode)}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
    c.frame_channels = j.value("frame_channels", c.frame_channels);
    c.frame_size = j.value("frame_size", c.frame_size);
    c.t_window = j.value("t_window", c.t_window);
    c.base_width = j.value("base_width", c.base_width);
    c.query_channels = j.value("query_channels", c.query_channels);
    c.disc_channels = j.value("disc_channels", c.disc_channels);
    c.mem_items = j.value("mem_items", c.mem_items);
    if (j.contains("mode")) c.mode = model_mode_from_string(j.at("mode").get<std::string>());
}

namespace {

ConvLayer init_conv(int oc, int ic, Rng& rng) {
    Tensor w({oc, ic, 3, 3});
    const double stddev = std::sqrt(2.0 / (static_cast<double>(ic) * 9.0));
    for (double& v : w.data) v = stddev * rng.normal();
    Tensor b({oc});
    return ConvLayer{make_leaf(std::move(w), true), make_leaf(std::move(b), true)};
}

Var conv_block(const Var& x, const ConvLayer& l) { return relu(conv2d(x, l.w, l.b)); }

}  // namespace

Model::Model(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    Rng rng(mix_seed(seed, 0x6d6f64656cULL));
    const int F = cfg_.base_width;
    const int C = cfg_.query_dim();
    const int CC = cfg_.clip_channels();

    enc1a_ = init_conv(F, CC, rng);
    enc1b_ = init_conv(F, F, rng);
    enc2a_ = init_conv(2 * F, F, rng);
    enc2b_ = init_conv(2 * F, 2 * F, rng);
    enc3a_ = init_conv(4 * F, 2 * F, rng);
    enc3b_ = init_conv(4 * F, 4 * F, rng);

    head_n1_ = init_conv(C, 4 * F, rng);
    head_n2_ = init_conv(C, C, rng);
    if (cfg_.mode == ModelMode::dual) {
        head_a1_ = init_conv(C, 4 * F, rng);
        head_a2_ = init_conv(C, C, rng);
    }

    dec0_ = init_conv(4 * F, cfg_.fused_channels(), rng);
    dec3_ = init_conv(2 * F, 8 * F, rng);
    dec2_ = init_conv(F, 4 * F, rng);
    dec1a_ = init_conv(F, 2 * F, rng);
    dec1b_ = init_conv(cfg_.frame_channels, F, rng);

    if (cfg_.mode != ModelMode::single) {
        disc_n_ = init_conv(cfg_.disc_channels, 2 * C, rng);
        if (cfg_.mode == ModelMode::dual) disc_a_ = init_conv(cfg_.disc_channels, 2 * C, rng);
    }
}

EncodeResult Model::encode(const std::vector<Tensor>& frames) const {
    Var x = make_leaf(stack_clip(frames, cfg_), false);

    EncodeResult out;
    Var h = conv_block(x, enc1a_);
    out.skip1 = conv_block(h, enc1b_);
    h = avg_pool2(out.skip1);
    h = conv_block(h, enc2a_);
    out.skip2 = conv_block(h, enc2b_);
    h = avg_pool2(out.skip2);
    h = conv_block(h, enc3a_);
    out.skip3 = conv_block(h, enc3b_);
    Var trunk = avg_pool2(out.skip3);

    Var qn = conv2d(relu(conv2d(trunk, head_n1_.w, head_n1_.b)), head_n2_.w, head_n2_.b);
    out.qn_rows = l2_normalize_rows(chw_to_rows(qn));
    if (cfg_.mode == ModelMode::dual) {
        Var qa = conv2d(relu(conv2d(trunk, head_a1_.w, head_a1_.b)), head_a2_.w, head_a2_.b);
        out.qa_rows = l2_normalize_rows(chw_to_rows(qa));
    }
    return out;
}

Var Model::generate(const Var& fused, const EncodeResult& enc) const {
    const int g = cfg_.grid_size();
    if (fused->value.ndim() != 3 || fused->value.shape[0] != cfg_.fused_channels() ||
        fused->value.shape[1] != g || fused->value.shape[2] != g)
        throw ConfigError("generate: fused input has wrong shape");

    Var h = conv_block(fused, dec0_);
    h = conv_block(concat_channels(upsample2(h), enc.skip3), dec3_);
    h = conv_block(concat_channels(upsample2(h), enc.skip2), dec2_);
    h = conv_block(concat_channels(upsample2(h), enc.skip1), dec1a_);
    return tanh_activation(conv2d(h, dec1b_.w, dec1b_.b));
}

Var Model::discriminate(const Var& augmented_chw, Branch branch) const {
    if (cfg_.mode == ModelMode::single)
        throw ConfigError("discriminate: model has no discriminator");
    if (branch == Branch::abnormality && cfg_.mode != ModelMode::dual)
        throw ConfigError("discriminate: model has no abnormality branch");
    if (augmented_chw->value.ndim() != 3 ||
        augmented_chw->value.shape[0] != 2 * cfg_.query_dim())
        throw ConfigError("discriminate: augmented input has wrong channel count");
    const ConvLayer& l = branch == Branch::normality ? disc_n_ : disc_a_;
    return global_avg_pool(conv2d(augmented_chw, l.w, l.b));
}

std::vector<std::pair<std::string, Var>> Model::named_params() const {
    std::vector<std::pair<std::string, Var>> out;
    auto add = [&out](const std::string& name, const ConvLayer& l) {
        out.emplace_back(name + ".w", l.w);
        out.emplace_back(name + ".b", l.b);
    };
    add("enc1a", enc1a_);
    add("enc1b", enc1b_);
    add("enc2a", enc2a_);
    add("enc2b", enc2b_);
    add("enc3a", enc3a_);
    add("enc3b", enc3b_);
    add("head_n1", head_n1_);
    add("head_n2", head_n2_);
    if (cfg_.mode == ModelMode::dual) {
        add("head_a1", head_a1_);
        add("head_a2", head_a2_);
    }
    add("dec0", dec0_);
    add("dec3", dec3_);
    add("dec2", dec2_);
    add("dec1a", dec1a_);
    add("dec1b", dec1b_);
    if (cfg_.mode != ModelMode::single) {
        add("disc_n", disc_n_);
        if (cfg_.mode == ModelMode::dual) add("disc_a", disc_a_);
    }
    return out;
}

void Model::set_trainable(bool trainable) const {
    for (auto& [name, v] : named_params()) {
        (void)name;
        v->requires_grad = trainable;
    }
}

void Model::zero_grads() {
    for (auto& [name, v] : named_params()) {
        (void)name;
        v->grad.fill(0.0);
    }
}

Tensor stack_clip(const std::vector<Tensor>& frames, const ModelConfig& cfg) {
    if (static_cast<int>(frames.size()) != cfg.t_window)
        throw DataError("clip has " + std::to_string(frames.size()) + " frames, expected " +
                        std::to_string(cfg.t_window));
    const int S = cfg.frame_size;
    Tensor out({cfg.clip_channels(), S, S});
    double* dst = out.data.data();
    for (const Tensor& f : frames) {
        if (f.ndim() != 3 || f.shape[0] != cfg.frame_channels || f.shape[1] != S ||
            f.shape[2] != S)
            throw DataError("frame has wrong shape");
        for (double v : f.data) {
            if (!(v >= -1.0 && v <= 1.0))
                throw DataError("frame pixel outside [-1, 1]; normalize frames first");
        }
        std::memcpy(dst, f.data.data(), f.data.size() * sizeof(double));
        dst += f.data.size();
    }
    return out;
}

// ============================================================================
// Checkpoint io
// ============================================================================

namespace {

constexpr char kCkptMagic[8] = {'D', 'M', 'A', 'D', 'C', 'K', 'P', '1'};
constexpr std::uint32_t kCkptVersion = 1;

void write_u32(std::ostream& os, std::uint32_t v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof v);
}
void write_u64(std::ostream& os, std::uint64_t v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof v);
}
std::uint32_t read_u32(std::istream& is) {
    std::uint32_t v = 0;
    is.read(reinterpret_cast<char*>(&v), sizeof v);
    return v;
}
std::uint64_t read_u64(std::istream& is) {
    std::uint64_t v = 0;
    is.read(reinterpret_cast<char*>(&v), sizeof v);
    return v;
}

void write_string(std::ostream& os, const std::string& s) {
    write_u32(os, static_cast<std::uint32_t>(s.size()));
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
}
std::string read_string(std::istream& is) {
    const std::uint32_t n = read_u32(is);
    std::string s(n, '\0');
    is.read(s.data(), n);
    return s;
}

void write_tensor(std::ostream& os, const Tensor& t) {
    write_u32(os, static_cast<std::uint32_t>(t.ndim()));
    for (int d : t.shape) write_u32(os, static_cast<std::uint32_t>(d));
    os.write(reinterpret_cast<const char*>(t.data.data()),
             static_cast<std::streamsize>(t.data.size() * sizeof(double)));
}
Tensor read_tensor(std::istream& is) {
    const std::uint32_t nd = read_u32(is);
    if (nd > 8) throw DataError("checkpoint tensor rank is implausible");
    std::vector<int> shape(nd);
    for (auto& d : shape) d = static_cast<int>(read_u32(is));
    Tensor t(shape);
    is.read(reinterpret_cast<char*>(t.data.data()),
            static_cast<std::streamsize>(t.data.size() * sizeof(double)));
    return t;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Model& model,
                     const std::vector<MemoryBank>& banks, const nlohmann::json& extra,
                     std::uint64_t model_seed) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("cannot open checkpoint for writing: " + path.string());

    os.write(kCkptMagic, sizeof kCkptMagic);
    write_u32(os, kCkptVersion);
    write_u64(os, model_seed);

    nlohmann::json blob;
    blob["config"] = model.config();
    blob["extra"] = extra;
    write_string(os, blob.dump());

    const auto params = model.named_params();
    write_u32(os, static_cast<std::uint32_t>(params.size()));
    for (const auto& [name, v] : params) {
        write_string(os, name);
        write_tensor(os, v->value);
    }

    write_u32(os, static_cast<std::uint32_t>(banks.size()));
    for (const MemoryBank& b : banks) {
        write_u32(os, b.branch == Branch::normality ? 0u : 1u);
        write_tensor(os, b.vectors);
    }
    if (!os) throw DataError("failed writing checkpoint: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open checkpoint: " + path.string());

    char magic[8];
    is.read(magic, sizeof magic);
    if (!is || std::memcmp(magic, kCkptMagic, sizeof magic) != 0)
        throw DataError("not a checkpoint file: " + path.string());
    const std::uint32_t version = read_u32(is);
    if (version != kCkptVersion)
        throw DataError("unsupported checkpoint version " + std::to_string(version));

    Checkpoint ckpt;
    ckpt.model_seed = read_u64(is);
    const nlohmann::json blob = nlohmann::json::parse(read_string(is));
    ckpt.config = blob.at("config").get<ModelConfig>();
    ckpt.extra = blob.value("extra", nlohmann::json::object());

    const std::uint32_t n_params = read_u32(is);
    ckpt.params.reserve(n_params);
    for (std::uint32_t i = 0; i < n_params; ++i) {
        std::string name = read_string(is);
        ckpt.params.emplace_back(std::move(name), read_tensor(is));
    }

    const std::uint32_t n_banks = read_u32(is);
    for (std::uint32_t i = 0; i < n_banks; ++i) {
        const std::uint32_t branch_tag = read_u32(is);
        MemoryBank b;
        b.branch = branch_tag == 0 ? Branch::normality : Branch::abnormality;
        b.vectors = read_tensor(is);
        ckpt.banks.push_back(std::move(b));
    }
    if (!is) throw DataError("truncated checkpoint: " + path.string());
    return ckpt;
}

Model model_from_checkpoint(const Checkpoint& ckpt) {
    Model model(ckpt.config, ckpt.model_seed);
    auto params = model.named_params();
    if (params.size() != ckpt.params.size())
        throw DataError("checkpoint parameter count does not match config");
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (params[i].first != ckpt.params[i].first)
            throw DataError("checkpoint parameter order mismatch at " + ckpt.params[i].first);
        if (!params[i].second->value.same_shape(ckpt.params[i].second))
            throw DataError("checkpoint parameter shape mismatch at " + ckpt.params[i].first);
        params[i].second->value = ckpt.params[i].second;
    }
    return model;
}

}  // namespace dmad
