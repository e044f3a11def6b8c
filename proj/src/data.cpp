#include "dmad/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "dmad/errors.hpp"
#include "dmad/rng.hpp"

namespace dmad {

namespace fs = std::filesystem;

void SynthConfig::validate() const {
    if (frame_size < 16) throw ConfigError("synth: frame_size too small");
    if (square_size < 1 || square_size >= frame_size)
        throw ConfigError("synth: square does not fit the frame");
    if (disc_radius < 1 || 2 * disc_radius >= frame_size)
        throw ConfigError("synth: disc does not fit the frame");
    if (n_normal_train < 1 || n_normal_test < 0 || n_abnormal < 0)
        throw ConfigError("synth: invalid video counts");
    if (normal_len_min < 2 || normal_len_max < normal_len_min)
        throw ConfigError("synth: invalid normal length range");
    if (abnormal_len < 2) throw ConfigError("synth: invalid abnormal length");
    if (onset_min < 1 || onset_max < onset_min || onset_max >= abnormal_len)
        throw ConfigError("synth: onset range outside the video");
    if (normal_speed <= 0.0 || abnormal_speed <= 0.0)
        throw ConfigError("synth: speeds must be positive");
}

void to_json(nlohmann::json& j, const SynthConfig& c) {
    j = nlohmann::json{{"frame_size", c.frame_size},
                       {"n_normal_train", c.n_normal_train},
                       {"n_normal_test", c.n_normal_test},
                       {"n_abnormal", c.n_abnormal},
                       {"normal_len_min", c.normal_len_min},
                       {"normal_len_max", c.normal_len_max},
                       {"abnormal_len", c.abnormal_len},
                       {"onset_min", c.onset_min},
                       {"onset_max", c.onset_max},
                       {"normal_speed", c.normal_speed},
                       {"abnormal_speed", c.abnormal_speed},
                       {"square_size", c.square_size},
                       {"disc_radius", c.disc_radius},
                       {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, SynthConfig& c) {
    c.frame_size = j.value("frame_size", c.frame_size);
    c.n_normal_train = j.value("n_normal_train", c.n_normal_train);
    c.n_normal_test = j.value("n_normal_test", c.n_normal_test);
    c.n_abnormal = j.value("n_abnormal", c.n_abnormal);
    c.normal_len_min = j.value("normal_len_min", c.normal_len_min);
    c.normal_len_max = j.value("normal_len_max", c.normal_len_max);
    c.abnormal_len = j.value("abnormal_len", c.abnormal_len);
    c.onset_min = j.value("onset_min", c.onset_min);
    c.onset_max = j.value("onset_max", c.onset_max);
    c.normal_speed = j.value("normal_speed", c.normal_speed);
    c.abnormal_speed = j.value("abnormal_speed", c.abnormal_speed);
    c.square_size = j.value("square_size", c.square_size);
    c.disc_radius = j.value("disc_radius", c.disc_radius);
    c.seed = j.value("seed", c.seed);
}

// ============================================================================
// PPM io
// ============================================================================

void write_ppm(const fs::path& path, const std::vector<std::uint8_t>& rgb, int width,
               int height) {
    if (static_cast<std::size_t>(width) * height * 3 != rgb.size())
        throw DataError("write_ppm: buffer size does not match dimensions");
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("cannot open for writing: " + path.string());
    os << "P6\n" << width << " " << height << "\n255\n";
    os.write(reinterpret_cast<const char*>(rgb.data()),
             static_cast<std::streamsize>(rgb.size()));
    if (!os) throw DataError("failed writing " + path.string());
}

std::vector<std::uint8_t> read_ppm(const fs::path& path, int* width, int* height) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open: " + path.string());
    std::string magic;
    is >> magic;
    if (magic != "P6") throw DataError("not a binary PPM: " + path.string());
    int w = 0, h = 0, maxval = 0;
    is >> w >> h >> maxval;
    if (!is || w <= 0 || h <= 0 || maxval != 255)
        throw DataError("unsupported PPM header: " + path.string());
    is.get();  // single whitespace after maxval
    std::vector<std::uint8_t> rgb(static_cast<std::size_t>(w) * h * 3);
    is.read(reinterpret_cast<char*>(rgb.data()), static_cast<std::streamsize>(rgb.size()));
    if (!is) throw DataError("truncated PPM: " + path.string());
    *width = w;
    *height = h;
    return rgb;
}

// ============================================================================
// Scene synthesis
// ============================================================================

namespace {

struct Sinusoid {
    double amp, fx, fy, phase;
};

struct SceneState {
    // Smooth per-video background: base level plus a few low-frequency waves,
    // with small per-channel offsets.
    double base;
    double chan_off[3];
    std::vector<Sinusoid> waves;

    double px, py, vx, vy;  // square center and velocity
    double square_color[3];

    bool has_disc = false;
    int onset = 0;
    double dx, dy, dvx, dvy;  // disc center and velocity
    double disc_color[3];
};

void bounce(double* p, double* v, double lo, double hi) {
    if (*p < lo) {
        *p = 2.0 * lo - *p;
        *v = -*v;
    } else if (*p > hi) {
        *p = 2.0 * hi - *p;
        *v = -*v;
    }
}

SceneState init_scene(const SynthConfig& cfg, Rng& rng, bool abnormal) {
    SceneState s;
    s.base = rng.uniform(-0.55, -0.25);
    for (double& o : s.chan_off) o = rng.uniform(-0.03, 0.03);
    for (int i = 0; i < 3; ++i) {
        const double cycles = rng.uniform(0.5, 2.5) / cfg.frame_size;
        s.waves.push_back({rng.uniform(0.04, 0.10), cycles * rng.uniform(0.3, 1.0),
                           cycles * rng.uniform(0.3, 1.0), rng.uniform(0.0, 6.283185307179586)});
    }

    const double m_sq = cfg.square_size / 2.0 + 1.0;
    s.px = rng.uniform(m_sq, cfg.frame_size - 1 - m_sq);
    s.py = rng.uniform(m_sq, cfg.frame_size - 1 - m_sq);
    double theta = rng.uniform(0.0, 6.283185307179586);
    s.vx = cfg.normal_speed * std::cos(theta);
    s.vy = cfg.normal_speed * std::sin(theta);
    for (double& c : s.square_color) c = rng.uniform(0.55, 0.95);

    if (abnormal) {
        s.has_disc = true;
        s.onset = cfg.onset_min + static_cast<int>(rng.below(
                                      static_cast<std::uint64_t>(cfg.onset_max - cfg.onset_min + 1)));
        const double m_di = cfg.disc_radius + 1.0;
        s.dx = rng.uniform(m_di, cfg.frame_size - 1 - m_di);
        s.dy = rng.uniform(m_di, cfg.frame_size - 1 - m_di);
        theta = rng.uniform(0.0, 6.283185307179586);
        s.dvx = cfg.abnormal_speed * std::cos(theta);
        s.dvy = cfg.abnormal_speed * std::sin(theta);
        for (double& c : s.disc_color) c = rng.uniform(0.55, 0.95);
    }
    return s;
}

std::vector<std::uint8_t> render_frame(const SynthConfig& cfg, const SceneState& s,
                                       int frame_idx) {
    const int S = cfg.frame_size;
    std::vector<std::uint8_t> rgb(static_cast<std::size_t>(S) * S * 3);
    auto put = [&rgb, S](int x, int y, const double* color) {
        std::uint8_t* px = &rgb[(static_cast<std::size_t>(y) * S + x) * 3];
        for (int c = 0; c < 3; ++c) {
            const double v = std::clamp(color[c], -1.0, 1.0);
            px[c] = static_cast<std::uint8_t>(std::lround((v + 1.0) * 127.5));
        }
    };

    for (int y = 0; y < S; ++y) {
        for (int x = 0; x < S; ++x) {
            double w = s.base;
            for (const Sinusoid& sw : s.waves)
                w += sw.amp * std::sin(6.283185307179586 * (sw.fx * x + sw.fy * y) + sw.phase);
            double color[3] = {w + s.chan_off[0], w + s.chan_off[1], w + s.chan_off[2]};
            put(x, y, color);
        }
    }

    const int half = cfg.square_size / 2;
    const int cx = static_cast<int>(std::lround(s.px));
    const int cy = static_cast<int>(std::lround(s.py));
    for (int y = std::max(0, cy - half); y <= std::min(S - 1, cy + half); ++y)
        for (int x = std::max(0, cx - half); x <= std::min(S - 1, cx + half); ++x)
            put(x, y, s.square_color);

    if (s.has_disc && frame_idx >= s.onset) {
        const int r = cfg.disc_radius;
        const int dx = static_cast<int>(std::lround(s.dx));
        const int dy = static_cast<int>(std::lround(s.dy));
        for (int y = std::max(0, dy - r); y <= std::min(S - 1, dy + r); ++y)
            for (int x = std::max(0, dx - r); x <= std::min(S - 1, dx + r); ++x)
                if ((x - dx) * (x - dx) + (y - dy) * (y - dy) <= r * r) put(x, y, s.disc_color);
    }
    return rgb;
}

void advance_scene(const SynthConfig& cfg, SceneState& s, int frame_idx) {
    const double m_sq = cfg.square_size / 2.0 + 1.0;
    s.px += s.vx;
    s.py += s.vy;
    bounce(&s.px, &s.vx, m_sq, cfg.frame_size - 1 - m_sq);
    bounce(&s.py, &s.vy, m_sq, cfg.frame_size - 1 - m_sq);
    if (s.has_disc && frame_idx >= s.onset) {
        const double m_di = cfg.disc_radius + 1.0;
        s.dx += s.dvx;
        s.dy += s.dvy;
        bounce(&s.dx, &s.dvx, m_di, cfg.frame_size - 1 - m_di);
        bounce(&s.dy, &s.dvy, m_di, cfg.frame_size - 1 - m_di);
    }
}

std::string frame_name(int idx) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "frame_%05d.ppm", idx);
    return buf;
}

VideoMeta generate_video(const SynthConfig& cfg, const fs::path& root, const std::string& id,
                         const std::string& group, int length, std::uint64_t video_seed) {
    Rng rng(video_seed);
    const bool abnormal = group == "abnormal";
    SceneState s = init_scene(cfg, rng, abnormal);

    const fs::path dir = root / "videos" / id;
    fs::create_directories(dir);

    VideoMeta meta;
    meta.id = id;
    meta.group = group;
    meta.n_frames = length;
    meta.labels.assign(length, 0);
    for (int f = 0; f < length; ++f) {
        if (abnormal && f >= s.onset) meta.labels[f] = 1;
        write_ppm(dir / frame_name(f), render_frame(cfg, s, f), cfg.frame_size, cfg.frame_size);
        advance_scene(cfg, s, f);
    }
    meta.scenario = {{"square_speed", cfg.normal_speed}};
    if (abnormal) {
        meta.scenario["disc_speed"] = cfg.abnormal_speed;
        meta.scenario["onset"] = s.onset;
    }
    return meta;
}

}  // namespace

Dataset synth_generate(const SynthConfig& cfg, const fs::path& out_root) {
    cfg.validate();
    fs::create_directories(out_root);

    Dataset ds;
    ds.root = out_root;
    ds.frame_size = cfg.frame_size;
    ds.seed = cfg.seed;
    to_json(ds.synth_config, cfg);

    char id[32];
    std::uint64_t ordinal = 0;
    auto next_len = [&cfg](Rng& r) {
        return cfg.normal_len_min +
               static_cast<int>(r.below(
                   static_cast<std::uint64_t>(cfg.normal_len_max - cfg.normal_len_min + 1)));
    };
    // Lengths come from the per-video stream so each video is independent.
    for (int i = 0; i < cfg.n_normal_train; ++i, ++ordinal) {
        std::snprintf(id, sizeof id, "ntr%02d", i);
        Rng len_rng(mix_seed(cfg.seed, ordinal * 2 + 1));
        ds.videos.push_back(generate_video(cfg, out_root, id, "normal_train", next_len(len_rng),
                                           mix_seed(cfg.seed, ordinal)));
    }
    for (int i = 0; i < cfg.n_normal_test; ++i, ++ordinal) {
        std::snprintf(id, sizeof id, "nte%02d", i);
        Rng len_rng(mix_seed(cfg.seed, ordinal * 2 + 1));
        ds.videos.push_back(generate_video(cfg, out_root, id, "normal_test", next_len(len_rng),
                                           mix_seed(cfg.seed, ordinal)));
    }
    for (int i = 0; i < cfg.n_abnormal; ++i, ++ordinal) {
        std::snprintf(id, sizeof id, "ab%02d", i);
        ds.videos.push_back(generate_video(cfg, out_root, id, "abnormal", cfg.abnormal_len,
                                           mix_seed(cfg.seed, ordinal)));
    }

    nlohmann::json manifest;
    manifest["format_version"] = 1;
    manifest["frame_size"] = cfg.frame_size;
    manifest["seed"] = cfg.seed;
    manifest["synth_config"] = ds.synth_config;
    manifest["videos"] = nlohmann::json::array();
    for (const VideoMeta& v : ds.videos) {
        manifest["videos"].push_back({{"id", v.id},
                                      {"group", v.group},
                                      {"n_frames", v.n_frames},
                                      {"labels", v.labels},
                                      {"scenario", v.scenario}});
    }
    std::ofstream os(out_root / "dataset.json");
    if (!os) throw DataError("cannot write dataset manifest");
    os << manifest.dump(2) << "\n";
    return ds;
}

Dataset load_dataset(const fs::path& root) {
    std::ifstream is(root / "dataset.json");
    if (!is) throw DataError("no dataset manifest under " + root.string());
    nlohmann::json manifest;
    try {
        is >> manifest;
    } catch (const nlohmann::json::exception& e) {
        throw DataError("bad dataset manifest: " + std::string(e.what()));
    }

    Dataset ds;
    ds.root = root;
    ds.frame_size = manifest.at("frame_size").get<int>();
    ds.seed = manifest.value("seed", 0ULL);
    ds.synth_config = manifest.value("synth_config", nlohmann::json::object());
    for (const auto& jv : manifest.at("videos")) {
        VideoMeta v;
        v.id = jv.at("id").get<std::string>();
        v.group = jv.at("group").get<std::string>();
        v.n_frames = jv.at("n_frames").get<int>();
        v.labels = jv.at("labels").get<std::vector<int>>();
        v.scenario = jv.value("scenario", nlohmann::json::object());
        if (static_cast<int>(v.labels.size()) != v.n_frames)
            throw DataError("labels not aligned to frames in video " + v.id);
        ds.videos.push_back(std::move(v));
    }
    return ds;
}

const VideoMeta& Dataset::video(const std::string& id) const {
    for (const VideoMeta& v : videos)
        if (v.id == id) return v;
    throw DataError("unknown video id: " + id);
}

std::vector<const VideoMeta*> Dataset::group(const std::string& name) const {
    std::vector<const VideoMeta*> out;
    for (const VideoMeta& v : videos)
        if (v.group == name) out.push_back(&v);
    return out;
}

Tensor load_frame(const Dataset& ds, const VideoMeta& v, int frame_idx) {
    if (frame_idx < 0 || frame_idx >= v.n_frames)
        throw DataError("frame index out of range in video " + v.id);
    int w = 0, h = 0;
    const auto rgb = read_ppm(ds.root / "videos" / v.id / frame_name(frame_idx), &w, &h);
    if (w != ds.frame_size || h != ds.frame_size)
        throw DataError("frame size mismatch in video " + v.id);
    Tensor t({3, h, w});
    const double scale = 1.0 / 127.5;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c)
                t(c, y, x) = rgb[(static_cast<std::size_t>(y) * w + x) * 3 + c] * scale - 1.0;
    return t;
}

std::vector<Tensor> load_video_frames(const Dataset& ds, const VideoMeta& v) {
    std::vector<Tensor> out;
    out.reserve(v.n_frames);
    for (int f = 0; f < v.n_frames; ++f) out.push_back(load_frame(ds, v, f));
    return out;
}

// ============================================================================
// Clips and splits
// ============================================================================

std::vector<ClipRef> make_clips(const VideoMeta& v, int t_window) {
    if (t_window < 1) throw ConfigError("make_clips: t_window must be positive");
    if (v.n_frames < t_window + 1)
        throw DataError("video " + v.id + " too short for t_window " + std::to_string(t_window));
    std::vector<ClipRef> out;
    out.reserve(static_cast<std::size_t>(v.n_frames - t_window));
    for (int s = 0; s + t_window < v.n_frames; ++s) {
        out.push_back({v.id, s,
                       v.labels[s + t_window] ? SampleLabel::abnormal : SampleLabel::normal});
    }
    return out;
}

namespace {

std::vector<const VideoMeta*> sorted_group(const Dataset& ds, const std::string& name) {
    auto vs = ds.group(name);
    std::sort(vs.begin(), vs.end(),
              [](const VideoMeta* a, const VideoMeta* b) { return a->id < b->id; });
    return vs;
}

void append_clips(std::vector<ClipRef>& dst, const VideoMeta& v, int t_window) {
    auto clips = make_clips(v, t_window);
    dst.insert(dst.end(), clips.begin(), clips.end());
}

}  // namespace

Split kfold_split(const Dataset& ds, int K, int fold, int t_window) {
    if (K < 2) throw ConfigError("kfold_split: K must be at least 2");
    if (fold < 0 || fold >= K) throw ConfigError("kfold_split: fold index out of range");
    const auto abnormal = sorted_group(ds, "abnormal");
    if (static_cast<int>(abnormal.size()) < K)
        throw DataError("kfold_split: fewer abnormal videos than folds");

    Split split;
    split.protocol = "kfold";
    split.params = {{"k", K}, {"fold", fold}, {"t_window", t_window}};

    for (const VideoMeta* v : sorted_group(ds, "normal_train"))
        append_clips(split.train_clips, *v, t_window);
    for (int i = 0; i < static_cast<int>(abnormal.size()); ++i) {
        if (i % K == fold)
            append_clips(split.train_clips, *abnormal[i], t_window);
        else
            split.test_videos.push_back(abnormal[i]->id);
    }
    std::vector<std::string> normal_test;
    for (const VideoMeta* v : sorted_group(ds, "normal_test")) normal_test.push_back(v->id);
    split.test_videos.insert(split.test_videos.begin(), normal_test.begin(), normal_test.end());
    return split;
}

Split rate_split(const Dataset& ds, double rate, std::uint64_t seed, int t_window) {
    if (!(rate > 0.0 && rate < 1.0)) throw ConfigError("rate_split: rate outside (0, 1)");
    const auto abnormal = sorted_group(ds, "abnormal");
    if (abnormal.size() < 2)
        throw DataError("rate_split: needs at least 2 abnormal videos (half are reserved)");

    Rng rng(mix_seed(seed, 0x73706c6974ULL));
    std::vector<const VideoMeta*> shuffled = abnormal;
    rng.shuffle(shuffled);
    const std::size_t n_reserved = (shuffled.size() + 1) / 2;

    Split split;
    split.protocol = "rate";
    split.params = {{"rate", rate}, {"seed", seed}, {"t_window", t_window}};

    std::size_t n_normal_clips = 0;
    for (const VideoMeta* v : sorted_group(ds, "normal_train")) {
        append_clips(split.train_clips, *v, t_window);
        n_normal_clips = split.train_clips.size();
    }
    if (n_normal_clips == 0) throw DataError("rate_split: no normal training clips");

    // Target count from the base normal clip pool: ab / (ab + normal) = rate.
    const auto n_ab = static_cast<std::size_t>(std::max<long long>(
        1, std::llround(rate / (1.0 - rate) * static_cast<double>(n_normal_clips))));

    std::vector<ClipRef> pool;
    for (std::size_t i = n_reserved; i < shuffled.size(); ++i) {
        for (const ClipRef& c : make_clips(*shuffled[i], t_window))
            if (c.label == SampleLabel::abnormal) pool.push_back(c);
    }
    if (n_ab > pool.size())
        throw DataError("rate_split: abnormal pool has " + std::to_string(pool.size()) +
                        " clips, need " + std::to_string(n_ab));
    rng.shuffle(pool);
    pool.resize(n_ab);

    // Injected videos also contribute their normal-target clips to training.
    std::vector<std::string> injected;
    for (const ClipRef& c : pool)
        if (std::find(injected.begin(), injected.end(), c.video) == injected.end())
            injected.push_back(c.video);
    std::sort(injected.begin(), injected.end());
    for (const std::string& id : injected) {
        for (const ClipRef& c : make_clips(ds.video(id), t_window))
            if (c.label == SampleLabel::normal) split.train_clips.push_back(c);
    }
    split.train_clips.insert(split.train_clips.end(), pool.begin(), pool.end());

    for (const VideoMeta* v : sorted_group(ds, "normal_test"))
        split.test_videos.push_back(v->id);
    std::vector<std::string> reserved;
    for (std::size_t i = 0; i < n_reserved; ++i) reserved.push_back(shuffled[i]->id);
    std::sort(reserved.begin(), reserved.end());
    split.test_videos.insert(split.test_videos.end(), reserved.begin(), reserved.end());
    return split;
}

void save_split(const fs::path& path, const Split& split) {
    nlohmann::json j;
    j["format_version"] = 1;
    j["protocol"] = split.protocol;
    j["params"] = split.params;
    j["train_clips"] = nlohmann::json::array();
    for (const ClipRef& c : split.train_clips)
        j["train_clips"].push_back({{"video", c.video},
                                    {"start", c.start},
                                    {"label", c.label == SampleLabel::abnormal ? 1 : 0}});
    j["test_videos"] = split.test_videos;
    std::ofstream os(path);
    if (!os) throw DataError("cannot write split file: " + path.string());
    os << j.dump(2) << "\n";
}

Split load_split(const fs::path& path) {
    std::ifstream is(path);
    if (!is) throw DataError("cannot open split file: " + path.string());
    nlohmann::json j;
    try {
        is >> j;
    } catch (const nlohmann::json::exception& e) {
        throw DataError("bad split file: " + std::string(e.what()));
    }
    Split split;
    split.protocol = j.at("protocol").get<std::string>();
    split.params = j.value("params", nlohmann::json::object());
    for (const auto& jc : j.at("train_clips")) {
        split.train_clips.push_back({jc.at("video").get<std::string>(),
                                     jc.at("start").get<int>(),
                                     jc.at("label").get<int>() ? SampleLabel::abnormal
                                                               : SampleLabel::normal});
    }
    split.test_videos = j.at("test_videos").get<std::vector<std::string>>();
    return split;
}

}  // namespace dmad
