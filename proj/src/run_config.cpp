#include "hidiff/run_config.hpp"

#include <array>
#include <cctype>
#include <charconv>
#include <cstring>
#include <fstream>
#include <functional>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace hidiff {

std::string to_string(AblationMode mode) {
    switch (mode) {
        case AblationMode::full: return "full";
        case AblationMode::baseline: return "baseline";
        case AblationMode::single_guide: return "single-guide";
        case AblationMode::split_training: return "split-training";
    }
    return "?";
}

AblationMode ablation_mode_from_string(const std::string& s) {
    if (s == "full") return AblationMode::full;
    if (s == "baseline") return AblationMode::baseline;
    if (s == "single-guide") return AblationMode::single_guide;
    if (s == "split-training") return AblationMode::split_training;
    throw std::invalid_argument("unknown ablation mode '" + s +
                                "' (expected full, baseline, single-guide or split-training)");
}

ModelConfig RunConfig::effective_model() const {
    ModelConfig m = model;
    switch (train.mode) {
        case AblationMode::baseline: m.backbone.prior = PriorMode::none; break;
        case AblationMode::single_guide: m.backbone.prior = PriorMode::single_guide; break;
        default: m.backbone.prior = PriorMode::multi_scale; break;
    }
    return m;
}

std::string ConfigKey::env_name() const {
    std::string out = "HIDIFF_";
    for (char c : section + "_" + name) out += static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    return out;
}

namespace {

std::string trim(const std::string& s) {
    size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return s.substr(b, e - b);
}

template <typename N>
N parse_number(const std::string& key, const std::string& text) {
    const std::string t = trim(text);
    N v{};
    const char* end = t.data() + t.size();
    auto [ptr, ec] = std::from_chars(t.data(), end, v);
    if (ec != std::errc() || ptr != end || t.empty()) {
        throw std::invalid_argument("config key " + key + ": cannot parse '" + text + "'");
    }
    return v;
}

bool parse_bool(const std::string& key, const std::string& text) {
    const std::string t = trim(text);
    if (t == "true" || t == "1" || t == "yes" || t == "on") return true;
    if (t == "false" || t == "0" || t == "no" || t == "off") return false;
    throw std::invalid_argument("config key " + key + ": expected a boolean, got '" + text + "'");
}

template <size_t K>
std::array<int, K> parse_ints(const std::string& key, const std::string& text) {
    std::array<int, K> out{};
    std::stringstream ss(text);
    std::string item;
    size_t n = 0;
    while (std::getline(ss, item, ',')) {
        if (n == K) break;
        out[n++] = parse_number<int>(key, item);
    }
    if (n != K || std::getline(ss, item)) {
        throw std::invalid_argument("config key " + key + ": expected " + std::to_string(K) + " comma-separated integers");
    }
    return out;
}

template <size_t K>
std::string join_ints(const std::array<int, K>& v) {
    std::string out;
    for (size_t i = 0; i < K; ++i) out += (i ? "," : "") + std::to_string(v[i]);
    return out;
}

std::string fmt_double(double v) {
    char buf[64];
    // shortest form that round-trips
    for (int prec = 1; prec <= 17; ++prec) {
        std::snprintf(buf, sizeof buf, "%.*g", prec, v);
        if (std::strtod(buf, nullptr) == v) break;
    }
    return buf;
}

struct Binding {
    ConfigKey key;
    std::function<std::string(const RunConfig&)> get;
    std::function<void(RunConfig&, const std::string&)> set;
};

#define HIDIFF_INT(sec, nm, origin, help, field)                                                     \
    Binding {                                                                                        \
        {sec, nm, origin, help}, [](const RunConfig& c) { return std::to_string(c.field); },         \
            [](RunConfig& c, const std::string& v) { c.field = parse_number<int>(sec "." nm, v); } \
    }
#define HIDIFF_U64(sec, nm, origin, help, field)                                                          \
    Binding {                                                                                             \
        {sec, nm, origin, help}, [](const RunConfig& c) { return std::to_string(c.field); },              \
            [](RunConfig& c, const std::string& v) { c.field = parse_number<uint64_t>(sec "." nm, v); } \
    }
#define HIDIFF_DBL(sec, nm, origin, help, field)                                                        \
    Binding {                                                                                           \
        {sec, nm, origin, help}, [](const RunConfig& c) { return fmt_double(c.field); },                \
            [](RunConfig& c, const std::string& v) { c.field = parse_number<double>(sec "." nm, v); } \
    }
#define HIDIFF_INTS(sec, nm, origin, help, field, K)                                                       \
    Binding {                                                                                              \
        {sec, nm, origin, help}, [](const RunConfig& c) { return join_ints<K>(c.field); },                 \
            [](RunConfig& c, const std::string& v) { c.field = parse_ints<K>(sec "." nm, v); }           \
    }

const std::vector<Binding>& bindings() {
    static const std::vector<Binding> table = {
        HIDIFF_INT("schedule", "steps", "full-scale", "diffusion steps T", model.schedule.steps),
        HIDIFF_DBL("schedule", "beta_start", "full-scale", "first variance beta_1", model.schedule.beta_start),
        HIDIFF_DBL("schedule", "beta_end", "full-scale", "last variance beta_T", model.schedule.beta_end),

        HIDIFF_INT("codec", "blocks", "full-scale", "residual blocks L in LE and LE_DM", model.codec.blocks),
        HIDIFF_INT("codec", "width", "desk", "first-stage channels of the latent encoders", model.codec.width),
        HIDIFF_INT("codec", "tokens", "full-scale", "prior tokens N (perfect square)", model.codec.tokens),
        HIDIFF_INT("codec", "dim", "desk", "prior channels C' (full scale: 256)", model.codec.dim),

        HIDIFF_INT("denoiser", "layers", "desk", "attention + feed-forward layers", model.denoiser.layers),
        HIDIFF_INT("denoiser", "heads", "desk", "attention heads", model.denoiser.heads),
        HIDIFF_DBL("denoiser", "ffn_mult", "desk", "feed-forward width multiplier", model.denoiser.ffn_mult),

        HIDIFF_INTS("backbone", "blocks", "desk", "transformer blocks per level (full scale: 3,5,5,6)", model.backbone.blocks, 4),
        HIDIFF_INTS("backbone", "channels", "desk", "channels per level (full scale: 48,96,192,384)", model.backbone.channels, 4),
        HIDIFF_INTS("backbone", "heads", "full-scale", "attention heads per level", model.backbone.heads, 4),
        HIDIFF_INT("backbone", "refinement", "desk", "refinement blocks (full scale: 4)", model.backbone.refinement),
        HIDIFF_DBL("backbone", "expansion", "full-scale", "feed-forward channel expansion", model.backbone.expansion),
        HIDIFF_INTS("backbone", "him_encoder_scales", "desk", "prior scale read by the HIM before encoder levels 1-4",
                    model.backbone.encoder_scales, 4),
        HIDIFF_INTS("backbone", "him_decoder_scales", "desk", "prior scale read by the HIM before decoder levels 3,2,1",
                    model.backbone.decoder_scales, 3),

        HIDIFF_INT("train", "iterations", "desk", "optimizer steps per stage (full scale: 300000)", train.iterations),
        HIDIFF_INT("train", "stage_two_iterations", "desk", "stage-two steps, 0 reuses train.iterations",
                   train.stage_two_iterations),
        HIDIFF_INT("train", "batch", "desk", "images per step", train.batch),
        HIDIFF_INT("train", "patch", "desk", "training crop size (full scale: progressive 128..384)", train.patch),
        Binding{{"train", "patch_schedule", "full-scale", "progressive crop schedule, full-scale only (must stay empty)"},
                [](const RunConfig& c) { return c.train.patch_schedule; },
                [](RunConfig& c, const std::string& v) { c.train.patch_schedule = v; }},
        HIDIFF_DBL("train", "lr", "full-scale", "initial learning rate", train.lr),
        HIDIFF_DBL("train", "lr_min", "full-scale", "final learning rate of the cosine schedule", train.lr_min),
        HIDIFF_DBL("train", "beta1", "full-scale", "Adam first-moment decay", train.beta1),
        HIDIFF_DBL("train", "beta2", "full-scale", "Adam second-moment decay", train.beta2),
        HIDIFF_DBL("train", "grad_clip", "desk", "global gradient-norm clip, 0 disables", train.grad_clip),
        HIDIFF_INT("train", "val_every", "desk", "steps between validations", train.val_every),
        HIDIFF_INT("train", "val_limit", "desk", "validation images used, 0 for all", train.val_limit),
        HIDIFF_INT("train", "log_every", "desk", "steps between metric rows", train.log_every),
        Binding{{"train", "augment", "full-scale", "random flips and rotations"},
                [](const RunConfig& c) { return std::string(c.train.augment ? "true" : "false"); },
                [](RunConfig& c, const std::string& v) { c.train.augment = parse_bool("train.augment", v); }},
        Binding{{"train", "mode", "full-scale", "full, baseline, single-guide or split-training"},
                [](const RunConfig& c) { return to_string(c.train.mode); },
                [](RunConfig& c, const std::string& v) { c.train.mode = ablation_mode_from_string(trim(v)); }},
        HIDIFF_U64("train", "seed", "desk", "initialization and sampling seed", train.seed),

        Binding{{"data", "root", "desk", "dataset directory"}, [](const RunConfig& c) { return c.data.root; },
                [](RunConfig& c, const std::string& v) { c.data.root = trim(v); }},
        HIDIFF_INT("data", "size", "desk", "synthetic image side length", data.size),
        HIDIFF_INT("data", "train_count", "desk", "synthetic training pairs", data.counts.train),
        HIDIFF_INT("data", "val_count", "desk", "synthetic validation pairs", data.counts.val),
        HIDIFF_INT("data", "test_count", "desk", "synthetic test pairs", data.counts.test),
        HIDIFF_INT("data", "min_length", "desk", "shortest motion-blur length in pixels", data.blur.min_length),
        HIDIFF_INT("data", "max_length", "desk", "longest motion-blur length in pixels", data.blur.max_length),
        HIDIFF_DBL("data", "max_sigma", "desk", "largest Gaussian spread added to a motion kernel", data.blur.max_sigma),
        HIDIFF_DBL("data", "noise_sigma", "desk", "additive noise on blurred images", data.blur.noise_sigma),
        HIDIFF_U64("data", "seed", "desk", "dataset generation seed", data.seed),
    };
    return table;
}

#undef HIDIFF_INT
#undef HIDIFF_U64
#undef HIDIFF_DBL
#undef HIDIFF_INTS

const Binding& binding(const std::string& full_name) {
    for (const auto& b : bindings())
        if (b.key.full_name() == full_name) return b;
    throw std::invalid_argument("unknown config key '" + full_name + "'");
}

}  // namespace

const std::vector<ConfigKey>& config_keys() {
    static const std::vector<ConfigKey> keys = [] {
        std::vector<ConfigKey> out;
        for (const auto& b : bindings()) out.push_back(b.key);
        return out;
    }();
    return keys;
}

std::string get_config_value(const RunConfig& cfg, const std::string& full_name) {
    return binding(full_name).get(cfg);
}

void set_config_value(RunConfig& cfg, const std::string& full_name, const std::string& value) {
    binding(full_name).set(cfg, value);
}

RunConfig parse_config(const std::string& text, RunConfig base) {
    std::istringstream in(text);
    std::string line, section;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']') throw std::invalid_argument("line " + std::to_string(lineno) + ": bad section header");
            section = trim(line.substr(1, line.size() - 2));
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw std::invalid_argument("line " + std::to_string(lineno) + ": expected key = value");
        std::string key = trim(line.substr(0, eq));
        if (key.find('.') == std::string::npos) {
            if (section.empty()) throw std::invalid_argument("line " + std::to_string(lineno) + ": key outside a section");
            key = section + "." + key;
        }
        try {
            set_config_value(base, key, line.substr(eq + 1));
        } catch (const std::invalid_argument& e) {
            throw std::invalid_argument("line " + std::to_string(lineno) + ": " + e.what());
        }
    }
    return base;
}

RunConfig load_config(const std::filesystem::path& path, RunConfig base) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read config " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    try {
        return parse_config(ss.str(), std::move(base));
    } catch (const std::invalid_argument& e) {
        throw std::invalid_argument(path.string() + ": " + e.what());
    }
}

void apply_env_overrides(RunConfig& cfg, char** envp) {
    if (!envp) return;
    for (char** e = envp; *e; ++e) {
        const std::string entry = *e;
        if (entry.rfind("HIDIFF_", 0) != 0) continue;
        const auto eq = entry.find('=');
        const std::string name = entry.substr(0, eq), value = eq == std::string::npos ? "" : entry.substr(eq + 1);
        bool matched = false;
        for (const auto& b : bindings()) {
            if (b.key.env_name() == name) {
                b.set(cfg, value);
                matched = true;
                break;
            }
        }
        if (!matched) throw std::invalid_argument("environment variable " + name + " names no config key");
    }
}

std::string to_text(const RunConfig& cfg, bool annotate) {
    std::ostringstream os;
    std::string section;
    for (const auto& b : bindings()) {
        if (b.key.section != section) {
            if (!section.empty()) os << '\n';
            section = b.key.section;
            os << '[' << section << "]\n";
        }
        os << b.key.name << " = " << b.get(cfg);
        if (annotate) os << "  # " << b.key.origin << ": " << b.key.help;
        os << '\n';
    }
    return os.str();
}

void validate(const RunConfig& cfg) {
    validate(cfg.effective_model());
    auto fail = [](const std::string& msg) { throw std::invalid_argument(msg); };
    const auto& t = cfg.train;
    if (t.iterations < 1 || t.batch < 1) fail("train.iterations and train.batch must be positive");
    if (t.stage_two_iterations < 0) fail("train.stage_two_iterations must be >= 0");
    if (t.patch < 16 || t.patch % 8) fail("train.patch must be >= 16 and divisible by 8");
    if (!t.patch_schedule.empty()) fail("train.patch_schedule is a full-scale setting and is not supported here");
    if (!(t.lr > t.lr_min) || t.lr_min < 0) fail("train.lr must exceed train.lr_min >= 0");
    if (t.beta1 < 0 || t.beta1 >= 1 || t.beta2 < 0 || t.beta2 >= 1) fail("Adam decays must lie in [0, 1)");
    if (t.grad_clip < 0) fail("train.grad_clip must be >= 0");
    if (t.val_every < 1 || t.log_every < 1) fail("train.val_every and train.log_every must be positive");
    if (t.val_limit < 0) fail("train.val_limit must be >= 0");
    const auto& d = cfg.data;
    if (d.size < 16 || d.size % 8) fail("data.size must be >= 16 and divisible by 8");
    if (d.counts.train < 1 || d.counts.val < 1 || d.counts.test < 0) fail("data counts must be positive");
    if (d.blur.min_length < 1 || d.blur.max_length < d.blur.min_length) fail("data blur lengths out of order");
    if (d.blur.max_sigma < 0 || d.blur.noise_sigma < 0) fail("data blur spreads must be >= 0");
}

RunConfig full_scale_config() {
    RunConfig c;
    c.model.codec.dim = 256;
    c.model.backbone.blocks = {3, 5, 5, 6};
    c.model.backbone.channels = {48, 96, 192, 384};
    c.model.backbone.refinement = 4;
    c.train.iterations = 300000;
    return c;
}

}  // namespace hidiff
