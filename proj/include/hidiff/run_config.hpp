#pragma once

#include "hidiff/model_config.hpp"
#include "hidiff/synthetic.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace hidiff {

// Ablation variants.
enum class AblationMode { full, baseline, single_guide, split_training };

std::string to_string(AblationMode mode);
AblationMode ablation_mode_from_string(const std::string& s);

struct TrainConfig {
    int iterations = 20000;
    int stage_two_iterations = 0;  // 0 = same as iterations
    int batch = 4;
    int patch = 64;
    // Progressive crop schedule of full-scale training ("iter:patch,...").
    // Kept in the schema only; desk runs use the fixed `patch`.
    std::string patch_schedule;
    double lr = 2e-4;
    double lr_min = 1e-6;
    double beta1 = 0.9;
    double beta2 = 0.99;
    double grad_clip = 0.0;  // global norm, 0 disables
    int val_every = 500;
    int val_limit = 0;       // 0 = whole split
    int log_every = 50;
    bool augment = true;
    AblationMode mode = AblationMode::full;
    uint64_t seed = 0;
};

struct DataConfig {
    std::string root = "data";
    int size = 64;
    SplitCounts counts;
    BlurRanges blur;
    uint64_t seed = 1;
};

struct RunConfig {
    ModelConfig model;
    TrainConfig train;
    DataConfig data;

    // Model actually built for the configured ablation mode.
    ModelConfig effective_model() const;
    int iterations_for(int stage) const {
        return stage == 2 && train.stage_two_iterations > 0 ? train.stage_two_iterations : train.iterations;
    }
};

// One documented key. `origin` is "full-scale" for values taken from the
// published setup and "desk" for reduced-scale or artifact choices.
struct ConfigKey {
    std::string section;
    std::string name;
    std::string origin;
    std::string help;

    std::string full_name() const { return section + "." + name; }
    std::string env_name() const;
};

const std::vector<ConfigKey>& config_keys();

std::string get_config_value(const RunConfig& cfg, const std::string& full_name);
// Throws std::invalid_argument for unknown keys or malformed values.
void set_config_value(RunConfig& cfg, const std::string& full_name, const std::string& value);

// `key = value` lines grouped under [section] headers; '#' starts a comment.
RunConfig parse_config(const std::string& text, RunConfig base = {});
RunConfig load_config(const std::filesystem::path& path, RunConfig base = {});
// Applies HIDIFF_<SECTION>_<KEY> variables; unknown HIDIFF_ names are errors.
void apply_env_overrides(RunConfig& cfg, char** envp);
std::string to_text(const RunConfig& cfg, bool annotate = false);
void validate(const RunConfig& cfg);

// Published settings: T=8, N=16, C'=256, L=6, backbone [3,5,5,6] / [48..384].
RunConfig full_scale_config();

}  // namespace hidiff
