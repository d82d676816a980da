#pragma once

#include "hidiff/training.hpp"

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

namespace hidiff {

struct AblationRow {
    std::string run;
    AblationMode mode = AblationMode::full;
    int steps = 0;  // diffusion T, 0 for the baseline
    size_t params = 0;            // parameters used at inference
    double val_psnr = 0;          // best validation PSNR
    double test_psnr = 0;
    double test_ssim = 0;
    std::filesystem::path checkpoint;
};

struct AblationReport {
    double blur_val_psnr = 0;
    double blur_test_psnr = 0;
    std::vector<AblationRow> modes;
    std::vector<AblationRow> sweep;  // full mode, one row per T

    const AblationRow* find_mode(AblationMode m) const;
    const AblationRow* find_steps(int t) const;
    // run,mode,T,params,val_psnr,test_psnr,test_ssim
    std::string table_csv() const;
    // T,val_psnr,test_psnr
    std::string sweep_csv() const;
};

struct AblationPlan {
    std::vector<AblationMode> modes{AblationMode::baseline, AblationMode::single_guide, AblationMode::split_training,
                                    AblationMode::full};
    std::vector<int> t_list;
    // Skip training when a run directory already holds a finished checkpoint
    // written with the same configuration.
    bool reuse = true;
    size_t test_limit = 0;
};

// Trains every requested variant under the shared budget in `base`. Full,
// split-training and the T sweep start stage two from one full-mode stage-one
// run; single-guide and baseline train their own stage one.
AblationReport run_ablation(const RunConfig& base, const AblationPlan& plan, const std::filesystem::path& out_dir,
                            const PairedDataset& train, const PairedDataset& val, const PairedDataset& test,
                            const std::function<void(const std::string&)>& log = {});

// Trains one stage into `dir` unless `reuse` and a finished checkpoint with the
// same configuration is already there. Returns the best checkpoint path.
std::filesystem::path train_or_reuse(const RunConfig& cfg, int stage, const std::filesystem::path& dir,
                                     const std::filesystem::path& init, const PairedDataset& train,
                                     const PairedDataset& val, bool reuse,
                                     const std::function<void(const std::string&)>& log);

}  // namespace hidiff
