#pragma once

#include "hidiff/checkpoint.hpp"
#include "hidiff/model.hpp"
#include "hidiff/run_config.hpp"
#include "hidiff/synthetic.hpp"

#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <random>
#include <string>
#include <vector>

namespace hidiff {

// Mean reductions throughout.
template <std::floating_point T> Var<T> loss_deblur(const Var<T>& out, const Var<T>& gt);
template <std::floating_point T> Var<T> loss_diffusion(const Var<T>& zhat, const Var<T>& z);
template <std::floating_point T> Var<T> loss_epsilon(const Var<T>& eps_hat, const Var<T>& eps);

// lr_min + (lr0 - lr_min) (1 + cos(pi step / total)) / 2
double cosine_lr(int step, int total, double lr0, double lr_min);

class Adam {
public:
    Adam(double beta1, double beta2, double eps = 1e-8) : beta1_(beta1), beta2_(beta2), eps_(eps) {}

    // Updates every trainable parameter that received a gradient, then
    // clears all gradients. Returns the global gradient norm before clipping.
    double step(ParamStore<float>& params, double lr, double clip_norm = 0.0);

    uint64_t steps() const noexcept { return t_; }
    void save(Checkpoint& ck) const;
    void load(const Checkpoint& ck);

private:
    struct Moments {
        Tensor<float> m, v;
    };
    double beta1_, beta2_, eps_;
    uint64_t t_ = 0;
    std::map<std::string, Moments> state_;
};

struct LossReport {
    int step = 0;
    double lr = 0;
    double l_deblur = 0;
    double l_diffusion = 0;
    double l_epsilon = 0;
    double total = 0;
};

// Where the backbone's prior comes from at evaluation time.
enum class PriorSource { ground_truth, sampled };

// Per-image sampling seed used by validation, eval and infer.
uint64_t sampling_seed(uint64_t seed, size_t index);

// Runs the model on one blurred image (no gradients). Images whose sides are
// not multiples of 8 are edge-padded and cropped back. Output is clamped.
Image restore(const HiDiffModel<float>& model, const Image& blur, const Image* gt, PriorSource source, uint64_t seed);

struct EvalOptions {
    PriorSource source = PriorSource::sampled;
    uint64_t seed = 0;
    size_t limit = 0;
    bool ssim = false;
    // Also compare the sampled prior with z = LE(gt, blur).
    bool latent_stats = false;
};

struct EvalResult {
    std::vector<std::string> names;
    std::vector<double> psnr, ssim, blur_psnr, blur_ssim;
    double mean_psnr = 0, mean_ssim = 0, mean_blur_psnr = 0, mean_blur_ssim = 0;
    // latent_stats: mean |zhat - z|, mean |g - z| for g ~ N(0, I), and PSNR
    // of the same checkpoint driven by the ground-truth prior.
    double l_diffusion = 0, l_noise_baseline = 0, mean_psnr_gt_prior = 0;
};

EvalResult evaluate(const HiDiffModel<float>& model, const PairedDataset& data, const EvalOptions& opts);

struct TrainOptions {
    std::filesystem::path out_dir;   // last.ckpt, best.ckpt, metrics.csv
    std::filesystem::path resume;    // continue from this checkpoint
    std::filesystem::path init;      // stage-one checkpoint for stage two
    int stop_at = 0;                 // stop (and save) once this step is reached; 0 runs to the end
    std::function<void(const std::string&)> log;
};

struct TrainResult {
    int step = 0;
    double best_psnr = 0;
    int best_step = 0;
    double last_psnr = 0;
    std::vector<LossReport> history;  // one entry per step run by this call
};

TrainResult train_stage(const RunConfig& cfg, int stage, const PairedDataset& train, const PairedDataset& val,
                        const TrainOptions& opts);

// Content hash of a checkpoint file; stage-two checkpoints record the digest
// of the stage-one checkpoint they started from under meta "init_digest".
std::string checkpoint_digest(const std::filesystem::path& path);

// Rebuilds the model recorded in a checkpoint and loads all its parameters.
std::unique_ptr<HiDiffModel<float>> model_from_checkpoint(const Checkpoint& ck);
RunConfig config_from_checkpoint(const Checkpoint& ck);

}  // namespace hidiff
