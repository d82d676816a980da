#include "hidiff/training.hpp"

#include "hidiff/ops.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <sstream>
#include <stdexcept>

namespace hidiff {

template <std::floating_point T>
Var<T> loss_deblur(const Var<T>& out, const Var<T>& gt) {
    return ops::mean_abs_diff(out, gt);
}

template <std::floating_point T>
Var<T> loss_diffusion(const Var<T>& zhat, const Var<T>& z) {
    return ops::mean_abs_diff(zhat, z);
}

template <std::floating_point T>
Var<T> loss_epsilon(const Var<T>& eps_hat, const Var<T>& eps) {
    return ops::mean_sq_diff(eps_hat, eps);
}

template Var<float> loss_deblur(const Var<float>&, const Var<float>&);
template Var<double> loss_deblur(const Var<double>&, const Var<double>&);
template Var<float> loss_diffusion(const Var<float>&, const Var<float>&);
template Var<double> loss_diffusion(const Var<double>&, const Var<double>&);
template Var<float> loss_epsilon(const Var<float>&, const Var<float>&);
template Var<double> loss_epsilon(const Var<double>&, const Var<double>&);

double cosine_lr(int step, int total, double lr0, double lr_min) {
    if (total < 1 || step < 0 || step > total) throw std::out_of_range("cosine_lr: step outside [0, total]");
    return lr_min + 0.5 * (lr0 - lr_min) * (1.0 + std::cos(std::numbers::pi * double(step) / double(total)));
}

double Adam::step(ParamStore<float>& params, double lr, double clip_norm) {
    double sq = 0.0;
    for (const auto& p : params.params()) {
        if (!p.var.requires_grad() || p.var.grad().empty()) continue;
        for (float g : p.var.grad().values()) sq += double(g) * double(g);
    }
    const double norm = std::sqrt(sq);
    if (!std::isfinite(norm)) throw std::runtime_error("non-finite gradient norm");
    const double scale = clip_norm > 0.0 && norm > clip_norm ? clip_norm / norm : 1.0;

    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, double(t_));
    const double c2 = 1.0 - std::pow(beta2_, double(t_));
    const float b1 = float(beta1_), b2 = float(beta2_);
    for (auto& p : params.params()) {
        if (!p.var.requires_grad() || p.var.grad().empty()) continue;
        auto& st = state_[p.name];
        if (st.m.empty()) {
            st.m = Tensor<float>::zeros_like(p.var.value());
            st.v = Tensor<float>::zeros_like(p.var.value());
        }
        auto g = p.var.grad().array() * float(scale);
        st.m.array() = b1 * st.m.array() + (1 - b1) * g;
        st.v.array() = b2 * st.v.array() + (1 - b2) * g * g;
        const float step = float(lr / c1);
        const float rc2 = float(1.0 / std::sqrt(c2));
        p.var.mutable_value().array() -= step * st.m.array() / (st.v.array().sqrt() * rc2 + float(eps_));
    }
    params.zero_grad();
    return norm;
}

void Adam::save(Checkpoint& ck) const {
    ck.meta["adam.t"] = std::to_string(t_);
    for (const auto& [name, st] : state_) {
        ck.records.push_back({"adam.m/" + name, st.m});
        ck.records.push_back({"adam.v/" + name, st.v});
    }
}

void Adam::load(const Checkpoint& ck) {
    state_.clear();
    auto it = ck.meta.find("adam.t");
    t_ = it == ck.meta.end() ? 0 : std::stoull(it->second);
    for (const auto& rec : ck.records) {
        const bool is_m = rec.name.rfind("adam.m/", 0) == 0, is_v = rec.name.rfind("adam.v/", 0) == 0;
        if (!is_m && !is_v) continue;
        const auto* t = std::get_if<Tensor<float>>(&rec.value);
        if (!t) throw std::runtime_error("optimizer state " + rec.name + " is not single precision");
        auto& st = state_[rec.name.substr(7)];
        (is_m ? st.m : st.v) = *t;
    }
}

std::string checkpoint_digest(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    char buf[32];
    std::snprintf(buf, sizeof buf, "%016zx", std::hash<std::string>{}(ss.str()));
    return buf;
}

uint64_t sampling_seed(uint64_t seed, size_t index) { return sample_seed(seed, "sample", index); }

namespace {

Image pad_to_multiple(const Image& img, int multiple, int minimum) {
    const int h = img.dim(1), w = img.dim(2);
    const int ph = std::max(minimum, (h + multiple - 1) / multiple * multiple);
    const int pw = std::max(minimum, (w + multiple - 1) / multiple * multiple);
    if (ph == h && pw == w) return img;
    Image out({3, ph, pw});
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < ph; ++y)
            for (int x = 0; x < pw; ++x) out.at(c, y, x) = img.at(c, std::min(y, h - 1), std::min(x, w - 1));
    return out;
}

Image crop_to(const Image& img, int h, int w) {
    if (img.dim(1) == h && img.dim(2) == w) return img;
    Image out({3, h, w});
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) out.at(c, y, x) = img.at(c, y, x);
    return out;
}

// Latents used for the backbone prior: z from (gt, blur) or a sample
// conditioned on blur.
Var<float> prior_for(const HiDiffModel<float>& model, const Var<float>& blur, const Var<float>* gt,
                     PriorSource source, uint64_t seed) {
    if (!model.uses_prior()) return {};
    if (source == PriorSource::ground_truth) {
        if (!gt) throw std::invalid_argument("ground-truth prior requested without a ground-truth image");
        return model.encode_prior(*gt, blur);
    }
    return model.sample_prior(model.encode_condition(blur), seed);
}

}  // namespace

Image restore(const HiDiffModel<float>& model, const Image& blur, const Image* gt, PriorSource source, uint64_t seed) {
    check_image(blur, "restore");
    NoGradGuard no_grad;
    const int h = blur.dim(1), w = blur.dim(2);
    Var<float> b(pad_to_multiple(blur, 8, 16));
    Var<float> g;
    if (gt) g = Var<float>(pad_to_multiple(*gt, 8, 16));
    Var<float> z = prior_for(model, b, gt ? &g : nullptr, source, seed);
    return clamp01(crop_to(model.deblur(b, z).value(), h, w));
}

EvalResult evaluate(const HiDiffModel<float>& model, const PairedDataset& data, const EvalOptions& opts) {
    NoGradGuard no_grad;
    EvalResult r;
    const size_t n = opts.limit ? std::min(opts.limit, data.size()) : data.size();
    if (n == 0) throw std::invalid_argument("evaluate: empty dataset");
    const bool latent = opts.latent_stats && model.uses_prior();
    for (size_t i = 0; i < n; ++i) {
        const auto& p = data.pairs[i];
        const uint64_t seed = sampling_seed(opts.seed, i);
        const Image out = restore(model, p.blur, &p.sharp, opts.source, seed);
        r.names.push_back(data.names.empty() ? std::to_string(i) : data.names[i]);
        r.psnr.push_back(psnr(out, p.sharp));
        r.blur_psnr.push_back(psnr(p.blur, p.sharp));
        if (opts.ssim) {
            r.ssim.push_back(ssim(out, p.sharp));
            r.blur_ssim.push_back(ssim(p.blur, p.sharp));
        }
        if (latent) {
            Var<float> b(p.blur), g(p.sharp);
            Var<float> z = model.encode_prior(g, b);
            Var<float> zhat = model.sample_prior(model.encode_condition(b), seed);
            std::mt19937_64 rng(sample_seed(opts.seed, "noise-baseline", i));
            Var<float> noise(standard_normal<float>(z.shape(), rng));
            r.l_diffusion += loss_diffusion(zhat, z).value()[0];
            r.l_noise_baseline += loss_diffusion(noise, z).value()[0];
            r.mean_psnr_gt_prior += psnr(clamp01(model.deblur(b, z).value()), p.sharp);
        }
    }
    auto mean = [](const std::vector<double>& v) {
        double s = 0;
        for (double x : v) s += x;
        return v.empty() ? 0.0 : s / double(v.size());
    };
    r.mean_psnr = mean(r.psnr);
    r.mean_blur_psnr = mean(r.blur_psnr);
    r.mean_ssim = mean(r.ssim);
    r.mean_blur_ssim = mean(r.blur_ssim);
    if (latent) {
        r.l_diffusion /= double(n);
        r.l_noise_baseline /= double(n);
        r.mean_psnr_gt_prior /= double(n);
    }
    return r;
}

RunConfig config_from_checkpoint(const Checkpoint& ck) {
    RunConfig cfg = parse_config(ck.config);
    validate(cfg);
    return cfg;
}

std::unique_ptr<HiDiffModel<float>> model_from_checkpoint(const Checkpoint& ck) {
    const RunConfig cfg = config_from_checkpoint(ck);
    auto model = std::make_unique<HiDiffModel<float>>(cfg.effective_model(), cfg.train.seed);
    ck.load_params(model->params());
    return model;
}

namespace {

struct StepLosses {
    double l_deblur = 0, l_diffusion = 0, l_epsilon = 0, total = 0;
};

std::string rng_to_string(const std::mt19937_64& rng) {
    std::ostringstream os;
    os << rng;
    return os.str();
}

void rng_from_string(std::mt19937_64& rng, const std::string& s) {
    std::istringstream is(s);
    is >> rng;
    if (!is) throw std::runtime_error("checkpoint RNG state is malformed");
}

class StageTrainer {
public:
    StageTrainer(const RunConfig& cfg, int stage, const PairedDataset& train, const PairedDataset& val,
                 const TrainOptions& opts)
        : cfg_(cfg), stage_(stage), train_(train), val_(val), opts_(opts),
          model_(cfg.effective_model(), cfg.train.seed), adam_(cfg.train.beta1, cfg.train.beta2),
          rng_(sample_seed(cfg.train.seed, "train-stage-" + std::to_string(stage), 0)) {
        if (stage != 1 && stage != 2) throw std::invalid_argument("stage must be 1 or 2");
        if (stage == 2 && cfg.train.mode == AblationMode::baseline) {
            throw std::invalid_argument("baseline mode has no diffusion model and trains in stage one only");
        }
        if (stage == 1 && cfg.train.mode == AblationMode::split_training) {
            throw std::invalid_argument("split-training is a stage-two mode; train stage one in full mode");
        }
        if (train.size() == 0 || val.size() == 0) throw std::invalid_argument("training needs train and val data");
        configure_trainable();
    }

    TrainResult run() {
        TrainResult res;
        if (!opts_.resume.empty()) resume(opts_.resume);
        else if (stage_ == 2) init_from_stage_one();
        const int total = cfg_.iterations_for(stage_);
        const int stop = opts_.stop_at > 0 ? std::min(opts_.stop_at, total) : total;
        open_metrics();
        StepLosses window;
        int window_n = 0;
        int saved_step = -1;
        start_ = std::chrono::steady_clock::now();
        while (step_ < stop) {
            const double lr = cosine_lr(step_, total, cfg_.train.lr, cfg_.train.lr_min);
            const StepLosses l = train_step(lr);
            ++step_;
            res.history.push_back({step_, lr, l.l_deblur, l.l_diffusion, l.l_epsilon, l.total});
            window.l_deblur += l.l_deblur;
            window.l_diffusion += l.l_diffusion;
            window.l_epsilon += l.l_epsilon;
            window.total += l.total;
            ++window_n;
            const bool validate_now = step_ % cfg_.train.val_every == 0 || step_ == total;
            double val_psnr = std::nan("");
            if (validate_now) {
                val_psnr = validate();
                last_psnr_ = val_psnr;
                if (!has_best_ || val_psnr > best_psnr_) {
                    best_psnr_ = val_psnr;
                    best_step_ = step_;
                    has_best_ = true;
                    save(opts_.out_dir / "best.ckpt");
                }
            }
            if (step_ % cfg_.train.log_every == 0 || validate_now || step_ == stop) {
                write_metrics(lr, window, window_n, val_psnr);
                const double secs = elapsed_seconds();
                if (opts_.log) {
                    char line[256];
                    std::snprintf(line, sizeof line, "stage %d step %d/%d lr %.3g loss %.5f%s (%.1fs)", stage_, step_,
                                  total, lr, window.total / window_n,
                                  validate_now ? (" val_psnr " + std::to_string(val_psnr)).c_str() : "", secs);
                    opts_.log(line);
                }
                window = {};
                window_n = 0;
            }
            if (validate_now) {
                save(opts_.out_dir / "last.ckpt");
                saved_step = step_;
            }
        }
        if (saved_step != step_) save(opts_.out_dir / "last.ckpt");
        res.step = step_;
        res.best_psnr = best_psnr_;
        res.best_step = best_step_;
        res.last_psnr = last_psnr_;
        return res;
    }

private:
    void configure_trainable() {
        auto& ps = model_.params();
        ps.set_trainable("", true);
        if (!model_.uses_prior()) return;
        if (stage_ == 1) {
            ps.set_trainable("le_dm.", false);
            ps.set_trainable("denoiser.", false);
        } else if (cfg_.train.mode == AblationMode::split_training) {
            ps.set_trainable("le.", false);
            ps.set_trainable("backbone.", false);
        }
    }

    void init_from_stage_one() {
        if (opts_.init.empty()) throw std::invalid_argument("stage two needs a stage-one checkpoint");
        const Checkpoint ck = load_checkpoint(opts_.init);
        if (ck.stage != 1) throw std::runtime_error(opts_.init.string() + " is not a stage-one checkpoint");
        const RunConfig prev = config_from_checkpoint(ck);
        if (prev.effective_model().backbone.prior != model_.config().backbone.prior) {
            throw std::runtime_error("stage-one checkpoint was trained with prior mode " +
                                     to_string(prev.effective_model().backbone.prior) + ", stage two expects " +
                                     to_string(model_.config().backbone.prior));
        }
        ck.load_params(model_.params(), "le.");
        ck.load_params(model_.params(), "backbone.");
        init_digest_ = checkpoint_digest(opts_.init);
    }

    void resume(const std::filesystem::path& path) {
        const Checkpoint ck = load_checkpoint(path);
        if (ck.stage != static_cast<uint32_t>(stage_)) throw std::runtime_error("resume checkpoint is from another stage");
        const RunConfig prev = config_from_checkpoint(ck);
        if (to_text(prev) != to_text(cfg_)) {
            throw std::runtime_error("resume checkpoint was written with a different configuration");
        }
        ck.load_params(model_.params());
        adam_.load(ck);
        rng_from_string(rng_, ck.rng_state);
        step_ = static_cast<int>(ck.step);
        auto get = [&](const char* k) {
            auto it = ck.meta.find(k);
            return it == ck.meta.end() ? std::string() : it->second;
        };
        if (!get("best_psnr").empty()) {
            best_psnr_ = std::stod(get("best_psnr"));
            best_step_ = std::stoi(get("best_step"));
            has_best_ = true;
        }
        if (!get("last_psnr").empty()) last_psnr_ = std::stod(get("last_psnr"));
        if (!get("train_seconds").empty()) prior_seconds_ = std::stod(get("train_seconds"));
        init_digest_ = get("init_digest");
    }

    // Wall time across this call and any runs it resumed from.
    double elapsed_seconds() const {
        return prior_seconds_ + std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    }

    void save(const std::filesystem::path& path) const {
        Checkpoint ck;
        ck.stage = static_cast<uint32_t>(stage_);
        ck.step = static_cast<uint64_t>(step_);
        ck.config = to_text(cfg_);
        ck.rng_state = rng_to_string(rng_);
        if (has_best_) {
            char buf[64];
            std::snprintf(buf, sizeof buf, "%.17g", best_psnr_);
            ck.meta["best_psnr"] = buf;
            ck.meta["best_step"] = std::to_string(best_step_);
            std::snprintf(buf, sizeof buf, "%.17g", last_psnr_);
            ck.meta["last_psnr"] = buf;
        }
        ck.meta["mode"] = to_string(cfg_.train.mode);
        {
            char buf[64];
            std::snprintf(buf, sizeof buf, "%.3f", elapsed_seconds());
            ck.meta["train_seconds"] = buf;
        }
        if (!init_digest_.empty()) ck.meta["init_digest"] = init_digest_;
        ck.add_params(model_.params());
        adam_.save(ck);
        save_checkpoint(path, ck);
    }

    StepLosses train_step(double lr) {
        StepLosses acc;
        const int batch = cfg_.train.batch;
        const float inv = 1.0f / float(batch);
        std::uniform_int_distribution<size_t> pick(0, train_.size() - 1);
        for (int b = 0; b < batch; ++b) {
            const size_t idx = pick(rng_);
            const uint64_t seed = rng_();
            std::mt19937_64 srng(seed);
            ImagePair pair = train_.pairs[idx];
            if (cfg_.train.augment) pair = augment_with(pair, std::uniform_int_distribution<int>(0, 7)(srng));
            if (cfg_.train.patch < pair.sharp.dim(1) || cfg_.train.patch < pair.sharp.dim(2)) {
                pair = random_crop(pair, cfg_.train.patch, srng);
            }
            const StepLosses l = sample_loss(pair, srng, inv);
            acc.l_deblur += l.l_deblur * inv;
            acc.l_diffusion += l.l_diffusion * inv;
            acc.l_epsilon += l.l_epsilon * inv;
            acc.total += l.total * inv;
        }
        adam_.step(model_.params(), lr, cfg_.train.grad_clip);
        return acc;
    }

    // Forward + backward for one sample; gradients are scaled by `weight`.
    StepLosses sample_loss(const ImagePair& pair, std::mt19937_64& srng, float weight) {
        Var<float> blur(pair.blur), gt(pair.sharp);
        StepLosses out;
        Var<float> total;
        const NoiseSchedule& s = model_.schedule();
        if (stage_ == 1) {
            Var<float> z = model_.uses_prior() ? model_.encode_prior(gt, blur) : Var<float>();
            total = loss_deblur(model_.deblur(blur, z), gt);
            out.l_deblur = total.value()[0];
        } else if (cfg_.train.mode == AblationMode::split_training) {
            Tensor<float> z;
            {
                NoGradGuard frozen;
                z = model_.encode_prior(gt, blur).value();
            }
            Var<float> c = model_.encode_condition(blur);
            const int t = std::uniform_int_distribution<int>(1, s.steps())(srng);
            Tensor<float> eps = standard_normal<float>(z.shape(), srng);
            Var<float> z_t(forward_marginal_sample(s, z, t, eps).values);
            total = loss_epsilon(model_.denoiser()(z_t, c, t), Var<float>(eps));
            out.l_epsilon = total.value()[0];
        } else {
            Var<float> z = model_.encode_prior(gt, blur);
            Var<float> c = model_.encode_condition(blur);
            const auto noise = draw_sampler_noise<float>(s, z.shape(), srng);
            Var<float> z_T = forward_marginal_sample(s, z, s.steps(), noise.initial);
            const Denoiser<float>& eps = model_.denoiser();
            auto predict = [&](const Var<float>& zt, int t) { return eps(zt, c, t); };
            Var<float> zhat = run_reverse_chain<float>(s, predict, z_T, noise);
            Var<float> ld = loss_deblur(model_.deblur(blur, zhat), gt);
            Var<float> lz = loss_diffusion(zhat, z);
            total = ops::add(ld, lz);
            out.l_deblur = ld.value()[0];
            out.l_diffusion = lz.value()[0];
        }
        out.total = total.value()[0];
        if (!std::isfinite(out.total)) {
            throw std::runtime_error("non-finite loss at step " + std::to_string(step_ + 1) + " (deblur " +
                                     std::to_string(out.l_deblur) + ", diffusion " + std::to_string(out.l_diffusion) +
                                     ", epsilon " + std::to_string(out.l_epsilon) + ")");
        }
        ops::scale(total, weight).backward();
        return out;
    }

    double validate() const {
        EvalOptions eo;
        eo.source = stage_ == 1 ? PriorSource::ground_truth : PriorSource::sampled;
        eo.seed = cfg_.train.seed;
        eo.limit = static_cast<size_t>(cfg_.train.val_limit);
        return evaluate(model_, val_, eo).mean_psnr;
    }

    void open_metrics() {
        if (opts_.out_dir.empty()) return;
        std::filesystem::create_directories(opts_.out_dir);
        const auto path = opts_.out_dir / "metrics.csv";
        const bool fresh = opts_.resume.empty() || !std::filesystem::exists(path);
        metrics_.open(path, fresh ? std::ios::trunc : std::ios::app);
        if (!metrics_) throw std::runtime_error("cannot write " + path.string());
        if (fresh) metrics_ << "step,lr,l_deblur,l_diffusion,l_epsilon,total,val_psnr\n";
    }

    void write_metrics(double lr, const StepLosses& w, int n, double val_psnr) {
        if (!metrics_.is_open() || n == 0) return;
        char line[256];
        std::snprintf(line, sizeof line, "%d,%.6g,%.6f,%.6f,%.6f,%.6f,", step_, lr, w.l_deblur / n, w.l_diffusion / n,
                      w.l_epsilon / n, w.total / n);
        metrics_ << line;
        if (!std::isnan(val_psnr)) {
            std::snprintf(line, sizeof line, "%.4f", val_psnr);
            metrics_ << line;
        }
        metrics_ << '\n';
        metrics_.flush();
    }

    const RunConfig& cfg_;
    int stage_;
    const PairedDataset& train_;
    const PairedDataset& val_;
    const TrainOptions& opts_;
    HiDiffModel<float> model_;
    Adam adam_;
    std::mt19937_64 rng_;
    int step_ = 0;
    double best_psnr_ = 0, last_psnr_ = 0;
    int best_step_ = 0;
    bool has_best_ = false;
    std::string init_digest_;
    std::ofstream metrics_;
    std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
    double prior_seconds_ = 0;
};

}  // namespace

TrainResult train_stage(const RunConfig& cfg, int stage, const PairedDataset& train, const PairedDataset& val,
                        const TrainOptions& opts) {
    validate(cfg);
    if (opts.out_dir.empty()) throw std::invalid_argument("train_stage needs an output directory");
    StageTrainer trainer(cfg, stage, train, val, opts);
    return trainer.run();
}

}  // namespace hidiff
