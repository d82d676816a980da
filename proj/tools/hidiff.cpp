// Command-line front end: make-data, train1, train2, infer, eval, ablate,
// inspect-schedule.
#include "hidiff/ablation.hpp"

#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

extern char** environ;

namespace fs = std::filesystem;
using namespace hidiff;

namespace {

struct Common {
    std::string config;
    std::string out;
    std::string checkpoint;
    std::string data_root;
    uint64_t seed = 0;
    bool seed_set = false;
};

void add_common(CLI::App* cmd, Common& c, bool needs_out, bool needs_checkpoint) {
    cmd->add_option("--config", c.config, "configuration file (key = value with [sections])")->check(CLI::ExistingFile);
    auto* out = cmd->add_option("--out", c.out, "output path");
    if (needs_out) out->required();
    auto* ck = cmd->add_option("--checkpoint", c.checkpoint, "checkpoint to read")->check(CLI::ExistingFile);
    if (needs_checkpoint) ck->required();
    cmd->add_option("--data-root", c.data_root, "dataset root (overrides data.root)");
    cmd->add_option("--seed", c.seed, "seed (overrides train.seed, and data.seed for make-data)")
        ->each([&c](const std::string&) { c.seed_set = true; });
}

// defaults < config file < HIDIFF_* environment < flags
RunConfig resolve(const Common& c, bool seed_is_data) {
    RunConfig cfg;
    if (!c.config.empty()) cfg = load_config(c.config);
    apply_env_overrides(cfg, environ);
    if (!c.data_root.empty()) cfg.data.root = c.data_root;
    if (c.seed_set) (seed_is_data ? cfg.data.seed : cfg.train.seed) = c.seed;
    validate(cfg);
    return cfg;
}

void log_line(const std::string& s) { std::fprintf(stderr, "%s\n", s.c_str()); }

std::string fmt_psnr(double v) {
    if (is_infinite_psnr(v)) return "inf";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4f", v);
    return buf;
}

std::vector<fs::path> list_pngs(const fs::path& dir) {
    std::vector<fs::path> out;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_regular_file() && e.path().extension() == ".png") out.push_back(e.path());
    std::sort(out.begin(), out.end());
    return out;
}

template <typename T>
std::vector<T> parse_list(const std::string& s, T (*conv)(const std::string&)) {
    std::vector<T> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ','))
        if (!item.empty()) out.push_back(conv(item));
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Hierarchical integration diffusion deblurring"};
    app.require_subcommand(1);

    Common common;

    auto* make_data = app.add_subcommand("make-data", "generate the synthetic blur dataset");
    add_common(make_data, common, false, false);

    int stop_at = 0;
    std::string resume;
    auto* train1 = app.add_subcommand("train1", "stage one: latent encoder + backbone");
    add_common(train1, common, true, false);
    train1->add_option("--resume", resume, "continue from a checkpoint")->check(CLI::ExistingFile);
    train1->add_option("--stop-at", stop_at, "stop after this step (checkpoint is written)");

    auto* train2 = app.add_subcommand("train2", "stage two: diffusion prior + backbone (needs --checkpoint from train1)");
    add_common(train2, common, true, false);
    train2->add_option("--resume", resume, "continue from a checkpoint")->check(CLI::ExistingFile);
    train2->add_option("--stop-at", stop_at, "stop after this step (checkpoint is written)");

    std::string input;
    auto* infer = app.add_subcommand("infer", "deblur one PNG or a directory of PNGs");
    add_common(infer, common, true, true);
    infer->add_option("--input", input, "blurred PNG or directory")->required()->check(CLI::ExistingPath);

    std::string split = "test", prior = "sampled";
    size_t limit = 0;
    bool with_ssim = true;
    auto* eval = app.add_subcommand("eval", "PSNR/SSIM over a dataset split");
    add_common(eval, common, false, false);
    eval->add_option("--split", split, "train, val or test");
    eval->add_option("--prior", prior, "sampled, gt (stage-one prior), blur (identity baseline) or sharp (sanity)")
        ->check(CLI::IsMember({"sampled", "gt", "blur", "sharp"}));
    eval->add_option("--limit", limit, "evaluate only the first N images");
    eval->add_flag("!--no-ssim", with_ssim, "skip SSIM");

    std::string modes = "baseline,single-guide,split-training,full", t_list;
    bool fresh = false;
    auto* ablate = app.add_subcommand("ablate", "train and compare ablation variants and a T sweep");
    add_common(ablate, common, true, false);
    ablate->add_option("--modes", modes, "comma-separated: full, baseline, single-guide, split-training");
    ablate->add_option("--t-list", t_list, "comma-separated diffusion step counts, e.g. 1,2,4,8,16,32");
    ablate->add_flag("--fresh", fresh, "retrain even when finished runs exist");

    int steps = 0;
    double beta_start = NAN, beta_end = NAN;
    auto* inspect = app.add_subcommand("inspect-schedule", "print the beta / alpha_bar table");
    add_common(inspect, common, false, false);
    inspect->add_option("--steps", steps, "override schedule.steps");
    inspect->add_option("--beta-start", beta_start, "override schedule.beta_start");
    inspect->add_option("--beta-end", beta_end, "override schedule.beta_end");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*make_data) {
            RunConfig cfg = resolve(common, true);
            const fs::path root = common.out.empty() ? fs::path(cfg.data.root) : fs::path(common.out);
            write_synthetic_dataset(root, cfg.data.size, cfg.data.counts, cfg.data.blur, cfg.data.seed);
            std::printf("wrote %d/%d/%d pairs to %s\n", cfg.data.counts.train, cfg.data.counts.val, cfg.data.counts.test,
                        root.c_str());
        } else if (*train1 || *train2) {
            const int stage = *train1 ? 1 : 2;
            RunConfig cfg = resolve(common, false);
            if (stage == 2 && common.checkpoint.empty() && resume.empty()) {
                throw std::invalid_argument("train2 needs --checkpoint <stage-one checkpoint> or --resume");
            }
            const auto train = load_split(cfg.data.root, "train");
            const auto val = load_split(cfg.data.root, "val");
            TrainOptions opts;
            opts.out_dir = common.out;
            opts.resume = resume;
            if (stage == 2) opts.init = common.checkpoint;
            opts.stop_at = stop_at;
            opts.log = log_line;
            const TrainResult r = train_stage(cfg, stage, train, val, opts);
            std::printf("stage %d finished at step %d: best val PSNR %.4f dB (step %d), last %.4f dB\n", stage, r.step,
                        r.best_psnr, r.best_step, r.last_psnr);
        } else if (*infer) {
            const Checkpoint ck = load_checkpoint(common.checkpoint);
            auto model = model_from_checkpoint(ck);
            if (model->uses_prior() && ck.stage != 2) {
                throw std::invalid_argument("inference with a prior needs a stage-two checkpoint");
            }
            const RunConfig cfg = config_from_checkpoint(ck);
            const uint64_t seed = common.seed_set ? common.seed : cfg.train.seed;
            const fs::path in = input, out = common.out;
            if (fs::is_directory(in)) {
                fs::create_directories(out);
                const auto files = list_pngs(in);
                for (size_t i = 0; i < files.size(); ++i) {
                    const Image blur = read_png(files[i]);
                    write_png(out / files[i].filename(),
                              restore(*model, blur, nullptr, PriorSource::sampled, sampling_seed(seed, i)));
                }
                std::printf("wrote %zu images to %s\n", files.size(), out.c_str());
            } else {
                const Image blur = read_png(in);
                write_png(out, restore(*model, blur, nullptr, PriorSource::sampled, sampling_seed(seed, 0)));
                std::printf("wrote %s\n", out.c_str());
            }
        } else if (*eval) {
            RunConfig cfg = resolve(common, false);
            const auto data = load_split(cfg.data.root, split, limit);
            EvalResult r;
            if (prior == "blur" || prior == "sharp") {
                for (size_t i = 0; i < data.size(); ++i) {
                    const Image& pred = prior == "blur" ? data.pairs[i].blur : data.pairs[i].sharp;
                    r.names.push_back(data.names[i]);
                    r.psnr.push_back(psnr(pred, data.pairs[i].sharp));
                    r.ssim.push_back(with_ssim ? ssim(pred, data.pairs[i].sharp) : 0.0);
                }
            } else {
                if (common.checkpoint.empty()) throw std::invalid_argument("eval needs --checkpoint");
                const Checkpoint ck = load_checkpoint(common.checkpoint);
                auto model = model_from_checkpoint(ck);
                EvalOptions eo;
                eo.source = prior == "gt" ? PriorSource::ground_truth : PriorSource::sampled;
                if (eo.source == PriorSource::sampled && model->uses_prior() && ck.stage != 2) {
                    throw std::invalid_argument("sampled prior needs a stage-two checkpoint (use --prior gt)");
                }
                eo.seed = common.seed_set ? common.seed : config_from_checkpoint(ck).train.seed;
                eo.ssim = with_ssim;
                r = evaluate(*model, data, eo);
                if (!with_ssim) r.ssim.assign(r.psnr.size(), 0.0);
            }
            std::ostringstream os;
            os << "image,psnr,ssim\n";
            double sp = 0, ss = 0;
            bool any_inf = false;
            for (size_t i = 0; i < r.psnr.size(); ++i) {
                os << r.names[i] << ',' << fmt_psnr(r.psnr[i]) << ',' << r.ssim[i] << '\n';
                any_inf = any_inf || is_infinite_psnr(r.psnr[i]);
                sp += r.psnr[i];
                ss += r.ssim[i];
            }
            const double n = double(r.psnr.size());
            os << "mean," << (any_inf ? "inf" : fmt_psnr(sp / n)) << ',' << ss / n << '\n';
            if (!common.out.empty()) std::ofstream(common.out) << os.str();
            std::cout << os.str();
        } else if (*ablate) {
            RunConfig cfg = resolve(common, false);
            AblationPlan plan;
            plan.modes = parse_list<AblationMode>(modes, ablation_mode_from_string);
            plan.t_list = parse_list<int>(t_list, [](const std::string& s) { return std::stoi(s); });
            plan.reuse = !fresh;
            const auto train = load_split(cfg.data.root, "train");
            const auto val = load_split(cfg.data.root, "val");
            const auto test = load_split(cfg.data.root, "test");
            const fs::path out = common.out;
            const AblationReport r = run_ablation(cfg, plan, out, train, val, test, log_line);
            fs::create_directories(out);
            std::ofstream(out / "ablation.csv") << r.table_csv();
            std::cout << r.table_csv();
            if (!r.sweep.empty()) {
                std::ofstream(out / "t_sweep.csv") << r.sweep_csv();
                std::cout << '\n' << r.sweep_csv();
            }
        } else if (*inspect) {
            RunConfig cfg = resolve(common, false);
            auto& s = cfg.model.schedule;
            if (inspect->count("--steps")) s.steps = steps;
            if (!std::isnan(beta_start)) s.beta_start = beta_start;
            if (!std::isnan(beta_end)) s.beta_end = beta_end;
            std::cout << NoiseSchedule::linear(s.steps, s.beta_start, s.beta_end).table();
        }
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
