#include "hidiff/ablation.hpp"

#include <cstdio>
#include <sstream>
#include <stdexcept>

namespace hidiff {

const AblationRow* AblationReport::find_mode(AblationMode m) const {
    for (const auto& r : modes)
        if (r.mode == m) return &r;
    return nullptr;
}

const AblationRow* AblationReport::find_steps(int t) const {
    for (const auto& r : sweep)
        if (r.steps == t) return &r;
    return nullptr;
}

std::string AblationReport::table_csv() const {
    std::ostringstream os;
    os << "run,mode,T,params,val_psnr,test_psnr,test_ssim\n";
    char line[256];
    std::snprintf(line, sizeof line, "blur-input,none,0,0,%.4f,%.4f,\n", blur_val_psnr, blur_test_psnr);
    os << line;
    for (const auto& r : modes) {
        std::snprintf(line, sizeof line, "%s,%s,%d,%zu,%.4f,%.4f,%.4f\n", r.run.c_str(), to_string(r.mode).c_str(),
                      r.steps, r.params, r.val_psnr, r.test_psnr, r.test_ssim);
        os << line;
    }
    return os.str();
}

std::string AblationReport::sweep_csv() const {
    std::ostringstream os;
    os << "T,val_psnr,test_psnr\n";
    char line[128];
    for (const auto& r : sweep) {
        std::snprintf(line, sizeof line, "%d,%.4f,%.4f\n", r.steps, r.val_psnr, r.test_psnr);
        os << line;
    }
    return os.str();
}

namespace {

bool finished_run(const std::filesystem::path& dir, const RunConfig& cfg, int stage, const std::filesystem::path& init) {
    const auto last = dir / "last.ckpt";
    if (!std::filesystem::exists(last) || !std::filesystem::exists(dir / "best.ckpt")) return false;
    try {
        const Checkpoint ck = load_checkpoint(last);
        if (ck.stage != static_cast<uint32_t>(stage) || ck.step != static_cast<uint64_t>(cfg.iterations_for(stage))) {
            return false;
        }
        RunConfig saved = parse_config(ck.config);
        saved.data.root = cfg.data.root;  // same data under another path
        if (to_text(saved) != to_text(cfg)) return false;
        if (!init.empty()) {
            auto it = ck.meta.find("init_digest");
            if (it == ck.meta.end() || it->second != checkpoint_digest(init)) return false;
        }
        return true;
    } catch (const std::exception&) {
        return false;
    }
}

}  // namespace

std::filesystem::path train_or_reuse(const RunConfig& cfg, int stage, const std::filesystem::path& dir,
                                     const std::filesystem::path& init, const PairedDataset& train,
                                     const PairedDataset& val, bool reuse,
                                     const std::function<void(const std::string&)>& log) {
    if (reuse && finished_run(dir, cfg, stage, init)) {
        if (log) log("reusing finished run in " + dir.string());
        return dir / "best.ckpt";
    }
    TrainOptions opts;
    opts.out_dir = dir;
    opts.init = init;
    opts.log = log;
    train_stage(cfg, stage, train, val, opts);
    return dir / "best.ckpt";
}

AblationReport run_ablation(const RunConfig& base, const AblationPlan& plan, const std::filesystem::path& out_dir,
                            const PairedDataset& train, const PairedDataset& val, const PairedDataset& test,
                            const std::function<void(const std::string&)>& log) {
    AblationReport report;
    {
        double v = 0, t = 0;
        for (const auto& p : val.pairs) v += psnr(p.blur, p.sharp);
        for (size_t i = 0; i < test.size() && (!plan.test_limit || i < plan.test_limit); ++i)
            t += psnr(test.pairs[i].blur, test.pairs[i].sharp);
        report.blur_val_psnr = v / double(val.size());
        report.blur_test_psnr = t / double(plan.test_limit ? std::min(plan.test_limit, test.size()) : test.size());
    }

    auto with_mode = [&](AblationMode m, int steps) {
        RunConfig c = base;
        c.train.mode = m;
        if (steps > 0) c.model.schedule.steps = steps;
        return c;
    };
    auto measure = [&](const std::string& run, AblationMode m, const std::filesystem::path& ck_path) {
        const Checkpoint ck = load_checkpoint(ck_path);
        auto model = model_from_checkpoint(ck);
        AblationRow row;
        row.run = run;
        row.mode = m;
        row.steps = model->uses_prior() ? model->config().schedule.steps : 0;
        row.params = model->inference_parameter_count();
        row.val_psnr = std::stod(ck.meta.at("best_psnr"));
        EvalOptions eo;
        eo.source = model->uses_prior() ? PriorSource::sampled : PriorSource::ground_truth;
        eo.seed = base.train.seed;
        eo.limit = plan.test_limit;
        eo.ssim = true;
        const EvalResult er = evaluate(*model, test, eo);
        row.test_psnr = er.mean_psnr;
        row.test_ssim = er.mean_ssim;
        row.checkpoint = ck_path;
        return row;
    };

    auto needs = [&](AblationMode m) {
        for (auto x : plan.modes)
            if (x == m) return true;
        return false;
    };
    const bool full_stage_one = needs(AblationMode::full) || needs(AblationMode::split_training) || !plan.t_list.empty();
    std::filesystem::path s1_full;
    if (full_stage_one) {
        s1_full = train_or_reuse(with_mode(AblationMode::full, 0), 1, out_dir / "full-s1", {}, train, val, plan.reuse, log);
    }

    for (AblationMode m : plan.modes) {
        const std::string name = to_string(m);
        std::filesystem::path ck;
        switch (m) {
            case AblationMode::baseline:
                ck = train_or_reuse(with_mode(m, 0), 1, out_dir / "baseline-s1", {}, train, val, plan.reuse, log);
                break;
            case AblationMode::single_guide: {
                const auto s1 =
                    train_or_reuse(with_mode(m, 0), 1, out_dir / "single-guide-s1", {}, train, val, plan.reuse, log);
                ck = train_or_reuse(with_mode(m, 0), 2, out_dir / "single-guide-s2", s1, train, val, plan.reuse, log);
                break;
            }
            case AblationMode::split_training:
            case AblationMode::full:
                ck = train_or_reuse(with_mode(m, 0), 2, out_dir / (name + "-s2-T" + std::to_string(base.model.schedule.steps)),
                                    s1_full, train, val, plan.reuse, log);
                break;
        }
        report.modes.push_back(measure(name, m, ck));
        if (log) log("ablation " + name + ": val " + std::to_string(report.modes.back().val_psnr) + " dB");
    }

    for (int t : plan.t_list) {
        const auto ck = train_or_reuse(with_mode(AblationMode::full, t), 2, out_dir / ("full-s2-T" + std::to_string(t)),
                                       s1_full, train, val, plan.reuse, log);
        report.sweep.push_back(measure("full-T" + std::to_string(t), AblationMode::full, ck));
        if (log) log("sweep T=" + std::to_string(t) + ": val " + std::to_string(report.sweep.back().val_psnr) + " dB");
    }
    return report;
}

}  // namespace hidiff
