#include "hidiff/synthetic.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

namespace fs = std::filesystem;

namespace {

struct CliRun {
    int code = -1;
    std::string out;
};

CliRun run(const std::string& args, const std::string& env = "") {
    const std::string cmd = env + (env.empty() ? "" : " ") + HIDIFF_CLI + std::string(" ") + args + " 2>&1";
    CliRun r;
    FILE* p = popen(cmd.c_str(), "r");
    if (!p) return r;
    std::array<char, 4096> buf;
    size_t n;
    while ((n = fread(buf.data(), 1, buf.size(), p)) > 0) r.out.append(buf.data(), n);
    const int status = pclose(p);
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return r;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

const char* kTinyEnv =
    "HIDIFF_DATA_SIZE=16 HIDIFF_DATA_TRAIN_COUNT=4 HIDIFF_DATA_VAL_COUNT=2 HIDIFF_DATA_TEST_COUNT=2";

const char* kTinyConfig = R"([schedule]
steps = 2
[codec]
blocks = 1
width = 4
tokens = 4
dim = 8
[denoiser]
layers = 1
heads = 2
[backbone]
blocks = 1,1,1,1
channels = 4,8,16,32
heads = 1,1,2,2
refinement = 1
[train]
iterations = 2
batch = 1
patch = 16
val_every = 2
log_every = 1
[data]
size = 16
train_count = 4
val_count = 2
test_count = 2
)";

class Cli : public ::testing::Test {
protected:
    static void SetUpTestSuite() {
        dir_ = fs::temp_directory_path() / "hidiff_cli_test";
        fs::remove_all(dir_);
        fs::create_directories(dir_);
        std::ofstream(dir_ / "tiny.cfg") << kTinyConfig << "root = " << (dir_ / "data").string() << '\n';
    }
    static fs::path dir_;
};

fs::path Cli::dir_;

}  // namespace

TEST_F(Cli, UsageErrorsExitNonzero) {
    EXPECT_NE(run("").code, 0);
    EXPECT_NE(run("frobnicate").code, 0);
    EXPECT_NE(run("eval --config /nonexistent/hidiff.cfg").code, 0);
    const CliRun bad_env = run("inspect-schedule", "HIDIFF_SCHEDULE_STEPZ=3");
    EXPECT_EQ(bad_env.code, 1);
    EXPECT_NE(bad_env.out.find("HIDIFF_SCHEDULE_STEPZ"), std::string::npos);
    EXPECT_EQ(run("inspect-schedule --steps 0").code, 1);
}

TEST_F(Cli, InspectScheduleHonoursOverrides) {
    const CliRun a = run("inspect-schedule");
    ASSERT_EQ(a.code, 0) << a.out;
    const CliRun b = run("inspect-schedule --steps 4");
    const CliRun c = run("inspect-schedule", "HIDIFF_SCHEDULE_STEPS=4");
    ASSERT_EQ(b.code, 0);
    EXPECT_EQ(b.out, c.out);
    EXPECT_GT(std::count(a.out.begin(), a.out.end(), '\n'), std::count(b.out.begin(), b.out.end(), '\n'));
}

TEST_F(Cli, MakeDataIsDeterministic) {
    ASSERT_EQ(run("make-data --out " + (dir_ / "d1").string() + " --seed 5", kTinyEnv).code, 0);
    ASSERT_EQ(run("make-data --out " + (dir_ / "d2").string() + " --seed 5", kTinyEnv).code, 0);
    ASSERT_EQ(run("make-data --out " + (dir_ / "d3").string() + " --seed 6", kTinyEnv).code, 0);
    const auto f = fs::path("val") / "blur" / "0001.png";
    EXPECT_EQ(slurp(dir_ / "d1" / f), slurp(dir_ / "d2" / f));
    EXPECT_NE(slurp(dir_ / "d1" / f), slurp(dir_ / "d3" / f));
    EXPECT_EQ(hidiff::read_png(dir_ / "d1" / f).shape(), (hidiff::Shape{3, 16, 16}));
}

TEST_F(Cli, TrainInferEvalRoundTrip) {
    const std::string cfg = "--config " + (dir_ / "tiny.cfg").string();
    ASSERT_EQ(run("make-data " + cfg).code, 0);
    const CliRun s1 = run("train1 " + cfg + " --out " + (dir_ / "s1").string());
    ASSERT_EQ(s1.code, 0) << s1.out;
    EXPECT_NE(run("train2 " + cfg + " --out " + (dir_ / "s2").string()).code, 0);
    const CliRun s2 = run("train2 " + cfg + " --out " + (dir_ / "s2").string() + " --checkpoint " +
                       (dir_ / "s1" / "last.ckpt").string());
    ASSERT_EQ(s2.code, 0) << s2.out;

    const std::string input = (dir_ / "data" / "test" / "blur").string();
    EXPECT_NE(run("infer --checkpoint " + (dir_ / "s1" / "last.ckpt").string() + " --input " + input + " --out " +
                  (dir_ / "bad").string())
                  .code,
              0);
    const std::string ck = " --checkpoint " + (dir_ / "s2" / "last.ckpt").string();
    ASSERT_EQ(run("infer" + ck + " --input " + input + " --out " + (dir_ / "o1").string()).code, 0);
    ASSERT_EQ(run("infer" + ck + " --input " + input + " --out " + (dir_ / "o2").string()).code, 0);
    for (const char* name : {"0000.png", "0001.png"}) {
        const std::string a = slurp(dir_ / "o1" / name);
        EXPECT_FALSE(a.empty());
        EXPECT_EQ(a, slurp(dir_ / "o2" / name));
    }
    ASSERT_EQ(run("infer" + ck + " --input " + input + "/0001.png --out " + (dir_ / "single.png").string()).code, 0);

    const CliRun sharp = run("eval " + cfg + " --prior sharp");
    ASSERT_EQ(sharp.code, 0) << sharp.out;
    EXPECT_NE(sharp.out.find("mean,inf,1"), std::string::npos) << sharp.out;
    const CliRun blur = run("eval " + cfg + " --prior blur --out " + (dir_ / "blur.csv").string());
    ASSERT_EQ(blur.code, 0);
    EXPECT_EQ(slurp(dir_ / "blur.csv"), blur.out);
    const auto data = hidiff::load_split(dir_ / "data", "test");
    double mean = 0;
    for (const auto& p : data.pairs) mean += hidiff::psnr(p.blur, p.sharp) / double(data.size());
    char expect[64];
    std::snprintf(expect, sizeof expect, "mean,%.4f", mean);
    EXPECT_NE(blur.out.find(expect), std::string::npos) << blur.out << " vs " << expect;

    const CliRun model = run("eval " + cfg + ck);
    ASSERT_EQ(model.code, 0) << model.out;
    EXPECT_EQ(std::count(model.out.begin(), model.out.end(), '\n'), 4);
}
