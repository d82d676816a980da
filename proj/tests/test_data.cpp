#include "hidiff/synthetic.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>

using namespace hidiff;
namespace fs = std::filesystem;

namespace {

// Tent-function rasterisation: each unit-spaced point along the segment
// contributes max(0, 1 - |dx|) max(0, 1 - |dy|) to every pixel.
std::vector<double> line_oracle(int length, double angle_deg, int size) {
    const double a = angle_deg * std::numbers::pi / 180.0;
    const double r = size / 2;
    std::vector<double> w(size * size, 0.0);
    double total = 0;
    for (int i = 0; i < length; ++i) {
        const double s = i - (length - 1) / 2.0;
        const double px = r + s * std::cos(a), py = r - s * std::sin(a);
        for (int y = 0; y < size; ++y)
            for (int x = 0; x < size; ++x) {
                const double v = std::max(0.0, 1 - std::abs(x - px)) * std::max(0.0, 1 - std::abs(y - py));
                w[y * size + x] += v;
                total += v;
            }
    }
    for (double& v : w) v /= total;
    return w;
}

Image random_image(int h, int w, uint64_t seed) { return test::random_tensor<float>({3, h, w}, seed, 0, 1); }

fs::path temp_dir(const std::string& name) {
    const auto p = fs::temp_directory_path() / ("hidiff_test_" + name + "_" + std::to_string(::getpid()));
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::string read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

TEST(Kernel, LengthOneIsIdentity) {
    const auto k = make_motion_kernel(1, 37.0);
    ASSERT_EQ(k.size, 1);
    EXPECT_DOUBLE_EQ(k.weights[0], 1.0);
}

TEST(Kernel, HorizontalThreeTap) {
    const auto k = make_motion_kernel(3, 0.0);
    ASSERT_EQ(k.size, 3);
    for (int y = 0; y < 3; ++y)
        for (int x = 0; x < 3; ++x) EXPECT_NEAR(k.at(y, x), y == 1 ? 1.0 / 3 : 0.0, 1e-15);
}

TEST(Kernel, MatchesTentRasterisation) {
    for (auto [len, ang] : {std::pair{5, 45.0}, std::pair{4, 30.0}, std::pair{7, 100.0}, std::pair{9, 163.5}}) {
        const auto k = make_motion_kernel(len, ang);
        EXPECT_EQ(k.size, len % 2 ? len : len + 1);
        const auto ref = line_oracle(len, ang, k.size);
        for (size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(k.weights[i], ref[i], 1e-12) << len << " " << ang;
    }
}

TEST(Kernel, GaussianGrowsAndNormalises) {
    const auto k = make_motion_kernel(5, 20.0, 0.8);
    EXPECT_EQ(k.size, 5 + 2 * 3);
    double s = 0;
    for (double v : k.weights) s += v;
    EXPECT_NEAR(s, 1.0, 1e-12);
    EXPECT_THROW(make_motion_kernel(0, 0.0), std::invalid_argument);
    EXPECT_THROW(make_motion_kernel(3, 0.0, -1.0), std::invalid_argument);
}

TEST(Kernel, RandomKernelsNormalised) {
    std::mt19937_64 rng(3);
    for (int i = 0; i < 200; ++i) {
        const auto k = random_motion_kernel(BlurRanges{}, rng);
        EXPECT_EQ(k.size % 2, 1);
        double s = 0;
        for (double v : k.weights) {
            EXPECT_GE(v, 0.0);
            s += v;
        }
        EXPECT_NEAR(s, 1.0, 1e-6);
    }
}

TEST(Blur, IdentityAndConstant) {
    const auto img = random_image(16, 12, 1);
    EXPECT_EQ(apply_blur(img, make_motion_kernel(1, 0.0)), img);
    Image flat({3, 16, 16}, 0.4f);
    const auto out = apply_blur(flat, make_motion_kernel(7, 33.0, 0.5));
    for (float v : out.values()) EXPECT_NEAR(v, 0.4f, 1e-6f);
}

TEST(Blur, MatchesDirectConvolution) {
    const auto img = random_image(12, 10, 2);
    const auto k = make_motion_kernel(5, 60.0, 0.4);
    const auto out = apply_blur(img, k);
    const int r = k.size / 2, h = 12, w = 10;
    auto clampi = [](int v, int n) { return std::min(std::max(v, 0), n - 1); };
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                double acc = 0;
                for (int i = 0; i < k.size; ++i)
                    for (int j = 0; j < k.size; ++j)
                        acc += k.at(i, j) * img.at(c, clampi(y - (i - r), h), clampi(x - (j - r), w));
                EXPECT_NEAR(out.at(c, y, x), std::clamp(acc, 0.0, 1.0), 1e-5);
            }
}

TEST(Blur, NoiseIsSeededAndClamped) {
    const auto img = random_image(16, 16, 3);
    const auto k = make_motion_kernel(3, 0.0);
    const auto a = apply_blur(img, k, 0.05, 9);
    EXPECT_EQ(a, apply_blur(img, k, 0.05, 9));
    EXPECT_NE(a, apply_blur(img, k, 0.05, 10));
    for (float v : a.values()) {
        EXPECT_GE(v, 0.0f);
        EXPECT_LE(v, 1.0f);
    }
}

TEST(Augment, DihedralGroup) {
    const auto img = random_image(4, 6, 4);
    EXPECT_EQ(dihedral(img, 0), img);
    for (int code = 0; code < 8; ++code) {
        // flips are involutions; every code yields a distinct image
        if (code < 4) {
            EXPECT_EQ(dihedral(dihedral(img, code), code), img);
        }
        for (int other = code + 1; other < 8; ++other) EXPECT_NE(dihedral(img, code), dihedral(img, other));
    }
    const auto h = dihedral(img, 1), v = dihedral(img, 2), t = dihedral(img, 4);
    EXPECT_EQ(t.shape(), (Shape{3, 6, 4}));
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < 4; ++y)
            for (int x = 0; x < 6; ++x) {
                EXPECT_EQ(h.at(c, y, x), img.at(c, y, 5 - x));
                EXPECT_EQ(v.at(c, y, x), img.at(c, 3 - y, x));
                EXPECT_EQ(t.at(c, x, y), img.at(c, y, x));
            }
}

TEST(Augment, SameTransformOnBothImages) {
    const ImagePair pair{random_image(8, 8, 5), random_image(8, 8, 6)};
    for (uint64_t seed = 0; seed < 20; ++seed) {
        const auto out = augment(pair, seed);
        bool found = false;
        for (int code = 0; code < 8 && !found; ++code)
            found = out.blur == dihedral(pair.blur, code) && out.sharp == dihedral(pair.sharp, code);
        EXPECT_TRUE(found);
        EXPECT_EQ(out.blur, augment(pair, seed).blur);
    }
}

TEST(Augment, CropAlignsPair) {
    ImagePair pair{random_image(16, 16, 7), random_image(16, 16, 7)};
    std::mt19937_64 rng(1);
    const auto c = random_crop(pair, 8, rng);
    EXPECT_EQ(c.blur.shape(), (Shape{3, 8, 8}));
    EXPECT_EQ(c.blur, c.sharp);
    EXPECT_THROW(random_crop(pair, 32, rng), std::invalid_argument);
}

TEST(Metrics, PsnrCases) {
    const auto a = random_image(8, 8, 1);
    EXPECT_TRUE(is_infinite_psnr(psnr(a, a)));
    Image zeros({3, 8, 8}, 0.0f), ones({3, 8, 8}, 1.0f), tenth({3, 8, 8}, 0.1f);
    EXPECT_DOUBLE_EQ(psnr(zeros, ones), 0.0);
    EXPECT_NEAR(psnr(zeros, tenth), 20.0, 1e-5);
    const auto b = random_image(8, 8, 2);
    EXPECT_EQ(psnr(a, b), psnr(b, a));
    EXPECT_THROW(psnr(a, random_image(8, 4, 3)), std::invalid_argument);
}

namespace {

// Direct 2-D window, double precision, valid region only.
double ssim_oracle(const Image& a, const Image& b) {
    double g[11][11], gs = 0;
    for (int i = 0; i < 11; ++i)
        for (int j = 0; j < 11; ++j) gs += g[i][j] = std::exp(-((i - 5) * (i - 5) + (j - 5) * (j - 5)) / (2 * 1.5 * 1.5));
    const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
    const int h = a.dim(1), w = a.dim(2);
    double total = 0;
    for (int c = 0; c < 3; ++c) {
        double sum = 0;
        int count = 0;
        for (int y = 0; y + 11 <= h; ++y)
            for (int x = 0; x + 11 <= w; ++x) {
                double ma = 0, mb = 0, saa = 0, sbb = 0, sab = 0;
                for (int i = 0; i < 11; ++i)
                    for (int j = 0; j < 11; ++j) {
                        const double wt = g[i][j] / gs, va = a.at(c, y + i, x + j), vb = b.at(c, y + i, x + j);
                        ma += wt * va;
                        mb += wt * vb;
                        saa += wt * va * va;
                        sbb += wt * vb * vb;
                        sab += wt * va * vb;
                    }
                const double va = saa - ma * ma, vb = sbb - mb * mb, cov = sab - ma * mb;
                sum += (2 * ma * mb + c1) * (2 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                ++count;
            }
        total += sum / count;
    }
    return total / 3;
}

}  // namespace

TEST(Metrics, SsimCases) {
    const auto a = random_image(20, 24, 1);
    EXPECT_NEAR(ssim(a, a), 1.0, 1e-12);
    Image flat({3, 16, 16}, 0.3f);
    EXPECT_NEAR(ssim(flat, flat), 1.0, 1e-12);
    auto b = a;
    for (size_t i = 0; i < b.size(); ++i) b[i] = std::clamp(b[i] * 0.7f + 0.1f * float(i % 7) / 7.0f, 0.0f, 1.0f);
    EXPECT_NEAR(ssim(a, b), ssim_oracle(a, b), 1e-6);
    EXPECT_NEAR(ssim(a, b), ssim(b, a), 1e-12);
    EXPECT_LT(ssim(a, b), 1.0);
    EXPECT_THROW(ssim(random_image(8, 8, 1), random_image(8, 8, 2)), std::invalid_argument);
}

TEST(Png, RoundTripIsExact) {
    const auto dir = temp_dir("png");
    Image img({3, 5, 7});
    for (size_t i = 0; i < img.size(); ++i) img[i] = float((i * 37) % 256) / 255.0f;
    write_png(dir / "a.png", img);
    const auto back = read_png(dir / "a.png");
    ASSERT_EQ(back.shape(), img.shape());
    for (size_t i = 0; i < img.size(); ++i) EXPECT_EQ(back[i], img[i]);
    EXPECT_THROW(read_png(dir / "missing.png"), std::runtime_error);
    fs::remove_all(dir);
}

TEST(Dataset, GeneratedBytesAreDeterministic) {
    const auto a = temp_dir("ds_a"), b = temp_dir("ds_b");
    const SplitCounts counts{3, 2, 1};
    write_synthetic_dataset(a, 32, counts, BlurRanges{}, 5);
    write_synthetic_dataset(b, 32, counts, BlurRanges{}, 5);
    size_t files = 0;
    for (const auto& e : fs::recursive_directory_iterator(a)) {
        if (!e.is_regular_file()) continue;
        ++files;
        EXPECT_EQ(read_file(e.path()), read_file(b / fs::relative(e.path(), a))) << e.path();
    }
    EXPECT_EQ(files, 12u);
    const auto train = load_split(a, "train");
    ASSERT_EQ(train.size(), 3u);
    EXPECT_EQ(train.names, (std::vector<std::string>{"0000.png", "0001.png", "0002.png"}));
    for (const auto& p : train.pairs) {
        EXPECT_EQ(p.blur.shape(), (Shape{3, 32, 32}));
        EXPECT_EQ(p.sharp.shape(), p.blur.shape());
        EXPECT_NE(p.blur, p.sharp);
    }
    EXPECT_EQ(load_split(a, "val", 1).size(), 1u);
    EXPECT_THROW(load_split(a, "nope"), std::runtime_error);
    fs::remove_all(a);
    fs::remove_all(b);
}

TEST(Dataset, SharpContentHasEdges) {
    std::mt19937_64 rng(1);
    const auto img = generate_sharp(64, rng);
    EXPECT_EQ(img.shape(), (Shape{3, 64, 64}));
    double grad = 0;
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < 64; ++y)
            for (int x = 1; x < 64; ++x) grad = std::max(grad, double(std::abs(img.at(c, y, x) - img.at(c, y, x - 1))));
    EXPECT_GT(grad, 0.2);
    const auto pair = make_synthetic_pair(64, BlurRanges{}, 3);
    EXPECT_LT(psnr(pair.blur, pair.sharp), 60.0);
}
