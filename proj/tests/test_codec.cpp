#include "hidiff/latent_codec.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

using namespace hidiff;
using hidiff::test::random_tensor;

namespace {

CodecConfig wide_codec() {
    CodecConfig c;
    c.dim = 256;
    return c;
}

CodecConfig tiny_codec() {
    CodecConfig c;
    c.blocks = 4;
    c.width = 3;
    c.tokens = 4;
    c.dim = 5;
    return c;
}

}  // namespace

TEST(Codec, OutputSizeIndependentOfImageSize) {
    ParamStore<float> store(1);
    LatentEncoder<float> le(ParamScope<float>(store, "le"), wide_codec(), 6);
    LatentEncoder<float> le_dm(ParamScope<float>(store, "le_dm"), wide_codec(), 3);
    EXPECT_EQ(le.downsamplings(), 2);
    for (auto [h, w] : {std::pair{64, 64}, std::pair{128, 96}, std::pair{16, 24}}) {
        const Var<float> gt(random_tensor<float>({3, h, w}, 1, 0, 1)), blur(random_tensor<float>({3, h, w}, 2, 0, 1));
        EXPECT_EQ(encode_prior(le, gt, blur).shape(), (Shape{16, 256}));
        EXPECT_EQ(encode_condition(le_dm, blur).shape(), (Shape{16, 256}));
    }
}

TEST(Codec, ZeroParametersGiveZero) {
    ParamStore<float> store(1);
    LatentEncoder<float> le(ParamScope<float>(store, "le"), CodecConfig{}, 6);
    LatentEncoder<float> le_dm(ParamScope<float>(store, "le_dm"), CodecConfig{}, 3);
    for (auto& p : store.params()) p.var.mutable_value().fill(0.0f);
    const Var<float> gt(random_tensor<float>({3, 64, 64}, 1, 0, 1)), blur(random_tensor<float>({3, 64, 64}, 2, 0, 1));
    const auto z = encode_prior(le, gt, blur).value();
    const auto c = encode_condition(le_dm, blur).value();
    for (float v : z.values()) EXPECT_EQ(v, 0.0f);
    for (float v : c.values()) EXPECT_EQ(v, 0.0f);
}

TEST(Codec, DeterministicAndInputSensitive) {
    ParamStore<float> store(1);
    LatentEncoder<float> le_dm(ParamScope<float>(store, "le_dm"), CodecConfig{}, 3);
    const Var<float> a(random_tensor<float>({3, 32, 32}, 1, 0, 1)), b(random_tensor<float>({3, 32, 32}, 2, 0, 1));
    EXPECT_EQ(encode_condition(le_dm, a).value(), encode_condition(le_dm, a).value());
    EXPECT_NE(encode_condition(le_dm, a).value(), encode_condition(le_dm, b).value());
}

TEST(Codec, RejectsWrongInputs) {
    ParamStore<float> store(1);
    LatentEncoder<float> le(ParamScope<float>(store, "le"), CodecConfig{}, 6);
    LatentEncoder<float> le_dm(ParamScope<float>(store, "le_dm"), CodecConfig{}, 3);
    const Var<float> a(Tensor<float>({3, 32, 32})), b(Tensor<float>({3, 32, 16}));
    EXPECT_THROW(encode_prior(le, a, b), std::invalid_argument);
    EXPECT_THROW(encode_prior(le_dm, a, a), std::invalid_argument);
    EXPECT_THROW(encode_condition(le, a), std::invalid_argument);
    CodecConfig bad;
    bad.tokens = 12;
    EXPECT_THROW(LatentEncoder<float>(ParamScope<float>(store, "bad"), bad, 3), std::invalid_argument);
}

TEST(TokenPool, GridSizedMapKeepsLayout) {
    const auto x = random_tensor<double>({5, 4, 4}, 1);
    const auto pooled = ops::adaptive_avg_pool(Var<double>(x), 4).value();
    EXPECT_EQ(pooled, x);
}

TEST(TokenPool, ConstantMap) {
    const Tensor<double> x({2, 8, 8}, 0.625);
    const auto p = ops::adaptive_avg_pool(Var<double>(x), 4).value();
    for (double v : p.values()) EXPECT_DOUBLE_EQ(v, 0.625);
}

TEST(TokenPool, BlockMeans) {
    Tensor<double> x({1, 8, 8});
    for (int y = 0; y < 8; ++y)
        for (int xx = 0; xx < 8; ++xx) x.at(0, y, xx) = 10 * y + xx;
    const auto p = ops::adaptive_avg_pool(Var<double>(x), 4).value();
    for (int gy = 0; gy < 4; ++gy)
        for (int gx = 0; gx < 4; ++gx) {
            // mean of rows 2gy, 2gy+1 and columns 2gx, 2gx+1
            EXPECT_DOUBLE_EQ(p.at(0, gy, gx), 10 * (2 * gy + 0.5) + (2 * gx + 0.5));
        }
    EXPECT_THROW(ops::adaptive_avg_pool(Var<double>(Tensor<double>({1, 3, 8})), 4), std::invalid_argument);
}

TEST(Codec, GradientMatchesFiniteDifferences) {
    ParamStore<double> store(1);
    LatentEncoder<double> le(ParamScope<double>(store, "le"), tiny_codec(), 6);
    hidiff::test::randomize(store, 2, 0.4);
    Var<double> gt(random_tensor<double>({3, 16, 16}, 1, 0, 1), true);
    const Var<double> blur(random_tensor<double>({3, 16, 16}, 2, 0, 1));
    const auto w = random_tensor<double>({4, 5}, 3);
    const auto r = hidiff::test::grad_check(store, [&] { return ops::dot_const(encode_prior(le, gt, blur), w); },
                                            {{"gt", gt}}, 8);
    EXPECT_LT(r.max_rel, 1e-3) << r.worst;
}
