#include "hidiff/checkpoint.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <bit>
#include <cmath>
#include <cstring>
#include <limits>

using namespace hidiff;
using hidiff::test::random_tensor;

namespace {

Checkpoint sample_checkpoint() {
    Checkpoint ck;
    ck.stage = 2;
    ck.step = 123456789012ull;
    ck.config = "[train]\nlr = 0.0002\n";
    ck.rng_state = "1 2 3";
    ck.meta["a"] = "x";
    ck.meta["empty"] = "";
    Tensor<float> f = random_tensor<float>({2, 3, 4}, 1);
    f[0] = -0.0f;
    f[1] = std::numeric_limits<float>::denorm_min();
    f[2] = std::numeric_limits<float>::infinity();
    f[3] = std::numeric_limits<float>::quiet_NaN();
    ck.records.push_back({"param/w", f});
    ck.records.push_back({"d", random_tensor<double>({5}, 2)});
    ck.records.push_back({"scalar", Tensor<float>({1}, 0.5f)});
    return ck;
}

bool bit_equal(const Tensor<float>& a, const Tensor<float>& b) {
    return a.shape() == b.shape() && std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0;
}

}  // namespace

TEST(Checkpoint, BitwiseRoundTrip) {
    const Checkpoint ck = sample_checkpoint();
    const std::string bytes = serialize(ck);
    EXPECT_EQ(bytes.compare(0, 8, std::string(kCheckpointMagic, 8)), 0);
    const Checkpoint back = deserialize(bytes);
    EXPECT_EQ(back.stage, 2u);
    EXPECT_EQ(back.step, ck.step);
    EXPECT_EQ(back.config, ck.config);
    EXPECT_EQ(back.rng_state, ck.rng_state);
    EXPECT_EQ(back.meta, ck.meta);
    ASSERT_EQ(back.records.size(), 3u);
    EXPECT_TRUE(bit_equal(std::get<Tensor<float>>(back.records[0].value), std::get<Tensor<float>>(ck.records[0].value)));
    EXPECT_EQ(std::get<Tensor<double>>(back.records[1].value), std::get<Tensor<double>>(ck.records[1].value));
    EXPECT_EQ(serialize(back), bytes);
}

TEST(Checkpoint, FileRoundTripAndParams) {
    ParamStore<float> store(3);
    store.create("a.w", {4, 3}, Init::fan_in());
    store.create("b.w", {2}, Init::normal(1.0));
    Checkpoint ck;
    ck.add_params(store);
    const auto path = std::filesystem::temp_directory_path() / "hidiff_ck_test.ckpt";
    save_checkpoint(path, ck);
    const Checkpoint back = load_checkpoint(path);
    EXPECT_EQ(serialize(back), serialize(ck));

    ParamStore<float> other(99);
    other.create("a.w", {4, 3}, Init::zeros());
    other.create("b.w", {2}, Init::zeros());
    EXPECT_EQ(back.load_params(other, "a."), 1u);
    EXPECT_EQ(other.params()[0].var.value(), store.params()[0].var.value());
    EXPECT_EQ(other.params()[1].var.value(), Tensor<float>({2}));
    EXPECT_EQ(back.load_params(other), 2u);
    EXPECT_EQ(other.params()[1].var.value(), store.params()[1].var.value());

    ParamStore<float> wrong(1);
    wrong.create("a.w", {3, 4}, Init::zeros());
    EXPECT_THROW(back.load_params(wrong), std::runtime_error);
    ParamStore<float> extra(1);
    extra.create("c.w", {1}, Init::zeros());
    EXPECT_THROW(back.load_params(extra), std::runtime_error);
    ParamStore<double> precision(1);
    precision.create("a.w", {4, 3}, Init::zeros());
    EXPECT_THROW(back.load_params(precision), std::runtime_error);
}

TEST(Checkpoint, RejectsCorruptInput) {
    const std::string bytes = serialize(sample_checkpoint());
    std::string bad_magic = bytes;
    bad_magic[0] = 'X';
    EXPECT_THROW(deserialize(bad_magic), std::runtime_error);

    std::string bad_version = bytes;
    const uint32_t v = kCheckpointVersion + 1;
    std::memcpy(bad_version.data() + 8, &v, 4);
    try {
        deserialize(bad_version);
        FAIL() << "version mismatch accepted";
    } catch (const std::runtime_error& e) {
        EXPECT_NE(std::string(e.what()).find("version"), std::string::npos);
    }

    EXPECT_THROW(deserialize(bytes.substr(0, bytes.size() - 1)), std::runtime_error);
    EXPECT_THROW(deserialize(bytes + '\0'), std::runtime_error);
    EXPECT_THROW(deserialize(""), std::runtime_error);
    EXPECT_THROW(load_checkpoint("/nonexistent/x.ckpt"), std::runtime_error);
}

TEST(Checkpoint, LittleEndianHeader) {
    static_assert(std::endian::native == std::endian::little);
    Checkpoint ck;
    ck.stage = 1;
    ck.step = 258;
    const std::string b = serialize(ck);
    EXPECT_EQ(static_cast<unsigned char>(b[8]), kCheckpointVersion);
    EXPECT_EQ(static_cast<unsigned char>(b[12]), 1);
    EXPECT_EQ(static_cast<unsigned char>(b[16]), 2);
    EXPECT_EQ(static_cast<unsigned char>(b[17]), 1);
}
