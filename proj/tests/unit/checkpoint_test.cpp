#include <gtest/gtest.h>

#include <cstring>
#include <filesystem>
#include <fstream>

#include "fixtures.hpp"
#include "osteo/checkpoint.hpp"
#include "osteo/train.hpp"

using namespace osteo;

namespace {

Checkpoint sample_checkpoint(const NetworkConfig& config = check::tiny_config()) {
    Checkpoint ck;
    ck.params = build_network<float>(config, 17);
    for (auto& [name, t] : ck.params.parameters) ck.optimizer.momentum[name].assign(t.numel(), 0.125f);
    for (auto& [name, t] : ck.params.buffers)
        for (auto& v : t.values()) v += 0.5f;
    ck.epoch = 3;
    ck.rng_state = "12345 678";
    ck.best_val_accuracy = 0.75;
    return ck;
}

std::uint32_t read_u32(const std::string& s, std::size_t at) {
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | static_cast<unsigned char>(s[at + static_cast<std::size_t>(i)]);
    return v;
}

void write_u32(std::string& s, std::size_t at, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) s[at + static_cast<std::size_t>(i)] = static_cast<char>((v >> (8 * i)) & 0xFF);
}

/// Offset of the first dimension of the named tensor record.
std::size_t first_dim_offset(const std::string& bytes, const std::string& name) {
    std::string key(4, '\0');
    write_u32(key, 0, static_cast<std::uint32_t>(name.size()));
    key += name;
    const auto at = bytes.find(key);
    if (at == std::string::npos) throw std::runtime_error("tensor not found: " + name);
    return at + key.size() + 4;
}

std::string message_of(const std::string& bytes) {
    try {
        deserialize_checkpoint(bytes);
    } catch (const CheckpointError& e) {
        return e.what();
    }
    return {};
}

}  // namespace

TEST(Checkpoint, RoundTripIsByteIdentical) {
    const auto ck = sample_checkpoint();
    const auto bytes = serialize_checkpoint(ck);
    EXPECT_EQ(bytes.substr(0, kCheckpointMagic.size()), kCheckpointMagic);
    const auto back = deserialize_checkpoint(bytes);
    EXPECT_EQ(serialize_checkpoint(back), bytes);
    EXPECT_EQ(back.epoch, 3);
    EXPECT_EQ(back.rng_state, "12345 678");
    EXPECT_EQ(back.best_val_accuracy, 0.75);
    EXPECT_EQ(back.optimizer, ck.optimizer);
    EXPECT_EQ(back.params.config.canonical(), ck.params.config.canonical());
    for (const auto& [name, t] : ck.params.parameters) {
        EXPECT_EQ(back.params.parameters.at(name).values(), t.values()) << name;
        EXPECT_TRUE(back.params.parameters.at(name).requires_grad());
    }
    for (const auto& [name, t] : ck.params.buffers) EXPECT_EQ(back.params.buffers.at(name).values(), t.values()) << name;
}

TEST(Checkpoint, FileRoundTripPreservesPredictions) {
    auto dir = check::scratch_dir("ckpt_file");
    const auto ck = sample_checkpoint();
    save_checkpoint(ck, dir / "a.ckpt");
    auto back = load_checkpoint(dir / "a.ckpt");
    Tensor<float> img(Shape{3, 32, 32});
    for (std::size_t i = 0; i < img.numel(); ++i) img[i] = static_cast<float>((i * 13) % 17) / 17.0f - 0.5f;
    auto a = ck.params.clone();
    EXPECT_EQ(predict_probabilities(a, {img}).values(), predict_probabilities(back.params, {img}).values());
    EXPECT_THROW(load_checkpoint(dir / "missing.ckpt"), CheckpointError);
}

TEST(Checkpoint, BadMagic) {
    auto bytes = serialize_checkpoint(sample_checkpoint());
    bytes[0] = 'X';
    EXPECT_NE(message_of(bytes).find("magic"), std::string::npos);
    EXPECT_THROW(deserialize_checkpoint(""), CheckpointError);
}

TEST(Checkpoint, TruncationDetectedEverywhere) {
    const auto bytes = serialize_checkpoint(sample_checkpoint());
    for (std::size_t cut = 0; cut < bytes.size(); cut += std::max<std::size_t>(1, bytes.size() / 97)) {
        EXPECT_THROW(deserialize_checkpoint(std::string_view(bytes).substr(0, cut)), CheckpointError) << cut;
    }
    EXPECT_THROW(deserialize_checkpoint(bytes + "x"), CheckpointError);
}

TEST(Checkpoint, CorruptedDimensionNamesTensor) {
    const auto bytes = serialize_checkpoint(sample_checkpoint());
    const std::string name = "param/stem.1.conv.weight";
    const auto at = first_dim_offset(bytes, name);
    auto bad = bytes;
    write_u32(bad, at, read_u32(bytes, at) + 1);
    const auto msg = message_of(bad);
    EXPECT_NE(msg.find(name), std::string::npos) << msg;
}

TEST(Checkpoint, WrongShapeForConfigNamesTensor) {
    // Same byte size, different shape: swap the first two dimensions.
    const auto bytes = serialize_checkpoint(sample_checkpoint());
    const std::string name = "param/stem.1.conv.weight";
    const auto at = first_dim_offset(bytes, name);
    const auto d0 = read_u32(bytes, at), d1 = read_u32(bytes, at + 4);
    ASSERT_NE(d0, d1);
    auto bad = bytes;
    write_u32(bad, at, d1);
    write_u32(bad, at + 4, d0);
    const auto msg = message_of(bad);
    EXPECT_NE(msg.find(name), std::string::npos) << msg;
}

TEST(Checkpoint, HashMismatchPolicy) {
    auto bytes = serialize_checkpoint(sample_checkpoint());
    bytes[bytes.size() - 1] ^= 0x5A;
    EXPECT_THROW(deserialize_checkpoint(bytes, HashPolicy::fail), CheckpointError);
    std::vector<std::string> warnings;
    auto ck = deserialize_checkpoint(bytes, HashPolicy::warn, &warnings);
    EXPECT_EQ(warnings.size(), 1u);
    EXPECT_EQ(ck.epoch, 3);
}

TEST(Checkpoint, ToyModelIsSmall) {
    const auto bytes = serialize_checkpoint(sample_checkpoint(NetworkConfig::toy()));
    EXPECT_LT(bytes.size(), 10u * 1024 * 1024);
}
