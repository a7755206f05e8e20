#include <gtest/gtest.h>

#include <cstring>

#include "ssounds/checkpoint.hpp"
#include "ssounds/conditioning.hpp"
#include "ssounds/hashing.hpp"
#include "support/gradcheck.hpp"
#include "support/temp_dir.hpp"

using namespace ssounds;
using ssounds::testing::random_tensor;

namespace {

ModelConfig tiny_model() {
    ModelConfig cfg;
    cfg.d_audio = 6;
    cfg.d_text = 4;
    cfg.d_vision = 4;
    cfg.heads = 2;
    cfg.query_capacity = 3;
    return cfg;
}

Checkpoint sample_checkpoint() {
    Checkpoint ck;
    ck.config_hash = 0x0123456789abcdefULL;
    ck.model_config = tiny_model();
    ck.model = AlignmentModel(ck.model_config);
    ck.best_model = ck.model.clone();
    ck.best_model.parameters().front().tensor.mutable_data()[0] = -0.0;
    ck.epoch = 7;
    ck.best_epoch = 5;
    ck.epochs_since_best = 2;
    ck.best_val_loss = 0.1 + 0.2; // not exactly representable in decimal
    Rng rng(3);
    for (auto* st : {&ck.text_state, &ck.vision_state}) {
        const auto branch = st == &ck.text_state ? Branch::text : Branch::vision;
        st->step = 11;
        for (const auto& p : ck.model.parameters(branch)) {
            std::vector<double> m(p.tensor.size()), v(p.tensor.size());
            for (auto& x : m) x = rng.normal();
            for (auto& x : v) x = std::abs(rng.normal());
            st->m.push_back(std::move(m));
            st->v.push_back(std::move(v));
        }
    }
    return ck;
}

bool same_bits(const AlignmentModel& a, const AlignmentModel& b) {
    const auto pa = a.parameters(), pb = b.parameters();
    if (pa.size() != pb.size()) return false;
    for (std::size_t i = 0; i < pa.size(); ++i) {
        if (pa[i].tensor.shape() != pb[i].tensor.shape()) return false;
        if (std::memcmp(pa[i].tensor.data().data(), pb[i].tensor.data().data(), pa[i].tensor.size() * sizeof(double)))
            return false;
    }
    return true;
}

} // namespace

TEST(Crc32, StandardCheckValue) {
    const std::string s = "123456789";
    EXPECT_EQ(crc32(std::as_bytes(std::span(s.data(), s.size()))), 0xCBF43926u);
}

TEST(Checkpoint, RoundTripIsBitExact) {
    const auto ck = sample_checkpoint();
    ssounds::testing::TempDir dir;
    write_checkpoint(ck, dir / "a.ssck");
    const auto back = read_checkpoint(dir / "a.ssck");
    EXPECT_EQ(back.config_hash, ck.config_hash);
    EXPECT_EQ(back.epoch, 7u);
    EXPECT_EQ(back.best_epoch, 5u);
    EXPECT_EQ(back.epochs_since_best, 2u);
    EXPECT_EQ(std::bit_cast<std::uint64_t>(back.best_val_loss), std::bit_cast<std::uint64_t>(ck.best_val_loss));
    EXPECT_TRUE(same_bits(back.model, ck.model));
    EXPECT_TRUE(same_bits(back.best_model, ck.best_model));
    EXPECT_TRUE(std::signbit(back.best_model.parameters().front().tensor.data()[0]));
    EXPECT_EQ(back.text_state, ck.text_state);
    EXPECT_EQ(back.vision_state, ck.vision_state);
    EXPECT_EQ(encode_checkpoint(back), encode_checkpoint(ck));
}

TEST(Checkpoint, EveryFlippedByteIsDetected) {
    const auto bytes = encode_checkpoint(sample_checkpoint());
    Rng rng(5);
    for (int trial = 0; trial < 200; ++trial) {
        auto bad = bytes;
        const auto at = rng.below(bad.size());
        bad[at] ^= std::byte{static_cast<unsigned char>(1u << rng.below(8))};
        EXPECT_THROW(decode_checkpoint(bad, "flip"), FormatError) << "byte " << at;
    }
}

TEST(Checkpoint, CorruptionErrorsCarryOffsets) {
    const auto bytes = encode_checkpoint(sample_checkpoint());
    auto magic = bytes;
    magic[2] = std::byte{'X'};
    try {
        decode_checkpoint(magic, "m");
        FAIL();
    } catch (const FormatError& e) {
        EXPECT_EQ(e.offset(), 2u);
    }
    auto crc = bytes;
    crc[bytes.size() / 2] ^= std::byte{0x10};
    try {
        decode_checkpoint(crc, "c");
        FAIL();
    } catch (const FormatError& e) {
        EXPECT_EQ(e.offset(), bytes.size() - 4);
    }
    for (std::size_t keep : {std::size_t{0}, std::size_t{3}, std::size_t{20}, bytes.size() - 1}) {
        EXPECT_THROW(decode_checkpoint(std::span(bytes).first(keep), "t"), FormatError) << keep;
    }
    auto tail = bytes;
    tail.push_back(std::byte{0});
    EXPECT_THROW(decode_checkpoint(tail, "tail"), FormatError);
}

TEST(Checkpoint, MissingFileIsAnInputError) {
    ssounds::testing::TempDir dir;
    EXPECT_THROW(read_checkpoint(dir / "absent.ssck"), InputError);
}

TEST(Conditioning, RoundTripAndFloatRounding) {
    ConditioningFile f;
    f.d_text = 4;
    f.d_vision = 3;
    Rng rng(7);
    for (std::size_t l : {1, 2, 5}) {
        const ConditioningPair p{random_tensor(rng, {l, 4}, false), random_tensor(rng, {3}, false)};
        f.add("clip" + std::to_string(l), p);
        EXPECT_EQ(f.records.back().text[0], static_cast<float>(p.z_hat_text.data()[0]));
    }
    ssounds::testing::TempDir dir;
    write_conditioning(f, dir / "c.sscp");
    const auto back = read_conditioning(dir / "c.sscp");
    EXPECT_EQ(back, f);
    EXPECT_EQ(back.records[2].length, 5u);
}

TEST(Conditioning, LayoutMatchesDocumentedHeader) {
    ConditioningFile f;
    f.d_text = 2;
    f.d_vision = 1;
    f.add("k", ConditioningPair{Tensor::from({1, 2}, {1.0, 2.0}), Tensor::from({1}, {3.0})});
    const auto b = f.encode();
    // magic 4 + version 4 + widths 8 + count 8 + key (2 + 1) + l 4 + 3 floats
    ASSERT_EQ(b.size(), 4u + 4 + 8 + 8 + 3 + 4 + 12);
    EXPECT_EQ(std::memcmp(b.data(), "SSCP", 4), 0);
    float last;
    std::memcpy(&last, b.data() + b.size() - 4, 4);
    EXPECT_EQ(last, 3.0f);
}

TEST(Conditioning, RejectsBadInput) {
    ConditioningFile f;
    f.d_text = 4;
    f.d_vision = 3;
    EXPECT_THROW(f.add("x", ConditioningPair{Tensor::zeros({2, 5}), Tensor::zeros({3})}), DimensionError);
    EXPECT_THROW(f.add("x", ConditioningPair{Tensor::zeros({2, 4}), Tensor::zeros({2})}), DimensionError);
    f.add("x", ConditioningPair{Tensor::zeros({2, 4}), Tensor::zeros({3})});
    const auto bytes = f.encode();
    EXPECT_THROW(ConditioningFile::decode(std::span(bytes).first(bytes.size() - 1), "t"), FormatError);
    auto tail = bytes;
    tail.push_back(std::byte{1});
    EXPECT_THROW(ConditioningFile::decode(tail, "t"), FormatError);
    auto version = bytes;
    version[4] = std::byte{9};
    try {
        ConditioningFile::decode(version, "v");
        FAIL();
    } catch (const FormatError& e) {
        EXPECT_EQ(e.offset(), 4u);
    }
}
