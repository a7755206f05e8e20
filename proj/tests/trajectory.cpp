// Prints the bit patterns of the per-epoch losses for a base-objective run.
// Built twice: once normally and once with SSOUNDS_NO_AUGMENTATION, so the
// acceptance suite can compare the two trajectories.
//
// Usage: trajectory [epochs] [ext]
#include <cstdio>
#include <string>

#include "ssounds/ssounds.hpp"

using namespace ssounds;

int main(int argc, char** argv) {
    spdlog::set_level(spdlog::level::warn);
    const std::size_t epochs = argc > 1 ? std::stoul(argv[1]) : 5;
    const bool ext = argc > 2 && std::string(argv[2]) == "ext";
    try {
        const auto corpus = generate_synthetic_corpus(5, 40, 1);
        const FrozenEncoders encoders{EncoderConfig{}};
        const CaptionRewriter rewriter;
        TrainingConfig tc;
        tc.batch_size = 8;
        tc.max_epochs = epochs;
        tc.patience = epochs + 1;
        tc.ext_loss_enabled = ext;
        ModelConfig mc;
        mc.query_capacity = required_query_capacity(corpus, rewriter, tc);
        Trainer trainer(corpus, encoders, rewriter, mc, tc);
        const auto result = trainer.run();
        for (const auto& m : result.metrics) {
            std::printf("%llu %016llx %016llx\n", static_cast<unsigned long long>(m.epoch),
                        static_cast<unsigned long long>(std::bit_cast<std::uint64_t>(m.train_loss)),
                        static_cast<unsigned long long>(std::bit_cast<std::uint64_t>(m.val_loss)));
        }
        std::printf("checkpoint %s\n", sha256_hex(encode_checkpoint(result.checkpoint)).c_str());
    } catch (const std::exception& e) {
        std::fprintf(stderr, "trajectory: %s\n", e.what());
        return 1;
    }
    return 0;
}
