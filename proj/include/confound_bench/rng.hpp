#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>

namespace confound_bench {

/// Philox4x32-10 block function (Salmon et al., Random123).
/// Output depends only on (key, counter), so any draw can be reproduced
/// without replaying a sequence.
inline std::array<std::uint32_t, 4> philox4x32_10(std::array<std::uint32_t, 4> ctr,
                                                  std::array<std::uint32_t, 2> key) {
    constexpr std::uint32_t kMul0 = 0xD2511F53u;
    constexpr std::uint32_t kMul1 = 0xCD9E8D57u;
    constexpr std::uint32_t kWeyl0 = 0x9E3779B9u;
    constexpr std::uint32_t kWeyl1 = 0xBB67AE85u;
    for (int round = 0; round < 10; ++round) {
        const std::uint64_t p0 = static_cast<std::uint64_t>(kMul0) * ctr[0];
        const std::uint64_t p1 = static_cast<std::uint64_t>(kMul1) * ctr[2];
        const auto hi0 = static_cast<std::uint32_t>(p0 >> 32), lo0 = static_cast<std::uint32_t>(p0);
        const auto hi1 = static_cast<std::uint32_t>(p1 >> 32), lo1 = static_cast<std::uint32_t>(p1);
        ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
        key[0] += kWeyl0;
        key[1] += kWeyl1;
    }
    return ctr;
}

/// (master seed, replication index) pair identifying one replication's streams.
struct ReplicationSeed {
    std::uint64_t master_seed = 0;
    std::uint64_t replication_index = 0;
};

/// Variable tags; each random component of the model reads its own stream.
enum class StreamTag : std::uint32_t {
    cluster_effect_t = 1,
    cluster_effect_y = 2,
    noise_t = 3,
    noise_y = 4,
    within_confounder = 5,
    between_confounder = 6,
    lmm_calibration = 7,
    measured_covariate_base = 1000,  // + column index
};

inline StreamTag measured_covariate_tag(std::uint32_t column) {
    return static_cast<StreamTag>(static_cast<std::uint32_t>(StreamTag::measured_covariate_base) + column);
}

/// Standard-normal stream keyed by the master seed; the 128-bit counter packs
/// (replication index, tag, block index), so distinct triples never share a block.
class NormalStream {
public:
    NormalStream(ReplicationSeed seed, StreamTag tag)
        : key_{static_cast<std::uint32_t>(seed.master_seed), static_cast<std::uint32_t>(seed.master_seed >> 32)},
          rep_(seed.replication_index),
          tag_(static_cast<std::uint32_t>(tag)) {}

    double operator()() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        const auto r = philox4x32_10({static_cast<std::uint32_t>(rep_), static_cast<std::uint32_t>(rep_ >> 32), tag_,
                                      block_++},
                                     key_);
        const std::uint64_t a = (static_cast<std::uint64_t>(r[0]) << 32 | r[1]) >> 11;
        const std::uint64_t b = (static_cast<std::uint64_t>(r[2]) << 32 | r[3]) >> 11;
        constexpr double kScale = 1.0 / 9007199254740992.0;  // 2^-53
        const double u1 = (static_cast<double>(a) + 1.0) * kScale;  // (0, 1]
        const double u2 = static_cast<double>(b) * kScale;          // [0, 1)
        const double radius = std::sqrt(-2.0 * std::log(u1));
        const double angle = 2.0 * std::numbers::pi * u2;
        spare_ = radius * std::sin(angle);
        have_spare_ = true;
        return radius * std::cos(angle);
    }

private:
    std::array<std::uint32_t, 2> key_;
    std::uint64_t rep_;
    std::uint32_t tag_;
    std::uint32_t block_ = 0;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

}  // namespace confound_bench
