#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "texsplat/texture_memory.hpp"

namespace texsplat::cache {

/// Block sizes probed by the stride histogram and the latency model.
inline constexpr std::array<int, 5> kBlockSizes{2, 4, 8, 16, 32};

/// Parametric 2D-block texture cache: fully associative LRU over square
/// b x b texel blocks. Replacement policies on real parts are proprietary;
/// LRU is the simplest model whose inclusion property keeps capacity sweeps
/// monotone.
struct CacheConfig {
    int block_edge = 8;
    int capacity_blocks = 16;

    void validate() const;
};

struct PassStats {
    std::uint32_t pass_id = 0;
    mem::PassKind kind = mem::PassKind::generic;
    std::uint64_t reads = 0;
    std::uint64_t misses = 0;
};

struct CacheStats {
    std::uint64_t reads = 0;
    std::uint64_t misses = 0;
    std::vector<PassStats> per_pass;

    std::uint64_t hits() const { return reads - misses; }
    double miss_rate() const { return reads == 0 ? 0.0 : static_cast<double>(misses) / static_cast<double>(reads); }
};

/// Streaming LRU simulator usable as an access sink on a live run or fed a
/// recorded trace. A read hits iff its containing block is resident; a miss
/// inserts the block, evicting the LRU entry at capacity. Writes never touch
/// residency (the texture cache is read-only) and pass boundaries invalidate
/// it: a pass reads what the previous pass wrote, which the read-only cache
/// cannot have held, so first touches of a block always miss.
///
/// Blocks are keyed by (texture id, block x, block y), so two textures read
/// within one pass do not alias each other.
class LruCacheSim final : public mem::AccessSink {
public:
    explicit LruCacheSim(const CacheConfig& config);

    void begin_pass(std::uint32_t pass_id, mem::PassKind kind) override;
    void on_access(const mem::AccessEvent& event) override;

    const CacheConfig& config() const { return config_; }
    const CacheStats& stats() const { return stats_; }
    void reset();

private:
    struct BlockKey {
        std::uint32_t texture_id;
        std::uint32_t bx;
        std::uint32_t by;
        bool operator==(const BlockKey&) const = default;
    };

    CacheConfig config_;
    CacheStats stats_;
    std::vector<BlockKey> lru_; // front = most recently used
    bool pass_open_ = false;
};

/// Runs a recorded trace through a fresh LRU cache.
CacheStats simulate(std::span<const mem::AccessEvent> trace, const CacheConfig& config);

/// Theoretical minimum miss count for any computation traversing all of a
/// W x H texture with block edge b: W*H/b^2.
std::uint64_t min_misses(int width, int height, int block_edge);

/// Cross-block stride counts per assumed block size: how many consecutive
/// same-work-item access pairs cross a horizontal or vertical block boundary.
/// A diagonal crossing increments both axes.
struct StrideHistogram {
    std::array<std::uint64_t, 5> cross_horizontal{};
    std::array<std::uint64_t, 5> cross_vertical{};
    std::uint64_t total_accesses = 0;

    /// Feature vector for the latency model: the ten crossing counts
    /// normalized by total accesses, horizontal block sizes first.
    std::array<double, 10> features() const;
};

/// Names aligned with StrideHistogram::features(), plus "intercept" last.
std::array<std::string, 11> feature_names();

StrideHistogram cross_block_histogram(std::span<const mem::AccessEvent> trace);

struct LatencyModel {
    std::array<double, 5> weight_horizontal{};
    std::array<double, 5> weight_vertical{};
    double intercept = 0.0;
    double r_squared = 0.0;

    std::array<double, 11> weights() const;
};

struct FitSample {
    StrideHistogram histogram;
    double latency = 0.0;
};

/// Ordinary least squares over the normalized crossing features. Requires at
/// least 2 * 11 samples and positive latencies; a rank-deficient design
/// matrix raises a degenerate-fit error listing the collinear features.
LatencyModel fit_latency_model(std::span<const FitSample> samples);

} // namespace texsplat::cache
