#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "texsplat/texture_memory.hpp"

namespace texsplat::sort {

/// One sortable record: a finite float key and a 32-bit identifier.
struct KVPair {
    float key = 0.0f;
    std::uint32_t value = 0;

    bool operator==(const KVPair&) const = default;
};

/// Padding sentinel. Sentinel keys compare greater than or equal to every
/// user key and are stripped from the tail after the final layout is read
/// back, matching exact (key, value) encoding.
inline constexpr float kSentinelKey = 3.402823466e+38f; // largest finite float
inline constexpr std::uint32_t kSentinelValue = 0xFFFFFFFFu;

/// Network partner of a logical index at a given step: idx XOR 2^(step-1).
std::uint32_t bitonic_partner(std::uint32_t idx, int step);

enum class Direction : std::uint8_t { ascending, descending };

/// Direction of the compare-exchange holding idx during a given stage:
/// ascending iff bit `stage` of idx is clear. The final stage is then
/// globally ascending.
Direction bitonic_direction(std::uint32_t idx, int stage);

/// Texture geometry for one sort: each texel holds two consecutive logical
/// elements (key0, value0, key1, value1), so n_logical = 2 * width * height.
struct SortDims {
    std::uint32_t n_logical = 0;
    int stages = 0; // x = log2(n_logical)
    int width = 0;  // texels
    int height = 0;
    int width_log = 0;
    int height_log = 0;

    static SortDims for_count(std::uint32_t n_logical);
    std::uint32_t pair_count() const { return n_logical / 2; }
};

struct TexelSlot {
    int x = 0;
    int y = 0;
    int slot = 0; // pair slot within the texel: 0 or 1
};

/// Bijection between logical network indices and physical texture slots for
/// one step. Elements 2t and 2t+1 always share a texel; the texel-pair index
/// t is placed so that step-j partners (texel distance 2^(j-2)) occupy
/// vertically adjacent texels (x, 2u) / (x, 2u+1). The closed form is a
/// transposition of texel-index bits (j-2) and log2(width); step 1 partners
/// are intra-texel under any placement, so step 1 shares step 2's map.
class PlacementMap {
public:
    PlacementMap(const SortDims& dims, int step);

    int step() const { return step_; }
    const SortDims& dims() const { return dims_; }

    /// Row-major texel index of a texel-pair (involution).
    std::uint32_t pair_position(std::uint32_t pair) const;
    std::uint32_t pair_at_position(std::uint32_t position) const { return pair_position(position); }

    TexelSlot logical_to_physical(std::uint32_t logical) const;
    std::uint32_t physical_to_logical(int x, int y, int slot) const;

private:
    SortDims dims_;
    int step_;
    int bit_a_; // texel-pair bit moved to the row-LSB position
    int bit_b_; // row-LSB bit of the physical texel index
};

/// Validates the (stage, step) combination against the schedule and returns
/// the placement the corresponding pass expects on its input.
PlacementMap layout_for_step(int stage, int step, std::uint32_t n_logical);

/// Pass schedule of one sort: one preprocess pass (packs the data and applies
/// stage 1), then for each stage i in [2, x] the steps j = i..3 as compare
/// passes and one fused pass covering steps 2 and 1.
struct SortPlan {
    struct Pass {
        int stage = 0;
        int step = 0; // for fused passes, the higher of the two steps (2)
        mem::PassKind kind = mem::PassKind::compare;
    };

    SortDims dims;
    std::vector<Pass> passes;

    static SortPlan make(std::uint32_t n_logical);
};

/// Layout of the final sorted texture.
enum class FinalLayout : std::uint8_t {
    blockwise, // 32x32 texel blocks (clamped to the texture), row-major inside
    row_major,
};

struct SortOptions {
    mem::Tracer* tracer = nullptr;
    bool debug_checks = false;
    FinalLayout final_layout = FinalLayout::blockwise;
    mem::TextureLimits limits;
};

struct SortMetrics {
    std::uint32_t n_input = 0;
    std::uint32_t n_logical = 0;
    int stages = 0;
    std::uint64_t passes = 0; // compare + fused passes after preprocessing
    /// Element-access count under the documented conventions: for this sort,
    /// KV pairs read by compare/fused passes (n per pass); for the baseline,
    /// the read-read-write plus copy-back traffic (5n per step).
    std::uint64_t element_accesses = 0;
    std::uint64_t texel_reads = 0;
    std::uint64_t texel_writes = 0;
    double wall_ms = 0.0;
    std::uint64_t debug_pairs_checked = 0;
};

/// Addressing for the sorted output texture.
struct SortedView {
    int width = 0;
    int height = 0;
    int block_edge = 1; // 1 = plain row-major
    std::uint32_t count = 0;

    TexelSlot slot_of(std::uint32_t logical) const;
};

struct SortResult {
    std::vector<KVPair> sorted;
    SortMetrics metrics;
    mem::Texture2D texture; // final layout, sentinel-padded
    SortedView view;
};

/// Input textures for the sorting pipeline: keys and values packed four per
/// texel, sentinel-padded to n_logical.
struct KeyValueTextures {
    mem::Texture2D keys;
    mem::Texture2D values;
    std::uint32_t n_input = 0;
    std::uint32_t n_logical = 0;
};

/// Allocates sentinel-filled key/value textures sized for n_input pairs
/// (padded to the next power of two, at least 2).
KeyValueTextures alloc_kv_textures(std::uint32_t n_input, const mem::TextureLimits& limits = {});

KeyValueTextures pack_input_textures(std::span<const KVPair> pairs, const SortOptions& options = {});

/// Stand-alone block-wise store/load for sorted sequences: linear index l
/// maps to block floor(l / (edge*edge*2)), blocks row-major over the grid,
/// texels row-major inside each block. load inverts store exactly.
mem::Texture2D blockwise_store(std::span<const KVPair> seq, int block_edge = 32,
                               const mem::TextureLimits& limits = {});
std::vector<KVPair> blockwise_load(const mem::Texture2D& tex, int block_edge = 32);
TexelSlot blockwise_slot(std::uint32_t logical, int width, int height, int block_edge);

/// Driver for one texture sort. sort() covers the common case; the run class
/// is exposed so tests can execute and inspect individual passes.
class SortRun {
public:
    SortRun(std::span<const KVPair> pairs, const SortOptions& options = {});
    /// Sorts already-packed key/value textures (the pipeline path, where the
    /// duplication kernel wrote them).
    SortRun(KeyValueTextures&& input, const SortOptions& options = {});

    const SortDims& dims() const { return dims_; }
    const SortPlan& plan() const { return plan_; }
    SortMetrics& metrics() { return metrics_; }

    /// Runs the preprocess pass (packing + stage 1). For n_logical <= 4 the
    /// schedule degenerates and this pass already writes the fully sorted
    /// final layout.
    void preprocess();
    /// Runs the next scheduled pass; preprocess() must have run.
    void step_pass();
    bool finished() const { return next_pass_ >= plan_.passes.size(); }
    void execute();

    /// Current values indexed by logical network position (untraced).
    std::vector<KVPair> logical_state() const;

    SortResult take_result();

private:
    struct Debug;

    void compare_pass(int stage, int step);
    void fused_pass(int stage);
    void write_final(std::uint32_t pair, const KVPair& p0, const KVPair& p1, mem::Texture2D& out);
    const mem::Texture2D& ping() const { return bufs_[cur_]; }
    mem::Texture2D& pong() { return bufs_[1 - cur_]; }

    SortOptions options_;
    SortDims dims_;
    SortPlan plan_;
    SortMetrics metrics_;
    KeyValueTextures input_;
    std::vector<mem::Texture2D> bufs_;
    std::vector<std::pair<int, int>> compare_order_; // work-item dispatch order
    int cur_ = 0;
    std::size_t next_pass_ = 0;
    int current_layout_step_ = 0; // 0 = raw input, -1 = final layout
    int final_block_edge_ = 1;
    std::vector<std::uint32_t> shadow_; // debug: physical texel -> pair id
};

SortResult sort(std::span<const KVPair> pairs, const SortOptions& options = {});

/// GPUTeraSort-style baseline: fixed column-major quad layout, no layout
/// transformation or stage fusion, an explicit copy-back pass per step.
SortResult terasort_baseline(std::span<const KVPair> pairs, const SortOptions& options = {});

} // namespace texsplat::sort
