#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "texsplat/texsort.hpp"
#include "texsplat/texture_memory.hpp"

namespace texsplat::gs {

inline constexpr int kTileSize = 16;
inline constexpr std::uint32_t kMaxTileId = 1u << 20;
inline constexpr std::uint32_t kDepthBuckets = 1u << 10;

/// Scene primitive: 58 scalars per Gaussian.
struct Gaussian3D {
    std::array<float, 3> mean{};
    float opacity = 0.0f;
    std::array<float, 6> cov3d{}; // upper triangle xx, xy, xz, yy, yz, zz
    std::array<float, 48> sh{};   // coefficient-major: sh[3*k + channel]
};

/// Checks positive semi-definiteness of the 3x3 covariance within tolerance.
bool covariance_is_psd(const std::array<float, 6>& cov, float tol = 1e-6f);

struct Camera {
    std::array<float, 16> world_to_cam{1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1};
    float fx = 0.0f;
    float fy = 0.0f;
    int width = 0;
    int height = 0;
    float near_plane = 0.1f;
    float far_plane = 100.0f;

    void validate() const;
    std::array<float, 3> position() const; // camera center in world space
    int tiles_x() const { return (width + kTileSize - 1) / kTileSize; }
    int tiles_y() const { return (height + kTileSize - 1) / kTileSize; }
};

struct TileRect {
    int x0 = 0, y0 = 0, x1 = 0, y1 = 0; // half-open tile spans
    std::uint32_t count() const {
        return static_cast<std::uint32_t>(x1 - x0) * static_cast<std::uint32_t>(y1 - y0);
    }
};

struct ProjectedGaussian {
    float x = 0.0f, y = 0.0f; // image-plane center, pixel units
    float depth = 0.0f;       // camera-space, positive
    float radius = 0.0f;      // pixels
    std::array<float, 4> conic_opacity{};
    std::array<float, 3> rgb{};
    std::uint32_t tiles_touched = 0;
    TileRect rect{};
};

struct CullCounts {
    std::uint32_t behind = 0;   // depth <= near
    std::uint32_t guard = 0;    // beyond the 1.3x frustum guard band
    std::uint32_t singular = 0; // non-invertible 2D covariance
    std::uint32_t offscreen = 0;
    std::uint32_t total() const { return behind + guard + singular + offscreen; }
};

/// Projects one Gaussian; empty when culled. The same routine backs the
/// texture pipeline and the reference renderer so both see identical floats.
std::optional<ProjectedGaussian> project_gaussian(const Gaussian3D& g, const Camera& cam,
                                                  CullCounts* culls = nullptr);

TileRect tile_rect(float x, float y, float radius, int tiles_x, int tiles_y);

struct FrameBuffer {
    int width = 0;
    int height = 0;
    std::vector<float> data; // rgb interleaved

    static FrameBuffer filled(int width, int height, const std::array<float, 3>& color);
    float& at(int x, int y, int c) {
        return data[(static_cast<std::size_t>(y) * static_cast<std::size_t>(width) +
                     static_cast<std::size_t>(x)) * 3 + static_cast<std::size_t>(c)];
    }
    float at(int x, int y, int c) const {
        return data[(static_cast<std::size_t>(y) * static_cast<std::size_t>(width) +
                     static_cast<std::size_t>(x)) * 3 + static_cast<std::size_t>(c)];
    }
};

float max_channel_diff(const FrameBuffer& a, const FrameBuffer& b);

struct TileRange {
    std::uint32_t tile_id = 0;
    std::uint32_t start = 0;
    std::uint32_t end = 0;
};

// ---------------------------------------------------------------------------
// Variable packing

/// Inputs packed per the grouped layout: Group 1 one texel per Gaussian
/// (mean + opacity), Group 2 two row-adjacent texels (covariance), Group 3 a
/// 3x4 texel block (spherical harmonics), 15 texture reads per Gaussian.
struct PackedInputs {
    mem::Texture2D group1;
    mem::Texture2D group2;
    mem::Texture2D group3;
    int base_width = 0; // Group 1 width
    int base_height = 0;
    std::uint32_t count = 0;
};

PackedInputs pack_inputs(std::span<const Gaussian3D> gaussians, const mem::TextureLimits& limits = {},
                         mem::Tracer* tracer = nullptr);
Gaussian3D unpack_input(const PackedInputs& packed, std::uint32_t index);

/// Naive layout used when variable packing is disabled: all 58 scalars of a
/// Gaussian stored consecutively, four per texel; every scalar fetch costs a
/// texture read.
struct FlatInputs {
    mem::Texture2D scalars;
    std::uint32_t count = 0;
};

FlatInputs flatten_inputs(std::span<const Gaussian3D> gaussians, const mem::TextureLimits& limits = {},
                          mem::Tracer* tracer = nullptr);

/// Preprocess output groups (Table-style packing): Group 1 = xy/depth/radius,
/// Group 2 = conic+opacity, Group 3 = rgb. tiles_touched stays in a plain
/// linear buffer. The flat variant stores the 11 texel-resident scalars
/// sequentially.
struct OutputGroups {
    mem::Texture2D group1;
    mem::Texture2D group2;
    mem::Texture2D group3;
    int base_width = 0;
    int base_height = 0;
    std::uint32_t count = 0;
};

struct FlatOutputs {
    mem::Texture2D scalars;
    std::uint32_t count = 0;
};

// ---------------------------------------------------------------------------
// Pipeline stages

struct StageIo {
    std::uint64_t texel_reads = 0;
    std::uint64_t texel_writes = 0;
};

struct PreprocessResult {
    std::vector<ProjectedGaussian> projected; // dense, culled entries have tiles_touched 0
    std::vector<std::uint32_t> tiles_touched;
    std::optional<OutputGroups> packed;
    std::optional<FlatOutputs> flat;
    CullCounts culls;
};

/// Projection over the packed input textures (15 reads per Gaussian).
PreprocessResult preprocess(const PackedInputs& in, const Camera& cam, bool pack_outputs,
                            const mem::TextureLimits& limits, mem::Tracer* tracer, StageIo& io);
/// Projection over the flat input texture (58 reads per Gaussian).
PreprocessResult preprocess(const FlatInputs& in, const Camera& cam, bool pack_outputs,
                            const mem::TextureLimits& limits, mem::Tracer* tracer, StageIo& io);

struct ScanResult {
    std::vector<std::uint32_t> offsets; // exclusive prefix sum
    std::uint32_t total = 0;
};

ScanResult prefix_scan(std::span<const std::uint32_t> counts);

struct DepthBounds {
    float lo = 0.0f;
    float hi = 1.0f;
};

/// Min/max of the surviving depths expanded by 1%.
DepthBounds depth_bounds(const PreprocessResult& pre);

/// Packs (tile id, depth) into one 32-bit float key: tile_id * 2^10 plus the
/// depth scaled into 2^10 buckets. The conversion rounds down so the tile is
/// recovered exactly for every tile_id < 2^20.
float normalize_key(std::uint32_t tile_id, float depth, const DepthBounds& bounds);
std::uint32_t extract_tile(float key);

struct DuplicateResult {
    std::vector<sort::KVPair> pairs;       // emitted in scan order
    sort::KeyValueTextures textures;       // packed for the sorting stage
};

/// Emits one key-value pair per (surviving Gaussian, overlapped tile), reading
/// the Gaussian's screen attributes back from the preprocess output groups.
DuplicateResult duplicate_with_tiles(const PreprocessResult& pre, const ScanResult& scan,
                                     const Camera& cam, const DepthBounds& bounds,
                                     const mem::TextureLimits& limits, mem::Tracer* tracer,
                                     StageIo& io);

/// Addressing mode for consuming the sorted pair texture: the block-aware
/// iterator reads each texel once for its two resident pairs; the generic
/// gather issues one texture read per pair.
enum class SortedAccess : std::uint8_t { coalesced, per_pair };

std::vector<TileRange> identify_ranges(const mem::Texture2D& sorted, const sort::SortedView& view,
                                       SortedAccess access, bool debug_checks, mem::Tracer* tracer,
                                       StageIo& io);

struct RenderInputs {
    const mem::Texture2D* sorted = nullptr;
    const sort::SortedView* view = nullptr;
    std::span<const TileRange> ranges;
    const OutputGroups* packed = nullptr; // exactly one of packed/flat set
    const FlatOutputs* flat = nullptr;
    SortedAccess access = SortedAccess::coalesced;
    bool four_pixels_per_item = true; // work items cover a horizontal quad
};

FrameBuffer render(const RenderInputs& in, const Camera& cam, const std::array<float, 3>& background,
                   mem::Tracer* tracer, StageIo& io);

/// Oracle path: same math, plain arrays, exact 64-bit (tile, depth) ordering,
/// scalar per-pixel loop.
FrameBuffer render_reference(std::span<const Gaussian3D> gaussians, const Camera& cam,
                             const std::array<float, 3>& background);

// ---------------------------------------------------------------------------
// Whole-frame driver

struct PipelineOptions {
    bool packing = true;     // variable packing of preprocess inputs/outputs
    bool data_layout = true; // block-wise sorted layout + block-aware reads
    bool fusion = true;      // 4 pixels per render work item
    std::array<float, 3> background{0.0f, 0.0f, 0.0f};
    bool debug_checks = false;
    mem::Tracer* tracer = nullptr;
    mem::TextureLimits limits;
};

inline constexpr std::array<const char*, 6> kStageNames{
    "preprocess", "scan", "duplicate_with_tiles", "sorting", "identify_range", "render"};

struct StageMetrics {
    const char* stage = "";
    double wall_ms = 0.0;
    std::uint64_t texel_reads = 0;
    std::uint64_t texel_writes = 0;
};

struct FrameResult {
    FrameBuffer image;
    std::array<StageMetrics, 6> stages;
    sort::SortMetrics sort_metrics;
    CullCounts culls;
    std::uint32_t emitted_pairs = 0;
    std::uint32_t tile_count = 0;
};

FrameResult render_frame(std::span<const Gaussian3D> gaussians, const Camera& cam,
                         const PipelineOptions& options = {});

} // namespace texsplat::gs
