#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <iosfwd>
#include <vector>

#include "texsplat/error.hpp"

namespace texsplat::mem {

/// One element of 2D texture memory: a vector of four 32-bit lanes.
/// Lanes are raw bit cells; each may be interpreted as a float or as an
/// unsigned integer per the owning texture's convention, so a single texel
/// can mix float keys with integer identifiers.
struct Texel {
    std::array<std::uint32_t, 4> lanes{};

    float f(int lane) const { return std::bit_cast<float>(lanes[static_cast<std::size_t>(lane)]); }
    void set_f(int lane, float v) { lanes[static_cast<std::size_t>(lane)] = std::bit_cast<std::uint32_t>(v); }
    std::uint32_t u(int lane) const { return lanes[static_cast<std::size_t>(lane)]; }
    void set_u(int lane, std::uint32_t v) { lanes[static_cast<std::size_t>(lane)] = v; }

    bool operator==(const Texel&) const = default;
};

enum class AccessKind : std::uint8_t { read, write };

/// Kernel-pass classification, used by metrics and the cache simulator to
/// break results down per pass.
enum class PassKind : std::uint8_t { generic, preprocess, compare, fused, copy_back, render };

const char* to_string(AccessKind k);
const char* to_string(PassKind k);

struct AccessEvent {
    std::uint32_t texture_id = 0;
    AccessKind kind = AccessKind::read;
    std::uint16_t x = 0;
    std::uint16_t y = 0;
    std::uint32_t pass_id = 0;
    std::uint32_t work_item = 0;
};

/// Consumer of the access stream. Implementations: TraceLog (records
/// everything), AccessCounters, and cache_model::LruCacheSim (streaming
/// hit/miss simulation).
class AccessSink {
public:
    virtual ~AccessSink() = default;
    virtual void begin_pass(std::uint32_t /*pass_id*/, PassKind /*kind*/) {}
    virtual void on_access(const AccessEvent& event) = 0;
};

/// Shared tracing context for one simulated run. Textures hold a non-owning
/// pointer to a Tracer; kernels advance the pass counter and set the current
/// work item before touching texels. Events reach every attached sink in
/// (pass, work item, sequence) order, which is the deterministic merged
/// order required of multi-work-item traces.
class Tracer {
public:
    /// Writes bypass the read-only texture cache, so they are not traced by
    /// default; enable this to include them in access-count accounting.
    bool trace_writes = false;

    void attach(AccessSink* sink) { sinks_.push_back(sink); }
    void detach_all() { sinks_.clear(); }

    std::uint32_t begin_pass(PassKind kind);
    void set_work_item(std::uint32_t work_item) { work_item_ = work_item; }

    std::uint32_t pass_id() const { return pass_; }
    std::uint32_t work_item() const { return work_item_; }

    void record(std::uint32_t texture_id, AccessKind kind, int x, int y);

private:
    std::vector<AccessSink*> sinks_;
    std::uint32_t pass_ = 0;
    std::uint32_t work_item_ = 0;
    bool pass_open_ = false;
};

struct TextureLimits {
    /// Largest texture side accepted, in texels. Mobile drivers cap texture
    /// dimensions; the exact cap is device-specific, so it is configurable.
    int max_dim = 16384;
};

/// A width x height grid of texels with zero-initialized storage and
/// optional per-access tracing. Move-only so texture ids stay unique.
class Texture2D {
public:
    static Texture2D alloc(int width, int height, const TextureLimits& limits = {});

    Texture2D(Texture2D&&) noexcept = default;
    Texture2D& operator=(Texture2D&&) noexcept = default;
    Texture2D(const Texture2D&) = delete;
    Texture2D& operator=(const Texture2D&) = delete;

    std::uint32_t id() const { return id_; }
    int width() const { return width_; }
    int height() const { return height_; }
    std::int64_t texel_count() const { return static_cast<std::int64_t>(width_) * height_; }

    void set_tracer(Tracer* tracer) { tracer_ = tracer; }
    Tracer* tracer() const { return tracer_; }

    /// Traced read; returns the last value written to (x, y).
    const Texel& read(int x, int y) const;
    /// Write; traced only when the tracer's trace_writes flag is set.
    void write(int x, int y, const Texel& t);

    /// Untraced accessors for test setup and verification.
    const Texel& peek(int x, int y) const;
    void poke(int x, int y, const Texel& t);

private:
    Texture2D(std::uint32_t id, int width, int height)
        : id_(id), width_(width), height_(height),
          data_(static_cast<std::size_t>(width) * static_cast<std::size_t>(height)) {}

    void check_coords(int x, int y) const;
    std::size_t index(int x, int y) const {
        return static_cast<std::size_t>(y) * static_cast<std::size_t>(width_) + static_cast<std::size_t>(x);
    }

    std::uint32_t id_;
    int width_;
    int height_;
    std::vector<Texel> data_;
    Tracer* tracer_ = nullptr;
};

struct Dimensions {
    int width = 0;
    int height = 0;
};

/// Picks power-of-two texture dimensions for n texels: the smallest
/// power-of-two product >= n, as square as possible, ties broken toward
/// width >= height (wider textures suit row-adjacent packing).
Dimensions choose_dimensions(std::int64_t n_texels);

/// Records the full access stream; supports the CSV dump format
/// pass_id, work_item_id, texture_id, kind, x, y.
class TraceLog final : public AccessSink {
public:
    void begin_pass(std::uint32_t pass_id, PassKind kind) override;
    void on_access(const AccessEvent& event) override { events_.push_back(event); }

    const std::vector<AccessEvent>& events() const { return events_; }
    std::size_t read_count() const;
    void clear() { events_.clear(); }

    void write_csv(std::ostream& out) const;

private:
    std::vector<AccessEvent> events_;
};

class AccessCounters final : public AccessSink {
public:
    void on_access(const AccessEvent& event) override {
        if (event.kind == AccessKind::read) {
            ++reads;
        } else {
            ++writes;
        }
    }

    std::uint64_t reads = 0;
    std::uint64_t writes = 0;
};

} // namespace texsplat::mem
