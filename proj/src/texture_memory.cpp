#include "texsplat/texture_memory.hpp"

#include <atomic>
#include <ostream>
#include <string>

namespace texsplat::mem {

namespace {
std::atomic<std::uint32_t> g_next_texture_id{1};
} // namespace

const char* to_string(AccessKind k) {
    return k == AccessKind::read ? "read" : "write";
}

const char* to_string(PassKind k) {
    switch (k) {
    case PassKind::generic: return "generic";
    case PassKind::preprocess: return "preprocess";
    case PassKind::compare: return "compare";
    case PassKind::fused: return "fused";
    case PassKind::copy_back: return "copy_back";
    case PassKind::render: return "render";
    }
    return "unknown";
}

std::uint32_t Tracer::begin_pass(PassKind kind) {
    if (pass_open_) {
        ++pass_;
    }
    pass_open_ = true;
    work_item_ = 0;
    for (AccessSink* sink : sinks_) {
        sink->begin_pass(pass_, kind);
    }
    return pass_;
}

void Tracer::record(std::uint32_t texture_id, AccessKind kind, int x, int y) {
    if (kind == AccessKind::write && !trace_writes) {
        return;
    }
    if (sinks_.empty()) {
        return;
    }
    AccessEvent event;
    event.texture_id = texture_id;
    event.kind = kind;
    event.x = static_cast<std::uint16_t>(x);
    event.y = static_cast<std::uint16_t>(y);
    event.pass_id = pass_;
    event.work_item = work_item_;
    for (AccessSink* sink : sinks_) {
        sink->on_access(event);
    }
}

Texture2D Texture2D::alloc(int width, int height, const TextureLimits& limits) {
    if (width < 1 || height < 1) {
        throw Error(ErrorKind::invalid_dimension,
                    "texture dimensions must be >= 1, got " + std::to_string(width) + "x" +
                        std::to_string(height));
    }
    if (width > limits.max_dim || height > limits.max_dim) {
        throw Error(ErrorKind::capacity,
                    "texture " + std::to_string(width) + "x" + std::to_string(height) +
                        " exceeds the configured maximum dimension " + std::to_string(limits.max_dim));
    }
    return Texture2D(g_next_texture_id.fetch_add(1), width, height);
}

void Texture2D::check_coords(int x, int y) const {
    if (x < 0 || x >= width_ || y < 0 || y >= height_) {
        throw Error(ErrorKind::coordinate,
                    "texture " + std::to_string(id_) + ": coordinate (" + std::to_string(x) + ", " +
                        std::to_string(y) + ") outside " + std::to_string(width_) + "x" +
                        std::to_string(height_));
    }
}

const Texel& Texture2D::read(int x, int y) const {
    check_coords(x, y);
    if (tracer_ != nullptr) {
        tracer_->record(id_, AccessKind::read, x, y);
    }
    return data_[index(x, y)];
}

void Texture2D::write(int x, int y, const Texel& t) {
    check_coords(x, y);
    if (tracer_ != nullptr) {
        tracer_->record(id_, AccessKind::write, x, y);
    }
    data_[index(x, y)] = t;
}

const Texel& Texture2D::peek(int x, int y) const {
    check_coords(x, y);
    return data_[index(x, y)];
}

void Texture2D::poke(int x, int y, const Texel& t) {
    check_coords(x, y);
    data_[index(x, y)] = t;
}

Dimensions choose_dimensions(std::int64_t n_texels) {
    if (n_texels < 1) {
        throw Error(ErrorKind::invalid_dimension,
                    "choose_dimensions requires n >= 1, got " + std::to_string(n_texels));
    }
    // Smallest power-of-two product covering n.
    int total_log = 0;
    while ((std::int64_t{1} << total_log) < n_texels) {
        ++total_log;
    }
    // As square as possible; the wider side takes the extra bit.
    int wlog = (total_log + 1) / 2;
    int hlog = total_log / 2;
    return {1 << wlog, 1 << hlog};
}

void TraceLog::begin_pass(std::uint32_t /*pass_id*/, PassKind /*kind*/) {}

std::size_t TraceLog::read_count() const {
    std::size_t n = 0;
    for (const AccessEvent& e : events_) {
        if (e.kind == AccessKind::read) {
            ++n;
        }
    }
    return n;
}

void TraceLog::write_csv(std::ostream& out) const {
    out << "pass_id,work_item_id,texture_id,kind,x,y\n";
    for (const AccessEvent& e : events_) {
        out << e.pass_id << ',' << e.work_item << ',' << e.texture_id << ',' << to_string(e.kind)
            << ',' << e.x << ',' << e.y << '\n';
    }
}

} // namespace texsplat::mem
