#include "texsplat/texsort.hpp"

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <string>
#include <utility>

namespace texsplat::sort {

namespace {

int log2_exact(std::uint32_t v) { return std::countr_zero(v); }

bool is_pow2(std::uint64_t v) { return v != 0 && (v & (v - 1)) == 0; }

std::uint32_t next_pow2(std::uint32_t v) {
    std::uint32_t p = 1;
    while (p < v) {
        p <<= 1;
    }
    return p;
}

std::uint32_t swap_bits(std::uint32_t v, int a, int b) {
    const std::uint32_t ba = (v >> a) & 1u;
    const std::uint32_t bb = (v >> b) & 1u;
    const std::uint32_t diff = ba ^ bb;
    return v ^ ((diff << a) | (diff << b));
}

/// Work-item dispatch order over a 2D grid: Morton (Z-order) with the excess
/// high bits of the longer side appended on top. Models the 2D workgroup
/// locality of a GPU dispatch; any aligned power-of-two square of work items
/// runs as one contiguous burst.
std::vector<std::pair<int, int>> morton_order(int nx, int ny) {
    const int lx = log2_exact(static_cast<std::uint32_t>(nx));
    const int ly = log2_exact(static_cast<std::uint32_t>(ny));
    const int m = std::min(lx, ly);
    std::vector<std::pair<int, int>> order(static_cast<std::size_t>(nx) * static_cast<std::size_t>(ny));
    for (int y = 0; y < ny; ++y) {
        for (int x = 0; x < nx; ++x) {
            std::uint64_t code = 0;
            for (int b = 0; b < m; ++b) {
                code |= static_cast<std::uint64_t>((x >> b) & 1) << (2 * b);
                code |= static_cast<std::uint64_t>((y >> b) & 1) << (2 * b + 1);
            }
            const std::uint64_t high = (lx > ly) ? static_cast<std::uint64_t>(x) >> m
                                                 : static_cast<std::uint64_t>(y) >> m;
            code |= high << (2 * m);
            order[code] = {x, y};
        }
    }
    return order;
}

void compare_exchange(KVPair& low, KVPair& high, Direction dir) {
    const bool out_of_order =
        dir == Direction::ascending ? (low.key > high.key) : (low.key < high.key);
    if (out_of_order) {
        std::swap(low, high);
    }
}

void validate_pairs(std::span<const KVPair> pairs) {
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        if (!std::isfinite(pairs[i].key)) {
            throw Error(ErrorKind::input,
                        "key at index " + std::to_string(i) + " is not a finite float");
        }
    }
}

KVPair texel_pair(const mem::Texel& t, int slot) {
    return KVPair{t.f(slot * 2), t.u(slot * 2 + 1)};
}

mem::Texel make_texel(const KVPair& p0, const KVPair& p1) {
    mem::Texel t;
    t.set_f(0, p0.key);
    t.set_u(1, p0.value);
    t.set_f(2, p1.key);
    t.set_u(3, p1.value);
    return t;
}

/// Removes exactly pad_count sentinel-encoded pairs from the tail. Sentinels
/// sort to the end; if user pairs happen to be bit-identical to the sentinel
/// encoding the removal is still multiset-correct.
void strip_sentinels(std::vector<KVPair>& seq, std::size_t target_size) {
    std::size_t to_remove = seq.size() - target_size;
    while (to_remove > 0 && !seq.empty()) {
        const KVPair& back = seq.back();
        if (back.key == kSentinelKey && back.value == kSentinelValue) {
            seq.pop_back();
            --to_remove;
        } else {
            break;
        }
    }
    if (seq.size() != target_size) {
        throw Error(ErrorKind::internal_consistency,
                    "sentinel stripping left " + std::to_string(seq.size()) + " of " +
                        std::to_string(target_size) + " pairs");
    }
}

} // namespace

std::uint32_t bitonic_partner(std::uint32_t idx, int step) {
    return idx ^ (std::uint32_t{1} << (step - 1));
}

Direction bitonic_direction(std::uint32_t idx, int stage) {
    return ((idx >> stage) & 1u) == 0 ? Direction::ascending : Direction::descending;
}

SortDims SortDims::for_count(std::uint32_t n_logical) {
    if (n_logical < 2 || !is_pow2(n_logical)) {
        throw Error(ErrorKind::invalid_config,
                    "n_logical must be a power of two >= 2, got " + std::to_string(n_logical));
    }
    SortDims dims;
    dims.n_logical = n_logical;
    dims.stages = log2_exact(n_logical);
    const auto d = mem::choose_dimensions(static_cast<std::int64_t>(n_logical / 2));
    dims.width = d.width;
    dims.height = d.height;
    dims.width_log = log2_exact(static_cast<std::uint32_t>(d.width));
    dims.height_log = log2_exact(static_cast<std::uint32_t>(d.height));
    return dims;
}

PlacementMap::PlacementMap(const SortDims& dims, int step) : dims_(dims), step_(step) {
    if (dims.n_logical < 8) {
        throw Error(ErrorKind::schedule,
                    "placements are defined for n_logical >= 8 (schedule degenerates below)");
    }
    if (step < 1 || step > dims.stages) {
        throw Error(ErrorKind::schedule, "step " + std::to_string(step) + " outside [1, " +
                                             std::to_string(dims.stages) + "]");
    }
    // Step 1 partners share a texel under any placement; the pass that runs
    // step 1 operates in the step-2 layout.
    bit_a_ = std::max(step, 2) - 2;
    bit_b_ = dims.width_log;
}

std::uint32_t PlacementMap::pair_position(std::uint32_t pair) const {
    return swap_bits(pair, bit_a_, bit_b_);
}

TexelSlot PlacementMap::logical_to_physical(std::uint32_t logical) const {
    const std::uint32_t p = pair_position(logical >> 1);
    TexelSlot s;
    s.x = static_cast<int>(p & (static_cast<std::uint32_t>(dims_.width) - 1));
    s.y = static_cast<int>(p >> dims_.width_log);
    s.slot = static_cast<int>(logical & 1u);
    return s;
}

std::uint32_t PlacementMap::physical_to_logical(int x, int y, int slot) const {
    const std::uint32_t p =
        static_cast<std::uint32_t>(y) << dims_.width_log | static_cast<std::uint32_t>(x);
    return (pair_position(p) << 1) | static_cast<std::uint32_t>(slot);
}

PlacementMap layout_for_step(int stage, int step, std::uint32_t n_logical) {
    if (!is_pow2(n_logical) || n_logical < 8) {
        throw Error(ErrorKind::schedule,
                    "layout requires power-of-two n_logical >= 8, got " + std::to_string(n_logical));
    }
    const int stages = log2_exact(n_logical);
    if (stage < 2 || stage > stages || step < 1 || step > stage) {
        throw Error(ErrorKind::schedule, "invalid stage/step (" + std::to_string(stage) + ", " +
                                             std::to_string(step) + ") for x=" + std::to_string(stages));
    }
    return PlacementMap(SortDims::for_count(n_logical), step);
}

SortPlan SortPlan::make(std::uint32_t n_logical) {
    SortPlan plan;
    plan.dims = SortDims::for_count(n_logical);
    plan.passes.push_back({1, 1, mem::PassKind::preprocess});
    if (plan.dims.stages < 3) {
        return plan; // n <= 4: the preprocess thread holds all elements
    }
    for (int i = 2; i <= plan.dims.stages; ++i) {
        for (int j = i; j >= 3; --j) {
            plan.passes.push_back({i, j, mem::PassKind::compare});
        }
        plan.passes.push_back({i, 2, mem::PassKind::fused});
    }
    return plan;
}

TexelSlot blockwise_slot(std::uint32_t logical, int width, int height, int block_edge) {
    if (block_edge < 1 || width % block_edge != 0 || height % block_edge != 0) {
        throw Error(ErrorKind::layout, "block edge " + std::to_string(block_edge) +
                                           " does not tile texture " + std::to_string(width) + "x" +
                                           std::to_string(height));
    }
    const std::uint32_t pair = logical >> 1;
    const auto edge = static_cast<std::uint32_t>(block_edge);
    const std::uint32_t pairs_per_block = edge * edge;
    const std::uint32_t block = pair / pairs_per_block;
    const std::uint32_t inner = pair % pairs_per_block;
    const auto grid_w = static_cast<std::uint32_t>(width / block_edge);
    TexelSlot s;
    s.x = static_cast<int>((block % grid_w) * edge + inner % edge);
    s.y = static_cast<int>((block / grid_w) * edge + inner / edge);
    s.slot = static_cast<int>(logical & 1u);
    if (s.y >= height) {
        throw Error(ErrorKind::layout, "logical index " + std::to_string(logical) +
                                           " outside texture " + std::to_string(width) + "x" +
                                           std::to_string(height));
    }
    return s;
}

TexelSlot SortedView::slot_of(std::uint32_t logical) const {
    return blockwise_slot(logical, width, height, block_edge);
}

mem::Texture2D blockwise_store(std::span<const KVPair> seq, int block_edge,
                               const mem::TextureLimits& limits) {
    if (seq.empty() || seq.size() % 2 != 0) {
        throw Error(ErrorKind::layout,
                    "block-wise store needs a non-empty even-length sequence, got " +
                        std::to_string(seq.size()));
    }
    const auto texels = static_cast<std::int64_t>(seq.size() / 2);
    const auto d = mem::choose_dimensions(texels);
    if (static_cast<std::int64_t>(d.width) * d.height != texels) {
        throw Error(ErrorKind::layout,
                    "sequence length " + std::to_string(seq.size()) + " is not 2*width*height");
    }
    if (d.width % block_edge != 0 || d.height % block_edge != 0) {
        throw Error(ErrorKind::layout, "texture " + std::to_string(d.width) + "x" +
                                           std::to_string(d.height) + " is not tiled by blocks of " +
                                           std::to_string(block_edge));
    }
    mem::Texture2D tex = mem::Texture2D::alloc(d.width, d.height, limits);
    for (std::uint32_t l = 0; l < seq.size(); l += 2) {
        const TexelSlot s = blockwise_slot(l, d.width, d.height, block_edge);
        tex.poke(s.x, s.y, make_texel(seq[l], seq[l + 1]));
    }
    return tex;
}

std::vector<KVPair> blockwise_load(const mem::Texture2D& tex, int block_edge) {
    const auto count = static_cast<std::uint32_t>(tex.texel_count() * 2);
    std::vector<KVPair> seq(count);
    for (std::uint32_t l = 0; l < count; ++l) {
        const TexelSlot s = blockwise_slot(l, tex.width(), tex.height(), block_edge);
        seq[l] = texel_pair(tex.peek(s.x, s.y), s.slot);
    }
    return seq;
}

KeyValueTextures alloc_kv_textures(std::uint32_t n_input, const mem::TextureLimits& limits) {
    const std::uint32_t n_logical = next_pow2(std::max<std::uint32_t>(n_input, 2));
    const std::int64_t texels = std::max<std::int64_t>(1, n_logical / 4);
    const auto d = mem::choose_dimensions(texels);

    KeyValueTextures kv{mem::Texture2D::alloc(d.width, d.height, limits),
                        mem::Texture2D::alloc(d.width, d.height, limits), n_input, n_logical};
    mem::Texel kt;
    mem::Texel vt;
    for (int lane = 0; lane < 4; ++lane) {
        kt.set_f(lane, kSentinelKey);
        vt.set_u(lane, kSentinelValue);
    }
    for (int y = 0; y < d.height; ++y) {
        for (int x = 0; x < d.width; ++x) {
            kv.keys.poke(x, y, kt);
            kv.values.poke(x, y, vt);
        }
    }
    return kv;
}

KeyValueTextures pack_input_textures(std::span<const KVPair> pairs, const SortOptions& options) {
    if (pairs.empty()) {
        throw Error(ErrorKind::input, "cannot pack an empty key-value set");
    }
    validate_pairs(pairs);
    KeyValueTextures kv = alloc_kv_textures(static_cast<std::uint32_t>(pairs.size()), options.limits);
    kv.keys.set_tracer(options.tracer);
    kv.values.set_tracer(options.tracer);

    const int width = kv.keys.width();
    for (std::size_t idx = 0; idx < pairs.size(); ++idx) {
        const auto t = static_cast<std::int64_t>(idx / 4);
        const int lane = static_cast<int>(idx % 4);
        const int x = static_cast<int>(t % width);
        const int y = static_cast<int>(t / width);
        mem::Texel kt = kv.keys.peek(x, y);
        kt.set_f(lane, pairs[idx].key);
        kv.keys.poke(x, y, kt);
        mem::Texel vt = kv.values.peek(x, y);
        vt.set_u(lane, pairs[idx].value);
        kv.values.poke(x, y, vt);
    }
    return kv;
}

SortRun::SortRun(std::span<const KVPair> pairs, const SortOptions& options)
    : SortRun(pack_input_textures(pairs, options), options) {}

SortRun::SortRun(KeyValueTextures&& input, const SortOptions& options)
    : options_(options),
      dims_(SortDims::for_count(input.n_logical)),
      plan_(SortPlan::make(dims_.n_logical)),
      input_(std::move(input)) {
    if (input_.keys.width() != input_.values.width() ||
        input_.keys.height() != input_.values.height()) {
        throw Error(ErrorKind::input, "key and value textures differ in size");
    }
    if (input_.keys.texel_count() * 4 < static_cast<std::int64_t>(dims_.n_logical) ||
        input_.n_input > dims_.n_logical) {
        throw Error(ErrorKind::input, "key/value textures do not cover n_logical");
    }
    input_.keys.set_tracer(options_.tracer);
    input_.values.set_tracer(options_.tracer);
    metrics_.n_input = input_.n_input;
    metrics_.n_logical = dims_.n_logical;
    metrics_.stages = dims_.stages;

    bufs_.push_back(mem::Texture2D::alloc(dims_.width, dims_.height, options_.limits));
    bufs_.push_back(mem::Texture2D::alloc(dims_.width, dims_.height, options_.limits));
    for (mem::Texture2D& t : bufs_) {
        t.set_tracer(options_.tracer);
    }

    final_block_edge_ = options_.final_layout == FinalLayout::blockwise
                            ? std::min({32, dims_.width, dims_.height})
                            : 1;
    if (dims_.stages >= 3) {
        compare_order_ = morton_order(dims_.width, dims_.height / 2);
    }
    if (options_.debug_checks) {
        shadow_.assign(static_cast<std::size_t>(dims_.width) * dims_.height, 0);
    }
}

void SortRun::write_final(std::uint32_t pair, const KVPair& p0, const KVPair& p1,
                          mem::Texture2D& out) {
    const TexelSlot s = blockwise_slot(pair << 1, dims_.width, dims_.height, final_block_edge_);
    out.write(s.x, s.y, make_texel(p0, p1));
    ++metrics_.texel_writes;
}

void SortRun::preprocess() {
    mem::Tracer* tracer = options_.tracer;
    if (tracer != nullptr) {
        tracer->begin_pass(mem::PassKind::preprocess);
    }
    mem::Texture2D& out = bufs_[cur_];

    if (dims_.stages < 3) {
        // Degenerate schedule: one thread holds every element, runs the whole
        // network in registers, and writes the final layout directly.
        if (tracer != nullptr) {
            tracer->set_work_item(0);
        }
        std::vector<KVPair> elems;
        for (int y = 0; y < input_.keys.height(); ++y) {
            for (int x = 0; x < input_.keys.width(); ++x) {
                const mem::Texel& kt = input_.keys.read(x, y);
                const mem::Texel& vt = input_.values.read(x, y);
                metrics_.texel_reads += 2;
                for (int lane = 0; lane < 4; ++lane) {
                    if (elems.size() < dims_.n_logical) {
                        elems.push_back(KVPair{kt.f(lane), vt.u(lane)});
                    }
                }
            }
        }
        for (int i = 1; i <= dims_.stages; ++i) {
            for (int j = i; j >= 1; --j) {
                const std::uint32_t dist = 1u << (j - 1);
                for (std::uint32_t l = 0; l < dims_.n_logical; ++l) {
                    if ((l & dist) == 0) {
                        compare_exchange(elems[l], elems[l ^ dist], bitonic_direction(l, i));
                    }
                }
            }
        }
        for (std::uint32_t t = 0; t < dims_.pair_count(); ++t) {
            write_final(t, elems[t * 2], elems[t * 2 + 1], out);
        }
        current_layout_step_ = -1;
        next_pass_ = 1;
        return;
    }

    const PlacementMap layout2(dims_, 2);
    const auto order = morton_order(input_.keys.width(), input_.keys.height());
    const auto width_mask = static_cast<std::uint32_t>(dims_.width) - 1;

    std::uint32_t work_item = 0;
    for (const auto& [kx, ky] : order) {
        if (tracer != nullptr) {
            tracer->set_work_item(work_item);
        }
        ++work_item;
        const auto g = static_cast<std::uint32_t>(ky) * static_cast<std::uint32_t>(input_.keys.width()) +
                       static_cast<std::uint32_t>(kx);

        // Four keys and four values arrive as two vector-of-4 reads.
        const mem::Texel& kt = input_.keys.read(kx, ky);
        const mem::Texel& vt = input_.values.read(kx, ky);
        metrics_.texel_reads += 2;

        KVPair e[4];
        for (int lane = 0; lane < 4; ++lane) {
            e[lane] = KVPair{kt.f(lane), vt.u(lane)};
        }
        const std::uint32_t base = g * 4;
        compare_exchange(e[0], e[1], bitonic_direction(base, 1));
        compare_exchange(e[2], e[3], bitonic_direction(base + 2, 1));

        for (int half = 0; half < 2; ++half) {
            const std::uint32_t pair = g * 2 + static_cast<std::uint32_t>(half);
            const std::uint32_t p = layout2.pair_position(pair);
            const int x = static_cast<int>(p & width_mask);
            const int y = static_cast<int>(p >> dims_.width_log);
            out.write(x, y, make_texel(e[half * 2], e[half * 2 + 1]));
            ++metrics_.texel_writes;
            if (options_.debug_checks) {
                shadow_[p] = pair;
            }
        }
    }
    current_layout_step_ = 2;
    next_pass_ = 1;
}

void SortRun::compare_pass(int stage, int step) {
    mem::Tracer* tracer = options_.tracer;
    if (tracer != nullptr) {
        tracer->begin_pass(mem::PassKind::compare);
    }
    const PlacementMap lin(dims_, step);
    const PlacementMap lout(dims_, step - 1);
    const std::uint32_t pair_dist = 1u << (step - 2);
    const auto width_mask = static_cast<std::uint32_t>(dims_.width) - 1;
    const auto row_bit = static_cast<std::uint32_t>(dims_.width);

    if (options_.debug_checks) {
        // Partner adjacency: the logical pair of every even-row texel must sit
        // exactly one row below its step partner.
        for (std::uint32_t p = 0; p < shadow_.size(); ++p) {
            if ((p & row_bit) != 0) {
                continue;
            }
            const std::uint32_t t_top = shadow_[p];
            const std::uint32_t t_bot = shadow_[p | row_bit];
            if (t_bot != (t_top ^ pair_dist) || lin.pair_position(t_top) != p) {
                throw Error(ErrorKind::layout_invariant,
                            "stage " + std::to_string(stage) + " step " + std::to_string(step) +
                                ": logical index " + std::to_string(t_top * 2) +
                                " lacks its vertical partner");
            }
            metrics_.debug_pairs_checked += 2; // two element pairs per texel pair
        }
    }

    const mem::Texture2D& in = ping();
    mem::Texture2D& out = pong();
    std::uint32_t work_item = 0;
    for (const auto& [x, u] : compare_order_) {
        if (tracer != nullptr) {
            tracer->set_work_item(work_item);
        }
        ++work_item;
        const mem::Texel& top = in.read(x, u * 2);
        const mem::Texel& bot = in.read(x, u * 2 + 1);
        metrics_.texel_reads += 2;
        metrics_.element_accesses += 4;

        const std::uint32_t p_top = (static_cast<std::uint32_t>(u * 2) << dims_.width_log) |
                                    static_cast<std::uint32_t>(x);
        const std::uint32_t t_top = lin.pair_position(p_top);
        const std::uint32_t t_bot = t_top ^ pair_dist;

        KVPair a0 = texel_pair(top, 0);
        KVPair a1 = texel_pair(top, 1);
        KVPair b0 = texel_pair(bot, 0);
        KVPair b1 = texel_pair(bot, 1);
        const Direction dir = bitonic_direction(t_top * 2, stage);
        compare_exchange(a0, b0, dir);
        compare_exchange(a1, b1, dir);

        const std::uint32_t q_top = lout.pair_position(t_top);
        const std::uint32_t q_bot = lout.pair_position(t_bot);
        out.write(static_cast<int>(q_top & width_mask), static_cast<int>(q_top >> dims_.width_log),
                  make_texel(a0, a1));
        out.write(static_cast<int>(q_bot & width_mask), static_cast<int>(q_bot >> dims_.width_log),
                  make_texel(b0, b1));
        metrics_.texel_writes += 2;
        if (options_.debug_checks) {
            shadow_[q_top] = t_top;
            shadow_[q_bot] = t_bot;
        }
    }
    cur_ = 1 - cur_;
    current_layout_step_ = step - 1;
    ++metrics_.passes;
}

void SortRun::fused_pass(int stage) {
    mem::Tracer* tracer = options_.tracer;
    if (tracer != nullptr) {
        tracer->begin_pass(mem::PassKind::fused);
    }
    const PlacementMap lin(dims_, 2);
    const bool final_stage = stage == dims_.stages;
    const auto width_mask = static_cast<std::uint32_t>(dims_.width) - 1;
    const auto row_bit = static_cast<std::uint32_t>(dims_.width);

    if (options_.debug_checks) {
        for (std::uint32_t p = 0; p < shadow_.size(); ++p) {
            if ((p & row_bit) != 0) {
                continue;
            }
            const std::uint32_t t_top = shadow_[p];
            const std::uint32_t t_bot = shadow_[p | row_bit];
            if (t_bot != (t_top ^ 1u) || lin.pair_position(t_top) != p) {
                throw Error(ErrorKind::layout_invariant,
                            "stage " + std::to_string(stage) + " fused pass: logical index " +
                                std::to_string(t_top * 2) + " lacks its vertical partner");
            }
            // Two vertical element pairs plus two intra-texel pairs.
            metrics_.debug_pairs_checked += 4;
        }
    }

    const mem::Texture2D& in = ping();
    mem::Texture2D& out = pong();
    const PlacementMap lout(dims_, final_stage ? 2 : stage + 1); // unused when final
    std::uint32_t work_item = 0;
    for (const auto& [x, u] : compare_order_) {
        if (tracer != nullptr) {
            tracer->set_work_item(work_item);
        }
        ++work_item;
        const mem::Texel& top = in.read(x, u * 2);
        const mem::Texel& bot = in.read(x, u * 2 + 1);
        metrics_.texel_reads += 2;
        metrics_.element_accesses += 4;

        const std::uint32_t p_top = (static_cast<std::uint32_t>(u * 2) << dims_.width_log) |
                                    static_cast<std::uint32_t>(x);
        const std::uint32_t t_top = lin.pair_position(p_top);
        const std::uint32_t t_bot = t_top ^ 1u;

        KVPair a0 = texel_pair(top, 0);
        KVPair a1 = texel_pair(top, 1);
        KVPair b0 = texel_pair(bot, 0);
        KVPair b1 = texel_pair(bot, 1);
        // All four elements share one direction bit for this stage.
        const Direction dir = bitonic_direction(t_top * 2, stage);
        // Step 2: vertical neighbors, then step 1: intra-texel.
        compare_exchange(a0, b0, dir);
        compare_exchange(a1, b1, dir);
        compare_exchange(a0, a1, dir);
        compare_exchange(b0, b1, dir);

        if (final_stage) {
            write_final(t_top, a0, a1, out);
            write_final(t_bot, b0, b1, out);
        } else {
            const std::uint32_t q_top = lout.pair_position(t_top);
            const std::uint32_t q_bot = lout.pair_position(t_bot);
            out.write(static_cast<int>(q_top & width_mask),
                      static_cast<int>(q_top >> dims_.width_log), make_texel(a0, a1));
            out.write(static_cast<int>(q_bot & width_mask),
                      static_cast<int>(q_bot >> dims_.width_log), make_texel(b0, b1));
            metrics_.texel_writes += 2;
            if (options_.debug_checks) {
                shadow_[q_top] = t_top;
                shadow_[q_bot] = t_bot;
            }
        }
    }
    cur_ = 1 - cur_;
    current_layout_step_ = final_stage ? -1 : stage + 1;
    ++metrics_.passes;
}

void SortRun::step_pass() {
    if (next_pass_ == 0) {
        throw Error(ErrorKind::precondition, "preprocess must run before compare passes");
    }
    if (finished()) {
        throw Error(ErrorKind::precondition, "schedule exhausted");
    }
    const SortPlan::Pass& pass = plan_.passes[next_pass_];
    if (pass.kind == mem::PassKind::compare) {
        compare_pass(pass.stage, pass.step);
    } else {
        fused_pass(pass.stage);
    }
    ++next_pass_;
}

void SortRun::execute() {
    if (next_pass_ == 0) {
        preprocess();
    }
    while (!finished()) {
        step_pass();
    }
}

std::vector<KVPair> SortRun::logical_state() const {
    std::vector<KVPair> state(dims_.n_logical);
    if (current_layout_step_ == 0) {
        for (std::uint32_t l = 0; l < dims_.n_logical; ++l) {
            const std::uint32_t t = l / 4;
            const int x = static_cast<int>(t % static_cast<std::uint32_t>(input_.keys.width()));
            const int y = static_cast<int>(t / static_cast<std::uint32_t>(input_.keys.width()));
            state[l] = KVPair{input_.keys.peek(x, y).f(static_cast<int>(l % 4)),
                              input_.values.peek(x, y).u(static_cast<int>(l % 4))};
        }
        return state;
    }
    const mem::Texture2D& tex = bufs_[cur_];
    if (current_layout_step_ < 0) {
        for (std::uint32_t l = 0; l < dims_.n_logical; ++l) {
            const TexelSlot s = blockwise_slot(l, dims_.width, dims_.height, final_block_edge_);
            state[l] = texel_pair(tex.peek(s.x, s.y), s.slot);
        }
        return state;
    }
    const PlacementMap map(dims_, current_layout_step_);
    for (std::uint32_t l = 0; l < dims_.n_logical; ++l) {
        const TexelSlot s = map.logical_to_physical(l);
        state[l] = texel_pair(tex.peek(s.x, s.y), s.slot);
    }
    return state;
}

SortResult SortRun::take_result() {
    if (!finished()) {
        throw Error(ErrorKind::precondition, "sort has not finished");
    }
    std::vector<KVPair> sorted = logical_state();
    strip_sentinels(sorted, metrics_.n_input);

    SortedView view;
    view.width = dims_.width;
    view.height = dims_.height;
    view.block_edge = final_block_edge_;
    view.count = metrics_.n_input;

    return SortResult{std::move(sorted), metrics_, std::move(bufs_[cur_]), view};
}

namespace {

SortResult empty_result(const SortOptions& options) {
    SortResult r{{}, {}, mem::Texture2D::alloc(1, 1, options.limits), {}};
    r.view = SortedView{1, 1, 1, 0};
    return r;
}

} // namespace

SortResult sort(std::span<const KVPair> pairs, const SortOptions& options) {
    if (pairs.empty()) {
        return empty_result(options);
    }
    const auto start = std::chrono::steady_clock::now();
    SortRun run(pairs, options);
    run.execute();
    SortResult result = run.take_result();
    result.metrics.wall_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    return result;
}

SortResult terasort_baseline(std::span<const KVPair> pairs, const SortOptions& options) {
    if (pairs.empty()) {
        return empty_result(options);
    }
    const auto start = std::chrono::steady_clock::now();

    SortMetrics metrics;
    metrics.n_input = static_cast<std::uint32_t>(pairs.size());
    KeyValueTextures input = pack_input_textures(pairs, options);
    const SortDims dims = SortDims::for_count(input.n_logical);
    metrics.n_logical = dims.n_logical;
    metrics.stages = dims.stages;

    mem::Tracer* tracer = options.tracer;
    mem::Texture2D tex = mem::Texture2D::alloc(dims.width, dims.height, options.limits);
    mem::Texture2D fb = mem::Texture2D::alloc(dims.width, dims.height, options.limits);
    tex.set_tracer(tracer);
    fb.set_tracer(tracer);

    const auto height = static_cast<std::uint32_t>(dims.height);
    // Fixed quad layout: elements run down columns, so a quad is a column
    // segment while it fits and a block of whole columns beyond that.
    const auto pair_coord = [&](std::uint32_t pair) {
        return std::pair<int, int>{static_cast<int>(pair / height), static_cast<int>(pair % height)};
    };

    // Packing pass: same input textures as ours, written in the fixed layout.
    if (tracer != nullptr) {
        tracer->begin_pass(mem::PassKind::preprocess);
    }
    {
        const auto order = morton_order(input.keys.width(), input.keys.height());
        std::uint32_t work_item = 0;
        for (const auto& [kx, ky] : order) {
            if (tracer != nullptr) {
                tracer->set_work_item(work_item);
            }
            ++work_item;
            const auto g = static_cast<std::uint32_t>(ky) *
                               static_cast<std::uint32_t>(input.keys.width()) +
                           static_cast<std::uint32_t>(kx);
            const mem::Texel& kt = input.keys.read(kx, ky);
            const mem::Texel& vt = input.values.read(kx, ky);
            metrics.texel_reads += 2;
            for (int half = 0; half < 2; ++half) {
                const std::uint32_t pair = g * 2 + static_cast<std::uint32_t>(half);
                if (pair >= dims.pair_count()) {
                    break;
                }
                const auto [x, y] = pair_coord(pair);
                tex.write(x, y, make_texel(KVPair{kt.f(half * 2), vt.u(half * 2)},
                                           KVPair{kt.f(half * 2 + 1), vt.u(half * 2 + 1)}));
                ++metrics.texel_writes;
            }
        }
    }

    const auto order = morton_order(dims.width, dims.height);
    const auto min_max = [](const KVPair& low, const KVPair& high) {
        return low.key <= high.key ? std::pair<KVPair, KVPair>{low, high}
                                   : std::pair<KVPair, KVPair>{high, low};
    };

    for (int i = 1; i <= dims.stages; ++i) {
        for (int j = i; j >= 1; --j) {
            const std::uint32_t quad = 1u << (j - 1);
            if (tracer != nullptr) {
                tracer->begin_pass(mem::PassKind::compare);
            }
            std::uint32_t work_item = 0;
            for (const auto& [x, y] : order) {
                if (tracer != nullptr) {
                    tracer->set_work_item(work_item);
                }
                ++work_item;
                const std::uint32_t pair =
                    static_cast<std::uint32_t>(x) * height + static_cast<std::uint32_t>(y);
                const mem::Texel& self = tex.read(x, y);
                ++metrics.texel_reads;
                KVPair result0;
                KVPair result1;
                if (quad == 1) {
                    // Partner shares the texel.
                    const std::uint32_t e0 = pair * 2;
                    const auto [low, high] = min_max(texel_pair(self, 0), texel_pair(self, 1));
                    const bool asc = bitonic_direction(e0, i) == Direction::ascending;
                    result0 = asc ? low : high;
                    result1 = asc ? high : low;
                } else {
                    const std::uint32_t pair_dist = quad / 2;
                    const std::uint32_t partner = pair ^ pair_dist;
                    const auto [px, py] = pair_coord(partner);
                    const mem::Texel& other = tex.read(px, py);
                    ++metrics.texel_reads;
                    const bool is_low = (pair & pair_dist) == 0;
                    for (int slot = 0; slot < 2; ++slot) {
                        const std::uint32_t e = pair * 2 + static_cast<std::uint32_t>(slot);
                        const KVPair own = texel_pair(self, slot);
                        const KVPair mate = texel_pair(other, slot);
                        const auto [low, high] = is_low ? min_max(own, mate) : min_max(mate, own);
                        const bool asc = bitonic_direction(e, i) == Direction::ascending;
                        const KVPair kept = (asc == is_low) ? low : high;
                        if (slot == 0) {
                            result0 = kept;
                        } else {
                            result1 = kept;
                        }
                    }
                }
                // Read own + partner per element, then one element write each.
                metrics.element_accesses += 6;
                fb.write(x, y, make_texel(result0, result1));
                ++metrics.texel_writes;
            }
            // Explicit copy from the frame buffer back into the texture.
            if (tracer != nullptr) {
                tracer->begin_pass(mem::PassKind::copy_back);
            }
            work_item = 0;
            for (const auto& [x, y] : order) {
                if (tracer != nullptr) {
                    tracer->set_work_item(work_item);
                }
                ++work_item;
                const mem::Texel& t = fb.read(x, y);
                ++metrics.texel_reads;
                tex.write(x, y, t);
                ++metrics.texel_writes;
                metrics.element_accesses += 4;
            }
            ++metrics.passes;
        }
    }

    std::vector<KVPair> sorted(dims.n_logical);
    for (std::uint32_t l = 0; l < dims.n_logical; ++l) {
        const auto [x, y] = pair_coord(l >> 1);
        sorted[l] = texel_pair(tex.peek(x, y), static_cast<int>(l & 1u));
    }
    strip_sentinels(sorted, metrics.n_input);

    metrics.wall_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();

    SortResult result{std::move(sorted), metrics, std::move(tex), {}};
    result.view = SortedView{dims.width, dims.height, 0, metrics.n_input};
    return result;
}

} // namespace texsplat::sort
