#pragma once

// Independent reference implementations the tests compare against. These stay
// deliberately naive (enumeration, plain arrays) and must not share code with
// the library paths they check.

#include <algorithm>
#include <cstdint>
#include <vector>

#include "texsplat/texsort.hpp"
#include "texsplat/texture_memory.hpp"

namespace oracles {

/// Enumerates all power-of-two dimension pairs and applies the stated
/// minimality and tie rules directly.
inline texsplat::mem::Dimensions choose_dimensions(std::int64_t n) {
    texsplat::mem::Dimensions best{0, 0};
    std::int64_t best_product = -1;
    int best_gap = 0;
    for (int wlog = 0; wlog <= 25; ++wlog) {
        for (int hlog = 0; hlog <= 25; ++hlog) {
            const std::int64_t product = std::int64_t{1} << (wlog + hlog);
            if (product < n) {
                continue;
            }
            const int gap = std::abs(wlog - hlog);
            const bool better =
                best_product < 0 || product < best_product ||
                (product == best_product && gap < best_gap) ||
                (product == best_product && gap == best_gap && (1 << wlog) > best.width);
            if (better) {
                best = {1 << wlog, 1 << hlog};
                best_product = product;
                best_gap = gap;
            }
        }
    }
    return best;
}

/// Plain-array bitonic network, driven stage/step at a time.
struct BitonicNetwork {
    std::vector<texsplat::sort::KVPair> data;

    explicit BitonicNetwork(std::vector<texsplat::sort::KVPair> initial) : data(std::move(initial)) {}

    void run_step(int stage, int step) {
        const std::uint32_t dist = 1u << (step - 1);
        for (std::uint32_t l = 0; l < data.size(); ++l) {
            if ((l & dist) != 0) {
                continue;
            }
            const bool ascending = ((l >> stage) & 1u) == 0;
            auto& a = data[l];
            auto& b = data[l ^ dist];
            const bool out_of_order = ascending ? a.key > b.key : a.key < b.key;
            if (out_of_order) {
                std::swap(a, b);
            }
        }
    }

    void run_stage(int stage) {
        for (int j = stage; j >= 1; --j) {
            run_step(stage, j);
        }
    }

    void run_full() {
        int stages = 0;
        while ((std::size_t{1} << stages) < data.size()) {
            ++stages;
        }
        for (int i = 1; i <= stages; ++i) {
            run_stage(i);
        }
    }
};

/// Comparison-sort oracle; values follow their keys (stable).
inline std::vector<texsplat::sort::KVPair> sorted_by_key(std::vector<texsplat::sort::KVPair> pairs) {
    std::stable_sort(pairs.begin(), pairs.end(),
                     [](const auto& a, const auto& b) { return a.key < b.key; });
    return pairs;
}

/// Explicit four-step layout construction (slice, concat, segment swap,
/// reshape) executed as vector permutations over texel-pair ids. Returns
/// content[position] = texel-pair id. The segment size is the partner texel
/// distance while it stays below the row width; past that the slice re-bases
/// distances and the segment halves; at exactly the row width the natural
/// layout is already partner-adjacent.
inline std::vector<std::uint32_t> layout_permutation(int width, int height, int step) {
    const auto pair_count = static_cast<std::uint32_t>(width) * static_cast<std::uint32_t>(height);
    std::vector<std::uint32_t> natural(pair_count);
    for (std::uint32_t p = 0; p < pair_count; ++p) {
        natural[p] = p;
    }
    const int kappa = std::max(step, 2) - 2;
    int wlog = 0;
    while ((1 << wlog) < width) {
        ++wlog;
    }
    if (kappa == wlog) {
        return natural;
    }
    const std::uint32_t k = kappa < wlog ? (1u << kappa) : (1u << (kappa - 1));

    // Slice + concat: even rows into the first group, odd rows into the second.
    const std::uint32_t half = pair_count / 2;
    std::vector<std::uint32_t> group_a(half);
    std::vector<std::uint32_t> group_b(half);
    for (std::uint32_t u = 0; u < half; ++u) {
        const std::uint32_t row = 2 * (u / static_cast<std::uint32_t>(width));
        const std::uint32_t col = u % static_cast<std::uint32_t>(width);
        group_a[u] = natural[row * static_cast<std::uint32_t>(width) + col];
        group_b[u] = natural[(row + 1) * static_cast<std::uint32_t>(width) + col];
    }

    // Segment swap: odd segments of the first group exchange with the
    // preceding even segments of the second group.
    for (std::uint32_t seg = 1; seg * k < half; seg += 2) {
        for (std::uint32_t o = 0; o < k; ++o) {
            std::swap(group_a[seg * k + o], group_b[(seg - 1) * k + o]);
        }
    }

    // Reshape: interleave the groups back as even/odd rows.
    std::vector<std::uint32_t> out(pair_count);
    for (std::uint32_t u = 0; u < half; ++u) {
        const std::uint32_t row = 2 * (u / static_cast<std::uint32_t>(width));
        const std::uint32_t col = u % static_cast<std::uint32_t>(width);
        out[row * static_cast<std::uint32_t>(width) + col] = group_a[u];
        out[(row + 1) * static_cast<std::uint32_t>(width) + col] = group_b[u];
    }
    return out;
}

} // namespace oracles
