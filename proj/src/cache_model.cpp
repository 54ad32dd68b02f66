#include "texsplat/cache_model.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <string>

namespace texsplat::cache {

void CacheConfig::validate() const {
    bool known_edge = false;
    for (int b : kBlockSizes) {
        known_edge = known_edge || b == block_edge;
    }
    if (!known_edge) {
        throw Error(ErrorKind::invalid_config,
                    "block_edge must be one of {2,4,8,16,32}, got " + std::to_string(block_edge));
    }
    if (capacity_blocks < 1) {
        throw Error(ErrorKind::invalid_config,
                    "capacity_blocks must be >= 1, got " + std::to_string(capacity_blocks));
    }
}

LruCacheSim::LruCacheSim(const CacheConfig& config) : config_(config) {
    config_.validate();
    lru_.reserve(static_cast<std::size_t>(config_.capacity_blocks));
}

void LruCacheSim::begin_pass(std::uint32_t pass_id, mem::PassKind kind) {
    PassStats ps;
    ps.pass_id = pass_id;
    ps.kind = kind;
    stats_.per_pass.push_back(ps);
    pass_open_ = true;
    // A pass boundary invalidates residency: the texture a pass reads was
    // written by the previous one, and the read-only cache cannot hold its
    // lines, so the initial read of each block always misses.
    lru_.clear();
}

void LruCacheSim::on_access(const mem::AccessEvent& event) {
    if (event.kind != mem::AccessKind::read) {
        return;
    }
    const auto b = static_cast<std::uint32_t>(config_.block_edge);
    BlockKey key{event.texture_id, event.x / b, event.y / b};

    ++stats_.reads;
    bool hit = false;
    for (std::size_t i = 0; i < lru_.size(); ++i) {
        if (lru_[i] == key) {
            // Move to MRU position.
            lru_.erase(lru_.begin() + static_cast<std::ptrdiff_t>(i));
            lru_.insert(lru_.begin(), key);
            hit = true;
            break;
        }
    }
    if (!hit) {
        ++stats_.misses;
        if (lru_.size() == static_cast<std::size_t>(config_.capacity_blocks)) {
            lru_.pop_back();
        }
        lru_.insert(lru_.begin(), key);
    }
    if (pass_open_) {
        PassStats& ps = stats_.per_pass.back();
        ++ps.reads;
        if (!hit) {
            ++ps.misses;
        }
    }
}

void LruCacheSim::reset() {
    stats_ = CacheStats{};
    lru_.clear();
    pass_open_ = false;
}

CacheStats simulate(std::span<const mem::AccessEvent> trace, const CacheConfig& config) {
    LruCacheSim sim(config);
    std::uint32_t current_pass = 0;
    bool first = true;
    for (const mem::AccessEvent& event : trace) {
        if (first || event.pass_id != current_pass) {
            sim.begin_pass(event.pass_id, mem::PassKind::generic);
            current_pass = event.pass_id;
            first = false;
        }
        sim.on_access(event);
    }
    return sim.stats();
}

std::uint64_t min_misses(int width, int height, int block_edge) {
    if (block_edge < 1 || width % block_edge != 0 || height % block_edge != 0) {
        throw Error(ErrorKind::invalid_config,
                    "block edge " + std::to_string(block_edge) + " must divide texture " +
                        std::to_string(width) + "x" + std::to_string(height));
    }
    return static_cast<std::uint64_t>(width / block_edge) * static_cast<std::uint64_t>(height / block_edge);
}

std::array<double, 10> StrideHistogram::features() const {
    std::array<double, 10> f{};
    if (total_accesses == 0) {
        return f;
    }
    const double inv = 1.0 / static_cast<double>(total_accesses);
    for (std::size_t i = 0; i < kBlockSizes.size(); ++i) {
        f[i] = static_cast<double>(cross_horizontal[i]) * inv;
        f[kBlockSizes.size() + i] = static_cast<double>(cross_vertical[i]) * inv;
    }
    return f;
}

std::array<std::string, 11> feature_names() {
    std::array<std::string, 11> names;
    for (std::size_t i = 0; i < kBlockSizes.size(); ++i) {
        names[i] = "b" + std::to_string(kBlockSizes[i]) + "_h";
        names[kBlockSizes.size() + i] = "b" + std::to_string(kBlockSizes[i]) + "_v";
    }
    names[10] = "intercept";
    return names;
}

StrideHistogram cross_block_histogram(std::span<const mem::AccessEvent> trace) {
    StrideHistogram hist;
    hist.total_accesses = trace.size();

    // Strides are deltas between consecutive accesses of the same work item
    // within the same pass and texture.
    bool have_prev = false;
    mem::AccessEvent prev{};
    for (const mem::AccessEvent& e : trace) {
        if (have_prev && prev.pass_id == e.pass_id && prev.work_item == e.work_item &&
            prev.texture_id == e.texture_id) {
            for (std::size_t i = 0; i < kBlockSizes.size(); ++i) {
                const auto s = static_cast<std::uint32_t>(kBlockSizes[i]);
                if (prev.x / s != e.x / s) {
                    ++hist.cross_horizontal[i];
                }
                if (prev.y / s != e.y / s) {
                    ++hist.cross_vertical[i];
                }
            }
        }
        prev = e;
        have_prev = true;
    }
    return hist;
}

std::array<double, 11> LatencyModel::weights() const {
    std::array<double, 11> w{};
    for (std::size_t i = 0; i < 5; ++i) {
        w[i] = weight_horizontal[i];
        w[5 + i] = weight_vertical[i];
    }
    w[10] = intercept;
    return w;
}

namespace {

constexpr std::size_t kFeatureCount = 11; // 10 crossing features + intercept

/// Solves the normal equations A w = rhs by Gaussian elimination with
/// diagonal pivoting. Columns without a usable pivot are reported as
/// collinear.
std::array<double, kFeatureCount> solve_normal_equations(
    std::array<std::array<double, kFeatureCount>, kFeatureCount>& a,
    std::array<double, kFeatureCount>& rhs) {
    const auto names = feature_names();

    double scale = 0.0;
    for (std::size_t i = 0; i < kFeatureCount; ++i) {
        scale = std::max(scale, std::abs(a[i][i]));
    }
    const double tol = std::max(scale, 1.0) * 1e-12;

    std::array<std::size_t, kFeatureCount> order{};
    std::array<bool, kFeatureCount> used{};
    std::vector<std::string> collinear;

    for (std::size_t step = 0; step < kFeatureCount; ++step) {
        // Pick the unused column with the largest remaining diagonal.
        std::size_t pivot = kFeatureCount;
        double best = tol;
        for (std::size_t c = 0; c < kFeatureCount; ++c) {
            if (!used[c] && std::abs(a[c][c]) > best) {
                best = std::abs(a[c][c]);
                pivot = c;
            }
        }
        if (pivot == kFeatureCount) {
            for (std::size_t c = 0; c < kFeatureCount; ++c) {
                if (!used[c]) {
                    collinear.push_back(names[c]);
                }
            }
            break;
        }
        used[pivot] = true;
        order[step] = pivot;

        const double inv = 1.0 / a[pivot][pivot];
        for (std::size_t r = 0; r < kFeatureCount; ++r) {
            if (r == pivot || std::abs(a[r][pivot]) == 0.0) {
                continue;
            }
            const double factor = a[r][pivot] * inv;
            for (std::size_t c = 0; c < kFeatureCount; ++c) {
                a[r][c] -= factor * a[pivot][c];
            }
            a[r][pivot] = 0.0;
            rhs[r] -= factor * rhs[pivot];
        }
    }

    if (!collinear.empty()) {
        std::string msg = "degenerate fit, collinear features:";
        for (const std::string& n : collinear) {
            msg += " " + n;
        }
        throw Error(ErrorKind::degenerate_fit, msg);
    }

    std::array<double, kFeatureCount> w{};
    for (std::size_t c = 0; c < kFeatureCount; ++c) {
        w[c] = rhs[c] / a[c][c];
    }
    return w;
}

} // namespace

LatencyModel fit_latency_model(std::span<const FitSample> samples) {
    if (samples.size() < 2 * kFeatureCount) {
        throw Error(ErrorKind::input,
                    "fit requires at least " + std::to_string(2 * kFeatureCount) + " samples, got " +
                        std::to_string(samples.size()));
    }
    for (const FitSample& s : samples) {
        if (!(s.latency > 0.0)) {
            throw Error(ErrorKind::input, "latencies must be positive");
        }
    }

    std::array<std::array<double, kFeatureCount>, kFeatureCount> ata{};
    std::array<double, kFeatureCount> aty{};
    double mean_latency = 0.0;

    std::vector<std::array<double, kFeatureCount>> rows;
    rows.reserve(samples.size());
    for (const FitSample& s : samples) {
        std::array<double, kFeatureCount> row{};
        const auto f = s.histogram.features();
        std::copy(f.begin(), f.end(), row.begin());
        row[kFeatureCount - 1] = 1.0; // intercept
        rows.push_back(row);
        mean_latency += s.latency;
    }
    mean_latency /= static_cast<double>(samples.size());

    for (std::size_t k = 0; k < samples.size(); ++k) {
        const auto& row = rows[k];
        for (std::size_t i = 0; i < kFeatureCount; ++i) {
            for (std::size_t j = 0; j < kFeatureCount; ++j) {
                ata[i][j] += row[i] * row[j];
            }
            aty[i] += row[i] * samples[k].latency;
        }
    }

    double ss_tot = 0.0;
    for (const FitSample& s : samples) {
        const double d = s.latency - mean_latency;
        ss_tot += d * d;
    }
    if (ss_tot <= 0.0) {
        throw Error(ErrorKind::degenerate_fit, "degenerate fit: zero variance in latencies");
    }

    const auto w = solve_normal_equations(ata, aty);

    double ss_res = 0.0;
    for (std::size_t k = 0; k < samples.size(); ++k) {
        double pred = 0.0;
        for (std::size_t i = 0; i < kFeatureCount; ++i) {
            pred += rows[k][i] * w[i];
        }
        const double d = samples[k].latency - pred;
        ss_res += d * d;
    }

    LatencyModel model;
    for (std::size_t i = 0; i < 5; ++i) {
        model.weight_horizontal[i] = w[i];
        model.weight_vertical[i] = w[5 + i];
    }
    model.intercept = w[10];
    model.r_squared = 1.0 - ss_res / ss_tot;
    return model;
}

} // namespace texsplat::cache
