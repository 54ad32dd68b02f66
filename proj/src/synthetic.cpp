#include "texsplat/synthetic.hpp"

#include <algorithm>
#include <cmath>

namespace texsplat::synth {

std::uint64_t Rng::next() {
    state_ += 0x9E3779B97F4A7C15ull;
    std::uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

double Rng::unit() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

float Rng::range(float lo, float hi) { return lo + static_cast<float>(unit()) * (hi - lo); }

std::uint32_t Rng::below(std::uint32_t bound) {
    return bound == 0 ? 0 : static_cast<std::uint32_t>(next() % bound);
}

gs::Camera default_camera(int width, int height) {
    gs::Camera cam;
    cam.fx = 300.0f;
    cam.fy = 300.0f;
    cam.width = width;
    cam.height = height;
    cam.near_plane = 0.2f;
    cam.far_plane = 100.0f;
    return cam;
}

namespace {

/// Anisotropic covariance with a target on-screen footprint of sigma_px
/// pixels at depth z.
std::array<float, 6> random_cov(Rng& rng, float sigma_world) {
    const float sx = sigma_world * rng.range(0.7f, 1.3f);
    const float sy = sigma_world * rng.range(0.7f, 1.3f);
    const float sz = sigma_world * rng.range(0.7f, 1.3f);

    // Random unit quaternion.
    float q[4];
    float norm = 0.0f;
    for (float& v : q) {
        v = rng.range(-1.0f, 1.0f);
        norm += v * v;
    }
    norm = std::sqrt(std::max(norm, 1e-6f));
    for (float& v : q) {
        v /= norm;
    }
    const float w = q[0], x = q[1], y = q[2], z = q[3];
    const float r[3][3] = {{1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)},
                           {2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)},
                           {2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)}};
    const float s[3] = {sx, sy, sz};
    float m[3][3];
    for (int i = 0; i < 3; ++i) {
        for (int j = 0; j < 3; ++j) {
            m[i][j] = r[i][j] * s[j];
        }
    }
    auto dot = [&](int a, int b) {
        return m[a][0] * m[b][0] + m[a][1] * m[b][1] + m[a][2] * m[b][2];
    };
    return {dot(0, 0), dot(0, 1), dot(0, 2), dot(1, 1), dot(1, 2), dot(2, 2)};
}

} // namespace

std::vector<gs::Gaussian3D> make_scene(std::uint32_t count, std::uint64_t seed, const gs::Camera& cam) {
    Rng rng(seed);
    std::vector<gs::Gaussian3D> out;
    if (count == 0) {
        return out;
    }
    out.reserve(count);

    // Depth ladder: rung r sits in its own depth bucket after the 1% bounds
    // expansion (ladder step exceeds one bucket width). Rungs are assigned so
    // Gaussians close enough to share a tile never share a rung: for small
    // scenes every rung is unique; for dense grids the assignment
    // (gx + 41*gy) mod 1000 keeps any window of up to 23x23 grid cells
    // rung-distinct, and footprints are capped so tile-sharing neighbors stay
    // inside that window.
    const std::uint32_t rungs = std::min<std::uint32_t>(std::max<std::uint32_t>(count, 1), 1000);
    const float z_near = 2.0f;
    const float z_far = 8.0f;

    const auto grid = static_cast<std::uint32_t>(std::ceil(std::sqrt(static_cast<double>(count))));
    const auto rows = (count + grid - 1) / grid;
    const bool dense = count > 1000;

    // Keep the projected footprint a few pixels wide so each Gaussian touches
    // a handful of tiles.
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::uint32_t gx = i % grid;
        const std::uint32_t gy = i / grid;
        const std::uint32_t rung = dense ? (gx + 41 * gy) % rungs : i;
        const float depth = z_near + (static_cast<float>(rung) + 0.5f) * (z_far - z_near) /
                                         static_cast<float>(rungs);
        const float u = (static_cast<float>(gx) + 0.5f + rng.range(-0.25f, 0.25f)) /
                        static_cast<float>(grid);
        const float v = (static_cast<float>(gy) + 0.5f + rng.range(-0.25f, 0.25f)) /
                        static_cast<float>(std::max<std::uint32_t>(rows, 1));

        // Target pixel, pulled slightly inside the frame.
        const float px = (0.06f + 0.88f * u) * static_cast<float>(cam.width);
        const float py = (0.06f + 0.88f * v) * static_cast<float>(cam.height);

        gs::Gaussian3D g;
        g.mean[0] = (px - 0.5f * static_cast<float>(cam.width) + 0.5f) * depth / cam.fx;
        g.mean[1] = (py - 0.5f * static_cast<float>(cam.height) + 0.5f) * depth / cam.fy;
        g.mean[2] = depth;

        const float sigma_px = dense ? rng.range(2.0f, 3.2f) : rng.range(2.0f, 6.0f);
        g.cov3d = random_cov(rng, sigma_px * depth / cam.fx);
        g.opacity = rng.range(0.05f, 0.95f);

        for (int c = 0; c < 3; ++c) {
            g.sh[static_cast<std::size_t>(c)] = rng.range(-1.2f, 1.2f);
        }
        for (int k = 3; k < 48; ++k) {
            g.sh[static_cast<std::size_t>(k)] = rng.range(-0.2f, 0.2f);
        }
        out.push_back(g);
    }
    return out;
}

std::vector<sort::KVPair> random_pairs(std::uint32_t count, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<sort::KVPair> pairs;
    pairs.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        sort::KVPair p;
        if (i > 0 && rng.unit() < 0.05) {
            p.key = pairs[rng.below(i)].key; // occasional duplicate keys
        } else {
            p.key = rng.range(-1.0e6f, 1.0e6f);
        }
        p.value = i;
        pairs.push_back(p);
    }
    return pairs;
}

std::vector<mem::AccessEvent> pointer_chase_trace(std::uint32_t length, std::uint64_t seed,
                                                  int grid_log) {
    Rng rng(seed);
    const std::uint32_t mask = (1u << grid_log) - 1;

    // Candidate strides, axis-aligned; each seed draws its own multinomial
    // weights so the cross-block mix varies between runs.
    static constexpr int kSteps[] = {1, 2, 3, 5, 9, 13, 17, 21, 29, 33, 47};
    struct Stride {
        int dx, dy;
    };
    std::vector<Stride> strides;
    for (int s : kSteps) {
        strides.push_back({s, 0});
        strides.push_back({-s, 0});
        strides.push_back({0, s});
        strides.push_back({0, -s});
    }
    std::vector<double> weights(strides.size());
    double total_weight = 0.0;
    for (double& w : weights) {
        w = rng.unit() * rng.unit(); // skewed so profiles differ strongly
        total_weight += w;
    }

    std::vector<mem::AccessEvent> trace;
    trace.reserve(length);
    std::uint32_t x = rng.below(mask + 1);
    std::uint32_t y = rng.below(mask + 1);
    for (std::uint32_t i = 0; i < length; ++i) {
        mem::AccessEvent e;
        e.texture_id = 1;
        e.kind = mem::AccessKind::read;
        e.x = static_cast<std::uint16_t>(x);
        e.y = static_cast<std::uint16_t>(y);
        e.pass_id = 0;
        e.work_item = 0;
        trace.push_back(e);

        double pick = rng.unit() * total_weight;
        std::size_t chosen = 0;
        for (std::size_t s = 0; s < weights.size(); ++s) {
            pick -= weights[s];
            if (pick <= 0.0) {
                chosen = s;
                break;
            }
        }
        x = (x + static_cast<std::uint32_t>(strides[chosen].dx)) & mask;
        y = (y + static_cast<std::uint32_t>(strides[chosen].dy)) & mask;
    }
    return trace;
}

std::vector<io::RawSplat> make_raw_splats(std::uint32_t count, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<io::RawSplat> out;
    out.reserve(count);
    const auto grid = static_cast<std::uint32_t>(std::ceil(std::sqrt(static_cast<double>(count))));
    const std::uint32_t rungs = std::min<std::uint32_t>(std::max<std::uint32_t>(count, 1), 1000);
    for (std::uint32_t i = 0; i < count; ++i) {
        io::RawSplat s;
        // Depth ladder (as in make_scene) so quantized depths stay distinct
        // within any tile.
        const float depth =
            2.0f + (static_cast<float>(i % rungs) + 0.5f) * 6.0f / static_cast<float>(rungs);
        const float u = (static_cast<float>(i % grid) + 0.5f) / static_cast<float>(grid);
        const float v = (static_cast<float>(i / grid) + 0.5f) / static_cast<float>(grid);
        s.position = {(u - 0.5f) * 0.6f * depth, (v - 0.5f) * 0.6f * depth, depth};
        for (auto& f : s.f_dc) {
            f = rng.range(-1.2f, 1.2f);
        }
        for (auto& f : s.f_rest) {
            f = rng.range(-0.2f, 0.2f);
        }
        s.opacity_logit = rng.range(-2.5f, 2.5f);
        for (auto& f : s.log_scale) {
            f = rng.range(-4.5f, -3.0f);
        }
        for (auto& f : s.rotation) {
            f = rng.range(-1.0f, 1.0f);
        }
        out.push_back(s);
    }
    return out;
}

} // namespace texsplat::synth
