#pragma once

#include <cstdint>
#include <vector>

#include "texsplat/gs_pipeline.hpp"
#include "texsplat/io_ingest.hpp"
#include "texsplat/texsort.hpp"

namespace texsplat::synth {

/// Seed-stable generator (splitmix64); std distributions are avoided so the
/// same seed produces the same bytes on every platform.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next();
    double unit(); // [0, 1)
    float range(float lo, float hi);
    std::uint32_t below(std::uint32_t bound);

private:
    std::uint64_t state_;
};

gs::Camera default_camera(int width = 256, int height = 256);

/// Deterministic test scene: Gaussians spread over the image on a depth
/// ladder whose rungs land in distinct depth buckets, so no two Gaussians
/// sharing a tile share a quantized depth. Opacities and colors are mixed.
std::vector<gs::Gaussian3D> make_scene(std::uint32_t count, std::uint64_t seed, const gs::Camera& cam);

/// Seeded random key-value arrays for the sort benchmarks; values are the
/// input indices so key-value binding can be verified.
std::vector<sort::KVPair> random_pairs(std::uint32_t count, std::uint64_t seed);

/// Raw splats in the trained-checkpoint attribute form, for point-cloud file
/// round trips.
std::vector<io::RawSplat> make_raw_splats(std::uint32_t count, std::uint64_t seed);

/// Pointer-chasing style read trace: a random walk over a 2^grid_log square
/// texture whose axis-aligned strides follow a per-seed multinomial profile.
/// Fixed length across seeds keeps latency linear in the crossing counts.
std::vector<mem::AccessEvent> pointer_chase_trace(std::uint32_t length, std::uint64_t seed,
                                                  int grid_log = 8);

} // namespace texsplat::synth
