#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "texsplat/gs_pipeline.hpp"

namespace texsplat::io {

/// Per-point attributes as stored in trained point-cloud exports.
struct RawSplat {
    std::array<float, 3> position{};
    std::array<float, 3> normal{}; // present in exports, unused here
    std::array<float, 3> f_dc{};
    std::array<float, 45> f_rest{};
    float opacity_logit = 0.0f;
    std::array<float, 3> log_scale{};
    std::array<float, 4> rotation{1.0f, 0.0f, 0.0f, 0.0f}; // (w, x, y, z)
};

struct LoadStats {
    std::uint32_t loaded = 0;
    std::uint32_t rejected = 0; // non-PSD / non-finite covariance after reconstruction
};

/// Applies the trained-checkpoint activations: logistic opacity, exp scales,
/// normalized quaternion, covariance R S S^T R^T, SH reordered to the
/// coefficient-major 48-scalar layout.
gs::Gaussian3D splat_to_gaussian(const RawSplat& splat);

/// Loads a binary little-endian point cloud ("PLY"-structured). The text
/// variant is rejected; missing properties raise a schema error naming the
/// property; points whose covariance fails the PSD check are counted in
/// stats.rejected rather than silently dropped.
std::vector<gs::Gaussian3D> load_scene(const std::string& path, LoadStats* stats = nullptr);

/// Writes the same binary format load_scene reads (test and tooling support).
void save_scene(const std::string& path, std::span<const RawSplat> splats);

gs::Camera load_camera(const std::string& path);
void save_camera(const std::string& path, const gs::Camera& cam);

/// Binary P6 portable pixmap, 8 bits per channel, round-half-up quantization.
void write_image(const gs::FrameBuffer& fb, const std::string& path);

/// CSV with a fixed header row.
void write_metrics(const std::string& path, std::span<const std::string> header,
                   std::span<const std::vector<std::string>> rows);

} // namespace texsplat::io
