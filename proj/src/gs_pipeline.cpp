#include "texsplat/gs_pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <string>
#include <utility>

namespace texsplat::gs {

namespace {

// Spherical-harmonic basis constants, degree 3.
constexpr float kSH0 = 0.28209479177387814f;
constexpr float kSH1 = 0.4886025119029199f;
constexpr float kSH2[5] = {1.0925484305920792f, -1.0925484305920792f, 0.31539156525252005f,
                           -1.0925484305920792f, 0.5462742152960396f};
constexpr float kSH3[7] = {-0.5900435899266435f, 2.890611442640554f, -0.4570457994644658f,
                           0.3731763325901154f, -0.4570457994644658f, 1.445305721320277f,
                           -0.5900435899266435f};

float clamp01(float v) { return std::min(1.0f, std::max(0.0f, v)); }

std::array<float, 3> eval_sh(const std::array<float, 48>& sh, const std::array<float, 3>& dir) {
    const float x = dir[0];
    const float y = dir[1];
    const float z = dir[2];
    const float xx = x * x, yy = y * y, zz = z * z;
    const float xy = x * y, yz = y * z, xz = x * z;

    std::array<float, 3> rgb{};
    for (int c = 0; c < 3; ++c) {
        auto coef = [&](int k) { return sh[static_cast<std::size_t>(k * 3 + c)]; };
        float v = kSH0 * coef(0);
        v = v - kSH1 * y * coef(1) + kSH1 * z * coef(2) - kSH1 * x * coef(3);
        v = v + kSH2[0] * xy * coef(4) + kSH2[1] * yz * coef(5) +
            kSH2[2] * (2.0f * zz - xx - yy) * coef(6) + kSH2[3] * xz * coef(7) +
            kSH2[4] * (xx - yy) * coef(8);
        v = v + kSH3[0] * y * (3.0f * xx - yy) * coef(9) + kSH3[1] * xy * z * coef(10) +
            kSH3[2] * y * (4.0f * zz - xx - yy) * coef(11) +
            kSH3[3] * z * (2.0f * zz - 3.0f * xx - 3.0f * yy) * coef(12) +
            kSH3[4] * x * (4.0f * zz - xx - yy) * coef(13) + kSH3[5] * z * (xx - yy) * coef(14) +
            kSH3[6] * x * (xx - 3.0f * yy) * coef(15);
        rgb[static_cast<std::size_t>(c)] = clamp01(v + 0.5f);
    }
    return rgb;
}

struct BlendState {
    float transmittance = 1.0f;
    float c0 = 0.0f, c1 = 0.0f, c2 = 0.0f;
    bool done = false;
};

/// One front-to-back compositing step. A Gaussian that would drop the
/// transmittance below 1e-4 terminates the pixel without being composited.
inline void blend_step(BlendState& st, float px, float py, float gx, float gy,
                       const std::array<float, 4>& conic_opacity, const std::array<float, 3>& rgb) {
    if (st.done) {
        return;
    }
    const float dx = px - gx;
    const float dy = py - gy;
    const float power =
        -0.5f * (conic_opacity[0] * dx * dx + conic_opacity[2] * dy * dy) - conic_opacity[1] * dx * dy;
    if (power > 0.0f) {
        return;
    }
    const float alpha = std::min(0.99f, conic_opacity[3] * std::exp(power));
    if (alpha < 1.0f / 255.0f) {
        return;
    }
    const float test_t = st.transmittance * (1.0f - alpha);
    if (test_t < 1e-4f) {
        st.done = true;
        return;
    }
    const float w = alpha * st.transmittance;
    st.c0 += rgb[0] * w;
    st.c1 += rgb[1] * w;
    st.c2 += rgb[2] * w;
    st.transmittance = test_t;
}

mem::Dimensions base_dims(std::uint32_t count) {
    return mem::choose_dimensions(static_cast<std::int64_t>(std::max<std::uint32_t>(count, 1)));
}

} // namespace

bool covariance_is_psd(const std::array<float, 6>& cov, float tol) {
    const double a = cov[0], b = cov[1], c = cov[2];
    const double d = cov[3], e = cov[4], f = cov[5];
    double scale = 1.0;
    for (float v : cov) {
        scale = std::max(scale, std::abs(static_cast<double>(v)));
    }
    const double t1 = tol * scale;
    if (a < -t1 || d < -t1 || f < -t1) {
        return false;
    }
    if (a * d - b * b < -t1 * scale) {
        return false;
    }
    const double det3 = a * (d * f - e * e) - b * (b * f - e * c) + c * (b * e - d * c);
    return det3 >= -t1 * scale * scale;
}

void Camera::validate() const {
    if (fx <= 0.0f || fy <= 0.0f) {
        throw Error(ErrorKind::input, "camera focal lengths must be positive");
    }
    if (width < 1 || height < 1) {
        throw Error(ErrorKind::input, "camera image dimensions must be >= 1");
    }
    if (!(near_plane < far_plane)) {
        throw Error(ErrorKind::input, "camera near plane must be below the far plane");
    }
}

std::array<float, 3> Camera::position() const {
    const auto& m = world_to_cam;
    const float t0 = m[3], t1 = m[7], t2 = m[11];
    // center = -R^T * t
    return {-(m[0] * t0 + m[4] * t1 + m[8] * t2), -(m[1] * t0 + m[5] * t1 + m[9] * t2),
            -(m[2] * t0 + m[6] * t1 + m[10] * t2)};
}

TileRect tile_rect(float x, float y, float radius, int tiles_x, int tiles_y) {
    TileRect r;
    r.x0 = std::min(tiles_x, std::max(0, static_cast<int>((x - radius) / kTileSize)));
    r.y0 = std::min(tiles_y, std::max(0, static_cast<int>((y - radius) / kTileSize)));
    r.x1 = std::min(tiles_x, std::max(0, static_cast<int>((x + radius + kTileSize - 1) / kTileSize)));
    r.y1 = std::min(tiles_y, std::max(0, static_cast<int>((y + radius + kTileSize - 1) / kTileSize)));
    if (r.x1 < r.x0) {
        r.x1 = r.x0;
    }
    if (r.y1 < r.y0) {
        r.y1 = r.y0;
    }
    return r;
}

std::optional<ProjectedGaussian> project_gaussian(const Gaussian3D& g, const Camera& cam,
                                                  CullCounts* culls) {
    const auto& m = cam.world_to_cam;
    const float wx = g.mean[0], wy = g.mean[1], wz = g.mean[2];
    const float tx = m[0] * wx + m[1] * wy + m[2] * wz + m[3];
    const float ty = m[4] * wx + m[5] * wy + m[6] * wz + m[7];
    const float tz = m[8] * wx + m[9] * wy + m[10] * wz + m[11];

    if (!(tz > cam.near_plane)) {
        if (culls != nullptr) {
            ++culls->behind;
        }
        return std::nullopt;
    }
    const float txtz = tx / tz;
    const float tytz = ty / tz;
    const float lim_x = 1.3f * (static_cast<float>(cam.width) / (2.0f * cam.fx));
    const float lim_y = 1.3f * (static_cast<float>(cam.height) / (2.0f * cam.fy));
    if (std::abs(txtz) > lim_x || std::abs(tytz) > lim_y) {
        if (culls != nullptr) {
            ++culls->guard;
        }
        return std::nullopt;
    }

    // 2D covariance: top-left of J * W * Sigma * W^T * J^T plus the low-pass.
    const float j00 = cam.fx / tz;
    const float j02 = -cam.fx * txtz / tz;
    const float j11 = cam.fy / tz;
    const float j12 = -cam.fy * tytz / tz;

    const float w00 = m[0], w01 = m[1], w02 = m[2];
    const float w10 = m[4], w11 = m[5], w12 = m[6];
    const float w20 = m[8], w21 = m[9], w22 = m[10];

    // T = J * W, two rows of three.
    const float t00 = j00 * w00 + j02 * w20;
    const float t01 = j00 * w01 + j02 * w21;
    const float t02 = j00 * w02 + j02 * w22;
    const float t10 = j11 * w10 + j12 * w20;
    const float t11 = j11 * w11 + j12 * w21;
    const float t12 = j11 * w12 + j12 * w22;

    const float v00 = g.cov3d[0], v01 = g.cov3d[1], v02 = g.cov3d[2];
    const float v11 = g.cov3d[3], v12 = g.cov3d[4], v22 = g.cov3d[5];

    const float r00 = t00 * v00 + t01 * v01 + t02 * v02;
    const float r01 = t00 * v01 + t01 * v11 + t02 * v12;
    const float r02 = t00 * v02 + t01 * v12 + t02 * v22;
    const float r10 = t10 * v00 + t11 * v01 + t12 * v02;
    const float r11 = t10 * v01 + t11 * v11 + t12 * v12;
    const float r12 = t10 * v02 + t11 * v12 + t12 * v22;

    float ca = r00 * t00 + r01 * t01 + r02 * t02;
    float cb = r00 * t10 + r01 * t11 + r02 * t12;
    float cc = r10 * t10 + r11 * t11 + r12 * t12;
    ca += 0.3f;
    cc += 0.3f;

    const float det = ca * cc - cb * cb;
    if (!(det > 0.0f)) {
        if (culls != nullptr) {
            ++culls->singular;
        }
        return std::nullopt;
    }

    ProjectedGaussian out;
    out.depth = tz;
    out.conic_opacity = {cc / det, -cb / det, ca / det, g.opacity};
    const float mid = 0.5f * (ca + cc);
    const float lambda_max = mid + std::sqrt(std::max(0.0f, mid * mid - det));
    out.radius = std::ceil(3.0f * std::sqrt(lambda_max));
    out.x = cam.fx * txtz + 0.5f * static_cast<float>(cam.width) - 0.5f;
    out.y = cam.fy * tytz + 0.5f * static_cast<float>(cam.height) - 0.5f;

    const std::array<float, 3> cam_pos = cam.position();
    std::array<float, 3> dir{wx - cam_pos[0], wy - cam_pos[1], wz - cam_pos[2]};
    const float len = std::sqrt(dir[0] * dir[0] + dir[1] * dir[1] + dir[2] * dir[2]);
    if (len > 0.0f) {
        dir = {dir[0] / len, dir[1] / len, dir[2] / len};
    }
    out.rgb = eval_sh(g.sh, dir);

    out.rect = tile_rect(out.x, out.y, out.radius, cam.tiles_x(), cam.tiles_y());
    out.tiles_touched = out.rect.count();
    if (out.tiles_touched == 0) {
        if (culls != nullptr) {
            ++culls->offscreen;
        }
        return std::nullopt;
    }
    return out;
}

FrameBuffer FrameBuffer::filled(int width, int height, const std::array<float, 3>& color) {
    FrameBuffer fb;
    fb.width = width;
    fb.height = height;
    fb.data.resize(static_cast<std::size_t>(width) * static_cast<std::size_t>(height) * 3);
    for (std::size_t i = 0; i < fb.data.size(); i += 3) {
        fb.data[i] = color[0];
        fb.data[i + 1] = color[1];
        fb.data[i + 2] = color[2];
    }
    return fb;
}

float max_channel_diff(const FrameBuffer& a, const FrameBuffer& b) {
    if (a.width != b.width || a.height != b.height) {
        throw Error(ErrorKind::input, "frame buffers differ in size");
    }
    float worst = 0.0f;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        worst = std::max(worst, std::abs(a.data[i] - b.data[i]));
    }
    return worst;
}

// ---------------------------------------------------------------------------
// Input packing

PackedInputs pack_inputs(std::span<const Gaussian3D> gaussians, const mem::TextureLimits& limits,
                         mem::Tracer* tracer) {
    if (gaussians.empty()) {
        throw Error(ErrorKind::input, "pack_inputs requires at least one Gaussian");
    }
    const auto n = static_cast<std::uint32_t>(gaussians.size());
    const auto d = base_dims(n);

    PackedInputs p{mem::Texture2D::alloc(d.width, d.height, limits),
                   mem::Texture2D::alloc(d.width * 2, d.height, limits),
                   mem::Texture2D::alloc(d.width * 3, d.height * 4, limits),
                   d.width, d.height, n};
    p.group1.set_tracer(tracer);
    p.group2.set_tracer(tracer);
    p.group3.set_tracer(tracer);

    for (std::uint32_t g = 0; g < n; ++g) {
        const Gaussian3D& in = gaussians[g];
        const int cx = static_cast<int>(g % static_cast<std::uint32_t>(d.width));
        const int cy = static_cast<int>(g / static_cast<std::uint32_t>(d.width));

        mem::Texel g1;
        g1.set_f(0, in.mean[0]);
        g1.set_f(1, in.mean[1]);
        g1.set_f(2, in.mean[2]);
        g1.set_f(3, in.opacity);
        p.group1.poke(cx, cy, g1);

        mem::Texel g2a;
        mem::Texel g2b;
        for (int i = 0; i < 4; ++i) {
            g2a.set_f(i, in.cov3d[static_cast<std::size_t>(i)]);
        }
        g2b.set_f(0, in.cov3d[4]);
        g2b.set_f(1, in.cov3d[5]);
        p.group2.poke(cx * 2, cy, g2a);
        p.group2.poke(cx * 2 + 1, cy, g2b);

        for (int by = 0; by < 4; ++by) {
            for (int bx = 0; bx < 3; ++bx) {
                mem::Texel t;
                for (int lane = 0; lane < 4; ++lane) {
                    t.set_f(lane, in.sh[static_cast<std::size_t>((by * 3 + bx) * 4 + lane)]);
                }
                p.group3.poke(cx * 3 + bx, cy * 4 + by, t);
            }
        }
    }
    return p;
}

Gaussian3D unpack_input(const PackedInputs& packed, std::uint32_t index) {
    if (index >= packed.count) {
        throw Error(ErrorKind::input, "unpack_input index out of range");
    }
    const int cx = static_cast<int>(index % static_cast<std::uint32_t>(packed.base_width));
    const int cy = static_cast<int>(index / static_cast<std::uint32_t>(packed.base_width));

    Gaussian3D g;
    const mem::Texel& g1 = packed.group1.peek(cx, cy);
    g.mean = {g1.f(0), g1.f(1), g1.f(2)};
    g.opacity = g1.f(3);

    const mem::Texel& g2a = packed.group2.peek(cx * 2, cy);
    const mem::Texel& g2b = packed.group2.peek(cx * 2 + 1, cy);
    g.cov3d = {g2a.f(0), g2a.f(1), g2a.f(2), g2a.f(3), g2b.f(0), g2b.f(1)};

    for (int by = 0; by < 4; ++by) {
        for (int bx = 0; bx < 3; ++bx) {
            const mem::Texel& t = packed.group3.peek(cx * 3 + bx, cy * 4 + by);
            for (int lane = 0; lane < 4; ++lane) {
                g.sh[static_cast<std::size_t>((by * 3 + bx) * 4 + lane)] = t.f(lane);
            }
        }
    }
    return g;
}

namespace {
constexpr int kFlatInputStride = 58;
constexpr int kFlatOutputStride = 12; // 11 scalars plus one pad lane
} // namespace

FlatInputs flatten_inputs(std::span<const Gaussian3D> gaussians, const mem::TextureLimits& limits,
                          mem::Tracer* tracer) {
    if (gaussians.empty()) {
        throw Error(ErrorKind::input, "flatten_inputs requires at least one Gaussian");
    }
    const auto n = static_cast<std::uint32_t>(gaussians.size());
    const std::int64_t scalars = static_cast<std::int64_t>(n) * kFlatInputStride;
    const auto d = mem::choose_dimensions((scalars + 3) / 4);

    FlatInputs flat{mem::Texture2D::alloc(d.width, d.height, limits), n};
    flat.scalars.set_tracer(tracer);

    std::int64_t idx = 0;
    mem::Texel staging;
    for (std::uint32_t g = 0; g < n; ++g) {
        const Gaussian3D& in = gaussians[g];
        float values[kFlatInputStride];
        values[0] = in.mean[0];
        values[1] = in.mean[1];
        values[2] = in.mean[2];
        values[3] = in.opacity;
        for (int i = 0; i < 6; ++i) {
            values[4 + i] = in.cov3d[static_cast<std::size_t>(i)];
        }
        for (int i = 0; i < 48; ++i) {
            values[10 + i] = in.sh[static_cast<std::size_t>(i)];
        }
        for (float v : values) {
            staging.set_f(static_cast<int>(idx % 4), v);
            if (idx % 4 == 3) {
                const std::int64_t t = idx / 4;
                flat.scalars.poke(static_cast<int>(t % d.width), static_cast<int>(t / d.width), staging);
                staging = mem::Texel{};
            }
            ++idx;
        }
    }
    if (idx % 4 != 0) {
        const std::int64_t t = idx / 4;
        flat.scalars.poke(static_cast<int>(t % d.width), static_cast<int>(t / d.width), staging);
    }
    return flat;
}

// ---------------------------------------------------------------------------
// Preprocess

namespace {

Gaussian3D read_packed_gaussian(const PackedInputs& in, std::uint32_t g, StageIo& io) {
    const int cx = static_cast<int>(g % static_cast<std::uint32_t>(in.base_width));
    const int cy = static_cast<int>(g / static_cast<std::uint32_t>(in.base_width));

    Gaussian3D out;
    const mem::Texel& g1 = in.group1.read(cx, cy);
    out.mean = {g1.f(0), g1.f(1), g1.f(2)};
    out.opacity = g1.f(3);
    const mem::Texel& g2a = in.group2.read(cx * 2, cy);
    const mem::Texel& g2b = in.group2.read(cx * 2 + 1, cy);
    out.cov3d = {g2a.f(0), g2a.f(1), g2a.f(2), g2a.f(3), g2b.f(0), g2b.f(1)};
    io.texel_reads += 3;
    for (int by = 0; by < 4; ++by) {
        for (int bx = 0; bx < 3; ++bx) {
            const mem::Texel& t = in.group3.read(cx * 3 + bx, cy * 4 + by);
            ++io.texel_reads;
            for (int lane = 0; lane < 4; ++lane) {
                out.sh[static_cast<std::size_t>((by * 3 + bx) * 4 + lane)] = t.f(lane);
            }
        }
    }
    return out;
}

float read_flat_scalar(const mem::Texture2D& tex, std::int64_t scalar_index, StageIo& io) {
    const std::int64_t t = scalar_index / 4;
    const int x = static_cast<int>(t % tex.width());
    const int y = static_cast<int>(t / tex.width());
    const mem::Texel& texel = tex.read(x, y);
    ++io.texel_reads;
    return texel.f(static_cast<int>(scalar_index % 4));
}

Gaussian3D read_flat_gaussian(const FlatInputs& in, std::uint32_t g, StageIo& io) {
    const std::int64_t base = static_cast<std::int64_t>(g) * kFlatInputStride;
    Gaussian3D out;
    out.mean = {read_flat_scalar(in.scalars, base + 0, io), read_flat_scalar(in.scalars, base + 1, io),
                read_flat_scalar(in.scalars, base + 2, io)};
    out.opacity = read_flat_scalar(in.scalars, base + 3, io);
    for (int i = 0; i < 6; ++i) {
        out.cov3d[static_cast<std::size_t>(i)] = read_flat_scalar(in.scalars, base + 4 + i, io);
    }
    for (int i = 0; i < 48; ++i) {
        out.sh[static_cast<std::size_t>(i)] = read_flat_scalar(in.scalars, base + 10 + i, io);
    }
    return out;
}

template <typename ReadGaussian>
PreprocessResult preprocess_impl(std::uint32_t count, ReadGaussian&& read_gaussian, const Camera& cam,
                                 bool pack_outputs, const mem::TextureLimits& limits,
                                 mem::Tracer* tracer, StageIo& io) {
    cam.validate();

    PreprocessResult result;
    result.projected.resize(count);
    result.tiles_touched.assign(count, 0);

    const auto d = base_dims(count);
    if (pack_outputs) {
        OutputGroups groups{mem::Texture2D::alloc(d.width, d.height, limits),
                            mem::Texture2D::alloc(d.width, d.height, limits),
                            mem::Texture2D::alloc(d.width, d.height, limits),
                            d.width, d.height, count};
        groups.group1.set_tracer(tracer);
        groups.group2.set_tracer(tracer);
        groups.group3.set_tracer(tracer);
        result.packed.emplace(std::move(groups));
    } else {
        const std::int64_t scalars = static_cast<std::int64_t>(count) * kFlatOutputStride;
        const auto fd = mem::choose_dimensions((scalars + 3) / 4);
        FlatOutputs flat{mem::Texture2D::alloc(fd.width, fd.height, limits), count};
        flat.scalars.set_tracer(tracer);
        result.flat.emplace(std::move(flat));
    }

    if (tracer != nullptr) {
        tracer->begin_pass(mem::PassKind::preprocess);
    }
    for (std::uint32_t g = 0; g < count; ++g) {
        if (tracer != nullptr) {
            tracer->set_work_item(g);
        }
        const Gaussian3D gauss = read_gaussian(g, io);
        const auto proj = project_gaussian(gauss, cam, &result.culls);
        const ProjectedGaussian out = proj.value_or(ProjectedGaussian{});
        result.projected[g] = out;
        result.tiles_touched[g] = out.tiles_touched;

        if (result.packed.has_value()) {
            OutputGroups& groups = *result.packed;
            const int cx = static_cast<int>(g % static_cast<std::uint32_t>(groups.base_width));
            const int cy = static_cast<int>(g / static_cast<std::uint32_t>(groups.base_width));
            mem::Texel o1;
            o1.set_f(0, out.x);
            o1.set_f(1, out.y);
            o1.set_f(2, out.depth);
            o1.set_f(3, out.radius);
            mem::Texel o2;
            for (int i = 0; i < 4; ++i) {
                o2.set_f(i, out.conic_opacity[static_cast<std::size_t>(i)]);
            }
            mem::Texel o3;
            for (int i = 0; i < 3; ++i) {
                o3.set_f(i, out.rgb[static_cast<std::size_t>(i)]);
            }
            groups.group1.write(cx, cy, o1);
            groups.group2.write(cx, cy, o2);
            groups.group3.write(cx, cy, o3);
            io.texel_writes += 3;
        } else {
            // Flat outputs occupy three whole texels per Gaussian.
            mem::Texture2D& tex = result.flat->scalars;
            const std::int64_t base = static_cast<std::int64_t>(g) * kFlatOutputStride;
            const float values[kFlatOutputStride] = {
                out.x, out.y, out.depth, out.radius, out.conic_opacity[0], out.conic_opacity[1],
                out.conic_opacity[2], out.conic_opacity[3], out.rgb[0], out.rgb[1], out.rgb[2], 0.0f};
            for (int t = 0; t < 3; ++t) {
                mem::Texel texel;
                for (int lane = 0; lane < 4; ++lane) {
                    texel.set_f(lane, values[t * 4 + lane]);
                }
                const std::int64_t linear = (base + t * 4) / 4;
                tex.write(static_cast<int>(linear % tex.width()),
                          static_cast<int>(linear / tex.width()), texel);
                ++io.texel_writes;
            }
        }
    }
    return result;
}

} // namespace

PreprocessResult preprocess(const PackedInputs& in, const Camera& cam, bool pack_outputs,
                            const mem::TextureLimits& limits, mem::Tracer* tracer, StageIo& io) {
    return preprocess_impl(
        in.count, [&](std::uint32_t g, StageIo& s) { return read_packed_gaussian(in, g, s); }, cam,
        pack_outputs, limits, tracer, io);
}

PreprocessResult preprocess(const FlatInputs& in, const Camera& cam, bool pack_outputs,
                            const mem::TextureLimits& limits, mem::Tracer* tracer, StageIo& io) {
    return preprocess_impl(
        in.count, [&](std::uint32_t g, StageIo& s) { return read_flat_gaussian(in, g, s); }, cam,
        pack_outputs, limits, tracer, io);
}

// ---------------------------------------------------------------------------
// Scan, keys, duplication

ScanResult prefix_scan(std::span<const std::uint32_t> counts) {
    ScanResult r;
    r.offsets.resize(counts.size());
    std::uint32_t running = 0;
    for (std::size_t i = 0; i < counts.size(); ++i) {
        r.offsets[i] = running;
        running += counts[i];
    }
    r.total = running;
    return r;
}

DepthBounds depth_bounds(const PreprocessResult& pre) {
    bool any = false;
    float lo = 0.0f;
    float hi = 0.0f;
    for (std::size_t i = 0; i < pre.projected.size(); ++i) {
        if (pre.tiles_touched[i] == 0) {
            continue;
        }
        const float d = pre.projected[i].depth;
        if (!any) {
            lo = hi = d;
            any = true;
        } else {
            lo = std::min(lo, d);
            hi = std::max(hi, d);
        }
    }
    if (!any) {
        return DepthBounds{0.0f, 1.0f};
    }
    const float pad = std::max(0.01f * (hi - lo), 1e-6f);
    return DepthBounds{lo - pad, hi + pad};
}

float normalize_key(std::uint32_t tile_id, float depth, const DepthBounds& bounds) {
    if (tile_id >= kMaxTileId) {
        throw Error(ErrorKind::key_overflow,
                    "tile id " + std::to_string(tile_id) + " exceeds the 20-bit key budget");
    }
    const float span = bounds.hi - bounds.lo;
    const float f = span > 0.0f ? clamp01((depth - bounds.lo) / span) : 0.0f;
    const auto bucket = static_cast<std::uint32_t>(
        std::lround(static_cast<double>(f) * static_cast<double>(kDepthBuckets - 1)));
    const std::uint64_t composed = (static_cast<std::uint64_t>(tile_id) << 10) + bucket;
    // Convert rounding down: nearest-rounding could bleed a full-bucket depth
    // into the next tile once the composed value exceeds 2^24.
    const auto exact = static_cast<double>(composed);
    float key = static_cast<float>(exact);
    if (static_cast<double>(key) > exact) {
        key = std::nextafterf(key, 0.0f);
    }
    return key;
}

std::uint32_t extract_tile(float key) {
    if (!(key >= 0.0f)) {
        throw Error(ErrorKind::invalid_key, "keys are non-negative, got " + std::to_string(key));
    }
    const auto tile = static_cast<std::uint64_t>(static_cast<double>(key) / 1024.0);
    if (tile >= kMaxTileId) {
        throw Error(ErrorKind::invalid_key, "key " + std::to_string(key) + " is not a normalized key");
    }
    return static_cast<std::uint32_t>(tile);
}

DuplicateResult duplicate_with_tiles(const PreprocessResult& pre, const ScanResult& scan,
                                     const Camera& cam, const DepthBounds& bounds,
                                     const mem::TextureLimits& limits, mem::Tracer* tracer,
                                     StageIo& io) {
    const int tiles_x = cam.tiles_x();
    const int tiles_y = cam.tiles_y();

    DuplicateResult result{std::vector<sort::KVPair>(scan.total),
                           sort::alloc_kv_textures(scan.total, limits)};
    result.textures.keys.set_tracer(tracer);
    result.textures.values.set_tracer(tracer);
    if (scan.total == 0) {
        return result;
    }

    if (tracer != nullptr) {
        tracer->begin_pass(mem::PassKind::generic);
    }
    const int kv_width = result.textures.keys.width();
    for (std::uint32_t g = 0; g < pre.projected.size(); ++g) {
        if (pre.tiles_touched[g] == 0) {
            continue;
        }
        if (tracer != nullptr) {
            tracer->set_work_item(g);
        }
        float sx = 0.0f;
        float sy = 0.0f;
        float depth = 0.0f;
        float radius = 0.0f;
        if (pre.packed.has_value()) {
            const OutputGroups& groups = *pre.packed;
            const int cx = static_cast<int>(g % static_cast<std::uint32_t>(groups.base_width));
            const int cy = static_cast<int>(g / static_cast<std::uint32_t>(groups.base_width));
            const mem::Texel& o1 = groups.group1.read(cx, cy);
            ++io.texel_reads;
            sx = o1.f(0);
            sy = o1.f(1);
            depth = o1.f(2);
            radius = o1.f(3);
        } else {
            const std::int64_t base = static_cast<std::int64_t>(g) * kFlatOutputStride;
            sx = read_flat_scalar(pre.flat->scalars, base + 0, io);
            sy = read_flat_scalar(pre.flat->scalars, base + 1, io);
            depth = read_flat_scalar(pre.flat->scalars, base + 2, io);
            radius = read_flat_scalar(pre.flat->scalars, base + 3, io);
        }

        const TileRect rect = tile_rect(sx, sy, radius, tiles_x, tiles_y);
        if (rect.count() != pre.tiles_touched[g]) {
            throw Error(ErrorKind::internal_consistency,
                        "Gaussian " + std::to_string(g) + " overlaps " + std::to_string(rect.count()) +
                            " tiles but reported " + std::to_string(pre.tiles_touched[g]));
        }

        std::uint32_t emit = scan.offsets[g];
        for (int ty = rect.y0; ty < rect.y1; ++ty) {
            for (int tx = rect.x0; tx < rect.x1; ++tx) {
                const auto tile_id = static_cast<std::uint32_t>(ty * tiles_x + tx);
                const sort::KVPair pair{normalize_key(tile_id, depth, bounds), g};
                result.pairs[emit] = pair;

                const std::uint32_t texel = emit / 4;
                const int lane = static_cast<int>(emit % 4);
                const int x = static_cast<int>(texel % static_cast<std::uint32_t>(kv_width));
                const int y = static_cast<int>(texel / static_cast<std::uint32_t>(kv_width));
                mem::Texel kt = result.textures.keys.peek(x, y);
                kt.set_f(lane, pair.key);
                result.textures.keys.write(x, y, kt);
                mem::Texel vt = result.textures.values.peek(x, y);
                vt.set_u(lane, pair.value);
                result.textures.values.write(x, y, vt);
                io.texel_writes += 2;
                ++emit;
            }
        }
        if (emit != scan.offsets[g] + pre.tiles_touched[g]) {
            throw Error(ErrorKind::internal_consistency, "duplication emitted a mismatched pair count");
        }
    }
    return result;
}

// ---------------------------------------------------------------------------
// Identify ranges and render

std::vector<TileRange> identify_ranges(const mem::Texture2D& sorted, const sort::SortedView& view,
                                       SortedAccess access, bool debug_checks, mem::Tracer* tracer,
                                       StageIo& io) {
    std::vector<TileRange> ranges;
    if (view.count == 0) {
        return ranges;
    }
    if (tracer != nullptr) {
        tracer->begin_pass(mem::PassKind::generic);
        tracer->set_work_item(0);
    }

    float prev_key = 0.0f;
    mem::Texel cached{};
    bool have_cached = false;
    for (std::uint32_t p = 0; p < view.count; ++p) {
        const sort::TexelSlot s = view.slot_of(p);
        if (access == SortedAccess::per_pair || !have_cached || s.slot == 0) {
            cached = sorted.read(s.x, s.y);
            ++io.texel_reads;
            have_cached = true;
        }
        const float key = cached.f(s.slot * 2);
        if (debug_checks && p > 0 && key < prev_key) {
            throw Error(ErrorKind::precondition,
                        "identify_ranges expects ascending keys, violated at position " +
                            std::to_string(p));
        }
        const std::uint32_t tile = extract_tile(key);
        if (ranges.empty() || ranges.back().tile_id != tile) {
            if (!ranges.empty()) {
                ranges.back().end = p;
            }
            ranges.push_back(TileRange{tile, p, view.count});
        }
        prev_key = key;
    }
    ranges.back().end = view.count;
    return ranges;
}

namespace {

struct OutputFetcher {
    const OutputGroups* packed = nullptr;
    const FlatOutputs* flat = nullptr;

    std::uint32_t count() const { return packed != nullptr ? packed->count : flat->count; }

    std::array<float, 2> xy(std::uint32_t g, StageIo& io) const {
        if (packed != nullptr) {
            const int cx = static_cast<int>(g % static_cast<std::uint32_t>(packed->base_width));
            const int cy = static_cast<int>(g / static_cast<std::uint32_t>(packed->base_width));
            const mem::Texel& t = packed->group1.read(cx, cy);
            ++io.texel_reads;
            return {t.f(0), t.f(1)};
        }
        const std::int64_t base = static_cast<std::int64_t>(g) * kFlatOutputStride;
        return {read_flat_scalar(flat->scalars, base + 0, io),
                read_flat_scalar(flat->scalars, base + 1, io)};
    }

    std::array<float, 4> conic_opacity(std::uint32_t g, StageIo& io) const {
        if (packed != nullptr) {
            const int cx = static_cast<int>(g % static_cast<std::uint32_t>(packed->base_width));
            const int cy = static_cast<int>(g / static_cast<std::uint32_t>(packed->base_width));
            const mem::Texel& t = packed->group2.read(cx, cy);
            ++io.texel_reads;
            return {t.f(0), t.f(1), t.f(2), t.f(3)};
        }
        const std::int64_t base = static_cast<std::int64_t>(g) * kFlatOutputStride;
        return {read_flat_scalar(flat->scalars, base + 4, io),
                read_flat_scalar(flat->scalars, base + 5, io),
                read_flat_scalar(flat->scalars, base + 6, io),
                read_flat_scalar(flat->scalars, base + 7, io)};
    }

    std::array<float, 3> rgb(std::uint32_t g, StageIo& io) const {
        if (packed != nullptr) {
            const int cx = static_cast<int>(g % static_cast<std::uint32_t>(packed->base_width));
            const int cy = static_cast<int>(g / static_cast<std::uint32_t>(packed->base_width));
            const mem::Texel& t = packed->group3.read(cx, cy);
            ++io.texel_reads;
            return {t.f(0), t.f(1), t.f(2)};
        }
        const std::int64_t base = static_cast<std::int64_t>(g) * kFlatOutputStride;
        return {read_flat_scalar(flat->scalars, base + 8, io),
                read_flat_scalar(flat->scalars, base + 9, io),
                read_flat_scalar(flat->scalars, base + 10, io)};
    }
};

} // namespace

FrameBuffer render(const RenderInputs& in, const Camera& cam, const std::array<float, 3>& background,
                   mem::Tracer* tracer, StageIo& io) {
    cam.validate();
    FrameBuffer fb = FrameBuffer::filled(cam.width, cam.height, background);
    const OutputFetcher fetch{in.packed, in.flat};
    if (in.packed == nullptr && in.flat == nullptr) {
        throw Error(ErrorKind::input, "render needs preprocess output groups");
    }

    const int tiles_x = cam.tiles_x();
    const int tiles_y = cam.tiles_y();
    std::vector<std::pair<std::uint32_t, std::uint32_t>> spans(
        static_cast<std::size_t>(tiles_x) * static_cast<std::size_t>(tiles_y), {0, 0});
    for (const TileRange& r : in.ranges) {
        spans[r.tile_id] = {r.start, r.end};
    }

    if (tracer != nullptr) {
        tracer->begin_pass(mem::PassKind::render);
    }

    const int quad_width = in.four_pixels_per_item ? 4 : 1;
    std::uint32_t work_item = 0;

    for (int ty = 0; ty < tiles_y; ++ty) {
        for (int tx = 0; tx < tiles_x; ++tx) {
            const auto [start, end] = spans[static_cast<std::size_t>(ty) * tiles_x + tx];
            for (int row = 0; row < kTileSize; ++row) {
                const int py = ty * kTileSize + row;
                for (int qx = 0; qx < kTileSize; qx += quad_width) {
                    if (tracer != nullptr) {
                        tracer->set_work_item(work_item);
                    }
                    ++work_item;

                    BlendState st[4];
                    int base_px = tx * kTileSize + qx;
                    bool any_active = false;
                    for (int k = 0; k < quad_width; ++k) {
                        const int px = base_px + k;
                        st[k].done = px >= cam.width || py >= cam.height;
                        any_active = any_active || !st[k].done;
                    }
                    if (!any_active) {
                        continue;
                    }

                    mem::Texel cached{};
                    bool have_cached = false;
                    for (std::uint32_t p = start; p < end; ++p) {
                        const sort::TexelSlot s = in.view->slot_of(p);
                        if (in.access == SortedAccess::per_pair || !have_cached || s.slot == 0) {
                            cached = in.sorted->read(s.x, s.y);
                            ++io.texel_reads;
                            have_cached = true;
                        }
                        const std::uint32_t g = cached.u(s.slot * 2 + 1);
                        if (g >= fetch.count()) {
                            throw Error(ErrorKind::corrupt_index,
                                        "sorted list references Gaussian " + std::to_string(g) +
                                            " of " + std::to_string(fetch.count()));
                        }
                        // One set of fetches serves the whole quad.
                        const auto xy = fetch.xy(g, io);
                        const auto conic_opacity = fetch.conic_opacity(g, io);
                        const auto rgb = fetch.rgb(g, io);

                        bool all_done = true;
                        for (int k = 0; k < quad_width; ++k) {
                            const int px = base_px + k;
                            blend_step(st[k], static_cast<float>(px), static_cast<float>(py), xy[0],
                                       xy[1], conic_opacity, rgb);
                            all_done = all_done && st[k].done;
                        }
                        if (all_done) {
                            break;
                        }
                    }

                    for (int k = 0; k < quad_width; ++k) {
                        const int px = base_px + k;
                        if (px >= cam.width || py >= cam.height) {
                            continue;
                        }
                        fb.at(px, py, 0) = st[k].c0 + st[k].transmittance * background[0];
                        fb.at(px, py, 1) = st[k].c1 + st[k].transmittance * background[1];
                        fb.at(px, py, 2) = st[k].c2 + st[k].transmittance * background[2];
                    }
                }
            }
        }
    }
    return fb;
}

FrameBuffer render_reference(std::span<const Gaussian3D> gaussians, const Camera& cam,
                             const std::array<float, 3>& background) {
    cam.validate();
    FrameBuffer fb = FrameBuffer::filled(cam.width, cam.height, background);

    struct Entry {
        std::uint32_t tile;
        float depth;
        std::uint32_t index;
    };
    std::vector<ProjectedGaussian> projected(gaussians.size());
    std::vector<bool> alive(gaussians.size(), false);
    std::vector<Entry> entries;

    const int tiles_x = cam.tiles_x();
    for (std::size_t i = 0; i < gaussians.size(); ++i) {
        const auto p = project_gaussian(gaussians[i], cam, nullptr);
        if (!p.has_value()) {
            continue;
        }
        projected[i] = *p;
        alive[i] = true;
        for (int ty = p->rect.y0; ty < p->rect.y1; ++ty) {
            for (int tx = p->rect.x0; tx < p->rect.x1; ++tx) {
                entries.push_back(Entry{static_cast<std::uint32_t>(ty * tiles_x + tx), p->depth,
                                        static_cast<std::uint32_t>(i)});
            }
        }
    }
    std::stable_sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) {
        if (a.tile != b.tile) {
            return a.tile < b.tile;
        }
        return a.depth < b.depth;
    });

    // Per-tile spans into the sorted entry list.
    std::vector<std::pair<std::size_t, std::size_t>> spans(
        static_cast<std::size_t>(tiles_x) * static_cast<std::size_t>(cam.tiles_y()), {0, 0});
    std::size_t i = 0;
    while (i < entries.size()) {
        std::size_t j = i;
        while (j < entries.size() && entries[j].tile == entries[i].tile) {
            ++j;
        }
        spans[entries[i].tile] = {i, j};
        i = j;
    }

    for (int py = 0; py < cam.height; ++py) {
        for (int px = 0; px < cam.width; ++px) {
            const std::size_t tile = static_cast<std::size_t>(py / kTileSize) * tiles_x +
                                     static_cast<std::size_t>(px / kTileSize);
            BlendState st;
            for (std::size_t e = spans[tile].first; e < spans[tile].second && !st.done; ++e) {
                const ProjectedGaussian& g = projected[entries[e].index];
                blend_step(st, static_cast<float>(px), static_cast<float>(py), g.x, g.y,
                           g.conic_opacity, g.rgb);
            }
            fb.at(px, py, 0) = st.c0 + st.transmittance * background[0];
            fb.at(px, py, 1) = st.c1 + st.transmittance * background[1];
            fb.at(px, py, 2) = st.c2 + st.transmittance * background[2];
        }
    }
    return fb;
}

// ---------------------------------------------------------------------------
// Whole-frame driver

FrameResult render_frame(std::span<const Gaussian3D> gaussians, const Camera& cam,
                         const PipelineOptions& options) {
    cam.validate();

    FrameResult result;
    for (std::size_t i = 0; i < kStageNames.size(); ++i) {
        result.stages[i].stage = kStageNames[i];
    }
    if (gaussians.empty()) {
        result.image = FrameBuffer::filled(cam.width, cam.height, options.background);
        return result;
    }

    using clock = std::chrono::steady_clock;
    auto ms_since = [](clock::time_point t0) {
        return std::chrono::duration<double, std::milli>(clock::now() - t0).count();
    };

    // Preprocess: project every Gaussian from its texture-resident form.
    auto t0 = clock::now();
    StageIo pre_io;
    PreprocessResult pre = [&] {
        if (options.packing) {
            PackedInputs inputs = pack_inputs(gaussians, options.limits, options.tracer);
            return preprocess(inputs, cam, true, options.limits, options.tracer, pre_io);
        }
        FlatInputs inputs = flatten_inputs(gaussians, options.limits, options.tracer);
        return preprocess(inputs, cam, false, options.limits, options.tracer, pre_io);
    }();
    result.stages[0].wall_ms = ms_since(t0);
    result.stages[0].texel_reads = pre_io.texel_reads;
    result.stages[0].texel_writes = pre_io.texel_writes;
    result.culls = pre.culls;

    // Scan.
    t0 = clock::now();
    const ScanResult scan = prefix_scan(pre.tiles_touched);
    result.stages[1].wall_ms = ms_since(t0);
    result.emitted_pairs = scan.total;

    // Duplicate with tiles.
    t0 = clock::now();
    StageIo dup_io;
    const DepthBounds bounds = depth_bounds(pre);
    DuplicateResult dup =
        duplicate_with_tiles(pre, scan, cam, bounds, options.limits, options.tracer, dup_io);
    result.stages[2].wall_ms = ms_since(t0);
    result.stages[2].texel_reads = dup_io.texel_reads;
    result.stages[2].texel_writes = dup_io.texel_writes;

    if (scan.total == 0) {
        result.image = FrameBuffer::filled(cam.width, cam.height, options.background);
        return result;
    }

    // Sorting.
    t0 = clock::now();
    sort::SortOptions sort_options;
    sort_options.tracer = options.tracer;
    sort_options.debug_checks = options.debug_checks;
    sort_options.final_layout =
        options.data_layout ? sort::FinalLayout::blockwise : sort::FinalLayout::row_major;
    sort_options.limits = options.limits;
    sort::SortRun sort_run(std::move(dup.textures), sort_options);
    sort_run.execute();
    sort::SortResult sorted = sort_run.take_result();
    result.sort_metrics = sorted.metrics;
    result.stages[3].wall_ms = ms_since(t0);
    result.stages[3].texel_reads = sorted.metrics.texel_reads;
    result.stages[3].texel_writes = sorted.metrics.texel_writes;

    const SortedAccess access =
        options.data_layout ? SortedAccess::coalesced : SortedAccess::per_pair;

    // Identify per-tile ranges.
    t0 = clock::now();
    StageIo range_io;
    const std::vector<TileRange> ranges = identify_ranges(
        sorted.texture, sorted.view, access, options.debug_checks, options.tracer, range_io);
    result.stages[4].wall_ms = ms_since(t0);
    result.stages[4].texel_reads = range_io.texel_reads;
    result.tile_count = static_cast<std::uint32_t>(ranges.size());

    // Render.
    t0 = clock::now();
    StageIo render_io;
    RenderInputs rin;
    rin.sorted = &sorted.texture;
    rin.view = &sorted.view;
    rin.ranges = ranges;
    rin.packed = pre.packed.has_value() ? &*pre.packed : nullptr;
    rin.flat = pre.flat.has_value() ? &*pre.flat : nullptr;
    rin.access = access;
    rin.four_pixels_per_item = options.fusion;
    result.image = render(rin, cam, options.background, options.tracer, render_io);
    result.stages[5].wall_ms = ms_since(t0);
    result.stages[5].texel_reads = render_io.texel_reads;

    return result;
}

} // namespace texsplat::gs
