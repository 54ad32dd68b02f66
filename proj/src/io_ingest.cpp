#include "texsplat/io_ingest.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

namespace texsplat::io {

namespace {

void require(bool ok, ErrorKind kind, const std::string& message) {
    if (!ok) {
        throw Error(kind, message);
    }
}

std::string property_name(const std::string& base, int i) { return base + "_" + std::to_string(i); }

} // namespace

gs::Gaussian3D splat_to_gaussian(const RawSplat& splat) {
    gs::Gaussian3D g;
    g.mean = splat.position;
    g.opacity = 1.0f / (1.0f + std::exp(-splat.opacity_logit));

    const float sx = std::exp(splat.log_scale[0]);
    const float sy = std::exp(splat.log_scale[1]);
    const float sz = std::exp(splat.log_scale[2]);

    float qw = splat.rotation[0];
    float qx = splat.rotation[1];
    float qy = splat.rotation[2];
    float qz = splat.rotation[3];
    const float norm = std::sqrt(qw * qw + qx * qx + qy * qy + qz * qz);
    if (norm > 0.0f) {
        qw /= norm;
        qx /= norm;
        qy /= norm;
        qz /= norm;
    } else {
        qw = 1.0f;
        qx = qy = qz = 0.0f;
    }

    const float r00 = 1.0f - 2.0f * (qy * qy + qz * qz);
    const float r01 = 2.0f * (qx * qy - qw * qz);
    const float r02 = 2.0f * (qx * qz + qw * qy);
    const float r10 = 2.0f * (qx * qy + qw * qz);
    const float r11 = 1.0f - 2.0f * (qx * qx + qz * qz);
    const float r12 = 2.0f * (qy * qz - qw * qx);
    const float r20 = 2.0f * (qx * qz - qw * qy);
    const float r21 = 2.0f * (qy * qz + qw * qx);
    const float r22 = 1.0f - 2.0f * (qx * qx + qy * qy);

    // M = R * diag(s); covariance = M * M^T.
    const float m00 = r00 * sx, m01 = r01 * sy, m02 = r02 * sz;
    const float m10 = r10 * sx, m11 = r11 * sy, m12 = r12 * sz;
    const float m20 = r20 * sx, m21 = r21 * sy, m22 = r22 * sz;

    g.cov3d[0] = m00 * m00 + m01 * m01 + m02 * m02;
    g.cov3d[1] = m00 * m10 + m01 * m11 + m02 * m12;
    g.cov3d[2] = m00 * m20 + m01 * m21 + m02 * m22;
    g.cov3d[3] = m10 * m10 + m11 * m11 + m12 * m12;
    g.cov3d[4] = m10 * m20 + m11 * m21 + m12 * m22;
    g.cov3d[5] = m20 * m20 + m21 * m21 + m22 * m22;

    // Exported SH is channel-major (15 rest coefficients per channel);
    // repack coefficient-major.
    for (int c = 0; c < 3; ++c) {
        g.sh[static_cast<std::size_t>(c)] = splat.f_dc[static_cast<std::size_t>(c)];
        for (int k = 0; k < 15; ++k) {
            g.sh[static_cast<std::size_t>((1 + k) * 3 + c)] =
                splat.f_rest[static_cast<std::size_t>(c * 15 + k)];
        }
    }
    return g;
}

std::vector<gs::Gaussian3D> load_scene(const std::string& path, LoadStats* stats) {
    std::ifstream in(path, std::ios::binary);
    require(in.good(), ErrorKind::io, "cannot open scene file: " + path);

    std::string line;
    require(static_cast<bool>(std::getline(in, line)), ErrorKind::schema, path + ": missing header");
    if (!line.empty() && line.back() == '\r') {
        line.pop_back();
    }
    require(line == "ply", ErrorKind::schema, path + ": not a point-cloud file");

    std::size_t vertex_count = 0;
    std::vector<std::string> properties;
    bool saw_format = false;
    bool in_vertex_element = false;

    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') {
            line.pop_back();
        }
        std::istringstream ls(line);
        std::string tok;
        ls >> tok;
        if (tok == "comment") {
            continue;
        }
        if (tok == "format") {
            std::string fmt;
            ls >> fmt;
            require(fmt == "binary_little_endian", ErrorKind::schema,
                    path + ": only binary_little_endian is supported, got " + fmt);
            saw_format = true;
        } else if (tok == "element") {
            std::string name;
            std::size_t count = 0;
            ls >> name >> count;
            if (name == "vertex") {
                vertex_count = count;
                in_vertex_element = true;
            } else {
                require(count == 0, ErrorKind::schema,
                        path + ": unsupported element '" + name + "' with " + std::to_string(count) +
                            " entries");
                in_vertex_element = false;
            }
        } else if (tok == "property") {
            std::string type;
            std::string name;
            ls >> type >> name;
            if (in_vertex_element) {
                require(type == "float" || type == "float32", ErrorKind::schema,
                        path + ": property " + name + " has unsupported type " + type);
                properties.push_back(name);
            }
        } else if (tok == "end_header") {
            break;
        }
    }
    require(saw_format, ErrorKind::schema, path + ": missing format declaration");
    require(vertex_count >= 1, ErrorKind::schema, path + ": point count must be >= 1");

    std::map<std::string, std::size_t> index;
    for (std::size_t i = 0; i < properties.size(); ++i) {
        index[properties[i]] = i;
    }
    const auto prop = [&](const std::string& name) {
        auto it = index.find(name);
        require(it != index.end(), ErrorKind::schema, path + ": missing property '" + name + "'");
        return it->second;
    };

    const std::size_t ix = prop("x"), iy = prop("y"), iz = prop("z");
    std::array<std::size_t, 3> idc{};
    for (int i = 0; i < 3; ++i) {
        idc[static_cast<std::size_t>(i)] = prop(property_name("f_dc", i));
    }
    std::array<std::size_t, 45> irest{};
    for (int i = 0; i < 45; ++i) {
        irest[static_cast<std::size_t>(i)] = prop(property_name("f_rest", i));
    }
    const std::size_t iop = prop("opacity");
    std::array<std::size_t, 3> iscale{};
    for (int i = 0; i < 3; ++i) {
        iscale[static_cast<std::size_t>(i)] = prop(property_name("scale", i));
    }
    std::array<std::size_t, 4> irot{};
    for (int i = 0; i < 4; ++i) {
        irot[static_cast<std::size_t>(i)] = prop(property_name("rot", i));
    }

    const std::size_t stride = properties.size();
    std::vector<float> row(stride);
    std::vector<gs::Gaussian3D> out;
    out.reserve(vertex_count);
    LoadStats local;

    for (std::size_t v = 0; v < vertex_count; ++v) {
        in.read(reinterpret_cast<char*>(row.data()),
                static_cast<std::streamsize>(stride * sizeof(float)));
        require(in.good(), ErrorKind::io,
                path + ": truncated at point " + std::to_string(v) + " of " +
                    std::to_string(vertex_count));

        RawSplat s;
        s.position = {row[ix], row[iy], row[iz]};
        for (int i = 0; i < 3; ++i) {
            s.f_dc[static_cast<std::size_t>(i)] = row[idc[static_cast<std::size_t>(i)]];
        }
        for (int i = 0; i < 45; ++i) {
            s.f_rest[static_cast<std::size_t>(i)] = row[irest[static_cast<std::size_t>(i)]];
        }
        s.opacity_logit = row[iop];
        for (int i = 0; i < 3; ++i) {
            s.log_scale[static_cast<std::size_t>(i)] = row[iscale[static_cast<std::size_t>(i)]];
        }
        for (int i = 0; i < 4; ++i) {
            s.rotation[static_cast<std::size_t>(i)] = row[irot[static_cast<std::size_t>(i)]];
        }

        gs::Gaussian3D g = splat_to_gaussian(s);
        bool finite = true;
        for (float f : g.cov3d) {
            finite = finite && std::isfinite(f);
        }
        for (float f : g.mean) {
            finite = finite && std::isfinite(f);
        }
        if (!finite || !gs::covariance_is_psd(g.cov3d)) {
            ++local.rejected;
            continue;
        }
        out.push_back(g);
        ++local.loaded;
    }
    if (stats != nullptr) {
        *stats = local;
    }
    return out;
}

void save_scene(const std::string& path, std::span<const RawSplat> splats) {
    require(!splats.empty(), ErrorKind::input, "cannot save an empty scene");
    std::ofstream out(path, std::ios::binary);
    require(out.good(), ErrorKind::io, "cannot open for writing: " + path);

    out << "ply\nformat binary_little_endian 1.0\n";
    out << "element vertex " << splats.size() << "\n";
    for (const char* n : {"x", "y", "z", "nx", "ny", "nz"}) {
        out << "property float " << n << "\n";
    }
    for (int i = 0; i < 3; ++i) {
        out << "property float " << property_name("f_dc", i) << "\n";
    }
    for (int i = 0; i < 45; ++i) {
        out << "property float " << property_name("f_rest", i) << "\n";
    }
    out << "property float opacity\n";
    for (int i = 0; i < 3; ++i) {
        out << "property float " << property_name("scale", i) << "\n";
    }
    for (int i = 0; i < 4; ++i) {
        out << "property float " << property_name("rot", i) << "\n";
    }
    out << "end_header\n";

    for (const RawSplat& s : splats) {
        std::vector<float> row;
        row.insert(row.end(), s.position.begin(), s.position.end());
        row.insert(row.end(), s.normal.begin(), s.normal.end());
        row.insert(row.end(), s.f_dc.begin(), s.f_dc.end());
        row.insert(row.end(), s.f_rest.begin(), s.f_rest.end());
        row.push_back(s.opacity_logit);
        row.insert(row.end(), s.log_scale.begin(), s.log_scale.end());
        row.insert(row.end(), s.rotation.begin(), s.rotation.end());
        out.write(reinterpret_cast<const char*>(row.data()),
                  static_cast<std::streamsize>(row.size() * sizeof(float)));
    }
    require(out.good(), ErrorKind::io, "failed writing scene: " + path);
}

gs::Camera load_camera(const std::string& path) {
    std::ifstream in(path);
    require(in.good(), ErrorKind::io, "cannot open camera file: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::schema, path + ": " + e.what());
    }
    for (const char* field : {"world_to_camera", "fx", "fy", "width", "height", "near", "far"}) {
        require(j.contains(field), ErrorKind::schema,
                path + ": missing camera field '" + std::string(field) + "'");
    }
    gs::Camera cam;
    const auto& m = j["world_to_camera"];
    require(m.is_array() && m.size() == 16, ErrorKind::schema,
            path + ": world_to_camera must hold 16 row-major floats");
    for (std::size_t i = 0; i < 16; ++i) {
        cam.world_to_cam[i] = m[i].get<float>();
    }
    cam.fx = j["fx"].get<float>();
    cam.fy = j["fy"].get<float>();
    cam.width = j["width"].get<int>();
    cam.height = j["height"].get<int>();
    cam.near_plane = j["near"].get<float>();
    cam.far_plane = j["far"].get<float>();
    cam.validate();

    // Invertibility via the rotation block (the affine part is what the
    // pipeline inverts for the camera center).
    const auto& w = cam.world_to_cam;
    const double det = static_cast<double>(w[0]) * (w[5] * w[10] - w[6] * w[9]) -
                       static_cast<double>(w[1]) * (w[4] * w[10] - w[6] * w[8]) +
                       static_cast<double>(w[2]) * (w[4] * w[9] - w[5] * w[8]);
    require(std::abs(det) > 1e-12, ErrorKind::schema, path + ": world_to_camera is singular");
    return cam;
}

void save_camera(const std::string& path, const gs::Camera& cam) {
    nlohmann::json j;
    j["world_to_camera"] = cam.world_to_cam;
    j["fx"] = cam.fx;
    j["fy"] = cam.fy;
    j["width"] = cam.width;
    j["height"] = cam.height;
    j["near"] = cam.near_plane;
    j["far"] = cam.far_plane;
    std::ofstream out(path);
    require(out.good(), ErrorKind::io, "cannot open for writing: " + path);
    out << j.dump(2) << "\n";
    require(out.good(), ErrorKind::io, "failed writing camera: " + path);
}

void write_image(const gs::FrameBuffer& fb, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    require(out.good(), ErrorKind::io, "cannot open for writing: " + path);
    out << "P6\n" << fb.width << " " << fb.height << "\n255\n";
    std::vector<unsigned char> row(static_cast<std::size_t>(fb.width) * 3);
    for (int y = 0; y < fb.height; ++y) {
        for (int x = 0; x < fb.width; ++x) {
            for (int c = 0; c < 3; ++c) {
                const float v = std::min(1.0f, std::max(0.0f, fb.at(x, y, c)));
                row[static_cast<std::size_t>(x) * 3 + static_cast<std::size_t>(c)] =
                    static_cast<unsigned char>(std::floor(255.0f * v + 0.5f));
            }
        }
        out.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
    }
    require(out.good(), ErrorKind::io, "failed writing image: " + path);
}

void write_metrics(const std::string& path, std::span<const std::string> header,
                   std::span<const std::vector<std::string>> rows) {
    std::ofstream out(path);
    require(out.good(), ErrorKind::io, "cannot open for writing: " + path);
    for (std::size_t i = 0; i < header.size(); ++i) {
        out << header[i] << (i + 1 < header.size() ? "," : "\n");
    }
    for (const auto& row : rows) {
        for (std::size_t i = 0; i < row.size(); ++i) {
            out << row[i] << (i + 1 < row.size() ? "," : "\n");
        }
    }
    require(out.good(), ErrorKind::io, "failed writing metrics: " + path);
}

} // namespace texsplat::io
