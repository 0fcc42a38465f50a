#include "facefit/io.hpp"

#include "facefit/errors.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace facefit::io {

namespace {

void append_u32(std::vector<unsigned char>& out, std::uint32_t v) {
    out.push_back(static_cast<unsigned char>(v & 0xFF));
    out.push_back(static_cast<unsigned char>((v >> 8) & 0xFF));
    out.push_back(static_cast<unsigned char>((v >> 16) & 0xFF));
    out.push_back(static_cast<unsigned char>((v >> 24) & 0xFF));
}

void append_f32(std::vector<unsigned char>& out, float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    append_u32(out, bits);
}

class Reader {
public:
    Reader(std::span<const unsigned char> bytes, std::string what)
        : bytes_(bytes), what_(std::move(what)) {}

    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        v |= bytes_[pos_];
        v |= static_cast<std::uint32_t>(bytes_[pos_ + 1]) << 8;
        v |= static_cast<std::uint32_t>(bytes_[pos_ + 2]) << 16;
        v |= static_cast<std::uint32_t>(bytes_[pos_ + 3]) << 24;
        pos_ += 4;
        return v;
    }

    float f32() {
        const std::uint32_t bits = u32();
        float v;
        std::memcpy(&v, &bits, 4);
        return v;
    }

    void magic(const char* m) {
        need(4);
        if (std::memcmp(bytes_.data() + pos_, m, 4) != 0)
            throw io_error(what_ + ": bad magic at byte 0");
        pos_ += 4;
    }

    std::size_t pos() const { return pos_; }

private:
    void need(std::size_t n) {
        if (pos_ + n > bytes_.size())
            throw io_error(what_ + ": truncated at byte " + std::to_string(pos_));
    }

    std::span<const unsigned char> bytes_;
    std::string what_;
    std::size_t pos_ = 0;
};

} // namespace

std::vector<unsigned char> read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw io_error("cannot open " + path);
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                     std::istreambuf_iterator<char>());
    if (in.bad()) throw io_error("read failed: " + path);
    return bytes;
}

void write_file(const std::string& path, std::span<const unsigned char> bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw io_error("cannot open " + path + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) throw io_error("write failed: " + path);
}

void write_text(const std::string& path, const std::string& text) {
    write_file(path, {reinterpret_cast<const unsigned char*>(text.data()), text.size()});
}

std::string format_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

// ---- PPM ---------------------------------------------------------------------

std::vector<unsigned char> encode_ppm(const Image& image) {
    if (image.width <= 0 || image.height <= 0)
        throw std::invalid_argument("encode_ppm: empty image");
    std::string header = "P6\n" + std::to_string(image.width) + " " +
                         std::to_string(image.height) + "\n255\n";
    std::vector<unsigned char> out(header.begin(), header.end());
    out.reserve(out.size() + image.data.size());
    for (double v : image.data) {
        const double q = std::lround(255.0 * std::clamp(v, 0.0, 1.0));
        out.push_back(static_cast<unsigned char>(q));
    }
    return out;
}

namespace {

int ppm_int(std::span<const unsigned char> bytes, std::size_t& pos) {
    while (pos < bytes.size() && (std::isspace(bytes[pos]) || bytes[pos] == '#')) {
        if (bytes[pos] == '#') {
            while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
        } else {
            ++pos;
        }
    }
    if (pos >= bytes.size() || !std::isdigit(bytes[pos]))
        throw io_error("ppm: expected integer at byte " + std::to_string(pos));
    long v = 0;
    while (pos < bytes.size() && std::isdigit(bytes[pos])) {
        v = v * 10 + (bytes[pos] - '0');
        if (v > 1'000'000'000) throw io_error("ppm: integer overflow at byte " + std::to_string(pos));
        ++pos;
    }
    return static_cast<int>(v);
}

} // namespace

Image decode_ppm(std::span<const unsigned char> bytes) {
    std::size_t pos = 0;
    if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '6')
        throw io_error("ppm: not a P6 file (byte 0)");
    pos = 2;
    const int width = ppm_int(bytes, pos);
    const int height = ppm_int(bytes, pos);
    const int maxval = ppm_int(bytes, pos);
    if (width <= 0 || height <= 0)
        throw io_error("ppm: bad dimensions at byte " + std::to_string(pos));
    if (maxval != 255) throw io_error("ppm: only maxval 255 is supported (byte " +
                                      std::to_string(pos) + ")");
    if (pos >= bytes.size() || !std::isspace(bytes[pos]))
        throw io_error("ppm: expected whitespace after maxval at byte " + std::to_string(pos));
    ++pos;
    const std::size_t need = static_cast<std::size_t>(width) * height * 3;
    if (bytes.size() - pos < need)
        throw io_error("ppm: truncated pixel data at byte " + std::to_string(bytes.size()));
    Image img(width, height);
    for (std::size_t i = 0; i < need; ++i)
        img.data[i] = static_cast<double>(bytes[pos + i]) / 255.0;
    return img;
}

Image read_ppm(const std::string& path) {
    try {
        return decode_ppm(read_file(path));
    } catch (const io_error& e) {
        throw io_error(path + ": " + e.what());
    }
}

void write_ppm(const Image& image, const std::string& path) {
    write_file(path, encode_ppm(image));
}

Image quantize_image(const Image& image) {
    Image out = image;
    for (double& v : out.data)
        v = static_cast<double>(std::lround(255.0 * std::clamp(v, 0.0, 1.0))) / 255.0;
    return out;
}

// ---- basis -------------------------------------------------------------------

void write_basis(const MorphableBasis& basis, const std::string& path) {
    std::vector<unsigned char> out;
    const std::size_t n3 = 3 * static_cast<std::size_t>(basis.vertex_count);
    out.reserve(16 + 4 * (2 * n3 + n3 * 224 + 3 * basis.triangles.size() + 68));
    out.insert(out.end(), {'R', 'G', 'B', 'M'});
    append_u32(out, kBasisVersion);
    append_u32(out, basis.vertex_count);
    append_u32(out, static_cast<std::uint32_t>(basis.triangles.size()));
    for (double v : basis.mean_geometry) append_f32(out, static_cast<float>(v));
    for (double v : basis.mean_texture) append_f32(out, static_cast<float>(v));
    for (double v : basis.shape_basis) append_f32(out, static_cast<float>(v));
    for (double v : basis.expression_basis) append_f32(out, static_cast<float>(v));
    for (double v : basis.texture_basis) append_f32(out, static_cast<float>(v));
    for (const auto& t : basis.triangles)
        for (std::uint32_t idx : t) append_u32(out, idx);
    for (std::uint32_t idx : basis.landmark_indices) append_u32(out, idx);
    write_file(path, out);
}

MorphableBasis read_basis(const std::string& path) {
    const std::vector<unsigned char> bytes = read_file(path);
    Reader r(bytes, path);
    r.magic("RGBM");
    const std::uint32_t version = r.u32();
    if (version != kBasisVersion)
        throw io_error(path + ": unsupported basis version " + std::to_string(version));
    MorphableBasis basis;
    basis.vertex_count = r.u32();
    const std::uint32_t tri_count = r.u32();
    const std::size_t n3 = 3 * static_cast<std::size_t>(basis.vertex_count);
    auto read_block = [&](std::vector<double>& dst, std::size_t count) {
        dst.resize(count);
        for (std::size_t i = 0; i < count; ++i) dst[i] = static_cast<double>(r.f32());
    };
    read_block(basis.mean_geometry, n3);
    read_block(basis.mean_texture, n3);
    read_block(basis.shape_basis, n3 * coeff::kShapeSize);
    read_block(basis.expression_basis, n3 * coeff::kExprSize);
    read_block(basis.texture_basis, n3 * coeff::kTexSize);
    basis.triangles.resize(tri_count);
    for (auto& t : basis.triangles)
        for (std::uint32_t& idx : t) idx = r.u32();
    for (std::uint32_t& idx : basis.landmark_indices) idx = r.u32();
    basis.finalize();
    return basis;
}

// ---- coefficients ------------------------------------------------------------

void write_coeffs(const CoeffVector& coeffs, const std::string& path) {
    std::vector<unsigned char> out;
    out.reserve(8 + 4 * coeff::kTotal);
    out.insert(out.end(), {'R', 'G', 'C', 'V'});
    append_u32(out, coeff::kTotal);
    for (double v : coeffs.values) append_f32(out, static_cast<float>(v));
    write_file(path, out);
}

CoeffVector read_coeffs(const std::string& path) {
    const std::vector<unsigned char> bytes = read_file(path);
    Reader r(bytes, path);
    r.magic("RGCV");
    const std::uint32_t len = r.u32();
    if (len != coeff::kTotal)
        throw io_error(path + ": coefficient vector length " + std::to_string(len) +
                       ", expected " + std::to_string(coeff::kTotal));
    CoeffVector c;
    for (double& v : c.values) v = static_cast<double>(r.f32());
    return c;
}

// ---- OBJ ---------------------------------------------------------------------

void write_obj(std::span<const double> geometry, std::span<const double> colors,
               std::span<const std::array<std::uint32_t, 3>> triangles, const std::string& path) {
    if (geometry.size() % 3 != 0) throw std::invalid_argument("write_obj: geometry length");
    if (!colors.empty() && colors.size() != geometry.size())
        throw std::invalid_argument("write_obj: color length mismatch");
    std::string out;
    out.reserve(geometry.size() * 12);
    char line[256];
    const std::size_t n = geometry.size() / 3;
    for (std::size_t i = 0; i < n; ++i) {
        if (colors.empty()) {
            std::snprintf(line, sizeof(line), "v %.9g %.9g %.9g\n", geometry[3 * i],
                          geometry[3 * i + 1], geometry[3 * i + 2]);
        } else {
            std::snprintf(line, sizeof(line), "v %.9g %.9g %.9g %.9g %.9g %.9g\n",
                          geometry[3 * i], geometry[3 * i + 1], geometry[3 * i + 2],
                          colors[3 * i], colors[3 * i + 1], colors[3 * i + 2]);
        }
        out += line;
    }
    for (const auto& t : triangles) {
        std::snprintf(line, sizeof(line), "f %u %u %u\n", t[0] + 1, t[1] + 1, t[2] + 1);
        out += line;
    }
    write_text(path, out);
}

ObjMesh read_obj(const std::string& path) {
    const std::vector<unsigned char> bytes = read_file(path);
    ObjMesh mesh;
    std::size_t pos = 0;
    std::size_t line_no = 0;
    bool any_colors = false;
    while (pos < bytes.size()) {
        std::size_t end = pos;
        while (end < bytes.size() && bytes[end] != '\n') ++end;
        const std::string line(reinterpret_cast<const char*>(bytes.data() + pos), end - pos);
        ++line_no;
        pos = end + 1;
        if (line.empty() || line[0] == '#') continue;
        if (line[0] == 'v' && line.size() > 1 && line[1] == ' ') {
            double x, y, z, r, g, b;
            const int got = std::sscanf(line.c_str(), "v %lf %lf %lf %lf %lf %lf", &x, &y, &z, &r,
                                        &g, &b);
            if (got != 3 && got != 6)
                throw io_error(path + ": bad vertex at line " + std::to_string(line_no));
            mesh.geometry.insert(mesh.geometry.end(), {x, y, z});
            if (got == 6) {
                mesh.colors.insert(mesh.colors.end(), {r, g, b});
                any_colors = true;
            } else {
                mesh.colors.insert(mesh.colors.end(), {0.0, 0.0, 0.0});
            }
        } else if (line[0] == 'f' && line.size() > 1 && line[1] == ' ') {
            unsigned a, b, c;
            if (std::sscanf(line.c_str(), "f %u %u %u", &a, &b, &c) != 3 || a == 0 || b == 0 ||
                c == 0)
                throw io_error(path + ": bad face at line " + std::to_string(line_no));
            mesh.triangles.push_back({a - 1, b - 1, c - 1});
        }
    }
    if (!any_colors) mesh.colors.clear();
    return mesh;
}

} // namespace facefit::io
