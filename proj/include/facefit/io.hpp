#pragma once

#include "facefit/mm.hpp"
#include "facefit/render.hpp"

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace facefit::io {

// ---- raw files --------------------------------------------------------------

std::vector<unsigned char> read_file(const std::string& path);
void write_file(const std::string& path, std::span<const unsigned char> bytes);
void write_text(const std::string& path, const std::string& text);

/// Shortest round-trip decimal form, locale-independent ("%.17g" trimmed).
std::string format_double(double v);

// ---- PPM images (P6, maxval 255) --------------------------------------------

std::vector<unsigned char> encode_ppm(const Image& image);
Image decode_ppm(std::span<const unsigned char> bytes); // io_error names the byte offset

Image read_ppm(const std::string& path);
void write_ppm(const Image& image, const std::string& path);

/// Snaps channels to the 8-bit grid the PPM codec uses: round(255*x)/255.
Image quantize_image(const Image& image);

// ---- basis files ("RGBM") ----------------------------------------------------
// Little-endian: magic "RGBM", u32 version, u32 vertex_count, u32
// triangle_count, float32 arrays (mean_geometry, mean_texture, shape_basis
// column-major, expression_basis, texture_basis), u32 triangle indices, u32
// landmark indices.

inline constexpr std::uint32_t kBasisVersion = 1;

void write_basis(const MorphableBasis& basis, const std::string& path);
MorphableBasis read_basis(const std::string& path);

// ---- coefficient files ("RGCV") ----------------------------------------------
// Little-endian: magic "RGCV", u32 length, float32 values.

void write_coeffs(const CoeffVector& coeffs, const std::string& path);
CoeffVector read_coeffs(const std::string& path);

// ---- OBJ meshes ---------------------------------------------------------------
// "v x y z [r g b]" lines (per-vertex color extension) and "f i j k" lines
// with 1-based indices; floats printed to 9 significant digits.

void write_obj(std::span<const double> geometry, std::span<const double> colors,
               std::span<const std::array<std::uint32_t, 3>> triangles, const std::string& path);

struct ObjMesh {
    std::vector<double> geometry;
    std::vector<double> colors; // empty when the file carries no colors
    std::vector<std::array<std::uint32_t, 3>> triangles;
};

ObjMesh read_obj(const std::string& path);

} // namespace facefit::io
