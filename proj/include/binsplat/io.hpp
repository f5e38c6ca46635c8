#pragma once

#include <string>
#include <vector>

#include "binsplat/layout.hpp"
#include "binsplat/masks.hpp"
#include "binsplat/scene.hpp"

namespace binsplat {

// BGS1: "BGS1", u32 N, u8 L, L x u8 dims, then N records of little-endian f32
// position[3] log_scale[3] quaternion[4] (w,x,y,z) opacity_logit rgb[3] feature_logits[D].
void write_scene(const std::string& path, const GaussianScene& scene);
GaussianScene read_scene(const std::string& path);

// BGM1: "BGM1", u32 width, u32 height, u8 L, then L row-major grids of u32 labels.
void write_mask_image(const std::string& path, const MaskImage& masks);
MaskImage read_mask_image(const std::string& path);

// BGC1: "BGC1", u32 N, u8 L, L x u8 dims, then N x u32 codes.
void write_codes(const std::string& path, const CodeTable& table);
CodeTable read_codes(const std::string& path);
std::size_t codes_header_bytes(const LevelLayout& layout);

/// Binary little-endian 3D-GS checkpoint (x y z, opacity, scale_0..2, rot_0..3,
/// f_dc_0..2). Extra properties are ignored; color is SH band 0 only.
GaussianScene import_ply(const std::string& path, const LevelLayout& layout, double feature_init_std = 0.0,
                         uint64_t seed = 0);
/// Writes the properties import_ply reads. Colors are mapped back to f_dc so
/// that importing the result reproduces the scene bit-exactly.
void export_ply(const std::string& path, const GaussianScene& scene);

// Plain text: a count line, then per view "width height fx fy cx cy near far"
// followed by three rows "r0 r1 r2 t" of the world-to-camera transform.
void write_cameras(const std::string& path, const std::vector<Camera>& cameras);
std::vector<Camera> read_cameras(const std::string& path);

/// Peeks the 4-byte magic of a file ("" when shorter than 4 bytes).
std::string read_magic(const std::string& path);

}  // namespace binsplat
