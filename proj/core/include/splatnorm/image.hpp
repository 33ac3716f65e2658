#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "splatnorm/tensor.hpp"

namespace splatnorm {

// Row-major, top-down, interleaved channels.
struct ImageU8 {
  int width = 0, height = 0, channels = 0;
  std::vector<uint8_t> pixels;
};

// 8-bit gray (1), RGB (3) or RGBA (4); fixed filter and compression settings
// keep the byte stream deterministic for a given zlib.
void write_png(const std::string& path, const ImageU8& img);
// 8-bit, color types gray/RGB/RGBA, no interlace, no palette.
ImageU8 read_png(const std::string& path);

// PFM: "PF" (H x W x 3) or "Pf" (H x W), float32, little-endian (negative
// scale), rows bottom-to-top.
void write_pfm(const std::string& path, const Tensor& img);
Tensor read_pfm(const std::string& path);

// [0,1] doubles <-> bytes.
Tensor to_unit_tensor(const ImageU8& img);          // H x W x C (C may be 1)
ImageU8 to_u8(const Tensor& img, int channels = 0); // clamps, rounds half up

// Unit normals in [-1,1] -> RGB via round((n+1)/2 * 255); zero normals map
// to mid-gray-free (0,0,0).
ImageU8 normal_preview(const Tensor& normal_map);   // H x W x 3
// Inverse of normal_preview up to quantization; (0,0,0) bytes decode to zero.
Tensor normal_from_preview(const ImageU8& img);

}  // namespace splatnorm
