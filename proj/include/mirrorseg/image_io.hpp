#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "mirrorseg/tensor.hpp"

namespace mseg {

// 8-bit interleaved image; channels is 1 (PGM) or 3 (PPM).
struct ImageU8 {
  int width = 0, height = 0, channels = 1;
  std::vector<std::uint8_t> pixels;
};

// Binary PNM: P5 (grayscale) or P6 (RGB), maxval up to 255.
ImageU8 read_pnm(const std::filesystem::path& path);
void write_pnm(const std::filesystem::path& path, const ImageU8& img);

// (1, C, H, W) in [0,1] <-> 8-bit image (values rounded on the way out).
Tensor image_to_tensor(const ImageU8& img);
ImageU8 tensor_to_image(const Tensor& t);

// (1, 1, H, W) in {0,1}; pixels >= threshold count as mirror.
Tensor mask_to_tensor(const ImageU8& img, int threshold = 128);
ImageU8 mask_to_image(const Tensor& t);  // 0 / 255

}  // namespace mseg
