#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace ufo {

// 8-bit raster, interleaved channels (1 = gray, 3 = RGB).
struct Image8 {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<uint8_t> pixels;
};

// Binary P6 (RGB) / P5 (gray), maxval 255.
void write_ppm(const std::filesystem::path& path, const Image8& img);
void write_pgm(const std::filesystem::path& path, const Image8& img);
// Reads P5 or P6 with maxval 255; '#' comments in the header are skipped.
Image8 read_netpbm(const std::filesystem::path& path);

}  // namespace ufo
