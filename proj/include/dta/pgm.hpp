#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace dta {

/// 8-bit grayscale raster (binary P5, maxval 255).
struct ImageU8 {
  int64_t w = 0, h = 0;
  std::vector<uint8_t> pix;  // row-major

  int64_t size() const { return w * h; }
};

ImageU8 read_pgm(const std::string& path);
void write_pgm(const std::string& path, const ImageU8& img);

/// Binary P6 RGB writer (overlay export).
void write_ppm(const std::string& path, int64_t w, int64_t h,
               const std::vector<uint8_t>& rgb);

/// byte -> [0,1] intensity and its quantizing inverse (round to nearest).
std::vector<float> to_unit_floats(const ImageU8& img);
ImageU8 from_unit_floats(int64_t w, int64_t h, const std::vector<float>& vals);

}  // namespace dta
