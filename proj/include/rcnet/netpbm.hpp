#pragma once

// Binary Netpbm I/O: P5 (graymap) and P6 (pixmap), 8- or 16-bit samples.

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace rcnet::netpbm {

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Image {
  int width = 0;
  int height = 0;
  int channels = 1;            // 1 for P5, 3 for P6
  std::uint16_t maxval = 255;  // 1..65535; > 255 means two bytes per sample
  std::vector<std::uint16_t> samples;  // row-major, channels interleaved

  std::uint16_t at(int y, int x, int c = 0) const {
    return samples[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
};

Image decode(std::string_view bytes);
std::string encode(const Image& image);

Image read(const std::filesystem::path& path);
void write(const std::filesystem::path& path, const Image& image);

}  // namespace rcnet::netpbm
