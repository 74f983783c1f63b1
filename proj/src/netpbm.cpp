#include "rcnet/netpbm.hpp"

#include <cctype>
#include <fstream>
#include <sstream>

namespace rcnet::netpbm {

namespace {

class HeaderReader {
 public:
  explicit HeaderReader(std::string_view in) : in_(in) {}

  void skip_space_and_comments() {
    while (pos_ < in_.size()) {
      const char c = in_[pos_];
      if (c == '#') {
        while (pos_ < in_.size() && in_[pos_] != '\n' && in_[pos_] != '\r') ++pos_;
      } else if (std::isspace(static_cast<unsigned char>(c))) {
        ++pos_;
      } else {
        break;
      }
    }
  }

  unsigned long number(const char* what) {
    skip_space_and_comments();
    if (pos_ >= in_.size() || !std::isdigit(static_cast<unsigned char>(in_[pos_])))
      throw FormatError(std::string("netpbm: expected ") + what);
    unsigned long v = 0;
    while (pos_ < in_.size() && std::isdigit(static_cast<unsigned char>(in_[pos_]))) {
      v = v * 10 + static_cast<unsigned long>(in_[pos_++] - '0');
      if (v > 1'000'000'000UL) throw FormatError(std::string("netpbm: ") + what + " too large");
    }
    return v;
  }

  std::size_t& pos() { return pos_; }

 private:
  std::string_view in_;
  std::size_t pos_ = 0;
};

}  // namespace

Image decode(std::string_view bytes) {
  if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '5' && bytes[1] != '6'))
    throw FormatError("netpbm: only binary P5/P6 files are supported");
  Image img;
  img.channels = bytes[1] == '5' ? 1 : 3;
  HeaderReader hr(bytes.substr(2));
  const unsigned long w = hr.number("width");
  const unsigned long h = hr.number("height");
  const unsigned long maxval = hr.number("maxval");
  if (w == 0 || h == 0) throw FormatError("netpbm: zero image dimension");
  if (maxval == 0 || maxval > 65535) throw FormatError("netpbm: maxval out of range");
  // Exactly one whitespace byte separates the header from the raster.
  std::size_t pos = 2 + hr.pos();
  if (pos >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[pos])))
    throw FormatError("netpbm: missing whitespace after maxval");
  ++pos;

  img.width = static_cast<int>(w);
  img.height = static_cast<int>(h);
  img.maxval = static_cast<std::uint16_t>(maxval);
  const std::size_t count = static_cast<std::size_t>(w) * h * img.channels;
  const std::size_t bytes_per = maxval > 255 ? 2 : 1;
  if (bytes.size() - pos < count * bytes_per) throw FormatError("netpbm: truncated raster");
  img.samples.resize(count);
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data() + pos);
  for (std::size_t i = 0; i < count; ++i) {
    const std::uint16_t v = bytes_per == 2 ? static_cast<std::uint16_t>((p[2 * i] << 8) | p[2 * i + 1])
                                           : p[i];
    if (v > maxval) throw FormatError("netpbm: sample exceeds maxval");
    img.samples[i] = v;
  }
  return img;
}

std::string encode(const Image& img) {
  if (img.channels != 1 && img.channels != 3)
    throw FormatError("netpbm: channels must be 1 or 3");
  if (img.width <= 0 || img.height <= 0 || img.maxval == 0)
    throw FormatError("netpbm: invalid image header");
  const std::size_t count = static_cast<std::size_t>(img.width) * img.height * img.channels;
  if (img.samples.size() != count) throw FormatError("netpbm: sample count mismatch");
  std::string out = (img.channels == 1 ? "P5\n" : "P6\n") + std::to_string(img.width) + " " +
                    std::to_string(img.height) + "\n" + std::to_string(img.maxval) + "\n";
  const bool wide = img.maxval > 255;
  out.reserve(out.size() + count * (wide ? 2 : 1));
  for (std::uint16_t v : img.samples) {
    if (v > img.maxval) throw FormatError("netpbm: sample exceeds maxval");
    if (wide) out.push_back(static_cast<char>(v >> 8));
    out.push_back(static_cast<char>(v & 0xFF));
  }
  return out;
}

Image read(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open image '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  try {
    return decode(ss.str());
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

void write(const std::filesystem::path& path, const Image& image) {
  const std::string bytes = encode(image);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot open '" + path.string() + "' for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError("failed writing '" + path.string() + "'");
}

}  // namespace rcnet::netpbm
