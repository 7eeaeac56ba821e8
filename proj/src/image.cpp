#include "fgan/image.hpp"

#include <cctype>
#include <cmath>
#include <fstream>
#include <stdexcept>

namespace fgan {

void Image::validate(const char* what) const {
  if (height() <= 0 || width() <= 0)
    throw std::invalid_argument(std::string(what) + ": image dimensions must be positive");
  if (height() >= 150 || width() >= 150)
    throw std::invalid_argument(std::string(what) + ": pipeline images must be under 150x150");
  if (!pix.allFinite() || (pix < 0.0).any() || (pix > 1.0).any())
    throw std::invalid_argument(std::string(what) + ": intensities must be finite and in [0,1]");
}

std::vector<std::uint8_t> encode_pgm(const Image& img) {
  img.validate("encode_pgm");
  std::string header =
      "P5\n" + std::to_string(img.width()) + " " + std::to_string(img.height()) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.reserve(out.size() + static_cast<std::size_t>(img.height()) * img.width());
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x)
      out.push_back(static_cast<std::uint8_t>(std::floor(img(y, x) * 255.0 + 0.5)));
  return out;
}

namespace {

int read_pgm_token(const std::vector<std::uint8_t>& b, std::size_t& pos) {
  // skip whitespace and '#' comment lines
  while (pos < b.size()) {
    if (std::isspace(b[pos])) {
      ++pos;
    } else if (b[pos] == '#') {
      while (pos < b.size() && b[pos] != '\n') ++pos;
    } else {
      break;
    }
  }
  if (pos >= b.size() || !std::isdigit(b[pos]))
    throw std::runtime_error("pgm: malformed header");
  int v = 0;
  while (pos < b.size() && std::isdigit(b[pos])) v = v * 10 + (b[pos++] - '0');
  return v;
}

}  // namespace

Image decode_pgm(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '5')
    throw std::runtime_error("pgm: only binary P5 images are supported");
  std::size_t pos = 2;
  const int w = read_pgm_token(bytes, pos);
  const int h = read_pgm_token(bytes, pos);
  const int maxval = read_pgm_token(bytes, pos);
  if (maxval != 255) throw std::runtime_error("pgm: maxval must be 255");
  if (pos >= bytes.size() || !std::isspace(bytes[pos]))
    throw std::runtime_error("pgm: malformed header");
  ++pos;  // single whitespace before raster
  if (w <= 0 || h <= 0) throw std::runtime_error("pgm: bad dimensions");
  if (bytes.size() - pos < static_cast<std::size_t>(w) * h)
    throw std::runtime_error("pgm: truncated raster");
  Image img(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) img(y, x) = bytes[pos++] / 255.0;
  return img;
}

void write_pgm(const Image& img, const std::string& path) {
  const auto bytes = encode_pgm(img);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("pgm: cannot open " + path + " for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw std::runtime_error("pgm: short write to " + path);
}

Image read_pgm(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("pgm: cannot open " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                                  std::istreambuf_iterator<char>());
  return decode_pgm(bytes);
}

}  // namespace fgan
