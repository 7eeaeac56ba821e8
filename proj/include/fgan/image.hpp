#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <string>
#include <vector>

namespace fgan {

/// Single-channel image with intensities in [0,1]. Pipeline images stay under
/// 150x150.
struct Image {
  Eigen::ArrayXXd pix;  // (height, width)

  Image() = default;
  Image(int height, int width) : pix(Eigen::ArrayXXd::Zero(height, width)) {}

  int height() const { return static_cast<int>(pix.rows()); }
  int width() const { return static_cast<int>(pix.cols()); }
  double& operator()(int y, int x) { return pix(y, x); }
  double operator()(int y, int x) const { return pix(y, x); }

  Image& clamp() {
    pix = pix.cwiseMax(0.0).cwiseMin(1.0);
    return *this;
  }

  void validate(const char* what) const;
};

/// Binary PGM (P5, maxval 255). Writing rounds half away from zero; reading
/// maps v/255 back into [0,1].
std::vector<std::uint8_t> encode_pgm(const Image& img);
Image decode_pgm(const std::vector<std::uint8_t>& bytes);
void write_pgm(const Image& img, const std::string& path);
Image read_pgm(const std::string& path);

}  // namespace fgan
