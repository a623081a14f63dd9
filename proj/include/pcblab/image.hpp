#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace pcblab {

// Dense H x W x C image, row-major, values in [0, 1].
struct Image {
  int h = 0;
  int w = 0;
  int c = 0;
  std::vector<float> pix;

  Image() = default;
  Image(int h_, int w_, int c_, float fill = 0.0f)
      : h(h_), w(w_), c(c_), pix(static_cast<size_t>(h_) * w_ * c_, fill) {}

  float& at(int y, int x, int ch) {
    return pix[(static_cast<size_t>(y) * w + x) * c + ch];
  }
  float at(int y, int x, int ch) const {
    return pix[(static_cast<size_t>(y) * w + x) * c + ch];
  }
  size_t size() const { return pix.size(); }
};

// 8-bit quantized image, the on-disk and in-dataset representation.
struct ImageU8 {
  int h = 0;
  int w = 0;
  int c = 0;
  std::vector<uint8_t> pix;

  size_t size() const { return pix.size(); }
};

ImageU8 quantize(const Image& img);
Image dequantize(const ImageU8& img);

// Mean over channels; returns a single-channel image.
Image to_gray(const Image& img);

// Mean absolute pixel difference over an interior window that excludes
// `border` pixels on every side. Images must have identical dimensions.
double mean_abs_diff(const Image& a, const Image& b, int border);

// Binary PPM (P6), 8-bit RGB, lossless. Single-channel images are written by
// replicating the channel. Throws std::runtime_error on IO failure.
void write_ppm(const std::string& path, const ImageU8& img);
ImageU8 read_ppm(const std::string& path);

}  // namespace pcblab
