#include "pcblab/image.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

namespace pcblab {

ImageU8 quantize(const Image& img) {
  ImageU8 out;
  out.h = img.h;
  out.w = img.w;
  out.c = img.c;
  out.pix.resize(img.pix.size());
  for (size_t i = 0; i < img.pix.size(); ++i) {
    float v = std::clamp(img.pix[i], 0.0f, 1.0f);
    out.pix[i] = static_cast<uint8_t>(std::lround(v * 255.0f));
  }
  return out;
}

Image dequantize(const ImageU8& img) {
  Image out(img.h, img.w, img.c);
  for (size_t i = 0; i < img.pix.size(); ++i) {
    out.pix[i] = static_cast<float>(img.pix[i]) * (1.0f / 255.0f);
  }
  return out;
}

Image to_gray(const Image& img) {
  if (img.c == 1) return img;
  Image out(img.h, img.w, 1);
  const float inv = 1.0f / static_cast<float>(img.c);
  for (int y = 0; y < img.h; ++y) {
    for (int x = 0; x < img.w; ++x) {
      float s = 0.0f;
      for (int ch = 0; ch < img.c; ++ch) s += img.at(y, x, ch);
      out.at(y, x, 0) = s * inv;
    }
  }
  return out;
}

double mean_abs_diff(const Image& a, const Image& b, int border) {
  if (a.h != b.h || a.w != b.w || a.c != b.c) {
    throw std::invalid_argument("mean_abs_diff: image dimensions differ");
  }
  double acc = 0.0;
  long n = 0;
  for (int y = border; y < a.h - border; ++y) {
    for (int x = border; x < a.w - border; ++x) {
      for (int ch = 0; ch < a.c; ++ch) {
        acc += std::abs(static_cast<double>(a.at(y, x, ch)) - b.at(y, x, ch));
        ++n;
      }
    }
  }
  return n > 0 ? acc / static_cast<double>(n) : 0.0;
}

void write_ppm(const std::string& path, const ImageU8& img) {
  if (img.c != 1 && img.c != 3) {
    throw std::invalid_argument("write_ppm: expected 1 or 3 channels");
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("write_ppm: cannot open " + path);
  f << "P6\n" << img.w << " " << img.h << "\n255\n";
  if (img.c == 3) {
    f.write(reinterpret_cast<const char*>(img.pix.data()),
            static_cast<std::streamsize>(img.pix.size()));
  } else {
    std::vector<uint8_t> rgb(static_cast<size_t>(img.h) * img.w * 3);
    for (size_t i = 0; i < img.pix.size(); ++i) {
      rgb[3 * i] = rgb[3 * i + 1] = rgb[3 * i + 2] = img.pix[i];
    }
    f.write(reinterpret_cast<const char*>(rgb.data()),
            static_cast<std::streamsize>(rgb.size()));
  }
  if (!f) throw std::runtime_error("write_ppm: write failed for " + path);
}

ImageU8 read_ppm(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("read_ppm: cannot open " + path);
  std::string magic;
  f >> magic;
  if (magic != "P6") throw std::runtime_error("read_ppm: not a P6 file: " + path);
  auto next_int = [&f, &path]() {
    // Skip whitespace and '#' comment lines between header fields.
    int ch = f.get();
    while (ch == ' ' || ch == '\t' || ch == '\n' || ch == '\r' || ch == '#') {
      if (ch == '#') {
        while (ch != '\n' && ch != EOF) ch = f.get();
      }
      ch = f.get();
    }
    int v = 0;
    bool any = false;
    while (ch >= '0' && ch <= '9') {
      v = v * 10 + (ch - '0');
      any = true;
      ch = f.get();
    }
    if (!any) throw std::runtime_error("read_ppm: malformed header in " + path);
    return v;
  };
  ImageU8 img;
  img.w = next_int();
  img.h = next_int();
  const int maxval = next_int();
  if (maxval != 255) throw std::runtime_error("read_ppm: expected maxval 255");
  img.c = 3;
  img.pix.resize(static_cast<size_t>(img.h) * img.w * 3);
  f.read(reinterpret_cast<char*>(img.pix.data()),
         static_cast<std::streamsize>(img.pix.size()));
  if (f.gcount() != static_cast<std::streamsize>(img.pix.size())) {
    throw std::runtime_error("read_ppm: truncated pixel data in " + path);
  }
  return img;
}

}  // namespace pcblab
