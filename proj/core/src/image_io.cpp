#include "mtdnet/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <stdexcept>

namespace mtdnet {

namespace {
[[noreturn]] void io_fail(const std::filesystem::path& path, const std::string& why) {
  throw std::runtime_error("image '" + path.string() + "': " + why);
}

void check_chw(const Tensor& image, const char* what) {
  if (image.shape.size() != 3 || image.shape[0] != 3)
    throw std::invalid_argument(std::string(what) + ": expected [3,H,W], got " + shape_str(image.shape));
}

// Skips whitespace and '#' comment lines in a PPM header.
int read_header_int(std::istream& in) {
  int c = in.get();
  while (c != EOF) {
    if (c == '#') {
      while (c != EOF && c != '\n') c = in.get();
    } else if (!std::isspace(c)) {
      break;
    }
    c = in.get();
  }
  if (c == EOF || !std::isdigit(c)) return -1;
  int v = 0;
  while (c != EOF && std::isdigit(c)) {
    v = v * 10 + (c - '0');
    c = in.get();
  }
  return v;  // consumed exactly one trailing separator character
}
}  // namespace

void write_ppm(const Tensor& image, const std::filesystem::path& path) {
  check_chw(image, "write_ppm");
  const int h = image.shape[1], w = image.shape[2];
  std::ofstream out(path, std::ios::binary);
  if (!out) io_fail(path, "cannot open for writing");
  out << "P6\n" << w << " " << h << "\n255\n";
  std::vector<unsigned char> row(static_cast<size_t>(w) * 3);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) {
        const float v = std::clamp(image.at3(c, y, x), 0.0f, 1.0f);
        row[x * 3 + c] = static_cast<unsigned char>(std::lround(v * 255.0f));
      }
    out.write(reinterpret_cast<const char*>(row.data()), row.size());
  }
  if (!out) io_fail(path, "write failed");
}

Tensor read_ppm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) io_fail(path, "cannot open");
  char m0 = 0, m1 = 0;
  in.get(m0);
  in.get(m1);
  if (m0 != 'P' || m1 != '6') io_fail(path, "not a binary PPM (P6) file");
  const int w = read_header_int(in);
  const int h = read_header_int(in);
  const int maxval = read_header_int(in);
  if (w <= 0 || h <= 0) io_fail(path, "bad dimensions in header");
  if (maxval != 255) io_fail(path, "unsupported maxval " + std::to_string(maxval));
  std::vector<unsigned char> raw(static_cast<size_t>(w) * h * 3);
  in.read(reinterpret_cast<char*>(raw.data()), raw.size());
  if (in.gcount() != static_cast<std::streamsize>(raw.size())) io_fail(path, "truncated pixel data");
  Tensor img({3, h, w});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c)
        img.at3(c, y, x) = raw[(static_cast<size_t>(y) * w + x) * 3 + c] / 255.0f;
  return img;
}

Tensor resize_bilinear(const Tensor& image, int h, int w) {
  check_chw(image, "resize_bilinear");
  if (h < 1 || w < 1) throw std::invalid_argument("resize_bilinear: target dims must be >= 1");
  const int ih = image.shape[1], iw = image.shape[2];
  Tensor out({3, h, w});
  const float sy = static_cast<float>(ih) / h;
  const float sx = static_cast<float>(iw) / w;
  for (int y = 0; y < h; ++y) {
    const float fy = std::clamp((y + 0.5f) * sy - 0.5f, 0.0f, static_cast<float>(ih - 1));
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, ih - 1);
    const float wy = fy - y0;
    for (int x = 0; x < w; ++x) {
      const float fx = std::clamp((x + 0.5f) * sx - 0.5f, 0.0f, static_cast<float>(iw - 1));
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, iw - 1);
      const float wx = fx - x0;
      for (int c = 0; c < 3; ++c) {
        const float top = image.at3(c, y0, x0) * (1 - wx) + image.at3(c, y0, x1) * wx;
        const float bot = image.at3(c, y1, x0) * (1 - wx) + image.at3(c, y1, x1) * wx;
        out.at3(c, y, x) = top * (1 - wy) + bot * wy;
      }
    }
  }
  return out;
}

Tensor hflip(const Tensor& image) {
  check_chw(image, "hflip");
  const int h = image.shape[1], w = image.shape[2];
  Tensor out(image.shape);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) out.at3(c, y, x) = image.at3(c, y, w - 1 - x);
  return out;
}

}  // namespace mtdnet
