#include "forec/image_io.hpp"

#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <vector>

namespace forec {

namespace {

uint8_t quantize(float v) {
  float c = v < 0.f ? 0.f : (v > 1.f ? 1.f : v);
  return uint8_t(std::lround(c * 255.f));
}

int read_header_int(std::istream& in, const std::filesystem::path& path) {
  // Skips whitespace and '#' comment lines per the netpbm grammar.
  int c = in.get();
  while (c != EOF && (std::isspace(c) || c == '#')) {
    if (c == '#') {
      while (c != EOF && c != '\n') c = in.get();
    }
    c = in.get();
  }
  if (c == EOF || !std::isdigit(c))
    throw IoError("malformed header in " + path.string());
  int value = 0;
  while (c != EOF && std::isdigit(c)) {
    value = value * 10 + (c - '0');
    c = in.get();
  }
  if (c != EOF) in.unget();
  return value;
}

struct PnmHeader {
  int w = 0, h = 0;
};

PnmHeader read_pnm_header(std::istream& in, const char* magic, const std::filesystem::path& path) {
  char m0 = 0, m1 = 0;
  in.get(m0);
  in.get(m1);
  if (!in || m0 != magic[0] || m1 != magic[1])
    throw IoError(std::string("expected ") + magic + " magic in " + path.string());
  PnmHeader hd;
  hd.w = read_header_int(in, path);
  hd.h = read_header_int(in, path);
  int maxval = read_header_int(in, path);
  if (maxval != 255)
    throw IoError("unsupported maxval " + std::to_string(maxval) + " in " + path.string());
  int c = in.get();  // single whitespace before the payload
  if (c == EOF || !std::isspace(c))
    throw IoError("malformed header in " + path.string());
  if (hd.w <= 0 || hd.h <= 0)
    throw IoError("non-positive dimensions in " + path.string());
  return hd;
}

std::vector<uint8_t> read_payload(std::istream& in, size_t n, const std::filesystem::path& path) {
  std::vector<uint8_t> bytes(n);
  in.read(reinterpret_cast<char*>(bytes.data()), std::streamsize(n));
  if (size_t(in.gcount()) != n)
    throw IoError("truncated payload in " + path.string());
  return bytes;
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  return out;
}

}  // namespace

Tensor read_ppm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  PnmHeader hd = read_pnm_header(in, "P6", path);
  auto bytes = read_payload(in, size_t(hd.w) * size_t(hd.h) * 3, path);
  Tensor img = Tensor::zeros({3, hd.h, hd.w});
  size_t i = 0;
  for (int y = 0; y < hd.h; ++y)
    for (int x = 0; x < hd.w; ++x)
      for (int c = 0; c < 3; ++c)
        img.at3(c, y, x) = float(bytes[i++]) / 255.f;
  return img;
}

void write_ppm(const Tensor& image, const std::filesystem::path& path) {
  if (image.ndim() != 3 || image.dim(0) != 3)
    throw ShapeError("write_ppm expects a [3,H,W] tensor, got " + image.shape_str());
  int h = image.dim(1), w = image.dim(2);
  auto out = open_out(path);
  out << "P6\n" << w << " " << h << "\n255\n";
  std::vector<uint8_t> bytes(size_t(h) * size_t(w) * 3);
  size_t i = 0;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c)
        bytes[i++] = quantize(image.at3(c, y, x));
  out.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
  if (!out) throw IoError("failed writing " + path.string());
}

LabelMap read_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  PnmHeader hd = read_pnm_header(in, "P5", path);
  auto bytes = read_payload(in, size_t(hd.w) * size_t(hd.h), path);
  LabelMap m(hd.h, hd.w);
  m.v = std::move(bytes);
  return m;
}

void write_pgm(const LabelMap& labels, const std::filesystem::path& path) {
  auto out = open_out(path);
  out << "P5\n" << labels.w << " " << labels.h << "\n255\n";
  out.write(reinterpret_cast<const char*>(labels.v.data()), std::streamsize(labels.v.size()));
  if (!out) throw IoError("failed writing " + path.string());
}

Tensor read_pgm_gray(const std::filesystem::path& path) {
  LabelMap raw = read_pgm(path);
  Tensor g = Tensor::zeros({1, raw.h, raw.w});
  for (size_t i = 0; i < raw.v.size(); ++i) g.data[i] = float(raw.v[i]) / 255.f;
  return g;
}

void write_pgm_gray(const Tensor& gray, const std::filesystem::path& path) {
  int h, w;
  if (gray.ndim() == 2) {
    h = gray.dim(0);
    w = gray.dim(1);
  } else if (gray.ndim() == 3 && gray.dim(0) == 1) {
    h = gray.dim(1);
    w = gray.dim(2);
  } else {
    throw ShapeError("write_pgm_gray expects [H,W] or [1,H,W], got " + gray.shape_str());
  }
  LabelMap bytes(h, w);
  for (size_t i = 0; i < bytes.v.size(); ++i) bytes.v[i] = quantize(gray.data[i]);
  write_pgm(bytes, path);
}

}  // namespace forec
