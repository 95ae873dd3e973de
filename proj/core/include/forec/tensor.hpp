#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <string>
#include <vector>

#include "forec/errors.hpp"

namespace forec {

/// Dense row-major float32 tensor. Activations use NCHW layout.
struct Tensor {
  std::vector<int> shape;
  std::vector<float> data;

  Tensor() = default;
  Tensor(std::vector<int> s, std::vector<float> d) : shape(std::move(s)), data(std::move(d)) {
    if (numel_of(shape) != int64_t(data.size()))
      throw ShapeError("tensor data length does not match shape");
  }

  static int64_t numel_of(const std::vector<int>& s) {
    int64_t n = 1;
    for (int d : s) {
      if (d <= 0) throw ShapeError("tensor dimensions must be positive");
      n *= d;
    }
    return n;
  }

  static Tensor zeros(std::vector<int> s) {
    int64_t n = numel_of(s);
    return Tensor(std::move(s), std::vector<float>(size_t(n), 0.f));
  }

  static Tensor full(std::vector<int> s, float v) {
    int64_t n = numel_of(s);
    return Tensor(std::move(s), std::vector<float>(size_t(n), v));
  }

  int64_t numel() const { return int64_t(data.size()); }
  int dim(int i) const { return shape[size_t(i)]; }
  int ndim() const { return int(shape.size()); }
  bool empty() const { return data.empty(); }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  // NCHW accessors.
  float& at4(int n, int c, int h, int w) {
    return data[size_t(((int64_t(n) * shape[1] + c) * shape[2] + h) * shape[3] + w)];
  }
  float at4(int n, int c, int h, int w) const {
    return data[size_t(((int64_t(n) * shape[1] + c) * shape[2] + h) * shape[3] + w)];
  }
  float& at3(int c, int h, int w) {
    return data[size_t((int64_t(c) * shape[1] + h) * shape[2] + w)];
  }
  float at3(int c, int h, int w) const {
    return data[size_t((int64_t(c) * shape[1] + h) * shape[2] + w)];
  }

  void fill(float v) { std::fill(data.begin(), data.end(), v); }

  std::string shape_str() const {
    std::string s = "[";
    for (size_t i = 0; i < shape.size(); ++i) {
      if (i) s += ",";
      s += std::to_string(shape[i]);
    }
    return s + "]";
  }
};

/// Throws NumericError if the tensor contains NaN or Inf. `what` names the
/// producing operation in the diagnostic.
inline void check_finite(const Tensor& t, const char* what) {
  for (float v : t.data) {
    if (!std::isfinite(v))
      throw NumericError(std::string("non-finite value produced by ") + what);
  }
}

/// Per-pixel class-index map. Values are class ids in [0, C) or the ignore
/// sentinel 255.
struct LabelMap {
  int h = 0, w = 0;
  std::vector<uint8_t> v;

  LabelMap() = default;
  LabelMap(int hh, int ww, uint8_t fill = 0) : h(hh), w(ww), v(size_t(hh) * size_t(ww), fill) {}

  uint8_t& at(int y, int x) { return v[size_t(y) * size_t(w) + size_t(x)]; }
  uint8_t at(int y, int x) const { return v[size_t(y) * size_t(w) + size_t(x)]; }
  size_t pixels() const { return v.size(); }
  bool operator==(const LabelMap& o) const = default;
};

constexpr uint8_t kIgnoreLabel = 255;

}  // namespace forec
