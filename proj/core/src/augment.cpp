#include "forec/augment.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace forec {
namespace {

void flip_lr(Sample& s) {
  int h = s.label.h, w = s.label.w;
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w / 2; ++x)
        std::swap(s.image.at3(c, y, x), s.image.at3(c, y, w - 1 - x));
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w / 2; ++x) std::swap(s.label.at(y, x), s.label.at(y, w - 1 - x));
}

/// Center zoom: source coord = dst / s + off with off = (1 - 1/s)(n-1)/2.
double zoom_offset(double s, int n) { return (1.0 - 1.0 / s) * double(n - 1) * 0.5; }

void zoom_sample(const Sample& in, double s, Sample& out) {
  int h = in.label.h, w = in.label.w;
  double oy = zoom_offset(s, h), ox = zoom_offset(s, w);
  out.image = Tensor::zeros({3, h, w});
  out.label = LabelMap(h, w, kIgnoreLabel);
  for (int y = 0; y < h; ++y) {
    double fy = double(y) / s + oy;
    int y0 = int(std::floor(fy));
    double ty = fy - y0;
    int yc0 = std::clamp(y0, 0, h - 1), yc1 = std::clamp(y0 + 1, 0, h - 1);
    long ny = std::lround(fy);
    for (int x = 0; x < w; ++x) {
      double fx = double(x) / s + ox;
      int x0 = int(std::floor(fx));
      double tx = fx - x0;
      int xc0 = std::clamp(x0, 0, w - 1), xc1 = std::clamp(x0 + 1, 0, w - 1);
      for (int c = 0; c < 3; ++c) {
        double v00 = in.image.at3(c, yc0, xc0), v01 = in.image.at3(c, yc0, xc1);
        double v10 = in.image.at3(c, yc1, xc0), v11 = in.image.at3(c, yc1, xc1);
        double v = (1 - ty) * ((1 - tx) * v00 + tx * v01) + ty * ((1 - tx) * v10 + tx * v11);
        out.image.at3(c, y, x) = float(v);
      }
      long nx = std::lround(fx);
      if (ny >= 0 && ny < h && nx >= 0 && nx < w)
        out.label.at(y, x) = in.label.at(int(ny), int(nx));
    }
  }
}

}  // namespace

Sample weak_aug(const Sample& s, const AugConfig& cfg, Rng& rng, AugRecord& rec) {
  rec.flip = rng.bernoulli(cfg.flip_p);
  Sample out = s;
  if (rec.flip) flip_lr(out);
  return out;
}

void gaussian_blur(Tensor& image, double sigma) {
  int h = image.dim(1), w = image.dim(2);
  int rad = int(std::ceil(2.5 * sigma));
  std::vector<double> k(size_t(2 * rad + 1));
  double sum = 0;
  for (int i = -rad; i <= rad; ++i) {
    k[size_t(i + rad)] = std::exp(-0.5 * double(i) * double(i) / (sigma * sigma));
    sum += k[size_t(i + rad)];
  }
  for (double& v : k) v /= sum;

  std::vector<float> tmp(size_t(h) * size_t(w));
  for (int c = 0; c < 3; ++c) {
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        double acc = 0;
        for (int i = -rad; i <= rad; ++i)
          acc += k[size_t(i + rad)] * image.at3(c, y, std::clamp(x + i, 0, w - 1));
        tmp[size_t(y) * size_t(w) + size_t(x)] = float(acc);
      }
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        double acc = 0;
        for (int i = -rad; i <= rad; ++i)
          acc += k[size_t(i + rad)] * tmp[size_t(std::clamp(y + i, 0, h - 1)) * size_t(w) + size_t(x)];
        image.at3(c, y, x) = float(acc);
      }
  }
}

Sample cutmix(const Sample& a, const Sample& b, int x0, int y0, int x1, int y1) {
  Sample out = a;
  for (int y = y0; y < y1; ++y)
    for (int x = x0; x < x1; ++x) {
      for (int c = 0; c < 3; ++c) out.image.at3(c, y, x) = b.image.at3(c, y, x);
      out.label.at(y, x) = b.label.at(y, x);
    }
  return out;
}

Sample strong_aug(const Sample& own, const Sample& partner, const AugConfig& cfg,
                  Rng& rng, AugRecord& rec) {
  int h = own.label.h, w = own.label.w;

  // Fixed draw order, every value drawn whether or not its op fires, so the
  // stream stays aligned across configs and modes.
  rec.zoom = rng.uniform(cfg.zoom_lo, cfg.zoom_hi);
  for (int c = 0; c < 3; ++c)
    rec.gain[c] = float(rng.uniform(1.0 - cfg.jitter_gain, 1.0 + cfg.jitter_gain));
  for (int c = 0; c < 3; ++c)
    rec.shift[c] = float(rng.uniform(-cfg.jitter_shift, cfg.jitter_shift));
  rec.grayscale = rng.bernoulli(cfg.gray_p);
  rec.blurred = rng.bernoulli(cfg.blur_p);
  rec.blur_sigma = rng.uniform(cfg.blur_sigma_lo, cfg.blur_sigma_hi);
  rec.cutmix = rng.bernoulli(cfg.cutmix_p);
  double box_area = rng.uniform(cfg.cutmix_area_lo, cfg.cutmix_area_hi) * double(h) * double(w);
  double box_aspect = rng.uniform(cfg.cutmix_aspect_lo, cfg.cutmix_aspect_hi);
  double box_cx = rng.uniform(0.0, double(w));
  double box_cy = rng.uniform(0.0, double(h));

  rec.zoom_off_x = zoom_offset(rec.zoom, w);
  rec.zoom_off_y = zoom_offset(rec.zoom, h);
  rec.partner_id = partner.id;

  Sample out;
  out.id = own.id;
  zoom_sample(own, rec.zoom, out);

  for (int c = 0; c < 3; ++c) {
    float g = rec.gain[c], sh = rec.shift[c];
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        out.image.at3(c, y, x) = std::clamp(out.image.at3(c, y, x) * g + sh, 0.f, 1.f);
  }

  if (rec.grayscale)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        float lum = 0.299f * out.image.at3(0, y, x) + 0.587f * out.image.at3(1, y, x) +
                    0.114f * out.image.at3(2, y, x);
        for (int c = 0; c < 3; ++c) out.image.at3(c, y, x) = lum;
      }

  if (rec.blurred) gaussian_blur(out.image, rec.blur_sigma);

  double bw = std::sqrt(box_area * box_aspect), bh = std::sqrt(box_area / box_aspect);
  rec.box_x0 = std::clamp(int(std::lround(box_cx - bw / 2)), 0, w);
  rec.box_x1 = std::clamp(int(std::lround(box_cx + bw / 2)), 0, w);
  rec.box_y0 = std::clamp(int(std::lround(box_cy - bh / 2)), 0, h);
  rec.box_y1 = std::clamp(int(std::lround(box_cy + bh / 2)), 0, h);
  if (rec.cutmix)
    out = cutmix(out, partner, rec.box_x0, rec.box_y0, rec.box_x1, rec.box_y1);
  return out;
}

LabelMap transport_map(const LabelMap& own, const LabelMap& partner,
                       const AugRecord& rec, uint8_t fill) {
  int h = own.h, w = own.w;
  LabelMap out(h, w, fill);
  for (int y = 0; y < h; ++y) {
    long sy = std::lround(double(y) / rec.zoom + rec.zoom_off_y);
    for (int x = 0; x < w; ++x) {
      long sx = std::lround(double(x) / rec.zoom + rec.zoom_off_x);
      if (sy >= 0 && sy < h && sx >= 0 && sx < w) out.at(y, x) = own.at(int(sy), int(sx));
    }
  }
  if (rec.cutmix)
    for (int y = rec.box_y0; y < rec.box_y1; ++y)
      for (int x = rec.box_x0; x < rec.box_x1; ++x) out.at(y, x) = partner.at(y, x);
  return out;
}

}  // namespace forec
