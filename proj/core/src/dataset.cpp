#include "forec/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "forec/image_io.hpp"
#include "forec/parallel.hpp"

namespace forec {
namespace {

using nlohmann::json;

constexpr int kBgGrid = 4;
constexpr double kNoiseSigma = 0.02;
constexpr double kMinColorDist2 = 0.16;  // min fill/background rgb distance 0.4
constexpr int kPlaceAttempts = 40;
constexpr int kColorAttempts = 32;
constexpr int kMinShapePixels = 12;

struct ShapeGeom {
  int kind = 0;  // 0 disc, 1 rectangle, 2 triangle
  double cx = 0, cy = 0;
  double ax = 0, ay = 0;  // half extents (radii for discs)
  double rot = 0;         // radians, 0 for the axis-aligned classes
};

bool inside(const ShapeGeom& g, double px, double py) {
  double dx = px - g.cx, dy = py - g.cy;
  if (g.rot != 0.0) {
    double c = std::cos(g.rot), s = std::sin(g.rot);
    double rx = c * dx + s * dy;
    double ry = c * dy - s * dx;
    dx = rx;
    dy = ry;
  }
  switch (g.kind) {
    case 0: {
      double u = dx / g.ax, v = dy / g.ay;
      return u * u + v * v <= 1.0;
    }
    case 1:
      return std::abs(dx) <= g.ax && std::abs(dy) <= g.ay;
    default: {
      // Isoceles triangle, apex (0,-ay), base corners (+-ax,+ay): the half
      // width grows linearly from apex to base.
      if (dy < -g.ay || dy > g.ay) return false;
      double t = (dy + g.ay) / (2.0 * g.ay);
      return std::abs(dx) <= g.ax * t;
    }
  }
}

/// Pixel indices (y*w+x) whose centers fall inside the shape.
std::vector<int> footprint(const ShapeGeom& g, int h, int w) {
  double rad = std::hypot(g.ax, g.ay);
  int x0 = std::max(0, int(std::floor(g.cx - rad)));
  int x1 = std::min(w - 1, int(std::ceil(g.cx + rad)));
  int y0 = std::max(0, int(std::floor(g.cy - rad)));
  int y1 = std::min(h - 1, int(std::ceil(g.cy + rad)));
  std::vector<int> px;
  for (int y = y0; y <= y1; ++y)
    for (int x = x0; x <= x1; ++x)
      if (inside(g, double(x), double(y))) px.push_back(y * w + x);
  return px;
}

ShapeGeom draw_geom(int cls, int h, int w, Rng& rng) {
  const double m = double(std::min(h, w));
  ShapeGeom g;
  g.kind = (cls - 1) % 3;
  int tier = (cls - 1) / 3;  // 0 axis-aligned, higher tiers rotated
  switch (g.kind) {
    case 0: {
      double r = rng.uniform(0.09, 0.20) * m;
      g.ax = g.ay = r;
      if (tier > 0) g.ay = r * rng.uniform(0.45, 0.65);  // rotated disc = ellipse
      break;
    }
    case 1:
      g.ax = rng.uniform(0.08, 0.18) * m;
      g.ay = rng.uniform(0.08, 0.18) * m;
      break;
    default:
      g.ax = rng.uniform(0.10, 0.22) * m;
      g.ay = rng.uniform(0.10, 0.22) * m;
      break;
  }
  if (tier == 1)
    g.rot = rng.uniform(0.35, 1.22);
  else if (tier >= 2)
    g.rot = rng.uniform(1.92, 2.79);
  double mx = g.rot != 0.0 ? std::hypot(g.ax, g.ay) : g.ax;
  double my = g.rot != 0.0 ? std::hypot(g.ax, g.ay) : g.ay;
  g.cx = rng.uniform(mx + 1.0, double(w) - 2.0 - mx);
  g.cy = rng.uniform(my + 1.0, double(h) - 2.0 - my);
  return g;
}

void pick_color(Rng& rng, const double bg[3], float out[3]) {
  double best = -1.0;
  for (int i = 0; i < kColorAttempts; ++i) {
    double c[3] = {rng.uniform(), rng.uniform(), rng.uniform()};
    double d2 = 0;
    for (int k = 0; k < 3; ++k) d2 += (c[k] - bg[k]) * (c[k] - bg[k]);
    if (d2 > best) {
      best = d2;
      for (int k = 0; k < 3; ++k) out[k] = float(c[k]);
    }
    if (d2 >= kMinColorDist2) break;
  }
}

void gen_one(Sample& out, int id, int h, int w, int num_obj, uint64_t master) {
  Rng rng(splitmix64_mix(master ^ uint64_t(id)));

  // Smooth background: coarse random grid, bilinearly upsampled.
  float grid[3][kBgGrid * kBgGrid];
  for (int c = 0; c < 3; ++c)
    for (int i = 0; i < kBgGrid * kBgGrid; ++i) grid[c][i] = rng.uniform_f(0.05f, 0.95f);

  Tensor img = Tensor::zeros({3, h, w});
  const size_t plane = size_t(h) * size_t(w);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < h; ++y) {
      double fy = double(y) * (kBgGrid - 1) / double(h - 1);
      int gy = std::min(int(fy), kBgGrid - 2);
      double ty = fy - gy;
      for (int x = 0; x < w; ++x) {
        double fx = double(x) * (kBgGrid - 1) / double(w - 1);
        int gx = std::min(int(fx), kBgGrid - 2);
        double tx = fx - gx;
        double v00 = grid[c][gy * kBgGrid + gx];
        double v01 = grid[c][gy * kBgGrid + gx + 1];
        double v10 = grid[c][(gy + 1) * kBgGrid + gx];
        double v11 = grid[c][(gy + 1) * kBgGrid + gx + 1];
        double v = (1 - ty) * ((1 - tx) * v00 + tx * v01) + ty * ((1 - tx) * v10 + tx * v11);
        img.data[plane * size_t(c) + size_t(y) * size_t(w) + size_t(x)] = float(v);
      }
    }

  LabelMap lab(h, w, 0);
  auto paint = [&](const ShapeGeom& g, int cls, const std::vector<int>& px) {
    double mean[3] = {0, 0, 0};
    for (int idx : px)
      for (int c = 0; c < 3; ++c) mean[c] += img.data[plane * size_t(c) + size_t(idx)];
    for (double& v : mean) v /= double(px.size());
    float col[3] = {0.f, 0.f, 0.f};
    pick_color(rng, mean, col);
    for (int idx : px) {
      lab.v[size_t(idx)] = uint8_t(cls);
      for (int c = 0; c < 3; ++c) img.data[plane * size_t(c) + size_t(idx)] = col[c];
    }
    (void)g;
  };

  int want = 1 + int(rng.uniform_int(3));
  int placed = 0;
  for (int s = 0; s < want; ++s) {
    for (int attempt = 0; attempt < kPlaceAttempts; ++attempt) {
      int cls = 1 + int(rng.uniform_int(uint64_t(num_obj)));
      ShapeGeom g = draw_geom(cls, h, w, rng);
      std::vector<int> px = footprint(g, h, w);
      if (int(px.size()) < kMinShapePixels) continue;
      bool clear = true;
      for (int idx : px)
        if (lab.v[size_t(idx)] != 0) {
          clear = false;
          break;
        }
      if (!clear) continue;
      paint(g, cls, px);
      ++placed;
      break;
    }
  }
  if (placed == 0) {
    // Fallback so every image keeps at least one object.
    ShapeGeom g;
    g.kind = 0;
    g.ax = g.ay = 0.15 * double(std::min(h, w));
    g.cx = double(w - 1) / 2.0;
    g.cy = double(h - 1) / 2.0;
    paint(g, 1, footprint(g, h, w));
  }

  // Sensor noise on background pixels; shape fills stay solid.
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      if (lab.at(y, x) != 0) continue;
      for (int c = 0; c < 3; ++c) {
        float& v = img.data[plane * size_t(c) + size_t(y) * size_t(w) + size_t(x)];
        v += float(kNoiseSigma * rng.normal());
      }
    }
  for (float& v : img.data) v = std::min(1.f, std::max(0.f, v));

  out.image = std::move(img);
  out.label = std::move(lab);
  out.id = id;
}

std::string ratio_tag(double frac) {
  for (int q = 1; q <= 4096; ++q) {
    double pq = frac * q;
    double r = std::round(pq);
    if (r >= 1.0 && std::abs(pq - r) < 1e-9) {
      int p = int(r);
      int g = std::gcd(p, q);
      return std::to_string(p / g) + "/" + std::to_string(q / g);
    }
  }
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", frac);
  return buf;
}

std::string index_name(int id, const char* ext) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%04d%s", id, ext);
  return buf;
}

}  // namespace

Dataset gen_shapes(int count, int h, int w, int num_object_classes, uint64_t seed) {
  if (count < 0) throw ValueError("gen_shapes: count must be non-negative");
  if (h < 32 || w < 32) throw ValueError("gen_shapes: image size must be at least 32x32");
  if (num_object_classes < 1 || num_object_classes > 8)
    throw ValueError("gen_shapes: num_object_classes must be in [1, 8]");

  Dataset ds;
  ds.h = h;
  ds.w = w;
  ds.num_classes = num_object_classes + 1;
  ds.seed = seed;
  ds.samples.resize(size_t(count));
  parallel_for(count, [&](int64_t i) {
    gen_one(ds.samples[size_t(i)], int(i), h, w, num_object_classes, seed);
  });
  return ds;
}

Partition make_partition(const Dataset& ds, double labeled_fraction, uint64_t seed) {
  if (!(labeled_fraction > 0.0) || labeled_fraction > 1.0)
    throw ValueError("labeled_fraction must be in (0, 1]");
  int train_n = ds.train_count();
  if (train_n <= 0) throw ValueError("dataset has no training samples");
  int n_lab = int(std::ceil(labeled_fraction * double(train_n)));
  if (n_lab < 1) throw ValueError("labeled_fraction selects no labeled sample");
  n_lab = std::min(n_lab, train_n);

  std::vector<int> ids(static_cast<size_t>(train_n));
  std::iota(ids.begin(), ids.end(), 0);
  Rng rng(splitmix64_mix(seed));
  for (int i = train_n - 1; i > 0; --i) {
    int j = int(rng.uniform_int(uint64_t(i) + 1));
    std::swap(ids[size_t(i)], ids[size_t(j)]);
  }

  Partition part;
  part.labeled.assign(ids.begin(), ids.begin() + n_lab);
  part.unlabeled.assign(ids.begin() + n_lab, ids.end());
  std::sort(part.labeled.begin(), part.labeled.end());
  std::sort(part.unlabeled.begin(), part.unlabeled.end());
  part.validation.resize(size_t(ds.val_count));
  std::iota(part.validation.begin(), part.validation.end(), train_n);
  part.ratio = ratio_tag(labeled_fraction);
  return part;
}

PoolSampler::PoolSampler(std::vector<int> ids, int batch, int steps_per_epoch)
    : ids_(std::move(ids)), batch_(batch), steps_per_epoch_(steps_per_epoch) {
  if (ids_.empty()) throw ValueError("sample pool is empty");
  if (batch_ <= 0 || steps_per_epoch_ <= 0)
    throw ValueError("batch and steps_per_epoch must be positive");
  with_replacement_ = int64_t(ids_.size()) < int64_t(batch_) * int64_t(steps_per_epoch_);
  order_ = ids_;
}

std::vector<int> PoolSampler::next(Rng& rng) {
  std::vector<int> out(static_cast<size_t>(batch_));
  if (with_replacement_) {
    for (int& v : out) v = ids_[size_t(rng.uniform_int(ids_.size()))];
    return out;
  }
  if (step_in_epoch_ == 0) {
    for (size_t i = order_.size() - 1; i > 0; --i) {
      size_t j = size_t(rng.uniform_int(uint64_t(i) + 1));
      std::swap(order_[i], order_[j]);
    }
  }
  for (int i = 0; i < batch_; ++i)
    out[size_t(i)] = order_[size_t(step_in_epoch_) * size_t(batch_) + size_t(i)];
  step_in_epoch_ = (step_in_epoch_ + 1) % steps_per_epoch_;
  return out;
}

void save_dataset(const Dataset& ds, const Partition& part,
                  const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir / "images", ec);
  fs::create_directories(dir / "labels", ec);
  if (ec) throw IoError("cannot create dataset directory " + dir.string());

  for (int i = 0; i < ds.count(); ++i) {
    write_ppm(ds.samples[size_t(i)].image, dir / "images" / index_name(i, ".ppm"));
    write_pgm(ds.samples[size_t(i)].label, dir / "labels" / index_name(i, ".pgm"));
  }

  json meta;
  meta["h"] = ds.h;
  meta["w"] = ds.w;
  meta["num_classes"] = ds.num_classes;
  meta["train_count"] = ds.train_count();
  meta["val_count"] = ds.val_count;
  meta["seed"] = ds.seed;
  meta["ratio"] = part.ratio;
  meta["labeled_ids"] = part.labeled;
  meta["unlabeled_ids"] = part.unlabeled;
  meta["validation_ids"] = part.validation;

  std::ofstream out(dir / "meta.json", std::ios::binary);
  out << meta.dump(2) << "\n";
  if (!out) throw IoError("cannot write " + (dir / "meta.json").string());
}

LoadedDataset load_dataset(const std::filesystem::path& dir) {
  std::ifstream in(dir / "meta.json", std::ios::binary);
  if (!in) throw IoError("cannot open " + (dir / "meta.json").string());
  json meta;
  try {
    in >> meta;
  } catch (const json::exception& e) {
    throw IoError("malformed meta.json: " + std::string(e.what()));
  }

  LoadedDataset out;
  Dataset& ds = out.dataset;
  Partition& part = out.partition;
  int train_count = 0;
  try {
    ds.h = meta.at("h").get<int>();
    ds.w = meta.at("w").get<int>();
    ds.num_classes = meta.at("num_classes").get<int>();
    train_count = meta.at("train_count").get<int>();
    ds.val_count = meta.at("val_count").get<int>();
    ds.seed = meta.at("seed").get<uint64_t>();
    part.ratio = meta.at("ratio").get<std::string>();
    part.labeled = meta.at("labeled_ids").get<std::vector<int>>();
    part.unlabeled = meta.at("unlabeled_ids").get<std::vector<int>>();
    part.validation = meta.at("validation_ids").get<std::vector<int>>();
  } catch (const json::exception& e) {
    throw IoError("meta.json missing or mistyped field: " + std::string(e.what()));
  }
  if (ds.h <= 0 || ds.w <= 0 || ds.num_classes < 2 || train_count < 0 || ds.val_count < 0)
    throw IoError("meta.json has invalid geometry or counts");

  int total = train_count + ds.val_count;
  ds.samples.resize(size_t(total));
  for (int i = 0; i < total; ++i) {
    Sample& s = ds.samples[size_t(i)];
    s.id = i;
    s.image = read_ppm(dir / "images" / index_name(i, ".ppm"));
    s.label = read_pgm(dir / "labels" / index_name(i, ".pgm"));
    if (s.image.dim(1) != ds.h || s.image.dim(2) != ds.w || s.label.h != ds.h ||
        s.label.w != ds.w)
      throw IoError("sample " + std::to_string(i) + " does not match meta.json geometry");
    for (uint8_t v : s.label.v)
      if (v >= ds.num_classes && v != kIgnoreLabel)
        throw IoError("sample " + std::to_string(i) + " has out-of-range label " +
                      std::to_string(int(v)));
  }

  // Partition invariants: labeled + unlabeled cover the training pool
  // exactly once, validation ids are the held-out tail.
  std::vector<uint8_t> seen(size_t(total), 0);
  auto mark = [&](const std::vector<int>& ids, bool val_range) {
    for (int id : ids) {
      bool in_range = val_range ? (id >= train_count && id < total) : (id >= 0 && id < train_count);
      if (!in_range || seen[size_t(id)]) throw IoError("meta.json partition ids are inconsistent");
      seen[size_t(id)] = 1;
    }
  };
  mark(part.labeled, false);
  mark(part.unlabeled, false);
  mark(part.validation, true);
  if (int(part.labeled.size() + part.unlabeled.size()) != train_count ||
      int(part.validation.size()) != ds.val_count)
    throw IoError("meta.json partition does not cover the dataset");
  return out;
}

}  // namespace forec
