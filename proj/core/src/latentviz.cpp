#include "forec/latentviz.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include <json.hpp>

#include "forec/checkpoint.hpp"
#include "forec/errors.hpp"
#include "forec/image_io.hpp"

namespace forec {
namespace {

using nlohmann::json;

std::string slice_file_name(int k) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "latent_k%02d.pgm", k);
  return buf;
}

}  // namespace

net::Network load_student_network(const std::filesystem::path& ckpt_path) {
  ckpt::CheckpointData data = ckpt::read_checkpoint(ckpt_path);
  std::vector<ckpt::NamedTensor> student;
  bool prefixed = false;
  for (const ckpt::NamedTensor& t : data.tensors) {
    if (t.name.rfind("student.", 0) == 0) {
      student.push_back({t.name.substr(8), t.value});
      prefixed = true;
    }
  }
  if (!prefixed) return ckpt::network_from_tensors(data.tensors);
  return ckpt::network_from_tensors(student);
}

LatentSlices extract_latents(const net::Network& student, const Tensor& image) {
  net::LatentStack stack = net::latent_stack(student, image);

  LatentSlices out;
  out.raw = std::move(stack.latent);
  out.weights = std::move(stack.weights);
  out.normalized = Tensor::zeros(out.raw.shape);

  int d = out.raw.dim(0);
  int64_t plane = int64_t(out.raw.dim(1)) * int64_t(out.raw.dim(2));
  for (int k = 0; k < d; ++k) {
    const float* src = out.raw.data.data() + int64_t(k) * plane;
    float* dst = out.normalized.data.data() + int64_t(k) * plane;
    float lo = src[0], hi = src[0];
    for (int64_t i = 1; i < plane; ++i) {
      lo = std::min(lo, src[i]);
      hi = std::max(hi, src[i]);
    }
    if (hi == lo) {
      for (int64_t i = 0; i < plane; ++i) dst[i] = 0.5f;
    } else {
      float span = hi - lo;
      for (int64_t i = 0; i < plane; ++i) dst[i] = (src[i] - lo) / span;
    }
  }
  return out;
}

std::vector<SliceScore> rank_by_foreground(const Tensor& raw, const LabelMap& foreground) {
  if (raw.ndim() != 3) throw ShapeError("latent slices must be [d,H,W]");
  int d = raw.dim(0), h = raw.dim(1), w = raw.dim(2);
  if (foreground.h != h || foreground.w != w)
    throw ShapeError("foreground mask does not match the latent geometry");

  int64_t n = int64_t(h) * int64_t(w);
  int64_t fg = 0;
  for (uint8_t v : foreground.v) {
    if (v != 0 && v != 1) throw ValueError("foreground mask must be binary");
    fg += v;
  }
  if (fg == 0) throw ValueError("foreground mask selects no pixels");
  if (fg == n) throw ValueError("foreground mask has no background pixels");

  double mean_m = double(fg) / double(n);
  double dm = 0.0;
  for (uint8_t v : foreground.v) {
    double c = double(v) - mean_m;
    dm += c * c;
  }

  std::vector<SliceScore> scores;
  scores.reserve(size_t(d));
  for (int k = 0; k < d; ++k) {
    const float* z = raw.data.data() + int64_t(k) * n;
    double mean_a = 0.0;
    for (int64_t i = 0; i < n; ++i) mean_a += std::fabs(double(z[i]));
    mean_a /= double(n);
    double num = 0.0, da = 0.0;
    for (int64_t i = 0; i < n; ++i) {
      double a = std::fabs(double(z[i])) - mean_a;
      da += a * a;
      num += a * (double(foreground.v[size_t(i)]) - mean_m);
    }
    SliceScore s;
    s.index = k;
    if (da == 0.0) {
      s.valid = false;
      s.score = 0.0;
    } else {
      s.score = num / std::sqrt(da * dm);
    }
    scores.push_back(s);
  }

  std::stable_sort(scores.begin(), scores.end(), [](const SliceScore& a, const SliceScore& b) {
    if (a.valid != b.valid) return a.valid;
    return a.valid && a.score > b.score;
  });
  return scores;
}

LatentExport export_grid(const LatentSlices& slices, const std::vector<SliceScore>& ranking,
                         const std::filesystem::path& dir, int topk) {
  if (slices.normalized.ndim() != 3) throw ShapeError("latent slices must be [d,H,W]");
  int d = slices.normalized.dim(0), h = slices.normalized.dim(1), w = slices.normalized.dim(2);
  if (int(ranking.size()) != d) throw ValueError("ranking does not cover every slice");
  std::vector<bool> seen(size_t(d), false);
  for (const SliceScore& s : ranking) {
    if (s.index < 0 || s.index >= d || seen[size_t(s.index)])
      throw ValueError("ranking is not a permutation of the slice indices");
    seen[size_t(s.index)] = true;
  }

  int n_export = (topk <= 0 || topk > d) ? d : topk;
  std::filesystem::create_directories(dir);

  LatentExport out;
  int64_t plane = int64_t(h) * int64_t(w);
  json entries = json::array();
  double top3 = 0.0;
  int top3_n = 0;
  for (int r = 0; r < d; ++r) {
    const SliceScore& s = ranking[size_t(r)];
    std::string name = slice_file_name(s.index);
    if (r < n_export) {
      std::vector<float> plane_data(
          slices.normalized.data.begin() + int64_t(s.index) * plane,
          slices.normalized.data.begin() + int64_t(s.index + 1) * plane);
      Tensor gray({1, h, w}, std::move(plane_data));
      write_pgm_gray(gray, dir / name);
      out.files.push_back(dir / name);
    }
    if (s.valid && top3_n < 3) {
      top3 += s.score;
      ++top3_n;
    }
    entries.push_back({{"rank", r},
                       {"k", s.index},
                       {"score", s.score},
                       {"valid", s.valid},
                       {"file", name},
                       {"exported", r < n_export}});
  }

  json manifest;
  manifest["latent_dim"] = d;
  manifest["exported"] = n_export;
  manifest["mean_top3_score"] = top3_n ? top3 / double(top3_n) : 0.0;
  manifest["slices"] = std::move(entries);

  out.manifest = dir / "manifest.json";
  std::ofstream f(out.manifest, std::ios::binary);
  if (!f) throw IoError("cannot write " + out.manifest.string());
  f << manifest.dump(2) << "\n";
  if (!f) throw IoError("manifest write failed: " + out.manifest.string());
  return out;
}

}  // namespace forec
