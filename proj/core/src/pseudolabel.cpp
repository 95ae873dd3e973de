#include "forec/pseudolabel.hpp"

#include <array>
#include <cmath>
#include <string>

namespace forec {
namespace {

void validate_probs(const Tensor& probs) {
  if (probs.ndim() != 3) throw ShapeError("probabilities must be [C,H,W]");
  int c = probs.dim(0);
  if (c < 2 || c > 255) throw ShapeError("class count must be in [2, 255]");
  int h = probs.dim(1), w = probs.dim(2);
  const size_t plane = size_t(h) * size_t(w);
  for (size_t i = 0; i < plane; ++i) {
    double sum = 0;
    for (int k = 0; k < c; ++k) {
      float v = probs.data[size_t(k) * plane + i];
      if (v < 0.f) throw ValueError("probabilities must be non-negative");
      sum += double(v);
    }
    if (std::abs(sum - 1.0) > 1e-4)
      throw ValueError("per-pixel probabilities sum to " + std::to_string(sum) +
                       ", expected 1 within 1e-4");
  }
}

std::array<bool, 256> object_lut(const std::vector<int>& object_set) {
  std::array<bool, 256> lut{};
  for (int c : object_set) {
    if (c < 0 || c > 255) throw ValueError("object class id out of range");
    lut[size_t(c)] = true;
  }
  return lut;
}

}  // namespace

PseudoLabelMap make_pseudo_labels(const Tensor& probs, float tau) {
  validate_probs(probs);
  int c = probs.dim(0), h = probs.dim(1), w = probs.dim(2);
  const size_t plane = size_t(h) * size_t(w);

  PseudoLabelMap out;
  out.label = LabelMap(h, w, kIgnoreLabel);
  out.confidence.resize(plane);
  for (size_t i = 0; i < plane; ++i) {
    int best = 0;
    float best_p = probs.data[i];
    for (int k = 1; k < c; ++k) {
      float v = probs.data[size_t(k) * plane + i];
      if (v > best_p) {
        best_p = v;
        best = k;
      }
    }
    out.confidence[i] = best_p;
    if (best_p > tau) out.label.v[i] = uint8_t(best);
  }
  return out;
}

LabelMap forec_scenarios(const Tensor& probs, float tau, const std::vector<int>& object_set) {
  validate_probs(probs);
  int c = probs.dim(0), h = probs.dim(1), w = probs.dim(2);
  auto lut = object_lut(object_set);
  for (int cls : object_set)
    if (cls >= c) throw ValueError("object class id exceeds class count");
  const size_t plane = size_t(h) * size_t(w);

  LabelMap out(h, w, kScenarioIgnore);
  for (size_t i = 0; i < plane; ++i) {
    float best_obj = -1.f, best_all = -1.f;
    int argmax = 0;
    for (int k = 0; k < c; ++k) {
      float v = probs.data[size_t(k) * plane + i];
      if (v > best_all) {
        best_all = v;
        argmax = k;
      }
      if (lut[size_t(k)] && v > best_obj) best_obj = v;
    }
    if (best_obj > tau)
      out.v[i] = kScenarioForeground;
    else if (best_all > tau && !lut[size_t(argmax)])
      out.v[i] = kScenarioBackground;
  }
  return out;
}

MaskedTarget forec_target_from_scenarios(const Tensor& image, const LabelMap& scenarios) {
  if (image.ndim() != 3 || image.dim(0) != 3) throw ShapeError("image must be [3,H,W]");
  int h = image.dim(1), w = image.dim(2);
  if (scenarios.h != h || scenarios.w != w)
    throw ShapeError("scenario map does not match image size");
  const size_t plane = size_t(h) * size_t(w);

  MaskedTarget out;
  out.target = Tensor::zeros({3, h, w});
  out.mask = Tensor::zeros({1, h, w});
  for (size_t i = 0; i < plane; ++i) {
    uint8_t code = scenarios.v[i];
    if (code == kScenarioForeground) {
      for (int ch = 0; ch < 3; ++ch)
        out.target.data[size_t(ch) * plane + i] = image.data[size_t(ch) * plane + i];
      out.mask.data[i] = 1.f;
    } else if (code == kScenarioBackground) {
      out.mask.data[i] = 1.f;
    }
  }
  return out;
}

MaskedTarget forec_target_labeled(const Tensor& image, const LabelMap& gt,
                                  const std::vector<int>& object_set) {
  if (image.ndim() != 3 || image.dim(0) != 3) throw ShapeError("image must be [3,H,W]");
  int h = image.dim(1), w = image.dim(2);
  if (gt.h != h || gt.w != w) throw ShapeError("label map does not match image size");
  auto lut = object_lut(object_set);
  const size_t plane = size_t(h) * size_t(w);

  MaskedTarget out;
  out.target = Tensor::zeros({3, h, w});
  out.mask = Tensor::zeros({1, h, w});
  for (size_t i = 0; i < plane; ++i) {
    uint8_t v = gt.v[i];
    if (v == kIgnoreLabel) continue;
    out.mask.data[i] = 1.f;
    if (lut[size_t(v)])
      for (int ch = 0; ch < 3; ++ch)
        out.target.data[size_t(ch) * plane + i] = image.data[size_t(ch) * plane + i];
  }
  return out;
}

MaskedTarget forec_target_unlabeled(const Tensor& image, const Tensor& probs, float tau,
                                    const std::vector<int>& object_set) {
  return forec_target_from_scenarios(image, forec_scenarios(probs, tau, object_set));
}

MaskedTarget standard_rec_target(const Tensor& image) {
  if (image.ndim() != 3 || image.dim(0) != 3) throw ShapeError("image must be [3,H,W]");
  MaskedTarget out;
  out.target = image;
  out.mask = Tensor::full({1, image.dim(1), image.dim(2)}, 1.f);
  return out;
}

LabelMap fgbg_target(const LabelMap& labels, const std::vector<int>& object_set) {
  auto lut = object_lut(object_set);
  LabelMap out(labels.h, labels.w, 0);
  for (size_t i = 0; i < labels.v.size(); ++i) {
    uint8_t v = labels.v[i];
    out.v[i] = v == kIgnoreLabel ? kIgnoreLabel : uint8_t(lut[size_t(v)] ? 1 : 0);
  }
  return out;
}

}  // namespace forec
