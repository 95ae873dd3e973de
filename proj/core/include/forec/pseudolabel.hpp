#pragma once

#include <cstdint>
#include <vector>

#include "forec/tensor.hpp"

namespace forec {

/// Teacher posteriors thresholded into per-pixel class assignments.
struct PseudoLabelMap {
  LabelMap label;                 // 255 where the max posterior is below tau
  std::vector<float> confidence;  // h*w max-class posteriors
};

/// Thresholds posteriors [C,H,W]: argmax where max > tau (strict, ties to the
/// lowest class index), 255 otherwise. Throws ValueError when any per-pixel
/// channel sum strays from 1 by more than 1e-4 or a value is negative.
PseudoLabelMap make_pseudo_labels(const Tensor& probs, float tau);

/// Reconstruction target with a per-pixel participation mask.
struct MaskedTarget {
  Tensor target;  // [3,H,W]
  Tensor mask;    // [1,H,W], values 0 or 1
};

/// Per-pixel decision for unlabeled reconstruction supervision.
constexpr uint8_t kScenarioForeground = 1;  // confident object: reconstruct the pixel
constexpr uint8_t kScenarioBackground = 2;  // confident background: target zero
constexpr uint8_t kScenarioIgnore = 3;      // uncertain: no loss

/// Applies the ordered three-scenario rule to teacher posteriors: (1) max
/// over object classes > tau, (2) otherwise a pseudo-label exists and its
/// class is not an object, (3) otherwise ignore.
LabelMap forec_scenarios(const Tensor& probs, float tau, const std::vector<int>& object_set);

/// Builds target and mask from scenario codes in the image's geometry. Codes
/// other than foreground/background (including transport fill) get mask 0.
MaskedTarget forec_target_from_scenarios(const Tensor& image, const LabelMap& scenarios);

/// Supervised variant: target = image on object pixels, zero elsewhere;
/// ignore-label pixels are masked out, everything else participates.
MaskedTarget forec_target_labeled(const Tensor& image, const LabelMap& gt,
                                  const std::vector<int>& object_set);

/// Unsupervised variant: three-scenario rule applied directly to posteriors
/// aligned with `image`.
MaskedTarget forec_target_unlabeled(const Tensor& image, const Tensor& probs, float tau,
                                    const std::vector<int>& object_set);

/// Plain reconstruction: target = image, mask all ones.
MaskedTarget standard_rec_target(const Tensor& image);

/// Binary view of a label map: 1 on object classes, 0 elsewhere, 255 kept.
LabelMap fgbg_target(const LabelMap& labels, const std::vector<int>& object_set);

}  // namespace forec
