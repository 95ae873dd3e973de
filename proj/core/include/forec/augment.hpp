#pragma once

#include "forec/dataset.hpp"
#include "forec/rng.hpp"
#include "forec/tensor.hpp"

namespace forec {

/// Probabilities and ranges of the augmentation pipeline. Defaults follow
/// the training config defaults; tests pin individual entries.
struct AugConfig {
  double flip_p = 0.5;

  double zoom_lo = 0.5, zoom_hi = 2.0;
  double jitter_gain = 0.2;   // per-channel gain in [1-g, 1+g]
  double jitter_shift = 0.1;  // per-channel shift in [-s, s]
  double gray_p = 0.2;
  double blur_p = 0.5;
  double blur_sigma_lo = 0.1, blur_sigma_hi = 1.0;
  double cutmix_p = 0.5;
  double cutmix_area_lo = 0.2, cutmix_area_hi = 0.5;
  double cutmix_aspect_lo = 0.5, cutmix_aspect_hi = 2.0;
};

/// Every random decision taken while building one strong view. Enough to
/// transport teacher-side maps into the same geometry (see transport_map).
struct AugRecord {
  bool flip = false;  // weak-view flip the strong view was built on

  double zoom = 1.0;  // source coord = dst / zoom + zoom_off
  double zoom_off_x = 0.0, zoom_off_y = 0.0;

  float gain[3] = {1.f, 1.f, 1.f};
  float shift[3] = {0.f, 0.f, 0.f};
  bool grayscale = false;
  bool blurred = false;
  double blur_sigma = 0.0;

  bool cutmix = false;
  int box_x0 = 0, box_y0 = 0, box_x1 = 0, box_y1 = 0;  // half-open
  int partner_id = -1;
};

/// Teacher view: horizontal flip with probability flip_p, label flipped
/// identically. Records the decision in rec.flip.
Sample weak_aug(const Sample& s, const AugConfig& cfg, Rng& rng, AugRecord& rec);

/// Student view built on top of a weak view: zoom, color jitter, grayscale,
/// blur, CutMix from `partner` (also a weak view, pasted as given). Geometry
/// is applied to the label map too; zoom-out padding labels become 255. The
/// RNG stream is consumed identically whether or not each gated op fires.
Sample strong_aug(const Sample& own, const Sample& partner, const AugConfig& cfg,
                  Rng& rng, AugRecord& rec);

/// Pastes b's pixels and labels inside the half-open box into a copy of a.
Sample cutmix(const Sample& a, const Sample& b, int x0, int y0, int x1, int y1);

/// Blurs each channel with a separable Gaussian kernel of radius
/// ceil(2.5*sigma), borders clamped.
void gaussian_blur(Tensor& image, double sigma);

/// Carries a map computed on the weak view (pseudo-labels, scenario codes)
/// through the geometric part of a strong view: zoom with nearest-neighbor
/// lookup (`fill` outside the source), then the CutMix box overwritten from
/// the partner's weak-view map. The flip is not reapplied; weak-view maps
/// already live in flipped coordinates.
LabelMap transport_map(const LabelMap& own, const LabelMap& partner,
                       const AugRecord& rec, uint8_t fill);

}  // namespace forec
