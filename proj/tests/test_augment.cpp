#include <doctest.h>

#include <cmath>
#include <numeric>
#include <vector>

#include "forec/augment.hpp"

using namespace forec;

namespace {

Sample ramp_sample(int h, int w, int id = 0, float scale = 1.f) {
  Sample s;
  s.id = id;
  s.image = Tensor::zeros({3, h, w});
  s.label = LabelMap(h, w, 0);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        s.image.at3(c, y, x) = scale * float(c * h * w + y * w + x) / float(3 * h * w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) s.label.at(y, x) = uint8_t((y / 4 + x / 4) % 4);
  return s;
}

AugConfig all_off() {
  AugConfig cfg;
  cfg.flip_p = 0;
  cfg.zoom_lo = cfg.zoom_hi = 1.0;
  cfg.jitter_gain = 0;
  cfg.jitter_shift = 0;
  cfg.gray_p = 0;
  cfg.blur_p = 0;
  cfg.cutmix_p = 0;
  return cfg;
}

bool same_sample(const Sample& a, const Sample& b) {
  return a.image.data == b.image.data && a.label == b.label;
}

}  // namespace

TEST_SUITE("augment_weak") {
  TEST_CASE("flip twice is the identity") {
    Sample s = ramp_sample(16, 20);
    AugConfig cfg;
    cfg.flip_p = 1.0;
    Rng rng(3);
    AugRecord r1, r2;
    Sample once = weak_aug(s, cfg, rng, r1);
    Sample twice = weak_aug(once, cfg, rng, r2);
    CHECK(r1.flip);
    CHECK(r2.flip);
    CHECK_FALSE(same_sample(s, once));
    CHECK(same_sample(s, twice));
  }

  TEST_CASE("zero probability is the identity") {
    Sample s = ramp_sample(8, 8);
    AugConfig cfg;
    cfg.flip_p = 0.0;
    Rng rng(3);
    AugRecord rec;
    CHECK(same_sample(s, weak_aug(s, cfg, rng, rec)));
    CHECK_FALSE(rec.flip);
  }

  TEST_CASE("flip mirrors columns") {
    Sample s = ramp_sample(6, 9);
    AugConfig cfg;
    cfg.flip_p = 1.0;
    Rng rng(3);
    AugRecord rec;
    Sample f = weak_aug(s, cfg, rng, rec);
    for (int y = 0; y < 6; ++y)
      for (int x = 0; x < 9; ++x) {
        CHECK(f.label.at(y, x) == s.label.at(y, 8 - x));
        for (int c = 0; c < 3; ++c) CHECK(f.image.at3(c, y, x) == s.image.at3(c, y, 8 - x));
      }
  }
}

TEST_SUITE("augment_strong") {
  TEST_CASE("everything pinned off is the identity") {
    Sample s = ramp_sample(16, 16, 1);
    Sample partner = ramp_sample(16, 16, 2, 0.5f);
    Rng rng(11);
    AugRecord rec;
    Sample out = strong_aug(s, partner, all_off(), rng, rec);
    CHECK(same_sample(s, out));
    CHECK(out.id == 1);
    CHECK(rec.partner_id == 2);
    CHECK(rec.zoom == 1.0);
  }

  TEST_CASE("grayscale uses the luminance weights") {
    Sample s = ramp_sample(12, 12);
    AugConfig cfg = all_off();
    cfg.gray_p = 1.0;
    Rng rng(5);
    AugRecord rec;
    Sample out = strong_aug(s, s, cfg, rng, rec);
    CHECK(rec.grayscale);
    for (int y = 0; y < 12; ++y)
      for (int x = 0; x < 12; ++x) {
        float lum = 0.299f * s.image.at3(0, y, x) + 0.587f * s.image.at3(1, y, x) +
                    0.114f * s.image.at3(2, y, x);
        for (int c = 0; c < 3; ++c)
          CHECK(out.image.at3(c, y, x) == doctest::Approx(lum).epsilon(1e-6));
      }
    CHECK(out.label == s.label);
  }

  TEST_CASE("photometric ops never touch the label map") {
    Sample s = ramp_sample(16, 16);
    AugConfig cfg = all_off();
    cfg.jitter_gain = 0.2;
    cfg.jitter_shift = 0.1;
    cfg.gray_p = 1.0;
    cfg.blur_p = 1.0;
    Rng rng(7);
    AugRecord rec;
    Sample out = strong_aug(s, s, cfg, rng, rec);
    CHECK(out.label == s.label);
    CHECK(rec.blurred);
  }

  TEST_CASE("jitter applies recorded gain and shift with clamping") {
    Sample s = ramp_sample(10, 10);
    AugConfig cfg = all_off();
    cfg.jitter_gain = 0.2;
    cfg.jitter_shift = 0.1;
    Rng rng(19);
    AugRecord rec;
    Sample out = strong_aug(s, s, cfg, rng, rec);
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < 10; ++y)
        for (int x = 0; x < 10; ++x) {
          float want = std::clamp(s.image.at3(c, y, x) * rec.gain[c] + rec.shift[c], 0.f, 1.f);
          CHECK(out.image.at3(c, y, x) == want);
        }
  }

  TEST_CASE("zoom out pads labels with ignore and replicates image edges") {
    Sample s = ramp_sample(32, 32);
    AugConfig cfg = all_off();
    cfg.zoom_lo = cfg.zoom_hi = 0.5;
    Rng rng(23);
    AugRecord rec;
    Sample out = strong_aug(s, s, cfg, rng, rec);
    CHECK(rec.zoom == 0.5);
    CHECK(out.label.at(0, 0) == kIgnoreLabel);
    CHECK(out.label.at(31, 31) == kIgnoreLabel);
    CHECK(out.label.at(16, 16) != kIgnoreLabel);
    for (int c = 0; c < 3; ++c) CHECK(out.image.at3(c, 0, 0) == s.image.at3(c, 0, 0));
    // Interior pixels map to source via nearest neighbor around the center.
    long sy = std::lround(16 / 0.5 + rec.zoom_off_y);
    long sx = std::lround(16 / 0.5 + rec.zoom_off_x);
    CHECK(out.label.at(16, 16) == s.label.at(int(sy), int(sx)));
  }

  TEST_CASE("zoom in center-crops without introducing ignores") {
    Sample s = ramp_sample(32, 32);
    AugConfig cfg = all_off();
    cfg.zoom_lo = cfg.zoom_hi = 2.0;
    Rng rng(29);
    AugRecord rec;
    Sample out = strong_aug(s, s, cfg, rng, rec);
    for (int y = 0; y < 32; ++y)
      for (int x = 0; x < 32; ++x) CHECK(out.label.at(y, x) != kIgnoreLabel);
    long sy = std::lround(10 / 2.0 + rec.zoom_off_y);
    long sx = std::lround(20 / 2.0 + rec.zoom_off_x);
    CHECK(out.label.at(10, 20) == s.label.at(int(sy), int(sx)));
  }

  TEST_CASE("cutmix box comes from the partner verbatim") {
    Sample s = ramp_sample(24, 24, 1);
    Sample partner = ramp_sample(24, 24, 2, 0.3f);
    for (auto& v : partner.label.v) v = 3;
    AugConfig cfg = all_off();
    cfg.cutmix_p = 1.0;
    Rng rng(31);
    AugRecord rec;
    Sample out = strong_aug(s, partner, cfg, rng, rec);
    CHECK(rec.cutmix);
    CHECK(rec.box_x0 >= 0);
    CHECK(rec.box_x1 <= 24);
    CHECK(rec.box_y0 >= 0);
    CHECK(rec.box_y1 <= 24);
    CHECK(rec.box_x1 > rec.box_x0);
    CHECK(rec.box_y1 > rec.box_y0);
    for (int y = 0; y < 24; ++y)
      for (int x = 0; x < 24; ++x) {
        bool in_box = y >= rec.box_y0 && y < rec.box_y1 && x >= rec.box_x0 && x < rec.box_x1;
        const Sample& src = in_box ? partner : s;
        CHECK(out.label.at(y, x) == src.label.at(y, x));
        for (int c = 0; c < 3; ++c) CHECK(out.image.at3(c, y, x) == src.image.at3(c, y, x));
      }
  }

  TEST_CASE("gated ops consume the same rng stream either way") {
    Sample s = ramp_sample(16, 16);
    AugConfig on = all_off();
    on.gray_p = on.blur_p = on.cutmix_p = 1.0;
    AugConfig off = all_off();
    Rng ra(99), rb(99);
    AugRecord rec_a, rec_b;
    strong_aug(s, s, on, ra, rec_a);
    strong_aug(s, s, off, rb, rec_b);
    CHECK(ra.state() == rb.state());
  }

  TEST_CASE("same seed reproduces the view") {
    Sample s = ramp_sample(20, 20, 1);
    Sample p = ramp_sample(20, 20, 2, 0.7f);
    AugConfig cfg;  // defaults: everything stochastic
    Rng ra(1234), rb(1234);
    AugRecord rec_a, rec_b;
    Sample a = strong_aug(s, p, cfg, ra, rec_a);
    Sample b = strong_aug(s, p, cfg, rb, rec_b);
    CHECK(same_sample(a, b));
    CHECK(rec_a.zoom == rec_b.zoom);
    CHECK(rec_a.cutmix == rec_b.cutmix);
  }

  TEST_CASE("scale and box stay within documented ranges") {
    Sample s = ramp_sample(20, 20);
    AugConfig cfg;
    Rng rng(8);
    for (int i = 0; i < 100; ++i) {
      AugRecord rec;
      strong_aug(s, s, cfg, rng, rec);
      CHECK(rec.zoom >= 0.5);
      CHECK(rec.zoom <= 2.0);
      CHECK(rec.box_x0 >= 0);
      CHECK(rec.box_x1 <= 20);
      CHECK(rec.box_y0 >= 0);
      CHECK(rec.box_y1 <= 20);
      CHECK(rec.box_x0 <= rec.box_x1);
      CHECK(rec.box_y0 <= rec.box_y1);
    }
  }
}

TEST_SUITE("augment_cutmix") {
  TEST_CASE("full box returns the partner") {
    Sample a = ramp_sample(10, 10, 1);
    Sample b = ramp_sample(10, 10, 2, 0.2f);
    Sample out = cutmix(a, b, 0, 0, 10, 10);
    CHECK(out.image.data == b.image.data);
    CHECK(out.label == b.label);
  }

  TEST_CASE("zero-area box returns the first sample") {
    Sample a = ramp_sample(10, 10, 1);
    Sample b = ramp_sample(10, 10, 2, 0.2f);
    Sample out = cutmix(a, b, 4, 4, 4, 9);
    CHECK(same_sample(out, a));
  }

  TEST_CASE("every pixel comes from exactly one source") {
    Sample a = ramp_sample(12, 16, 1);
    Sample b = ramp_sample(12, 16, 2);
    a.image.fill(0.25f);
    b.image.fill(0.75f);
    Sample out = cutmix(a, b, 3, 2, 9, 7);
    int from_b = 0;
    for (int y = 0; y < 12; ++y)
      for (int x = 0; x < 16; ++x) {
        float v = out.image.at3(0, y, x);
        CHECK((v == 0.25f || v == 0.75f));
        if (v == 0.75f) ++from_b;
      }
    CHECK(from_b == (9 - 3) * (7 - 2));
  }
}

TEST_SUITE("augment_transport") {
  TEST_CASE("transported class map matches the strong view label") {
    AugConfig cfg;  // full stochastic pipeline
    for (uint64_t seed = 1; seed <= 20; ++seed) {
      Sample s = ramp_sample(24, 24, 1);
      Sample p = ramp_sample(24, 24, 2, 0.4f);
      for (int y = 0; y < 24; ++y)
        for (int x = 0; x < 24; ++x) p.label.at(y, x) = uint8_t((y + x) % 3);
      Rng rng(seed);
      AugRecord rec;
      Sample out = strong_aug(s, p, cfg, rng, rec);
      LabelMap moved = transport_map(s.label, p.label, rec, kIgnoreLabel);
      CHECK(moved == out.label);
    }
  }

  TEST_CASE("fill value marks unseen regions") {
    Sample s = ramp_sample(32, 32);
    AugConfig cfg = all_off();
    cfg.zoom_lo = cfg.zoom_hi = 0.5;
    Rng rng(3);
    AugRecord rec;
    strong_aug(s, s, cfg, rng, rec);
    LabelMap moved = transport_map(s.label, s.label, rec, 7);
    CHECK(moved.at(0, 0) == 7);
    CHECK(moved.at(16, 16) != 7);
  }

  TEST_CASE("one-hot planes transported per class agree with the class map") {
    Sample s = ramp_sample(24, 24, 1);
    Sample p = ramp_sample(24, 24, 2);
    AugConfig cfg;
    Rng rng(12);
    AugRecord rec;
    strong_aug(s, p, cfg, rng, rec);
    LabelMap moved = transport_map(s.label, p.label, rec, kIgnoreLabel);
    for (int cls = 0; cls < 4; ++cls) {
      auto onehot = [cls](const LabelMap& m) {
        LabelMap b(m.h, m.w, 0);
        for (size_t i = 0; i < m.v.size(); ++i) b.v[i] = m.v[i] == cls ? 1 : 0;
        return b;
      };
      LabelMap plane = transport_map(onehot(s.label), onehot(p.label), rec, 0);
      for (int y = 0; y < 24; ++y)
        for (int x = 0; x < 24; ++x)
          if (moved.at(y, x) != kIgnoreLabel)
            CHECK(plane.at(y, x) == (moved.at(y, x) == cls ? 1 : 0));
    }
  }
}

TEST_SUITE("augment_blur") {
  TEST_CASE("constant image is unchanged") {
    Tensor img = Tensor::full({3, 16, 16}, 0.42f);
    gaussian_blur(img, 1.0);
    for (float v : img.data) CHECK(v == doctest::Approx(0.42f).epsilon(1e-6));
  }

  TEST_CASE("blur reduces variance of a noisy image") {
    Rng rng(5);
    Tensor img = Tensor::zeros({3, 32, 32});
    for (float& v : img.data) v = float(rng.uniform());
    auto variance = [](const Tensor& t) {
      double m = 0;
      for (float v : t.data) m += v;
      m /= double(t.numel());
      double s = 0;
      for (float v : t.data) s += (v - m) * (v - m);
      return s / double(t.numel());
    };
    double before = variance(img);
    gaussian_blur(img, 1.0);
    CHECK(variance(img) < 0.5 * before);
  }

  TEST_CASE("tiny sigma approaches the identity") {
    Rng rng(6);
    Tensor img = Tensor::zeros({3, 8, 8});
    for (float& v : img.data) v = float(rng.uniform());
    Tensor orig = img;
    gaussian_blur(img, 0.1);
    for (size_t i = 0; i < img.data.size(); ++i)
      CHECK(img.data[i] == doctest::Approx(orig.data[i]).epsilon(1e-3));
  }
}
