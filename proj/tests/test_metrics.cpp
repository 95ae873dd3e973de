#include <doctest.h>

#include <algorithm>
#include <vector>

#include "forec/metrics.hpp"
#include "forec/rng.hpp"

using namespace forec;

namespace {

LabelMap map_of(int h, int w, const std::vector<int>& vals) {
  LabelMap m(h, w, 0);
  for (size_t i = 0; i < vals.size(); ++i) m.v[i] = uint8_t(vals[i]);
  return m;
}

LabelMap random_map(int h, int w, int c, uint64_t seed, bool with_ignore) {
  Rng rng(seed);
  LabelMap m(h, w, 0);
  for (auto& v : m.v) {
    if (with_ignore && rng.bernoulli(0.1))
      v = kIgnoreLabel;
    else
      v = uint8_t(rng.uniform_int(uint64_t(c)));
  }
  return m;
}

}  // namespace

TEST_SUITE("confusion") {
  TEST_CASE("perfect prediction fills only the diagonal") {
    LabelMap gt = random_map(8, 8, 3, 5, false);
    ConfusionMatrix cm(3);
    cm.accumulate(gt, gt);
    for (int g = 0; g < 3; ++g)
      for (int p = 0; p < 3; ++p)
        if (g != p) CHECK(cm.at(g, p) == 0);
    CHECK(cm.total() == 64);
  }

  TEST_CASE("fully ignored ground truth changes nothing") {
    LabelMap gt(4, 4, kIgnoreLabel);
    LabelMap pred(4, 4, 1);
    ConfusionMatrix cm(3);
    cm.accumulate(pred, gt);
    CHECK(cm.total() == 0);
  }

  TEST_CASE("hand-counted two-class example") {
    LabelMap pred = map_of(1, 4, {0, 0, 1, 1});
    LabelMap gt = map_of(1, 4, {0, 1, 1, 1});
    ConfusionMatrix cm(2);
    cm.accumulate(pred, gt);
    CHECK(cm.at(0, 0) == 1);
    CHECK(cm.at(0, 1) == 0);
    CHECK(cm.at(1, 0) == 1);
    CHECK(cm.at(1, 1) == 2);
  }

  TEST_CASE("out-of-range classes are rejected") {
    LabelMap ok = map_of(1, 2, {0, 1});
    LabelMap bad = map_of(1, 2, {0, 2});
    ConfusionMatrix cm(2);
    CHECK_THROWS_AS(cm.accumulate(bad, ok), ValueError);
    CHECK_THROWS_AS(cm.accumulate(ok, bad), ValueError);
    LabelMap narrow(1, 1, 0);
    CHECK_THROWS_AS(cm.accumulate(narrow, ok), ShapeError);
  }

  TEST_CASE("accumulation order never matters") {
    std::vector<LabelMap> preds, gts;
    for (uint64_t s = 0; s < 6; ++s) {
      preds.push_back(random_map(8, 8, 4, 100 + s, false));
      gts.push_back(random_map(8, 8, 4, 200 + s, true));
    }
    ConfusionMatrix fwd(4), rev(4);
    for (size_t i = 0; i < preds.size(); ++i) fwd.accumulate(preds[i], gts[i]);
    for (size_t i = preds.size(); i-- > 0;) rev.accumulate(preds[i], gts[i]);
    for (int g = 0; g < 4; ++g)
      for (int p = 0; p < 4; ++p) CHECK(fwd.at(g, p) == rev.at(g, p));
  }
}

TEST_SUITE("miou") {
  TEST_CASE("perfect prediction scores one") {
    LabelMap gt = random_map(8, 8, 4, 9, false);
    ConfusionMatrix cm(4);
    cm.accumulate(gt, gt);
    IouResult r = miou(cm);
    CHECK(r.mean == 1.0);
    for (int k = 0; k < 4; ++k)
      if (r.valid[size_t(k)]) CHECK(r.per_class[size_t(k)] == 1.0);
  }

  TEST_CASE("hand-computed two-class values") {
    ConfusionMatrix cm(2);
    cm.at(0, 0) = 1;
    cm.at(1, 0) = 1;
    cm.at(1, 1) = 2;
    IouResult r = miou(cm);
    CHECK(r.per_class[0] == 0.5);
    CHECK(r.per_class[1] == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
    CHECK(r.mean == doctest::Approx(0.5833333333).epsilon(1e-9));
  }

  TEST_CASE("disjoint binary prediction scores zero") {
    LabelMap gt = map_of(1, 4, {0, 0, 1, 1});
    LabelMap pred = map_of(1, 4, {1, 1, 0, 0});
    ConfusionMatrix cm(2);
    cm.accumulate(pred, gt);
    CHECK(miou(cm).mean == 0.0);
  }

  TEST_CASE("zero-union classes are excluded from the mean") {
    ConfusionMatrix cm(3);
    cm.at(0, 0) = 10;  // only class 0 ever appears
    IouResult r = miou(cm);
    CHECK(r.valid[0]);
    CHECK_FALSE(r.valid[1]);
    CHECK_FALSE(r.valid[2]);
    CHECK(r.mean == 1.0);
  }

  TEST_CASE("empty matrix has no evaluable classes") {
    ConfusionMatrix cm(3);
    CHECK_THROWS_AS(miou(cm), ValueError);
  }

  TEST_CASE("matches a brute-force set oracle on random maps") {
    for (uint64_t trial = 0; trial < 100; ++trial) {
      int c = 2 + int(trial % 3);
      LabelMap pred = random_map(8, 8, c, 1000 + trial, false);
      LabelMap gt = random_map(8, 8, c, 2000 + trial, true);
      ConfusionMatrix cm(c);
      cm.accumulate(pred, gt);

      double sum = 0;
      int n = 0;
      std::vector<double> oracle(size_t(c), -1.0);
      for (int k = 0; k < c; ++k) {
        int64_t inter = 0, uni = 0;
        for (size_t i = 0; i < gt.v.size(); ++i) {
          if (gt.v[i] == kIgnoreLabel) continue;
          bool in_p = pred.v[i] == k, in_g = gt.v[i] == k;
          inter += in_p && in_g;
          uni += in_p || in_g;
        }
        if (uni == 0) continue;
        oracle[size_t(k)] = double(inter) / double(uni);
        sum += oracle[size_t(k)];
        ++n;
      }
      REQUIRE(n > 0);
      IouResult r = miou(cm);
      for (int k = 0; k < c; ++k) {
        CHECK(r.valid[size_t(k)] == (oracle[size_t(k)] >= 0));
        if (r.valid[size_t(k)]) CHECK(r.per_class[size_t(k)] == oracle[size_t(k)]);
      }
      CHECK(r.mean == sum / double(n));
    }
  }

  TEST_CASE("consistent class permutation permutes ious and keeps the mean") {
    LabelMap pred = random_map(8, 8, 3, 31, false);
    LabelMap gt = random_map(8, 8, 3, 32, false);
    int perm[3] = {2, 0, 1};
    LabelMap pred2 = pred, gt2 = gt;
    for (auto& v : pred2.v) v = uint8_t(perm[v]);
    for (auto& v : gt2.v) v = uint8_t(perm[v]);
    ConfusionMatrix a(3), b(3);
    a.accumulate(pred, gt);
    b.accumulate(pred2, gt2);
    IouResult ra = miou(a), rb = miou(b);
    for (int k = 0; k < 3; ++k)
      CHECK(ra.per_class[size_t(k)] == rb.per_class[size_t(perm[k])]);
    CHECK(ra.mean == doctest::Approx(rb.mean).epsilon(1e-12));
  }

  TEST_CASE("pixel accuracy is the diagonal share") {
    ConfusionMatrix cm(2);
    cm.at(0, 0) = 3;
    cm.at(0, 1) = 1;
    cm.at(1, 1) = 4;
    CHECK(pixel_accuracy(cm) == doctest::Approx(7.0 / 8.0));
    ConfusionMatrix empty(2);
    CHECK_THROWS_AS(pixel_accuracy(empty), ValueError);
  }
}
