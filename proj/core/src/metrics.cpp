#include "forec/metrics.hpp"

#include <numeric>
#include <string>

namespace forec {

ConfusionMatrix::ConfusionMatrix(int num_classes) : c_(num_classes) {
  if (num_classes < 1) throw ValueError("confusion matrix needs at least one class");
  m_.assign(size_t(c_) * size_t(c_), 0);
}

void ConfusionMatrix::accumulate(const LabelMap& pred, const LabelMap& gt) {
  if (pred.h != gt.h || pred.w != gt.w)
    throw ShapeError("prediction and ground truth sizes differ");
  for (size_t i = 0; i < gt.v.size(); ++i) {
    uint8_t g = gt.v[i];
    if (g == kIgnoreLabel) continue;
    uint8_t p = pred.v[i];
    if (g >= c_) throw ValueError("ground-truth class " + std::to_string(int(g)) + " out of range");
    if (p >= c_) throw ValueError("predicted class " + std::to_string(int(p)) + " out of range");
    ++at(int(g), int(p));
  }
}

void ConfusionMatrix::add(const ConfusionMatrix& other) {
  if (other.c_ != c_) throw ShapeError("confusion matrix class counts differ");
  for (size_t i = 0; i < m_.size(); ++i) m_[i] += other.m_[i];
}

int64_t ConfusionMatrix::total() const {
  return std::accumulate(m_.begin(), m_.end(), int64_t(0));
}

IouResult miou(const ConfusionMatrix& cm) {
  int c = cm.num_classes();
  IouResult r;
  r.per_class.assign(size_t(c), 0.0);
  r.valid.assign(size_t(c), false);
  double sum = 0;
  int n = 0;
  for (int k = 0; k < c; ++k) {
    int64_t tp = cm.at(k, k);
    int64_t fp = 0, fn = 0;
    for (int j = 0; j < c; ++j) {
      if (j == k) continue;
      fp += cm.at(j, k);
      fn += cm.at(k, j);
    }
    int64_t uni = tp + fp + fn;
    if (uni == 0) continue;
    r.per_class[size_t(k)] = double(tp) / double(uni);
    r.valid[size_t(k)] = true;
    sum += r.per_class[size_t(k)];
    ++n;
  }
  if (n == 0) throw ValueError("no evaluable classes");
  r.mean = sum / double(n);
  return r;
}

double pixel_accuracy(const ConfusionMatrix& cm) {
  int64_t tot = cm.total();
  if (tot == 0) throw ValueError("no evaluated pixels");
  int64_t diag = 0;
  for (int k = 0; k < cm.num_classes(); ++k) diag += cm.at(k, k);
  return double(diag) / double(tot);
}

}  // namespace forec
