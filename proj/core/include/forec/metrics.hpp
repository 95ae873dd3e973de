#pragma once

#include <cstdint>
#include <vector>

#include "forec/tensor.hpp"

namespace forec {

/// Per-class pixel counts; rows are ground truth, columns prediction.
/// Ignore-labeled ground-truth pixels are never counted.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(int num_classes);

  void accumulate(const LabelMap& pred, const LabelMap& gt);
  void add(const ConfusionMatrix& other);

  int64_t at(int gt, int pred) const { return m_[size_t(gt) * size_t(c_) + size_t(pred)]; }
  int64_t& at(int gt, int pred) { return m_[size_t(gt) * size_t(c_) + size_t(pred)]; }
  int64_t total() const;
  int num_classes() const { return c_; }

 private:
  int c_ = 0;
  std::vector<int64_t> m_;
};

struct IouResult {
  std::vector<double> per_class;  // 0 for classes excluded from the mean
  std::vector<bool> valid;        // false where the class union is zero
  double mean = 0;
};

/// IoU_c = TP / (TP + FP + FN); zero-union classes are excluded from the
/// mean. Throws ValueError when no class is evaluable.
IouResult miou(const ConfusionMatrix& cm);

double pixel_accuracy(const ConfusionMatrix& cm);

}  // namespace forec
