#pragma once

#include <map>
#include <string>
#include <vector>

#include "forec/tape.hpp"
#include "forec/tensor.hpp"

namespace forec::optim {

/// Polynomial decay: lr0 * (1 - iter/total_iter)^power. Evaluated at 64-bit.
double poly_lr(double lr0, int64_t iter, int64_t total_iter, double power = 0.8);

struct SgdConfig {
  float lr0 = 1e-3f;
  float momentum = 0.9f;
  float weight_decay = 1e-4f;
  float power = 0.8f;
};

/// Classic momentum with weight decay folded into the gradient:
///   v <- m*v + g + wd*p;  p <- p - lr*v
/// Velocity buffers are created lazily per parameter name.
class SgdState {
 public:
  explicit SgdState(SgdConfig cfg) : cfg_(cfg) {}

  const SgdConfig& config() const { return cfg_; }

  /// Applies one update to every parameter using its accumulated grad.
  /// Throws NumericError naming the parameter if its grad is not finite.
  void step(const std::vector<tape::Parameter*>& params, double lr);

  const Tensor* velocity(const std::string& name) const;

 private:
  SgdConfig cfg_;
  std::map<std::string, Tensor> velocity_;
};

}  // namespace forec::optim
