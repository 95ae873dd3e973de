#include "forec/optim.hpp"

#include <cmath>

#include "forec/errors.hpp"

namespace forec::optim {

double poly_lr(double lr0, int64_t iter, int64_t total_iter, double power) {
  if (total_iter <= 0) throw ValueError("poly_lr: total_iter must be positive");
  if (iter < 0 || iter > total_iter) throw ValueError("poly_lr: iter must be in [0, total_iter]");
  return lr0 * std::pow(1.0 - double(iter) / double(total_iter), power);
}

void SgdState::step(const std::vector<tape::Parameter*>& params, double lr) {
  for (tape::Parameter* p : params) {
    for (float g : p->grad.data)
      if (!std::isfinite(g))
        throw NumericError("non-finite gradient in parameter " + p->name);

    auto it = velocity_.find(p->name);
    if (it == velocity_.end())
      it = velocity_.emplace(p->name, Tensor::zeros(p->value.shape)).first;
    Tensor& v = it->second;
    if (!v.same_shape(p->value))
      throw ShapeError("sgd velocity shape mismatch for parameter " + p->name);

    const float m = cfg_.momentum;
    const float wd = cfg_.weight_decay;
    const float lrf = float(lr);
    for (size_t i = 0; i < v.data.size(); ++i) {
      float g = p->grad.data[i] + wd * p->value.data[i];
      v.data[i] = m * v.data[i] + g;
      p->value.data[i] -= lrf * v.data[i];
    }
  }
}

const Tensor* SgdState::velocity(const std::string& name) const {
  auto it = velocity_.find(name);
  return it == velocity_.end() ? nullptr : &it->second;
}

}  // namespace forec::optim
