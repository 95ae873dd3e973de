#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace forec::gradcheck {

struct CheckResult {
  std::string op;
  int trials = 0;
  double max_rel_err = 0.0;
  double tolerance = 1e-4;
  bool pass = false;
};

/// Ops covered by the default suite.
std::vector<std::string> op_names();

/// Compares the tape's analytic gradients against central finite differences
/// of an independent double-precision forward evaluation:
///   (f(x+eps) - f(x-eps)) / (2*eps),  rel err denom = max(|a|,|n|,1e-8).
/// The composite "stack" trial raises the denominator floor to 1e-2 of the
/// parameter's largest gradient entry: deep graphs cancel some coordinates
/// to ~1e5 below the gradient scale, where f32 accumulation noise would
/// otherwise dominate a purely relative measure.
/// Throws ValueError for an unknown op name. The name "_selftest_broken"
/// runs a deliberately wrong backward and is expected to fail.
CheckResult run_op(const std::string& name, int trials, uint64_t seed, double eps = 1e-3,
                   double tolerance = 1e-4);

std::vector<CheckResult> run_all(int trials, uint64_t seed, double eps = 1e-3,
                                 double tolerance = 1e-4);

}  // namespace forec::gradcheck
