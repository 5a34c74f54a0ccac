#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "medroute/numerics/tensor.hpp"

namespace medroute::numerics {

using DTensor = BasicTensor<double>;

/// Loss evaluated at the given parameters. When `grads` is non-null it must be filled with
/// the analytic gradient (one tensor per parameter).
using LossFunction =
    std::function<double(std::span<const DTensor> params, std::vector<DTensor>* grads)>;

struct GradcheckOptions {
  double h = 1e-6;
  /// Minimum number of coordinates compared; every coordinate is checked when fewer exist.
  std::size_t min_samples = 200;
  std::uint64_t seed = 0;
};

struct GroupError {
  std::string name;
  std::size_t coordinates = 0;
  double max_rel_error = 0.0;
};

struct GradcheckReport {
  double max_rel_error = 0.0;
  std::size_t coordinates = 0;
  std::vector<GroupError> groups;
};

/// Compares the analytic gradient with central differences (f(θ+h) − f(θ−h)) / 2h on a
/// seeded subset of coordinates. Error per coordinate is |a − n| / max(|a|, |n|, 1e-8).
GradcheckReport gradcheck(const LossFunction& f, std::vector<DTensor> params,
                          std::span<const std::string> names, const GradcheckOptions& options);

}  // namespace medroute::numerics
