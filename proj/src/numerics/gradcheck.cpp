#include "medroute/numerics/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "medroute/core/random.hpp"

namespace medroute::numerics {

namespace {

std::vector<std::size_t> sample_coordinates(std::size_t size, std::size_t count, core::Rng& rng) {
  std::vector<std::size_t> idx(size);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  if (count >= size) return idx;
  for (std::size_t i = 0; i < count; ++i) {
    const auto j = i + static_cast<std::size_t>(core::uniform_index(rng, size - i));
    std::swap(idx[i], idx[j]);
  }
  idx.resize(count);
  std::sort(idx.begin(), idx.end());
  return idx;
}

}  // namespace

GradcheckReport gradcheck(const LossFunction& f, std::vector<DTensor> params,
                          std::span<const std::string> names, const GradcheckOptions& options) {
  if (!(options.h > 0.0)) throw Error("gradcheck: step h must be positive");
  std::vector<DTensor> analytic;
  f(params, &analytic);
  if (analytic.size() != params.size()) throw ShapeError("gradcheck: gradient count mismatch");

  std::size_t total = 0;
  for (const auto& p : params) total += p.size();

  core::Rng rng(options.seed);
  GradcheckReport report;
  for (std::size_t g = 0; g < params.size(); ++g) {
    const std::size_t size = params[g].size();
    std::size_t count = size;
    if (total > options.min_samples) {
      const std::size_t proportional = (options.min_samples * size + total - 1) / total;
      count = std::min(size, std::max<std::size_t>(8, proportional));
    }
    GroupError group{g < names.size() ? names[g] : "param" + std::to_string(g), 0, 0.0};
    for (std::size_t i : sample_coordinates(size, count, rng)) {
      const double original = params[g][i];
      params[g][i] = original + options.h;
      const double up = f(params, nullptr);
      params[g][i] = original - options.h;
      const double down = f(params, nullptr);
      params[g][i] = original;
      const double numeric = (up - down) / (2.0 * options.h);
      const double a = analytic[g][i];
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
      group.max_rel_error = std::max(group.max_rel_error, std::abs(a - numeric) / denom);
      ++group.coordinates;
    }
    report.coordinates += group.coordinates;
    report.max_rel_error = std::max(report.max_rel_error, group.max_rel_error);
    report.groups.push_back(std::move(group));
  }
  return report;
}

}  // namespace medroute::numerics
