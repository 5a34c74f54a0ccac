#include "medroute/numerics/kernels.hpp"

namespace medroute::numerics::kernels {

namespace {

template <typename T>
T dot_scalar(const T* a, const T* b, std::size_t n) {
  T acc{0};
  for (std::size_t i = 0; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

template <typename T>
void axpy_scalar(T alpha, const T* x, T* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

constexpr KernelTable kScalar{Isa::kScalar, &dot_scalar<float>, &dot_scalar<double>,
                              &axpy_scalar<float>, &axpy_scalar<double>};

}  // namespace

const KernelTable& scalar_table() { return kScalar; }

}  // namespace medroute::numerics::kernels
