#pragma once

#include <cstddef>
#include <string_view>

// Inner-loop arithmetic used by every tape op. Each kernel has a scalar reference
// implementation and, on x86-64, an AVX2+FMA variant selected at runtime from CPUID.
// Reductions use a fixed order per ISA, so results are reproducible run to run on a
// given kernel set; scalar and AVX2 results agree to rounding only.

namespace medroute::numerics::kernels {

enum class Isa { kScalar, kAvx2 };

struct KernelTable {
  Isa isa;
  float (*dot_f32)(const float* a, const float* b, std::size_t n);
  double (*dot_f64)(const double* a, const double* b, std::size_t n);
  // y += alpha * x
  void (*axpy_f32)(float alpha, const float* x, float* y, std::size_t n);
  void (*axpy_f64)(double alpha, const double* x, double* y, std::size_t n);
};

const KernelTable& scalar_table();
/// AVX2 table, or nullptr when not compiled in.
const KernelTable* avx2_table();

bool cpu_supports_avx2();

/// Currently active table. Initialized on first use: AVX2 when the CPU supports it,
/// unless the environment variable MEDROUTE_KERNELS=scalar is set.
const KernelTable& active();

/// Forces a kernel set. Returns false (and changes nothing) when the ISA is unavailable.
bool select(Isa isa);

std::string_view isa_name(Isa isa);

inline float dot(const float* a, const float* b, std::size_t n) { return active().dot_f32(a, b, n); }
inline double dot(const double* a, const double* b, std::size_t n) { return active().dot_f64(a, b, n); }
inline void axpy(float alpha, const float* x, float* y, std::size_t n) { active().axpy_f32(alpha, x, y, n); }
inline void axpy(double alpha, const double* x, double* y, std::size_t n) { active().axpy_f64(alpha, x, y, n); }

}  // namespace medroute::numerics::kernels
