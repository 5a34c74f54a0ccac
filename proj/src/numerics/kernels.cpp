#include "medroute/numerics/kernels.hpp"

#include <atomic>
#include <cstdlib>
#include <string>

namespace medroute::numerics::kernels {

#ifndef MEDROUTE_HAVE_AVX2
const KernelTable* avx2_table() { return nullptr; }
#endif

bool cpu_supports_avx2() {
#if defined(__x86_64__) || defined(__i386__)
  if (avx2_table() == nullptr) return false;
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

namespace {

const KernelTable* initial_table() {
  if (const char* env = std::getenv("MEDROUTE_KERNELS"); env && std::string(env) == "scalar")
    return &scalar_table();
  if (cpu_supports_avx2()) return avx2_table();
  return &scalar_table();
}

std::atomic<const KernelTable*>& current() {
  static std::atomic<const KernelTable*> table{initial_table()};
  return table;
}

}  // namespace

const KernelTable& active() { return *current().load(std::memory_order_acquire); }

bool select(Isa isa) {
  switch (isa) {
    case Isa::kScalar:
      current().store(&scalar_table(), std::memory_order_release);
      return true;
    case Isa::kAvx2:
      if (!cpu_supports_avx2()) return false;
      current().store(avx2_table(), std::memory_order_release);
      return true;
  }
  return false;
}

std::string_view isa_name(Isa isa) {
  switch (isa) {
    case Isa::kScalar:
      return "scalar";
    case Isa::kAvx2:
      return "avx2";
  }
  return "unknown";
}

}  // namespace medroute::numerics::kernels
