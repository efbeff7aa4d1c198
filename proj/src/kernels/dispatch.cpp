#include <atomic>
#include <cstdlib>
#include <string_view>

#include "flint/error.hpp"
#include "kernels_impl.hpp"

namespace flint::kernels {
namespace {

constexpr KernelTable kScalarTable{
    Isa::kScalar,          "scalar",
    &scalar::sgemm,        &scalar::warp_bilinear_2d,
    &scalar::prelu_forward, &scalar::prelu_backward,
    &scalar::adamw,
};

#if defined(FLINT_HAVE_AVX2)
constexpr KernelTable kAvx2Table{
    Isa::kAvx2,          "avx2",
    &avx2::sgemm,        &avx2::warp_bilinear_2d,
    &avx2::prelu_forward, &avx2::prelu_backward,
    &avx2::adamw,
};
#endif

bool cpu_has_avx2() {
#if defined(FLINT_HAVE_AVX2) && (defined(__GNUC__) || defined(__clang__))
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

Isa detect() {
  if (const char* env = std::getenv("FLINT_ISA")) {
    const std::string_view v(env);
    if (v == "scalar") return Isa::kScalar;
    if (v == "avx2" && cpu_has_avx2()) return Isa::kAvx2;
  }
  return cpu_has_avx2() ? Isa::kAvx2 : Isa::kScalar;
}

std::atomic<const KernelTable*>& slot() {
  static std::atomic<const KernelTable*> current{&table(detect())};
  return current;
}

}  // namespace

bool isa_available(Isa isa) {
  switch (isa) {
    case Isa::kScalar:
      return true;
    case Isa::kAvx2:
      return cpu_has_avx2();
  }
  return false;
}

const KernelTable& table(Isa isa) {
  if (!isa_available(isa)) throw ContractError(std::string("kernel ISA not available: ") + isa_name(isa));
#if defined(FLINT_HAVE_AVX2)
  if (isa == Isa::kAvx2) return kAvx2Table;
#endif
  return kScalarTable;
}

const KernelTable& active() { return *slot().load(std::memory_order_acquire); }

void set_active(Isa isa) { slot().store(&table(isa), std::memory_order_release); }

const char* isa_name(Isa isa) { return isa == Isa::kAvx2 ? "avx2" : "scalar"; }

}  // namespace flint::kernels
