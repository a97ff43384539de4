#include <cstdlib>
#include <string_view>

#include "kernels_impl.hpp"

namespace trainguard::kernels {

const KernelTable* vector_table() noexcept {
#if defined(TRAINGUARD_HAVE_AVX2)
  return avx2::cpu_supported() ? &avx2::table() : nullptr;
#elif defined(TRAINGUARD_HAVE_NEON)
  return &neon::table();
#else
  return nullptr;
#endif
}

namespace {

const KernelTable& select() noexcept {
  if (const char* env = std::getenv("TRAINGUARD_KERNELS");
      env != nullptr && std::string_view(env) == "scalar") {
    return scalar_table();
  }
  if (const KernelTable* vec = vector_table()) {
    return *vec;
  }
  return scalar_table();
}

}  // namespace

const KernelTable& active() noexcept {
  static const KernelTable& chosen = select();
  return chosen;
}

}  // namespace trainguard::kernels
