#pragma once

#include <cmath>
#include <cstddef>

#include "trainguard/kernels.hpp"

namespace trainguard::kernels {

// One lane of the AdamW update. Vector variants perform exactly this sequence
// of IEEE operations per lane so that results match bit for bit. Internal
// linkage keeps the -mavx2 copy from being merged into scalar callers.
static inline void adamw_lane(double p, double g, double& m, double& v, double& delta,
                              const AdamWCoefficients& c) {
  m = c.beta1 * m + c.one_minus_beta1 * g;
  v = c.beta2 * v + (c.one_minus_beta2 * g) * g;
  const double m_hat = m / c.bias_correction1;
  const double v_hat = v / c.bias_correction2;
  const double step = m_hat / (std::sqrt(v_hat) + c.eps);
  delta = -(c.lr * (step + c.weight_decay * p));
}

#if defined(TRAINGUARD_HAVE_AVX2)
namespace avx2 {
bool cpu_supported() noexcept;
const KernelTable& table() noexcept;
}  // namespace avx2
#endif

#if defined(TRAINGUARD_HAVE_NEON)
namespace neon {
const KernelTable& table() noexcept;
}  // namespace neon
#endif

}  // namespace trainguard::kernels
