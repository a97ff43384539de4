// AArch64 only. NEON is mandatory on this architecture, so no runtime probe.

#include <arm_neon.h>

#include "kernels_impl.hpp"

namespace trainguard::kernels::neon {
namespace {

double sum_squares(const double* x, std::size_t n) {
  float64x2_t acc0 = vdupq_n_f64(0.0);
  float64x2_t acc1 = vdupq_n_f64(0.0);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const float64x2_t a = vld1q_f64(x + i);
    const float64x2_t b = vld1q_f64(x + i + 2);
    acc0 = vaddq_f64(acc0, vmulq_f64(a, a));
    acc1 = vaddq_f64(acc1, vmulq_f64(b, b));
  }
  double total = vaddvq_f64(vaddq_f64(acc0, acc1));
  for (; i < n; ++i) {
    total += x[i] * x[i];
  }
  return total;
}

bool all_finite(const double* x, std::size_t n) {
  const float64x2_t zero = vdupq_n_f64(0.0);
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2) {
    const uint64x2_t ok = vceqq_f64(vmulq_f64(vld1q_f64(x + i), zero), zero);
    if ((vgetq_lane_u64(ok, 0) & vgetq_lane_u64(ok, 1)) == 0) {
      return false;
    }
  }
  for (; i < n; ++i) {
    if (!std::isfinite(x[i])) {
      return false;
    }
  }
  return true;
}

void scale(double* x, std::size_t n, double factor) {
  const float64x2_t f = vdupq_n_f64(factor);
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2) {
    vst1q_f64(x + i, vmulq_f64(vld1q_f64(x + i), f));
  }
  for (; i < n; ++i) {
    x[i] *= factor;
  }
}

void add(double* dst, const double* src, std::size_t n) {
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2) {
    vst1q_f64(dst + i, vaddq_f64(vld1q_f64(dst + i), vld1q_f64(src + i)));
  }
  for (; i < n; ++i) {
    dst[i] += src[i];
  }
}

void adamw(const double* params, const double* grads, double* m, double* v, double* delta,
           std::size_t n, const AdamWCoefficients& c) {
  const float64x2_t beta1 = vdupq_n_f64(c.beta1);
  const float64x2_t beta2 = vdupq_n_f64(c.beta2);
  const float64x2_t omb1 = vdupq_n_f64(c.one_minus_beta1);
  const float64x2_t omb2 = vdupq_n_f64(c.one_minus_beta2);
  const float64x2_t bc1 = vdupq_n_f64(c.bias_correction1);
  const float64x2_t bc2 = vdupq_n_f64(c.bias_correction2);
  const float64x2_t lr = vdupq_n_f64(c.lr);
  const float64x2_t eps = vdupq_n_f64(c.eps);
  const float64x2_t wd = vdupq_n_f64(c.weight_decay);

  std::size_t i = 0;
  for (; i + 2 <= n; i += 2) {
    const float64x2_t g = vld1q_f64(grads + i);
    const float64x2_t p = vld1q_f64(params + i);
    float64x2_t mi = vaddq_f64(vmulq_f64(beta1, vld1q_f64(m + i)), vmulq_f64(omb1, g));
    float64x2_t vi =
        vaddq_f64(vmulq_f64(beta2, vld1q_f64(v + i)), vmulq_f64(vmulq_f64(omb2, g), g));
    const float64x2_t m_hat = vdivq_f64(mi, bc1);
    const float64x2_t v_hat = vdivq_f64(vi, bc2);
    const float64x2_t step = vdivq_f64(m_hat, vaddq_f64(vsqrtq_f64(v_hat), eps));
    const float64x2_t d = vmulq_f64(lr, vaddq_f64(step, vmulq_f64(wd, p)));
    vst1q_f64(m + i, mi);
    vst1q_f64(v + i, vi);
    vst1q_f64(delta + i, vnegq_f64(d));
  }
  for (; i < n; ++i) {
    adamw_lane(params[i], grads[i], m[i], v[i], delta[i], c);
  }
}

}  // namespace

const KernelTable& table() noexcept {
  static const KernelTable t{"neon", sum_squares, all_finite, scale, add, adamw};
  return t;
}

}  // namespace trainguard::kernels::neon
