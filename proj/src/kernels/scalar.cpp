#include "kernels_impl.hpp"

#include <cmath>

namespace trainguard::kernels {
namespace scalar {

double sum_squares(const double* x, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    acc += x[i] * x[i];
  }
  return acc;
}

bool all_finite(const double* x, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::isfinite(x[i])) {
      return false;
    }
  }
  return true;
}

void scale(double* x, std::size_t n, double factor) {
  for (std::size_t i = 0; i < n; ++i) {
    x[i] *= factor;
  }
}

void add(double* dst, const double* src, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    dst[i] += src[i];
  }
}

void adamw(const double* params, const double* grads, double* m, double* v, double* delta,
           std::size_t n, const AdamWCoefficients& c) {
  for (std::size_t i = 0; i < n; ++i) {
    adamw_lane(params[i], grads[i], m[i], v[i], delta[i], c);
  }
}

}  // namespace scalar

const KernelTable& scalar_table() noexcept {
  static const KernelTable table{"scalar",      scalar::sum_squares, scalar::all_finite,
                                 scalar::scale, scalar::add,         scalar::adamw};
  return table;
}

}  // namespace trainguard::kernels
