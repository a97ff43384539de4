#pragma once

// Data-parallel inner loops used by the optimizer and the governor.
//
// Every kernel has a scalar reference implementation. Vector variants
// (AVX2 on x86-64, NEON on AArch64) are selected once at runtime. Elementwise
// kernels are bit-identical to the scalar reference; reductions differ only in
// summation order.

#include <cstddef>
#include <span>
#include <string_view>

namespace trainguard::kernels {

/// Per-step constants for the fused AdamW kernel.
struct AdamWCoefficients {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double one_minus_beta1 = 0.1;
  double one_minus_beta2 = 0.001;
  double bias_correction1 = 1.0;  // 1 - beta1^t
  double bias_correction2 = 1.0;  // 1 - beta2^t
  double lr = 0.0;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

struct KernelTable {
  std::string_view name;
  double (*sum_squares)(const double* x, std::size_t n);
  bool (*all_finite)(const double* x, std::size_t n);
  void (*scale)(double* x, std::size_t n, double factor);
  void (*add)(double* dst, const double* src, std::size_t n);
  // Updates m and v in place and writes the (unapplied) parameter delta.
  void (*adamw)(const double* params, const double* grads, double* m, double* v, double* delta,
                std::size_t n, const AdamWCoefficients& c);
};

const KernelTable& scalar_table() noexcept;

/// Returns nullptr when the vector variant was not compiled in or the CPU
/// lacks the instruction set.
const KernelTable* vector_table() noexcept;

/// The table used by the library. Chosen on first use: the vector variant
/// when available, unless TRAINGUARD_KERNELS=scalar is set in the environment.
const KernelTable& active() noexcept;

inline double sum_squares(std::span<const double> x) {
  return active().sum_squares(x.data(), x.size());
}

inline bool all_finite(std::span<const double> x) {
  return active().all_finite(x.data(), x.size());
}

inline void scale(std::span<double> x, double factor) {
  active().scale(x.data(), x.size(), factor);
}

inline void add(std::span<double> dst, std::span<const double> src) {
  active().add(dst.data(), src.data(), dst.size());
}

}  // namespace trainguard::kernels
