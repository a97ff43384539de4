#include <doctest.h>

#include <bit>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <vector>

#include "support/oracles.hpp"
#include "trainguard/kernels.hpp"

using namespace trainguard;

namespace {

bool same_bits(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (std::bit_cast<std::uint64_t>(a[i]) != std::bit_cast<std::uint64_t>(b[i])) return false;
  }
  return true;
}

// Tables under test: the scalar reference always, the vector variant when present.
std::vector<const kernels::KernelTable*> tables() {
  std::vector<const kernels::KernelTable*> out{&kernels::scalar_table()};
  if (const auto* vec = kernels::vector_table()) out.push_back(vec);
  return out;
}

}  // namespace

TEST_SUITE("kernels") {

TEST_CASE("sum_squares matches a plain loop for every length and table") {
  std::mt19937_64 gen(11);
  for (const auto* table : tables()) {
    CAPTURE(table->name);
    for (std::size_t n = 0; n < 70; ++n) {
      const auto x = oracle::random_vector(gen, n, 3.0);
      double expected = 0.0;
      for (double xi : x) expected += xi * xi;
      const double got = table->sum_squares(x.data(), n);
      if (n == 0) {
        CHECK(got == 0.0);
      } else {
        CHECK(oracle::rel_err(got, expected) < 1e-12);
      }
    }
  }
}

TEST_CASE("all_finite finds a NaN or infinity at any position") {
  for (const auto* table : tables()) {
    CAPTURE(table->name);
    for (std::size_t n = 1; n < 40; ++n) {
      std::vector<double> x(n, 1.5);
      CHECK(table->all_finite(x.data(), n));
      for (std::size_t pos = 0; pos < n; ++pos) {
        for (double bad : {std::numeric_limits<double>::quiet_NaN(),
                           std::numeric_limits<double>::infinity(),
                           -std::numeric_limits<double>::infinity()}) {
          x[pos] = bad;
          CHECK_FALSE(table->all_finite(x.data(), n));
          x[pos] = 1.5;
        }
      }
    }
    CHECK(table->all_finite(nullptr, 0));
  }
}

TEST_CASE("vector elementwise kernels are bit-identical to the scalar reference") {
  const auto* vec = kernels::vector_table();
  if (vec == nullptr) {
    MESSAGE("no vector kernels on this machine; scalar reference only");
    return;
  }
  const auto& ref = kernels::scalar_table();
  std::mt19937_64 gen(12);
  for (std::size_t n : {0, 1, 3, 4, 5, 7, 8, 9, 16, 31, 64, 257}) {
    CAPTURE(n);
    const auto x = oracle::random_vector(gen, n);
    const auto y = oracle::random_vector(gen, n);

    auto a = x, b = x;
    ref.scale(a.data(), n, 0.37);
    vec->scale(b.data(), n, 0.37);
    CHECK(same_bits(a, b));

    a = x;
    b = x;
    ref.add(a.data(), y.data(), n);
    vec->add(b.data(), y.data(), n);
    CHECK(same_bits(a, b));

    kernels::AdamWCoefficients c;
    c.lr = 0.01;
    c.weight_decay = 0.1;
    c.bias_correction1 = 1.0 - std::pow(c.beta1, 3.0);
    c.bias_correction2 = 1.0 - std::pow(c.beta2, 3.0);
    auto m1 = oracle::random_vector(gen, n, 0.1);
    std::vector<double> v1(n);
    for (double& vi : v1) vi = std::abs(oracle::random_vector(gen, 1)[0]);
    auto m2 = m1, v2 = v1;
    std::vector<double> d1(n), d2(n);
    ref.adamw(x.data(), y.data(), m1.data(), v1.data(), d1.data(), n, c);
    vec->adamw(x.data(), y.data(), m2.data(), v2.data(), d2.data(), n, c);
    CHECK(same_bits(m1, m2));
    CHECK(same_bits(v1, v2));
    CHECK(same_bits(d1, d2));
  }
}

TEST_CASE("vector reductions agree with the scalar reference up to summation order") {
  const auto* vec = kernels::vector_table();
  if (vec == nullptr) return;
  std::mt19937_64 gen(13);
  for (std::size_t n = 1; n < 300; n += 7) {
    const auto x = oracle::random_vector(gen, n, 10.0);
    CHECK(oracle::rel_err(vec->sum_squares(x.data(), n),
                          kernels::scalar_table().sum_squares(x.data(), n)) < 1e-12);
  }
}

TEST_CASE("fused AdamW kernel matches the reference formulas") {
  std::mt19937_64 gen(14);
  const std::size_t n = 37;
  auto params = oracle::random_vector(gen, n);
  oracle::AdamW ref(n);
  ref.weight_decay = 0.05;
  std::vector<double> m(n), v(n), delta(n);
  for (std::uint64_t t = 1; t <= 20; ++t) {
    const auto grads = oracle::random_vector(gen, n);
    const auto expected = ref.step(params, grads, 0.02);
    kernels::AdamWCoefficients c;
    c.lr = 0.02;
    c.weight_decay = 0.05;
    c.bias_correction1 = 1.0 - std::pow(0.9, static_cast<double>(t));
    c.bias_correction2 = 1.0 - std::pow(0.999, static_cast<double>(t));
    kernels::active().adamw(params.data(), grads.data(), m.data(), v.data(), delta.data(), n, c);
    for (std::size_t i = 0; i < n; ++i) {
      CHECK(oracle::rel_err(delta[i], expected[i]) < 1e-12);
      params[i] += delta[i];
    }
  }
}

TEST_CASE("TRAINGUARD_KERNELS=scalar pins the scalar table") {
  const char* env = std::getenv("TRAINGUARD_KERNELS");
  if (env != nullptr && std::string_view(env) == "scalar") {
    CHECK(kernels::active().name == kernels::scalar_table().name);
  } else if (kernels::vector_table() != nullptr) {
    CHECK(kernels::active().name == kernels::vector_table()->name);
  }
}

}  // TEST_SUITE
