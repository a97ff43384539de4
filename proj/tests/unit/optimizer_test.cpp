#include <doctest.h>

#include <bit>
#include <cmath>
#include <limits>
#include <random>
#include <vector>

#include "support/oracles.hpp"
#include "trainguard/optimizer.hpp"

using namespace trainguard;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

bool same_bits(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (std::bit_cast<std::uint64_t>(a[i]) != std::bit_cast<std::uint64_t>(b[i])) return false;
  }
  return true;
}

}  // namespace

TEST_SUITE("optimizer") {

TEST_CASE("AdamW matches the reference implementation over 100 random steps") {
  std::mt19937_64 gen(41);
  std::uniform_real_distribution<double> lr_dist(1e-4, 0.1);
  const std::size_t n = 64;
  OptimizerConfig cfg;
  cfg.beta1 = 0.85;
  cfg.beta2 = 0.995;
  cfg.eps = 1e-8;
  cfg.weight_decay = 0.03;

  auto params = oracle::random_vector(gen, n);
  auto ref_params = params;
  oracle::AdamW ref(n);
  ref.beta1 = cfg.beta1;
  ref.beta2 = cfg.beta2;
  ref.eps = cfg.eps;
  ref.weight_decay = cfg.weight_decay;
  OptimizerState st = OptimizerState::zeros(n);

  double worst = 0.0;
  for (int step = 0; step < 100; ++step) {
    const auto grads = oracle::random_vector(gen, n, 0.5 + step % 5);
    const double lr = lr_dist(gen);
    std::vector<double> delta(n);
    adamw_step(st, params, grads, lr, cfg, delta);
    const auto ref_delta = ref.step(ref_params, grads, lr);
    for (std::size_t i = 0; i < n; ++i) {
      params[i] += delta[i];
      ref_params[i] += ref_delta[i];
      worst = std::max(worst, oracle::rel_err(params[i], ref_params[i]));
    }
  }
  CHECK(st.t == 100);
  CHECK(worst < 1e-12);
}

TEST_CASE("closed-form first step") {
  OptimizerConfig cfg;
  cfg.weight_decay = 0.0;
  OptimizerState st = OptimizerState::zeros(1);
  std::vector<double> p{1.0}, g{1.0}, d(1);
  adamw_step(st, p, g, 0.1, cfg, d);
  // m_hat = g and v_hat = g^2, so the step is lr * g / (|g| + eps).
  CHECK(std::abs(d[0] - (-0.1 / (1.0 + 1e-8))) < 1e-15);
  CHECK(std::abs(p[0] + d[0] - 0.9) < 1e-9);
}

TEST_CASE("zero gradient and decoupled decay examples") {
  OptimizerConfig cfg;
  cfg.weight_decay = 0.0;
  OptimizerState st = OptimizerState::zeros(2);
  std::vector<double> p{1.0, -2.0}, g{0.0, 0.0}, d(2);
  adamw_step(st, p, g, 0.1, cfg, d);
  CHECK(d == std::vector<double>{0.0, 0.0});

  cfg.weight_decay = 0.1;
  OptimizerState st2 = OptimizerState::zeros(1);
  std::vector<double> p1{1.0}, g1{0.0}, d1(1);
  adamw_step(st2, p1, g1, 0.1, cfg, d1);
  oracle::AdamW ref(1);
  ref.weight_decay = 0.1;
  const auto expected = ref.step({1.0}, {0.0}, 0.1);
  CHECK(d1[0] == doctest::Approx(-0.01).epsilon(1e-12));
  CHECK(d1[0] == doctest::Approx(expected[0]).epsilon(1e-12));
}

TEST_CASE("non-finite gradient is rejected without touching the state") {
  OptimizerConfig cfg;
  OptimizerState st = OptimizerState::zeros(3);
  std::vector<double> p{1.0, 1.0, 1.0}, g{0.1, 0.2, 0.3}, d(3);
  adamw_step(st, p, g, 0.01, cfg, d);
  const OptimizerState before = st;
  std::vector<double> bad{0.1, kNaN, 0.3};
  CHECK_THROWS_AS(adamw_step(st, p, bad, 0.01, cfg, d), NonFiniteGradient);
  CHECK(st == before);
}

TEST_CASE("clip_global_norm examples") {
  std::vector<double> a{3.0, 4.0};
  CHECK(clip_global_norm(a, 1.0) == 5.0);
  CHECK(a[0] == doctest::Approx(0.6));
  CHECK(a[1] == doctest::Approx(0.8));

  std::vector<double> b{0.3, 0.4};
  CHECK(clip_global_norm(b, 1.0) == doctest::Approx(0.5));
  CHECK(b == std::vector<double>{0.3, 0.4});

  std::vector<double> z{0.0, 0.0, 0.0};
  CHECK(clip_global_norm(z, 0.5) == 0.0);
  CHECK(z == std::vector<double>{0.0, 0.0, 0.0});

  std::vector<double> bad{1.0, std::numeric_limits<double>::infinity()};
  CHECK_THROWS_AS(clip_global_norm(bad, 1.0), NonFiniteGradient);
}

TEST_CASE("property: clipped norm is bounded and direction is kept") {
  std::mt19937_64 gen(42);
  std::uniform_real_distribution<double> thr(1e-3, 10.0);
  for (int i = 0; i < 500; ++i) {
    const auto x = oracle::random_vector(gen, 1 + gen() % 100, std::pow(10.0, static_cast<int>(gen() % 5) - 2));
    auto y = x;
    const double g = thr(gen);
    const double pre = clip_global_norm(y, g);
    CHECK(oracle::rel_err(pre, oracle::l2(x)) < 1e-12);
    CHECK(oracle::l2(y) <= g + 1e-12);
    // Positive collinearity: y = c x with a single c > 0.
    double dot = 0.0;
    for (std::size_t k = 0; k < x.size(); ++k) dot += x[k] * y[k];
    CHECK(dot > 0.0);
    CHECK(dot / (oracle::l2(x) * oracle::l2(y)) == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("schedule boundaries") {
  ScheduleConfig s;
  s.base_lr = 0.3;
  s.min_lr = 0.03;
  s.total_steps = 1000;
  CHECK(schedule_lr(0, s) == s.base_lr);
  CHECK(schedule_lr(1000, s) == s.min_lr);
  CHECK(schedule_lr(5000, s) == s.min_lr);

  s.min_lr = 0.0;
  // cos(pi / 2) = 0 in the formula.
  CHECK(schedule_lr(500, s) == doctest::Approx(0.15).epsilon(1e-14));
  double prev = schedule_lr(0, s);
  for (std::uint64_t k = 1; k <= 1000; ++k) {
    const double lr = schedule_lr(k, s);
    CHECK(lr <= prev);
    prev = lr;
  }

  s.kind = ScheduleKind::Constant;
  CHECK(schedule_lr(0, s) == s.base_lr);
  CHECK(schedule_lr(700, s) == s.base_lr);
}

TEST_CASE("config validation keys") {
  OptimizerConfig o;
  o.beta1 = 1.0;
  CHECK_THROWS_AS(o.validate(), ConfigError);
  ScheduleConfig s;
  s.min_lr = 2.0 * s.base_lr;
  CHECK_THROWS_AS(s.validate(), ConfigError);
  ClipConfig c;
  c.max_norm = 0.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("off-switch guarded step is bit-identical to plain AdamW") {
  std::mt19937_64 gen(43);
  const std::size_t n = 29;
  OptimizerConfig cfg;
  cfg.weight_decay = 0.01;
  GuardConfig gc;
  gc.auto_enabled = false;
  GuardBundle guard(gc);
  auto pa = oracle::random_vector(gen, n);
  auto pb = pa;
  OptimizerState sa = OptimizerState::zeros(n), sb = OptimizerState::zeros(n);
  const std::vector<ParamGroup> layout{{0, n}};
  for (std::uint64_t step = 0; step < 300; ++step) {
    auto g = oracle::random_vector(gen, n, step % 50 == 0 ? 100.0 : 1.0);
    auto ga = g, gb = g;
    const double loss = step % 50 == 0 ? 1e6 : 1.0;
    const auto rec = guarded_step(guard, sa, {pa, ga, layout, loss, step, 0.01}, cfg, {});
    plain_step(sb, {pb, gb, layout, loss, step, 0.01}, cfg, {});
    CHECK(rec.scale == 1.0);
    CHECK_FALSE(rec.active);
    REQUIRE(same_bits(pa, pb));
  }
  CHECK(sa == sb);
}

TEST_CASE("scale-1 transparency: a calm trajectory equals plain AdamW") {
  // Slowly decreasing loss and steady gradients never trigger the analyzer.
  const std::size_t n = 8;
  OptimizerConfig cfg;
  GuardBundle guard(GuardConfig{});
  std::vector<double> pa(n, 1.0), pb(n, 1.0);
  OptimizerState sa = OptimizerState::zeros(n), sb = OptimizerState::zeros(n);
  for (std::uint64_t step = 0; step < 200; ++step) {
    std::vector<double> ga(n, 0.5), gb(n, 0.5);
    const double loss = 1.0 / (1.0 + 0.001 * step);
    const auto rec = guarded_step(guard, sa, {pa, ga, {}, loss, step, 0.01}, cfg, {});
    plain_step(sb, {pb, gb, {}, loss, step, 0.01}, cfg, {});
    CHECK(rec.scale == 1.0);
    CHECK_FALSE(rec.active);
  }
  CHECK(same_bits(pa, pb));
  CHECK(finalize_log(guard.log).control_active_steps == 0);
}

TEST_CASE("non-finite loss skips the step and freezes the moments") {
  const std::size_t n = 4;
  OptimizerConfig cfg;
  GuardBundle guard(GuardConfig{});
  std::vector<double> p(n, 1.0);
  OptimizerState st = OptimizerState::zeros(n);
  std::vector<double> g(n, 0.1);
  guarded_step(guard, st, {p, g, {}, 1.0, 0, 0.01}, cfg, {});
  const auto p_before = p;
  const OptimizerState st_before = st;

  std::vector<double> g2(n, 0.2);
  const auto rec = guarded_step(guard, st, {p, g2, {}, kNaN, 1, 0.01}, cfg, {});
  CHECK(rec.skipped);
  CHECK(rec.active);
  CHECK(rec.regime == Regime::Spike);
  CHECK(p == p_before);
  CHECK(st == st_before);

  std::vector<double> g3{0.1, kNaN, 0.1, 0.1};
  const auto rec3 = guarded_step(guard, st, {p, g3, {}, 1.0, 2, 0.01}, cfg, {});
  CHECK(rec3.skipped);
  CHECK(p == p_before);
  CHECK(st == st_before);

  std::vector<double> g4(n, 0.1);
  guarded_step(guard, st, {p, g4, {}, 1.0, 3, 0.01}, cfg, {});
  CHECK(st.t == st_before.t + 1);
}

TEST_CASE("moments see the unscaled post-clip gradient while the applied step is scaled") {
  const std::size_t n = 3;
  OptimizerConfig cfg;
  GuardBundle guard(GuardConfig{});
  ClipConfig clip;
  clip.max_norm = 1.0;
  std::vector<double> p(n, 0.0), ref_p(n, 0.0);
  OptimizerState st = OptimizerState::zeros(n), ref = OptimizerState::zeros(n);

  // Step 0 initializes; step 1 is a loss spike (ratio 5) so the scale halves.
  for (std::uint64_t step = 0; step < 2; ++step) {
    std::vector<double> g{3.0, 0.0, 4.0};
    const double loss = step == 0 ? 1.0 : 5.0;
    const auto rec = guarded_step(guard, st, {p, g, {}, loss, step, 0.1}, cfg, clip);

    std::vector<double> rg{3.0, 0.0, 4.0}, delta(n);
    clip_global_norm(rg, 1.0);
    adamw_step(ref, ref_p, rg, 0.1, cfg, delta);
    for (std::size_t i = 0; i < n; ++i) ref_p[i] += rec.scale * delta[i];
    if (step == 1) CHECK(rec.scale == 0.5);
  }
  CHECK(st == ref);
  for (std::size_t i = 0; i < n; ++i) CHECK(p[i] == doctest::Approx(ref_p[i]).epsilon(1e-15));
}

TEST_CASE("guarded_step rejects a step that does not advance") {
  OptimizerConfig cfg;
  GuardBundle guard(GuardConfig{});
  std::vector<double> p(2, 0.0), g(2, 0.1);
  OptimizerState st = OptimizerState::zeros(2);
  guarded_step(guard, st, {p, g, {}, 1.0, 5, 0.01}, cfg, {});
  CHECK_THROWS_AS(guarded_step(guard, st, {p, g, {}, 1.0, 5, 0.01}, cfg, {}), std::invalid_argument);
}

}  // TEST_SUITE
