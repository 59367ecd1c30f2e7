#include <doctest.h>

#include <cmath>
#include <limits>

#include "synthrank/error.hpp"
#include "synthrank/ranker.hpp"

using namespace synthrank;

namespace {

// Piecewise-linear schedule written out from its definition.
double closed_form_lr(double base, std::size_t t_total, std::size_t step) {
  const auto w = static_cast<std::size_t>(std::ceil(0.2 * static_cast<double>(t_total) - 1e-9));
  if (step == t_total) return 0.0;
  if (step <= w) return base * static_cast<double>(step) / static_cast<double>(w);
  return base * static_cast<double>(t_total - step) / static_cast<double>(t_total - w);
}

RankerParams params(std::uint64_t seed = 1) {
  RankerConfig c;
  c.dim = 3;
  c.hash_bits = 8;
  c.init_scale = 0.3;
  return RankerParams(c, seed);
}

}  // namespace

TEST_CASE("schedule matches the closed form at warmup end, midpoints, and T") {
  for (std::size_t t_total : {1u, 2u, 5u, 7u, 10u, 99u, 100u, 1001u}) {
    const LrSchedule s(2e-4, t_total);
    const std::size_t w = s.warmup_steps();
    CHECK(w == static_cast<std::size_t>(std::ceil(0.2 * static_cast<double>(t_total) - 1e-9)));
    for (std::size_t step : {std::size_t{0}, w / 2, w, (w + t_total) / 2, t_total}) {
      CHECK(lr_at_step(s, step) == closed_form_lr(2e-4, t_total, step));
    }
    CHECK(lr_at_step(s, 0) == 0.0);
    CHECK(lr_at_step(s, t_total) == 0.0);
    if (w < t_total) CHECK(lr_at_step(s, w) == 2e-4);
    CHECK_THROWS_AS(s.at(t_total + 1), Error);
  }
}

TEST_CASE("schedule shape properties") {
  const LrSchedule s(1.0, 50);
  CHECK(s.warmup_steps() == 10);
  for (std::size_t i = 1; i <= 10; ++i) CHECK(s.at(i) > s.at(i - 1));
  for (std::size_t i = 11; i <= 50; ++i) CHECK(s.at(i) < s.at(i - 1));
  CHECK(LrSchedule(1.0, 30).warmup_steps() == 6);
  CHECK_THROWS_AS(LrSchedule(-1.0, 10), Error);
  CHECK_THROWS_AS(LrSchedule(1.0, 10, 0.0), Error);
}

TEST_CASE("single AdamW step from fresh state matches the closed form") {
  AdamWConfig cfg;
  cfg.weight_decay = 0.01;  // large enough to be visible
  for (double mult : {1.0, 0.37}) {
    RankerParams p = params();
    const RankerParams before = p;
    RankerGradient g(3);
    g.head = {0.5, -2.0, 1e-9};
    g.bias = -0.3;
    g.rows[17] = {1.0, 0.0, -4.0};
    AdamW opt(cfg);
    opt.step(p, g, mult);
    CHECK(opt.steps_taken() == 1);

    // m_hat = g and v_hat = g^2 after one step, so delta = lr * g / (|g| + eps).
    const double hlr = cfg.head_lr * mult, elr = cfg.embedding_lr * mult;
    auto expect = [&](double w, double grad, double lr) {
      return w * (1 - lr * cfg.weight_decay) - lr * grad / (std::abs(grad) + cfg.epsilon);
    };
    for (std::size_t i = 0; i < 3; ++i) {
      CHECK(std::abs(p.head()[i] - expect(before.head()[i], g.head[i], hlr)) <= 1e-12);
    }
    CHECK(std::abs(p.bias() - expect(before.bias(), g.bias, hlr)) <= 1e-12);
    std::vector<double> r0(3), r1(3);
    before.row(17, r0);
    p.row(17, r1);
    for (std::size_t i = 0; i < 3; ++i) {
      CHECK(std::abs(r1[i] - expect(r0[i], g.rows[17][i], elr)) <= 1e-12);
    }
    // An untouched row only decays.
    before.row(99, r0);
    p.row(99, r1);
    CHECK_FALSE(p.is_materialized(99));
    for (std::size_t i = 0; i < 3; ++i) {
      CHECK(std::abs(r1[i] - r0[i] * (1 - elr * cfg.weight_decay)) <= 1e-15);
    }
  }
}

TEST_CASE("two AdamW steps follow the bias-corrected recurrence") {
  AdamWConfig cfg;
  cfg.head_lr = 0.1;
  cfg.weight_decay = 0.0;
  RankerParams p = params();
  double w = p.head()[0];
  RankerGradient g1(3), g2(3);
  g1.head = {1.0, 0, 0};
  g2.head = {-0.5, 0, 0};
  AdamW opt(cfg);
  opt.step(p, g1, 1.0);
  opt.step(p, g2, 1.0);
  double m = 0, v = 0;
  int t = 0;
  for (double g : {1.0, -0.5}) {
    ++t;
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    w -= 0.1 * (m / (1 - std::pow(0.9, t))) / (std::sqrt(v / (1 - std::pow(0.999, t))) + 1e-8);
  }
  CHECK(std::abs(p.head()[0] - w) < 1e-12);
}

TEST_CASE("a row's moments persist after it leaves the gradient") {
  AdamWConfig cfg;
  cfg.embedding_lr = 0.1;
  cfg.weight_decay = 0.0;
  RankerParams p = params();
  RankerGradient g(3);
  g.rows[5] = {1.0, 1.0, 1.0};
  AdamW opt(cfg);
  opt.step(p, g, 1.0);
  std::vector<double> after1(3), after2(3);
  p.row(5, after1);
  opt.step(p, RankerGradient(3), 1.0);
  p.row(5, after2);
  // m = 0.09, v = 0.000999 at t = 2: the row keeps moving.
  const double m_hat = 0.09 / (1 - 0.81), v_hat = 0.000999 / (1 - 0.999 * 0.999);
  CHECK(std::abs((after1[0] - after2[0]) - 0.1 * m_hat / (std::sqrt(v_hat) + 1e-8)) < 1e-12);
}

TEST_CASE("schedule-driven steps use the step count as the index") {
  AdamWConfig cfg;
  RankerParams p = params();
  const RankerParams before = p;
  RankerGradient g(3);
  g.head = {1, 1, 1};
  AdamW opt(cfg);
  const LrSchedule s(1.0, 10);
  opt.step(p, g, s);  // lr(0) = 0: only the moments move
  for (std::size_t i = 0; i < 3; ++i) CHECK(p.head()[i] == before.head()[i]);
  opt.step(p, g, s);
  CHECK(p.head()[0] != before.head()[0]);
}

TEST_CASE("non-finite gradients name their group") {
  RankerParams p = params();
  AdamW opt({});
  RankerGradient g(3);
  g.head[1] = std::numeric_limits<double>::quiet_NaN();
  try {
    opt.step(p, g, 1.0);
    FAIL("expected numeric error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kNumeric);
    CHECK(std::string(e.what()).find("head") != std::string::npos);
  }
  RankerGradient h(3);
  h.rows[1] = {0, std::numeric_limits<double>::infinity(), 0};
  try {
    opt.step(p, h, 1.0);
    FAIL("expected numeric error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("embeddings") != std::string::npos);
  }
  CHECK(opt.steps_taken() == 0);
}
