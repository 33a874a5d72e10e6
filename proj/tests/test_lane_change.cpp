#include <doctest.h>

#include <cmath>
#include <vector>

#include "ecolc/lane_change.hpp"

using namespace ecolc;

namespace {

LcParams default_params() { return LcParams{}; }

SignalSchedule no_signal() {
  SignalSchedule s;
  s.enabled = false;
  return s;
}

}  // namespace

TEST_CASE("safe speed: standstill, free flow clamp, and the worked numbers") {
  LcParams p = default_params();
  CHECK(safe_speed(0.0, 0.0, p) == doctest::Approx(0.0));

  CHECK(safe_speed(1e6, 0.0, p) == doctest::Approx(p.v_max_lane));

  // gap 15 m, leader 15 m/s, v_max 20, tau 1, b 4.5:
  // -4.5 + sqrt(4.5^2 + 15^2 + 2*4.5*15) = -4.5 + sqrt(380.25) = 15.0
  LcParams wide = p;
  wide.v_max_lane = 20.0;
  CHECK(safe_speed(15.0, 15.0, wide) == doctest::Approx(15.0).epsilon(1e-12));
}

TEST_CASE("benefit: worked example and signs") {
  CHECK(benefit(20.0, 15.350, 20.0) == doctest::Approx(0.233).epsilon(5e-3));
  CHECK(std::fabs(benefit(20.0, 15.350, 20.0) - 0.233) <= 1e-3);
  CHECK(benefit(12.0, 12.0, 15.0) == doctest::Approx(0.0));
  CHECK(benefit(10.0, 12.0, 20.0) == doctest::Approx(-0.1));
}

TEST_CASE("memory update: accumulate on gain, halve otherwise") {
  CHECK(update_memory(1.0, 0.3) == doctest::Approx(1.3));
  CHECK(update_memory(1.0, -0.2) == doctest::Approx(0.5));
  CHECK(update_memory(1.0, 0.0) == doctest::Approx(0.5));
  double m = 0.0;
  for (int i = 0; i < 5; ++i) m = update_memory(m, -0.1);
  CHECK(m == doctest::Approx(0.0));
}

TEST_CASE("crossing: printed cumulative trace crosses at +4.5 s") {
  const std::vector<double> benefits = {0.0, 0.1, 0.2,  0.2, 0.3, 0.25,
                                        0.3, 0.2, 0.3,  0.3, 0.3, 0.3};
  const auto idx = first_crossing(benefits, 2.0);
  REQUIRE(idx.has_value());
  CHECK(*idx == 9);
  CHECK(*idx * 0.5 == doctest::Approx(4.5));

  // With the prior memory of 1.0 folded in, the crossing comes earlier.
  const auto with_prior = first_crossing(benefits, 2.0, 1.0);
  REQUIRE(with_prior.has_value());
  CHECK(*with_prior < *idx);
}

TEST_CASE("crossing: constant-benefit closed form") {
  for (double b : {0.07, 0.13, 0.31, 0.7}) {
    for (double threshold : {1.0, 2.0, 2.5}) {
      std::vector<double> trace(200, b);
      const auto idx = first_crossing(trace, threshold);
      REQUIRE(idx.has_value());
      const int expected_steps =
          static_cast<int>(std::ceil(threshold / b - 1e-12));
      CHECK(*idx == expected_steps - 1);
    }
  }
}

TEST_CASE("crossing: no crossing when every benefit is nonpositive") {
  const std::vector<double> trace = {0.0, -0.1, -0.3, 0.0};
  CHECK_FALSE(first_crossing(trace, 0.5).has_value());
}

TEST_CASE("gap feasibility: empty, jammed, and the one-vehicle boundary") {
  const LcParams p = default_params();
  const PwParams pw;
  CellField f(2, 4);
  CHECK(gap_feasible(f, 1, 0, p, pw));

  f.density(1, 1) = pw.rho_jam;
  CHECK_FALSE(gap_feasible(f, 1, 1, p, pw));

  // Exactly one 5 m vehicle in a 15 m cell leaves 10 m: boundary-true.
  f.density(1, 2) = 1.0 / pw.dx;
  CHECK(gap_feasible(f, 1, 2, p, pw));
  f.density(1, 3) = 1.2 / pw.dx;
  CHECK_FALSE(gap_feasible(f, 1, 3, p, pw));
}

TEST_CASE("forecast: identical lanes produce no forecasts") {
  const LcParams p = default_params();
  const PwParams pw;
  CellField f(2, 20, 0.0, pw.v0);
  for (int lane = 0; lane < 2; ++lane)
    for (int j : {4, 9, 14}) {
      f.density(lane, j) = 1.0 / pw.dx;
      f.speed(lane, j) = 9.0;
    }
  BenefitLedger ledger;
  for (int s = 0; s < 12; ++s) {
    const auto fc = forecast_lc(f, {}, no_signal(), s * pw.dt_model, ledger, p, pw);
    CHECK(fc.empty());
  }
}

TEST_CASE("forecast: slow stream beside an empty fast lane crosses at the "
          "closed-form step") {
  LcParams p = default_params();
  p.threshold = 2.0;
  p.horizon_s = 10.0;
  const PwParams pw;

  // Lane 0 is a uniform slow stream in equilibrium (a fixed point of the
  // propagation, so the predicted per-step benefit is exactly constant);
  // lane 1 is empty at free flow.
  const double rho_slow = 0.087;  // ~5 m/s equilibrium speed
  const double v_slow = equilibrium_speed(rho_slow, pw);
  CellField f(2, 40, 0.0, pw.v0);
  for (int j = 0; j < 40; ++j) {
    f.density(0, j) = rho_slow;
    f.speed(0, j) = v_slow;
  }

  // Every occupied cell sees a leader one cell ahead: gap = dx - length.
  const double gap = pw.dx - p.veh_length;
  const double v_safe_cur = safe_speed(gap, v_slow, p);
  const double b = (p.v_max_lane - v_safe_cur) / p.v_max_lane;
  const int expected_idx =
      static_cast<int>(std::ceil(p.threshold / b - 1e-12)) - 1;

  BenefitLedger ledger;
  const auto fc = forecast_lc(f, {}, no_signal(), 0.0, ledger, p, pw);
  REQUIRE(!fc.empty());
  bool found = false;
  for (const auto& one : fc) {
    if (one.lane_from != 0 || one.cell > 30) continue;
    found = true;
    CHECK(one.lane_to == 1);
    CHECK(one.time_offset ==
          doctest::Approx(expected_idx * pw.dt_model).epsilon(1e-12));
  }
  CHECK(found);
}

TEST_CASE("forecast: monotone in threshold on a fixed input") {
  const PwParams pw;
  CellField f(2, 30, 0.0, 4.0);
  for (int j : {3, 7, 11, 15}) {
    f.density(0, j) = 1.0 / pw.dx;
    f.speed(0, j) = 4.0;
  }
  for (int j = 0; j < 30; ++j) f.speed(1, j) = pw.v0;

  std::size_t prev = SIZE_MAX;
  for (double threshold : {0.5, 1.0, 1.5, 2.0, 2.5, 3.0}) {
    LcParams p = default_params();
    p.threshold = threshold;
    BenefitLedger ledger;
    const auto fc = forecast_lc(f, {}, no_signal(), 0.0, ledger, p, pw);
    CHECK(fc.size() <= prev);
    prev = fc.size();
  }
}

TEST_CASE("forecast: deterministic for identical inputs") {
  const PwParams pw;
  LcParams p = default_params();
  p.threshold = 1.0;
  CellField f(2, 25, 0.0, 6.0);
  f.density(0, 4) = 1.0 / pw.dx;
  f.density(0, 6) = 1.0 / pw.dx;
  f.speed(0, 4) = 6.0;
  f.speed(0, 6) = 3.0;
  for (int j = 0; j < 25; ++j) f.speed(1, j) = pw.v0;

  BenefitLedger l1, l2;
  const auto a = forecast_lc(f, {}, no_signal(), 0.0, l1, p, pw);
  const auto b = forecast_lc(f, {}, no_signal(), 0.0, l2, p, pw);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].lane_from == b[i].lane_from);
    CHECK(a[i].cell == b[i].cell);
    CHECK(a[i].time_offset == b[i].time_offset);
    CHECK(a[i].v_lc == b[i].v_lc);
  }
}

TEST_CASE("injections: none without forecasts, magnitudes follow the "
          "duration scaling, pairs cancel") {
  PwParams pw;
  pw.dt_model = 1.0;
  LcParams p = default_params();
  const std::vector<CellField> fields(11, CellField(2, 20, 0.05, 9.0));

  const auto empty = injections_from_forecasts({}, fields, 10, p, pw);
  CHECK(empty.size() == 10);
  for (const auto& step : empty) CHECK(step.empty());

  LcForecast fc;
  fc.lane_from = 0;
  fc.lane_to = 1;
  fc.cell = 7;
  fc.time_offset = 3.0;
  fc.v_lc = 11.0;
  fc.cv_refined = true;

  // dt 1 s, duration 1 s: alpha = 1, one step, |rho_lc| = 1/15.
  const std::vector<LcForecast> one = {fc};
  const auto by_step = injections_from_forecasts(one, fields, 10, p, pw);
  REQUIRE(by_step[3].size() == 2);
  CHECK(by_step[3][0].rho_lc == doctest::Approx(-1.0 / 15.0));
  CHECK(by_step[3][1].rho_lc == doctest::Approx(+1.0 / 15.0));
  CHECK(by_step[3][0].rho_lc + by_step[3][1].rho_lc == doctest::Approx(0.0));
  CHECK(by_step[3][0].v_lc == doctest::Approx(11.0));
  for (int s = 0; s < 10; ++s)
    if (s != 3) CHECK(by_step[static_cast<std::size_t>(s)].empty());

  // dt 0.5 s, duration 1 s: alpha = 0.5 spread over two steps.
  PwParams half = pw;
  half.dt_model = 0.5;
  LcForecast fc2 = fc;
  fc2.time_offset = 1.5;
  const auto by_half =
      injections_from_forecasts(std::vector<LcForecast>{fc2}, fields, 10, p, half);
  REQUIRE(by_half[3].size() == 2);
  REQUIRE(by_half[4].size() == 2);
  CHECK(by_half[3][1].rho_lc == doctest::Approx(0.5 / 15.0));
  CHECK(by_half[4][1].rho_lc == doctest::Approx(0.5 / 15.0));

  // Outside the horizon is an error.
  LcForecast late = fc;
  late.time_offset = 99.0;
  CHECK_THROWS_AS(
      injections_from_forecasts(std::vector<LcForecast>{late}, fields, 10, p, pw),
      domain_error);
}
