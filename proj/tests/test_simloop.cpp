#include <catch2/catch.hpp>

#include <algorithm>
#include <cmath>
#include <vector>

#include "looptune/autodiff.hpp"
#include "looptune/lti.hpp"
#include "looptune/pid.hpp"
#include "looptune/simloop.hpp"
#include "looptune/tuner.hpp"

using namespace looptune;

namespace {

DiscreteModel system1() { return discretize({{2.0}, {1.0, -0.995}, 0.02}, 0.02); }
DiscreteModel system2() { return discretize({{1.0}, {20.0, 10.0, 1.0}, 0.0}, 0.1); }
DiscreteModel system3() { return discretize({{1.0}, {1.0, 0.0, -0.01}, 0.0}, 0.1); }
DiscreteModel system4() {
  return discretize({{1.0, 0.8, 0.15}, {1.0, 1.3, 0.56, 0.092, 0.0048}, 0.0}, 0.1);
}

ReferenceSignal constant_reference(double amp, std::size_t T) {
  ReferenceSignal ref;
  ref.kind = RefKind::step;
  ref.samples.assign(T, amp);
  return ref;
}

}  // namespace

TEST_CASE("rollout: zero reference, zero state stays at zero with zero cost") {
  const auto plant = system2();
  StaticPid<double> ctrl{{3.0, 1.0, 0.5, 0.2, 0.0}};
  const auto res = rollout<double>(plant, ctrl, constant_reference(0.0, 100),
                                   {100, 0.1, false}, {-7.0, 7.0});
  for (double y : res.y) REQUIRE(y == 0.0);
  for (double u : res.u_sat) REQUIRE(u == 0.0);
  REQUIRE(res.cost == 0.0);
}

TEST_CASE("rollout: three-step hand recursion on the integrator") {
  // k_p = 1, r = 1, dt = 0.1, no saturation: y = (0, 0.1, 0.19)
  const auto plant = discretize({{1.0}, {1.0, 0.0}, 0.0}, 0.1);
  StaticPid<double> ctrl{{1.0, 0.0, 0.0, 0.0, 0.0}};
  const auto res = rollout<double>(plant, ctrl, constant_reference(1.0, 3),
                                   {3, 0.1, false}, {-100.0, 100.0});
  REQUIRE(res.y[0] == Approx(0.0).margin(1e-15));
  REQUIRE(res.y[1] == Approx(0.1).margin(1e-12));
  REQUIRE(res.y[2] == Approx(0.19).margin(1e-12));
}

TEST_CASE("rollout: windup overshoot shrinks when back-calculation is on") {
  const auto plant = system1();
  const auto ref = constant_reference(4.0, 500);
  const SaturationLimits lim{-3.3, 3.3};

  const auto peak = [&](double b) {
    StaticPid<double> ctrl{{4.0, 10.0, 0.0, b, 0.0}};
    const auto res = rollout<double>(plant, ctrl, ref, {500, 0.02, false}, lim);
    return *std::max_element(res.y.begin(), res.y.end());
  };

  const double peak_without = peak(0.0);
  const double peak_with = peak(0.5);
  REQUIRE(peak_without > peak_with);
  REQUIRE(peak_with > 4.0);  // still overshoots, just less
}

TEST_CASE("rollout: saturated flags match v leaving the open interval") {
  const auto plant = system1();
  StaticPid<double> ctrl{{4.0, 10.0, 0.0, 0.5, 0.0}};
  const SaturationLimits lim{-3.3, 3.3};
  const auto res = rollout<double>(plant, ctrl, constant_reference(4.0, 300),
                                   {300, 0.02, false}, lim);
  bool any_sat = false;
  for (std::size_t t = 0; t < res.v.size(); ++t) {
    const bool outside = res.v[t] <= lim.u_low || res.v[t] >= lim.u_high;
    REQUIRE(static_cast<bool>(res.saturated[t]) == outside);
    any_sat = any_sat || outside;
  }
  REQUIRE(any_sat);
}

TEST_CASE("cost: exact tracking with R = 0 costs nothing") {
  RolloutResult<double> res;
  res.y = {1.0, 2.0};
  res.u_sat = {5.0, 5.0};
  ReferenceSignal ref;
  ref.samples = {1.0, 2.0};
  REQUIRE(cost(res, ref, {1.0, 0.0}) == 0.0);
}

TEST_CASE("cost: hand values") {
  RolloutResult<double> res;
  res.y = {1.0, 2.0};
  res.u_sat = {0.0, 0.0};
  ReferenceSignal ref;
  ref.samples = {0.0, 0.0};
  REQUIRE(cost(res, ref, {1.0, 0.0}) == 5.0);

  RolloutResult<double> res2;
  res2.y = {1.0};
  res2.u_sat = {2.0};
  ReferenceSignal ref2;
  ref2.samples = {1.0};
  REQUIRE(cost(res2, ref2, {1.0, 0.1}) == Approx(0.4).margin(1e-15));
}

TEST_CASE("cost is non-negative, zero exactly when tracking is perfect (R = 0)") {
  std::mt19937 rng(23);
  std::uniform_real_distribution<double> val(-5.0, 5.0);
  ReferenceSignal ref;
  RolloutResult<double> res;
  for (int t = 0; t < 100; ++t) {
    ref.samples.push_back(val(rng));
    res.y.push_back(val(rng));
    res.u_sat.push_back(val(rng));
  }
  REQUIRE(cost(res, ref, {1.0, 0.0}) > 0.0);
  REQUIRE(cost(res, ref, {1.0, 0.5}) >= cost(res, ref, {1.0, 0.0}));

  res.y = ref.samples;  // perfect tracking
  REQUIRE(cost(res, ref, {1.0, 0.0}) == 0.0);
}

TEST_CASE("generate_references: same seed gives bitwise-identical batches") {
  const auto a = generate_references(RefKind::switching, 4.0, 30, 500, 7);
  const auto b = generate_references(RefKind::switching, 4.0, 30, 500, 7);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) REQUIRE(a[i].samples == b[i].samples);
}

TEST_CASE("generate_references: amplitudes respect the limit") {
  for (const auto kind : {RefKind::step, RefKind::switching, RefKind::ramp}) {
    const auto refs = generate_references(kind, 4.0, 30, 200, 3);
    for (const auto& ref : refs) {
      for (double s : ref.samples) REQUIRE(std::abs(s) <= 4.0);
    }
  }
}

TEST_CASE("generate_references: 30 signals split into 20 train / 10 test") {
  auto refs = generate_references(RefKind::step, 4.0, 30, 100, 9);
  const auto split = split_references(std::move(refs), 20);
  REQUIRE(split.train.size() == 20);
  REQUIRE(split.test.size() == 10);
}

TEST_CASE("generate_references: switching redraws every T/5 steps") {
  const auto refs = generate_references(RefKind::switching, 4.0, 1, 500, 5);
  const auto& s = refs[0].samples;
  for (std::size_t t = 1; t < s.size(); ++t) {
    if (t % 100 != 0) REQUIRE(s[t] == s[t - 1]);
  }
  // five segments really differ (probability of a collision is nil)
  REQUIRE((s[0] != s[100] || s[100] != s[200] || s[200] != s[300]));
}

TEST_CASE("property: closed loop is linear once saturation cannot engage") {
  const auto plant = system3();
  StaticPid<double> ctrl{{20.0, 0.2, -50.0, 0.7, 0.0}};
  const SaturationLimits huge{-1e12, 1e12};

  const auto run = [&](double amp) {
    return rollout<double>(plant, ctrl, constant_reference(amp, 500),
                           {500, 0.1, false}, huge);
  };
  const auto base = run(1.0);
  const auto scaled = run(3.0);
  for (std::size_t t = 0; t < base.y.size(); ++t) {
    const double expect = 3.0 * base.y[t];
    REQUIRE(std::abs(scaled.y[t] - expect) <= 1e-10 * std::max(1.0, std::abs(expect)));
    const double expect_u = 3.0 * base.u_sat[t];
    REQUIRE(std::abs(scaled.u_sat[t] - expect_u) <=
            1e-10 * std::max(1.0, std::abs(expect_u)));
  }
}

TEST_CASE("taped and untaped rollouts produce identical primals, bitwise") {
  const auto plant = system2();
  const auto ref = constant_reference(3.0, 400);
  const SaturationLimits lim{-7.0, 7.0};

  StaticPid<double> plain{{10.0, 1.5, 8.0, 0.4, 0.0}};
  const auto res_plain = rollout<double>(plant, plain, ref, {400, 0.1, false}, lim);

  Tape tape;
  StaticPid<DiffScalar> taped;
  taped.g.k_p = tape.leaf(10.0);
  taped.g.k_i = tape.leaf(1.5);
  taped.g.k_d = tape.leaf(8.0);
  taped.g.b = tape.leaf(0.4);
  const auto res_taped =
      rollout<DiffScalar>(plant, taped, ref, {400, 0.1, true}, lim);

  REQUIRE(res_plain.y == res_taped.y);
  REQUIRE(res_plain.u_sat == res_taped.u_sat);
  REQUIRE(res_plain.v == res_taped.v);
  REQUIRE(res_plain.cost == res_taped.cost.value);
  REQUIRE(res_plain.cost == cost(res_taped, ref, {1.0, 0.0}));
}

TEST_CASE("dynamic controller with zero weights walks the static trajectory, bitwise") {
  const auto plant = system1();
  const auto ref = constant_reference(4.0, 500);
  const SaturationLimits lim{-3.3, 3.3};
  const PidGains<double> base{4.0, 10.0, 0.0, 0.5, 0.0};

  StaticPid<double> st{base};
  DynamicPid<double> dyn{zero_gain_network<double>(base)};

  const auto res_static = rollout<double>(plant, st, ref, {500, 0.02, false}, lim);
  const auto res_dynamic = rollout<double>(plant, dyn, ref, {500, 0.02, false}, lim);
  REQUIRE(res_static.y == res_dynamic.y);
  REQUIRE(res_static.u_sat == res_dynamic.u_sat);
  REQUIRE(res_static.cost == res_dynamic.cost);
}

TEST_CASE("rollout: runaway loops raise DivergedError with the step index") {
  const auto plant = system1();
  StaticPid<double> ctrl{{-1.0, 0.0, 0.0, 0.0, 0.0}};  // positive feedback
  try {
    rollout<double>(plant, ctrl, constant_reference(1.0, 2000), {2000, 0.02, false},
                    {-1e15, 1e15});
    FAIL("expected DivergedError");
  } catch (const DivergedError& e) {
    REQUIRE(e.step > 0);
    REQUIRE(e.step < 2000);
  }
}

TEST_CASE("rollout rejects a reference shorter than the horizon") {
  const auto plant = system1();
  StaticPid<double> ctrl{{4.0, 10.0, 0.0, 0.5, 0.0}};
  REQUIRE_THROWS_AS(rollout<double>(plant, ctrl, constant_reference(1.0, 10),
                                    {11, 0.02, false}, {-3.3, 3.3}),
                    UsageError);
}

TEST_CASE("gradient of the rollout cost matches central finite differences") {
  struct Scenario {
    DiscreteModel plant;
    SaturationLimits lim;
    PidGains<double> gains;
    double amp;
  };
  const std::vector<Scenario> scenarios{
      {system1(), {-3.3, 3.3}, {4.0, 10.0, 0.0, 0.5, 0.0}, 3.2},
      {system2(), {-7.0, 7.0}, {10.0, 1.5, 8.0, 0.4, 0.0}, 3.2},
      {system3(), {-3.0, 3.0}, {20.0, 2.0, 5.0, 1.0, 0.0}, 2.3},
      {system4(), {-4.0, 4.0}, {20.0, 8.0, 10.0, 0.2, 0.0}, 2.4},
  };

  for (std::size_t i = 0; i < scenarios.size(); ++i) {
    const auto& sc = scenarios[i];
    const auto spec = StaticGainSpec::from(sc.gains);
    const auto ref = constant_reference(sc.amp, 100);
    const auto f = [&](Tape&, std::span<const DiffScalar> p) {
      const auto ctrl = spec.instantiate<DiffScalar>(p);
      return rollout<DiffScalar>(sc.plant, ctrl, ref, {100, sc.plant.dt, true}, sc.lim)
          .cost;
    };
    const auto p = spec.initial_params();
    INFO("system " << i + 1);
    REQUIRE(check_gradient(f, p, 1e-6) < 1e-5);
  }
}
