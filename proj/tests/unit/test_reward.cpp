#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "feudalgain/belief.hpp"
#include "feudalgain/reward.hpp"
#include "feudalgain/rng.hpp"
#include "support.hpp"

using namespace feudalgain;

namespace {

// Definition-level oracle: JS = 0.5 KL(p||m) + 0.5 KL(q||m), natural logs
// converted to bits, written independently of the library code.
double js_oracle(const std::vector<double>& p, const std::vector<double>& q) {
  double a = 0.0, b = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double m = (p[i] + q[i]) / 2.0;
    if (p[i] > 0) a += p[i] * (std::log(p[i]) - std::log(m));
    if (q[i] > 0) b += q[i] * (std::log(q[i]) - std::log(m));
  }
  return (a + b) / (2.0 * std::log(2.0));
}

std::vector<double> random_simplex(Rng& rng, std::size_t n) {
  std::vector<double> p(n);
  double s = 0.0;
  for (auto& x : p) {
    // Exponential draws give a uniform point on the simplex; zero some entries.
    x = rng.bernoulli(0.2) ? 0.0 : -std::log(1.0 - rng.uniform());
    s += x;
  }
  if (s == 0.0) {
    p[rng.index(n)] = 1.0;
    return p;
  }
  for (auto& x : p) x /= s;
  return p;
}

}  // namespace

TEST_CASE("JS divergence on the worked price-range beliefs") {
  const std::vector<double> none{0, 0, 0, 0, 1};
  const std::vector<double> after_inform{0.5, 0.3, 0.2, 0, 0};
  const std::vector<double> after_affirm{0.95, 0.05, 0, 0, 0};
  CHECK(std::abs(js_divergence(none, after_inform) - 1.0) < 1e-9);
  CHECK(std::abs(js_divergence(after_inform, after_affirm) - 0.22) < 0.005);
  // Frozen oracle values.
  CHECK(js_divergence(after_inform, after_affirm) == doctest::Approx(0.222669).epsilon(1e-6));
  CHECK(js_divergence(after_inform, std::vector<double>{0.95, 0.03, 0.02, 0, 0}) ==
        doctest::Approx(0.205350).epsilon(1e-6));
}

TEST_CASE("thresholded gain") {
  CHECK(thresholded_gain(0.22, 0.2) == 1.0);
  CHECK(thresholded_gain(0.2, 0.2) == 1.0);
  CHECK(thresholded_gain(0.19, 0.2) == -1.0);
  CHECK(thresholded_gain(1.0, 0.2) == 1.0);
  CHECK(thresholded_gain(0.0, 0.0) == 1.0);
  RewardConfig bad;
  bad.delta = 1.5;
  CHECK_THROWS(bad.validate());
}

TEST_CASE("extrinsic reward") {
  CHECK(extrinsic_reward(false, false) == -1.0);
  CHECK(extrinsic_reward(false, true) == -1.0);
  CHECK(extrinsic_reward(true, false) == 0.0);
  CHECK(extrinsic_reward(true, true) == 19.0);

  SUBCASE("failed three-turn dialogue") {
    const std::vector<double> trace{extrinsic_reward(false, false), extrinsic_reward(false, false),
                                    extrinsic_reward(true, false)};
    CHECK(trace == std::vector<double>{-1.0, -1.0, 0.0});
  }
  SUBCASE("successful dialogue of n turns totals 20 - n") {
    for (int n = 1; n <= 25; ++n) {
      double total = 0.0;
      for (int t = 1; t <= n; ++t) total += extrinsic_reward(t == n, true);
      CHECK(total == doctest::Approx(20.0 - n));
    }
  }
}

TEST_CASE("JS divergence properties over random simplex pairs") {
  Rng rng(99);
  for (int i = 0; i < 1000; ++i) {
    const std::size_t n = 2 + rng.index(9);
    const auto p = random_simplex(rng, n);
    const auto q = random_simplex(rng, n);
    const double pq = js_divergence(p, q);
    CHECK(std::abs(pq - js_divergence(q, p)) < 1e-12);
    CHECK(pq >= 0.0);
    CHECK(pq <= 1.0);
    CHECK(std::abs(pq - std::clamp(js_oracle(p, q), 0.0, 1.0)) < 1e-12);
    CHECK(js_divergence(p, p) < 1e-12);
  }
}

TEST_CASE("JS divergence input validation") {
  CHECK_THROWS(js_divergence(std::vector<double>{1, 0}, std::vector<double>{1, 0, 0}));
  CHECK_THROWS(js_divergence(std::vector<double>{0.5, 0.4}, std::vector<double>{1, 0}));
  CHECK_THROWS(js_divergence(std::vector<double>{1.2, -0.2}, std::vector<double>{1, 0}));
}

TEST_CASE("KL divergence") {
  CHECK(kl_divergence(std::vector<double>{0.5, 0.5}, std::vector<double>{0.5, 0.5}) == 0.0);
  CHECK(kl_divergence(std::vector<double>{1, 0}, std::vector<double>{0.5, 0.5}) == doctest::Approx(1.0));
  CHECK(std::isinf(kl_divergence(std::vector<double>{0.5, 0.5}, std::vector<double>{1, 0})));
}

TEST_CASE("information gain is defined for information actions only") {
  const auto& o = fgtest::cr().ontology;
  auto b0 = initial_belief(o);
  auto ev = TurnEvidence::empty(o);
  ev.slot_mass[0] = {0.5, 0.3, 0.2, 0.0};
  const auto b1 = focus_update(b0, ev);
  CHECK(information_gain(b0, {ActionKind::request, 0}, b1) == doctest::Approx(1.0));
  // Another slot did not move.
  CHECK(information_gain(b0, {ActionKind::request, 1}, b1) == doctest::Approx(0.0));
  CHECK_THROWS(information_gain(b0, {ActionKind::inform, -1}, b1));
  CHECK_THROWS(information_gain(b0, {ActionKind::bye, -1}, b1));

  RewardConfig kl;
  kl.divergence = Divergence::kullback_leibler;
  CHECK(std::isinf(information_gain(b0, {ActionKind::request, 0}, b1, kl)));
}
