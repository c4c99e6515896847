#include <doctest.h>

#include <cmath>

#include "calib/scheduler.hpp"
#include "oracles.hpp"

using namespace calib;

TEST_CASE("reward examples") {
  CHECK(compute_reward(10, 9) == 0.1);
  CHECK(compute_reward(10, 12) == 0.0);
  CHECK(compute_reward(10, 0) == 1.0);
  bool degenerate = false;
  CHECK(compute_reward(0.0, 0.0, &degenerate) == 0.0);
  CHECK(degenerate);
}

TEST_CASE("greedy selection and tie-breaking") {
  BanditState s({SamplerId::Halton, SamplerId::RandomForest, SamplerId::BestBatch}, 0.0, 0.1);
  s.q = {0.1, 0.5, 0.2};
  Rng rng(1);
  for (int i = 0; i < 100; ++i) CHECK(select_arm(s, rng) == 1);

  BanditState tie({SamplerId::Halton, SamplerId::RandomForest}, 0.0, 0.1);
  tie.q = {0.3, 0.3};
  int first = 0;
  const int n = 10000;
  for (int i = 0; i < n; ++i) first += select_arm(tie, rng) == 0;
  CHECK(std::abs(first / double(n) - 0.5) < 4 * std::sqrt(0.25 / n));
}

TEST_CASE("epsilon one is uniform (chi-square, 1%)") {
  BanditState s({SamplerId::Halton, SamplerId::RandomForest, SamplerId::Boosted, SamplerId::BestBatch}, 1.0, 0.1);
  s.q = {0.9, 0.0, 0.0, 0.0};
  Rng rng(99);
  std::vector<int> counts(4, 0);
  for (int i = 0; i < 10000; ++i) ++counts[select_arm(s, rng)];
  double chi2 = 0.0;
  for (int c : counts) chi2 += (c - 2500.0) * (c - 2500.0) / 2500.0;
  CHECK(chi2 < 11.345);  // 3 degrees of freedom
}

TEST_CASE("update rule") {
  BanditState s({SamplerId::Halton, SamplerId::RandomForest}, 0.1, 0.1);
  update_q(s, 0, 1.0);
  CHECK(s.q[0] == doctest::Approx(0.1).epsilon(1e-15));
  CHECK(s.q[1] == 0.0);
  CHECK(s.t == 1);
  CHECK(s.trace.size() == 1);

  BanditState fixed({SamplerId::Halton}, 0.1, 0.37);
  fixed.q = {0.5};
  update_q(fixed, 0, 0.5);
  CHECK(fixed.q[0] == 0.5);

  BanditState geo({SamplerId::Halton}, 0.1, 0.1);
  for (int i = 0; i < 10; ++i) update_q(geo, 0, 0.3);
  CHECK(geo.q[0] == doctest::Approx(0.3 * (1 - std::pow(0.9, 10))).epsilon(1e-12));
  CHECK_THROWS_AS(update_q(geo, 3, 0.1), DomainError);
}

TEST_CASE("round robin") {
  for (std::uint64_t t = 0; t < 4; ++t) CHECK(round_robin_select(t, 2) == t % 2);
  CHECK(round_robin_select(7, 3) == 1);
  CHECK(round_robin_select(5, 1) == 0);
}

TEST_CASE("offline sample averages") {
  const std::vector<std::pair<std::size_t, double>> h{{0, 1.0}, {0, 0.0}};
  CHECK(offline_q(h, 2)[0] == 0.5);
  CHECK(!offline_q(h, 2)[1]);
  const auto empty = offline_q({}, 3);
  for (const auto& q : empty) CHECK(!q);

  Rng rng(5);
  std::vector<std::pair<std::size_t, double>> big;
  for (int i = 0; i < 1000; ++i) big.emplace_back(uniform_index(rng, 4), uniform01(rng));
  const auto q = offline_q(big, 5);
  const auto ref = oracle::brute_offline_q(big, 5);
  for (std::size_t a = 0; a < 5; ++a) {
    REQUIRE(q[a].has_value() == ref[a].has_value());
    if (q[a]) CHECK(std::abs(*q[a] - *ref[a]) <= 1e-12);
  }
}

namespace {

TraceStep step(std::int64_t t, SamplerId arm, double prev_best, double reward) {
  TraceStep s;
  s.step = t;
  s.arm = arm;
  s.prev_best = prev_best;
  s.reward = reward;
  return s;
}

}  // namespace

TEST_CASE("contextual split") {
  const std::vector<SamplerId> arms{SamplerId::RandomForest, SamplerId::BestBatch};
  SUBCASE("flat loss puts every step in the low context") {
    const std::vector<Trace> tr{{step(1, arms[0], 2.0, 0.1), step(2, arms[1], 2.0, 0.3)}};
    const auto c = offline_q_contextual(tr, arms);
    CHECK(!c.high[0]);
    CHECK(!c.high[1]);
    CHECK(c.low[0] == 0.1);
    CHECK(c.low[1] == 0.3);
  }
  SUBCASE("single step lands low") {
    const std::vector<Trace> tr{{step(1, arms[0], 5.0, 0.2)}};
    const auto c = offline_q_contextual(tr, arms);
    CHECK(c.low[0] == 0.2);
    CHECK(!c.high[0]);
  }
  SUBCASE("constructed two-context fixture") {
    // arm 0 pays only while the loss is high, arm 1 only once it is low
    const std::vector<Trace> tr{
        {step(1, arms[0], 10, 0.4), step(2, arms[1], 9, 0.0), step(3, arms[0], 8, 0.2), step(4, arms[1], 1, 0.3),
         step(5, arms[0], 1, 0.0), step(6, arms[1], 0.5, 0.1)},
        {step(1, arms[0], 12, 0.6), step(2, arms[1], 2, 0.5)}};
    const auto c = offline_q_contextual(tr, arms);
    CHECK(c.medians == std::vector<double>{5.0});
    CHECK(*c.high[0] == doctest::Approx(0.4));  // (0.4 + 0.2 + 0.6) / 3
    CHECK(*c.high[1] == 0.0);
    CHECK(*c.low[0] == 0.0);
    CHECK(*c.low[1] == doctest::Approx(0.3));  // (0.3 + 0.1 + 0.5) / 3
    const auto per = offline_q_contextual(tr, arms, MedianMode::PerTrace);
    CHECK(per.medians.size() == 2);
  }
}

TEST_CASE("bandit tracks a switching environment") {
  int late_b = 0, late_total = 0;
  for (std::uint64_t run = 0; run < 100; ++run) {
    BanditState s({SamplerId::RandomForest, SamplerId::BestBatch}, 0.1, 0.1);
    Rng rng(1000 + run);
    for (int t = 1; t <= 200; ++t) {
      const auto arm = select_arm(s, rng);
      const double reward = (t <= 100) == (arm == 0) ? 0.1 : 0.0;
      update_q(s, arm, reward);
      if (t >= 150) {
        late_b += arm == 1;
        ++late_total;
      }
    }
  }
  CHECK(late_b > 0.6 * late_total);
}

TEST_CASE("scheduler strategies and state round trip") {
  Rng rng(3);
  Scheduler rr({StrategyKind::RoundRobin, {SamplerId::RandomForest, SamplerId::BestBatch}});
  CHECK(rr.choose(1, rng) == SamplerId::RandomForest);
  CHECK(rr.choose(2, rng) == SamplerId::BestBatch);
  CHECK(rr.choose(3, rng) == SamplerId::RandomForest);
  CHECK(rr.config().label() == "RF+BB");

  StrategyConfig cfg{StrategyKind::Bandit, {SamplerId::RandomForest, SamplerId::Boosted, SamplerId::BestBatch}};
  Scheduler a(cfg);
  double best = 10.0;
  for (std::int64_t b = 1; b < 20; ++b) {
    const auto arm = a.choose(b, rng);
    const double batch_min = best * (0.8 + 0.4 * uniform01(rng));
    const double prev = best;
    best = std::min(best, batch_min);
    a.observe(b, arm, batch_min, prev, best);
  }
  Scheduler b(cfg);
  b.load_state(a.save_state());
  CHECK(b.bandit() == a.bandit());
  CHECK(b.trace() == a.trace());
  CHECK(b.save_state() == a.save_state());
  CHECK(a.config().label() == "RL(RF,XB,BB)");

  CHECK_THROWS_AS(Scheduler({StrategyKind::Single, {}}), ConfigError);
}

TEST_CASE("trace csv round trip and errors") {
  Trace t{step(1, SamplerId::RandomForest, 3.0, 0.25), step(2, SamplerId::Halton, 2.25, 0.0)};
  t[0].q = {0.025, 0.0};
  t[1].q = {0.025, 0.0};
  const auto text = format_trace_csv(t, {SamplerId::RandomForest, SamplerId::Halton});
  CHECK(parse_trace_csv(text) == t);
  try {
    parse_trace_csv("step,arm,batch_min_loss,prev_best,best_loss,reward\n1,RF,1,2,1,0.5\n2,ZZ,1,1,1,0\n");
    FAIL("expected a format error");
  } catch (const FormatError& e) {
    CHECK(e.line() == 3);
  }
}
