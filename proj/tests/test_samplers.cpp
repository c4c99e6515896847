#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "calib/samplers.hpp"

using namespace calib;

namespace {

double bowl(const ParamVector& p) {
  double s = 0.0;
  for (double v : p.coords) s += (v - 0.3) * (v - 0.3);
  return s;
}

void record(CalibrationState& state, const ParamVector& p, double loss, SamplerId id = SamplerId::Halton) {
  EvaluationRecord r;
  r.params = p;
  r.ensemble_losses = {loss};
  r.loss = loss;
  r.batch_index = state.batch_count();
  r.sampler = id;
  state.append(std::move(r));
}

CalibrationState bowl_history(const ParameterSpace& space, std::size_t n, std::uint64_t seed) {
  CalibrationState state(space, seed);
  Rng rng(seed);
  for (const auto& p : uniform_novel_points(state, n, rng)) record(state, p, bowl(p));
  state.close_batch();
  return state;
}

}  // namespace

TEST_CASE("radical inverse and Halton points") {
  const double expect[] = {0.5, 0.25, 0.75, 0.125};
  for (std::uint64_t i = 1; i <= 4; ++i) CHECK(radical_inverse(i, 2) == expect[i - 1]);
  CHECK(halton_point(1, 2) == std::vector<double>{0.5, 1.0 / 3.0});
  CHECK(halton_point(2, 2) == std::vector<double>{0.25, 2.0 / 3.0});
  CHECK(first_primes(6) == std::vector<std::uint32_t>{2, 3, 5, 7, 11, 13});
}

TEST_CASE("aligned blocks of 2^k base-2 values hit every dyadic interval once") {
  for (int k = 0; k <= 6; ++k) {
    const std::uint64_t n = std::uint64_t{1} << k;
    for (std::uint64_t block = 0; block < 3; ++block) {
      std::vector<int> hits(n, 0);
      for (std::uint64_t i = block * n; i < (block + 1) * n; ++i)
        ++hits[static_cast<std::size_t>(radical_inverse(i, 2) * static_cast<double>(n))];
      CHECK(std::all_of(hits.begin(), hits.end(), [](int h) { return h == 1; }));
    }
  }
}

TEST_CASE("Halton sampler maps the sequence onto the grid and keeps its cursor") {
  const ParameterSpace space({make_dim("x", 0.0, 1.0, 0.001)});
  CalibrationState state(space, 0);
  Rng rng(1);
  HaltonSampler h;
  const SamplerContext ctx{state, 4, rng};
  const auto first = h.propose(ctx);
  REQUIRE(first.size() == 4);
  CHECK(first[0].coords[0] == 0.5);
  CHECK(first[1].coords[0] == 0.25);
  CHECK(first[2].coords[0] == 0.75);
  CHECK(first[3].coords[0] == 0.125);
  CHECK(h.cursor() == 5);
  const auto second = h.propose(ctx);
  CHECK(second[0].coords[0] == 0.625);
  CHECK(h.cursor() == 9);
}

TEST_CASE("Halton sampler skips points already evaluated") {
  const ParameterSpace space({make_dim("x", 0.0, 1.0, 0.25)});
  CalibrationState state(space, 0);
  record(state, ParamVector{{0.5}}, 1.0);
  Rng rng(1);
  HaltonSampler h;
  const auto out = h.propose({state, 2, rng});
  CHECK(out == std::vector<ParamVector>{{{0.25}}, {{0.75}}});
}

TEST_CASE("surrogate samplers fall back to Halton on a short history") {
  const ParameterSpace space({make_dim("a", 0.0, 1.0), make_dim("b", -1.0, 1.0)});
  CalibrationState state(space, 0);
  record(state, ParamVector{{0.5, 0.0}}, 1.0);
  for (auto kind : {SurrogateKind::Forest, SurrogateKind::Boosted, SurrogateKind::Gp}) {
    HaltonSampler shared, reference;
    SurrogateSampler s(kind, {}, shared);
    Rng r1(4), r2(4);
    CHECK(s.propose({state, 4, r1}) == reference.propose({state, 4, r2}));
    CHECK(shared.cursor() == reference.cursor());
  }
}

TEST_CASE("forest and boosted proposals fall in the best decile of the pool") {
  const ParameterSpace space({make_dim("x", 0.0, 1.0, 0.001)});
  for (auto kind : {SurrogateKind::Forest, SurrogateKind::Boosted}) {
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
      auto state = bowl_history(space, 50, seed);
      HaltonSampler fallback;
      SurrogateSampler s(kind, {}, fallback);
      Rng rng(seed * 101), probe(seed * 101);
      const auto out = s.propose({state, 4, rng});
      auto pool = s.candidate_pool(state, probe);
      std::vector<double> losses;
      for (const auto& p : pool) losses.push_back(bowl(p));
      std::sort(losses.begin(), losses.end());
      const double decile = losses[losses.size() / 10];
      for (const auto& p : out) CHECK(bowl(p) <= decile);
    }
  }
}

TEST_CASE("gp proposals carry the highest expected improvement in the pool") {
  const ParameterSpace space({make_dim("x", 0.0, 1.0), make_dim("y", 0.0, 1.0)});
  auto state = bowl_history(space, 30, 8);
  HaltonSampler fallback;
  SurrogateSampler s(SurrogateKind::Gp, {}, fallback);
  Rng rng(55), probe(55);
  const auto out = s.propose({state, 4, rng});
  const auto pool = s.candidate_pool(state, probe);
  const auto scored = s.score(state, pool, probe);
  double worst_chosen = -1e300, best_rejected = 1e300;
  for (const auto& c : scored) {
    const bool chosen = std::find(out.begin(), out.end(), c.params) != out.end();
    if (chosen)
      worst_chosen = std::max(worst_chosen, c.key);
    else
      best_rejected = std::min(best_rejected, c.key);
  }
  // keys are -EI, so every accepted EI is at least every rejected one
  CHECK(worst_chosen <= best_rejected);
  CHECK(worst_chosen < 0.0);
}

TEST_CASE("best-batch with zero radius reproduces elites") {
  const ParameterSpace space({make_dim("x", 0.0, 1.0), make_dim("y", 0.0, 1.0)});
  auto state = bowl_history(space, 40, 3);
  BestBatchOptions opt;
  opt.delta = 0.0;
  opt.require_distinct = false;
  BestBatchSampler bb(opt);
  Rng rng(2);
  auto finite = state.finite_records();
  std::stable_sort(finite.begin(), finite.end(), [](auto* a, auto* b) { return a->loss < b->loss; });
  std::vector<ParamVector> elites;
  for (std::size_t i = 0; i < 10; ++i) elites.push_back(finite[i]->params);
  for (const auto& p : bb.propose({state, 2, rng}))
    CHECK(std::find(elites.begin(), elites.end(), p) != elites.end());
}

TEST_CASE("best-batch clips at the bounds") {
  const ParameterSpace space({make_dim("x", 0.0, 1.0)});
  CalibrationState state(space, 0);
  record(state, ParamVector{{1.0}}, 0.0);
  BestBatchOptions opt;
  opt.delta = 0.5;
  BestBatchSampler bb(opt);
  Rng rng(9);
  for (int i = 0; i < 50; ++i) {
    const auto out = bb.propose({state, 3, rng});
    for (const auto& p : out) {
      CHECK(p.coords[0] <= 1.0);
      CHECK(p.coords[0] >= 0.5 - 1e-12);
      CHECK(p.coords[0] != 1.0);
    }
  }
}

TEST_CASE("best-batch needs history") {
  const ParameterSpace space({make_dim("x", 0.0, 1.0)});
  CalibrationState state(space, 0);
  BestBatchSampler bb;
  Rng rng(1);
  CHECK_THROWS_AS(bb.propose({state, 1, rng}), InsufficientDataError);
}

TEST_CASE("random sampler exhausts a tiny grid") {
  const ParameterSpace space({make_dim("x", 0.0, 1.0, 0.25)});
  CalibrationState state(space, 0);
  RandomSampler rs;
  Rng rng(7);
  auto out = rs.propose({state, 5, rng});
  std::set<double> xs;
  for (const auto& p : out) xs.insert(p.coords[0]);
  CHECK(xs == std::set<double>{0.0, 0.25, 0.5, 0.75, 1.0});
  CHECK_THROWS_AS(rs.propose({state, 6, rng}), DomainError);
}

TEST_CASE("random sampler is uniform over the grid (chi-square, 1%)") {
  const ParameterSpace space({make_dim("x", 0.0, 1.0, 0.1)});
  CalibrationState state(space, 0);
  RandomSampler rs;
  Rng rng(2024);
  std::vector<int> counts(11, 0);
  const int draws = 10000;
  for (int i = 0; i < draws; ++i) ++counts[static_cast<std::size_t>(space.key_of(rs.propose({state, 1, rng})[0])[0])];
  const double expected = draws / 11.0;
  double chi2 = 0.0;
  for (int c : counts) chi2 += (c - expected) * (c - expected) / expected;
  CHECK(chi2 < 23.209);  // 10 degrees of freedom
}

TEST_CASE("sampler set state carries the Halton cursor") {
  SamplerSet a, b;
  a.halton().set_cursor(42);
  b.load_state(a.save_state());
  CHECK(b.halton().cursor() == 42);
  CHECK_THROWS_AS(b.load_state("halton x"), FormatError);
  CHECK(a.get(SamplerId::GaussianProcess).id() == SamplerId::GaussianProcess);
}
