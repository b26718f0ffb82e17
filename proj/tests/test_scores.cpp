#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <numeric>

#include "critic/errors.hpp"
#include "critic/rng.hpp"
#include "critic/scores.hpp"
#include "doctest.h"

using namespace critic;

namespace {

LatentProjection uniform_projection(int num_symbols, int positions) {
  LatentProjection p;
  p.per_position_nll.assign(static_cast<std::size_t>(positions),
                            std::log(static_cast<double>(num_symbols)));
  p.num_positions = positions;
  return p;
}

}  // namespace

TEST_CASE("latent_nll sums per-position values") {
  // Delta posterior, uniform prior over K=4 at M=3 positions.
  const auto p = uniform_projection(4, 3);
  CHECK(latent_nll(p) == doctest::Approx(3.0 * std::log(4.0)).epsilon(1e-12));

  // Delta posterior at a mode carrying full prior mass.
  LatentProjection certain;
  certain.per_position_nll = {0.0, 0.0};
  certain.num_positions = 2;
  CHECK(latent_nll(certain) == 0.0);

  // Two-state prior (0.9, 0.1), delta at the rare state for 2 positions.
  LatentProjection rare;
  rare.per_position_nll = {-std::log(0.1), -std::log(0.1)};
  rare.num_positions = 2;
  CHECK(latent_nll(rare) == doctest::Approx(4.605170185988091).epsilon(1e-12));
}

TEST_CASE("corpus_score pools positions across documents") {
  const auto single = corpus_score({uniform_projection(4, 3)});
  REQUIRE(single.latent_ppl.has_value());
  CHECK(*single.latent_ppl == doctest::Approx(4.0).epsilon(1e-12));
  CHECK(single.num_docs == 1);
  CHECK(single.total_positions == 3);

  // Duplicating a document leaves the pooled PPL unchanged.
  const auto doubled = corpus_score({uniform_projection(4, 3), uniform_projection(4, 3)});
  CHECK(*doubled.latent_ppl == doctest::Approx(*single.latent_ppl).epsilon(1e-12));
  CHECK(doubled.latent_nll == doctest::Approx(single.latent_nll).epsilon(1e-12));

  CHECK_THROWS_AS(corpus_score({}), Error);
}

TEST_CASE("corpus_score is permutation invariant") {
  Rng rng(5);
  std::vector<LatentProjection> projections;
  for (int d = 0; d < 20; ++d) {
    LatentProjection p;
    const int m = 1 + static_cast<int>(rng.uniform_int(6));
    for (int i = 0; i < m; ++i) p.per_position_nll.push_back(3.0 * rng.uniform());
    p.num_positions = m;
    projections.push_back(std::move(p));
  }
  const auto a = corpus_score(projections);
  std::reverse(projections.begin(), projections.end());
  const auto b = corpus_score(projections);
  CHECK(a.latent_nll == doctest::Approx(b.latent_nll).epsilon(1e-12));
  CHECK(*a.latent_ppl == doctest::Approx(*b.latent_ppl).epsilon(1e-12));
}

TEST_CASE("continuous projections carry no PPL") {
  LatentProjection p;
  p.per_position_nll = {-2.5};
  p.num_positions = 1;
  p.kind = LatentKind::Continuous;
  const auto score = corpus_score({p});
  CHECK_FALSE(score.latent_ppl.has_value());
  CHECK(score.latent_nll == doctest::Approx(-2.5));
}

TEST_CASE("decompose_enumerated satisfies the identity") {
  // Deterministic posterior: one assignment dominates completely.
  const std::vector<double> log_prior = {std::log(0.25)};
  const std::vector<double> log_lik = {std::log(0.5)};
  const auto d = decompose_enumerated(log_prior, log_lik);
  CHECK(d.posterior_entropy == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(d.log_marginal ==
        doctest::Approx(d.prior_term + d.reconstruction_term + d.posterior_entropy).epsilon(1e-12));
  CHECK(d.prior_term == doctest::Approx(std::log(0.25)).epsilon(1e-12));

  // Random instance: identity holds.
  Rng rng(17);
  std::vector<double> lp;
  std::vector<double> ll;
  for (int i = 0; i < 16; ++i) {
    lp.push_back(std::log(rng.uniform() + 1e-3));
    ll.push_back(std::log(rng.uniform() + 1e-3));
  }
  const auto r = decompose_enumerated(lp, ll);
  CHECK(r.log_marginal ==
        doctest::Approx(r.prior_term + r.reconstruction_term + r.posterior_entropy).epsilon(1e-12));
}

TEST_CASE("rank_outliers sorts by T(x) with id tie-break") {
  std::vector<std::pair<std::string, LatentProjection>> items;
  for (const char* id : {"c", "a", "b"}) items.emplace_back(id, uniform_projection(4, 2));
  const auto equal = rank_outliers(items, 2);
  REQUIRE(equal.size() == 2);
  CHECK(equal[0].first == "a");
  CHECK(equal[1].first == "b");

  // A document scored under mass 0.01 dominates documents at 0.5.
  std::vector<std::pair<std::string, LatentProjection>> mixed;
  LatentProjection rare;
  rare.per_position_nll = {-std::log(0.01)};
  rare.num_positions = 1;
  LatentProjection common;
  common.per_position_nll = {-std::log(0.5)};
  common.num_positions = 1;
  mixed.emplace_back("common1", common);
  mixed.emplace_back("rare", rare);
  mixed.emplace_back("common2", common);
  const auto ranked = rank_outliers(mixed, 3);
  CHECK(ranked[0].first == "rare");

  CHECK_THROWS_AS(rank_outliers(items, 0), Error);
}

TEST_CASE("rank_outliers equals a full re-sort on 100 documents") {
  Rng rng(23);
  std::vector<std::pair<std::string, LatentProjection>> items;
  for (int d = 0; d < 100; ++d) {
    LatentProjection p;
    const int m = 1 + static_cast<int>(rng.uniform_int(5));
    for (int i = 0; i < m; ++i) p.per_position_nll.push_back(4.0 * rng.uniform());
    p.num_positions = m;
    items.emplace_back("doc" + std::to_string(d), std::move(p));
  }
  const auto ranked = rank_outliers(items, 100);

  std::vector<std::pair<std::string, double>> oracle;
  for (const auto& [id, p] : items) {
    double t = 0.0;
    for (double v : p.per_position_nll) t += v;
    oracle.emplace_back(id, t);
  }
  std::sort(oracle.begin(), oracle.end(), [](const auto& x, const auto& y) {
    if (x.second != y.second) return x.second > y.second;
    return x.first < y.first;
  });
  REQUIRE(ranked.size() == oracle.size());
  for (std::size_t i = 0; i < ranked.size(); ++i) {
    CHECK(ranked[i].first == oracle[i].first);
    CHECK(ranked[i].second == doctest::Approx(oracle[i].second).epsilon(1e-12));
  }
}

TEST_CASE("compare requires matching critics and reports difference and ratio") {
  auto score = corpus_score({uniform_projection(4, 3)}, "hsmm", "fp1");
  const auto self = compare(score, score);
  CHECK(self.delta_nll == doctest::Approx(0.0));
  REQUIRE(self.ppl_ratio.has_value());
  CHECK(*self.ppl_ratio == doctest::Approx(1.0));

  auto other = corpus_score({uniform_projection(8, 3)}, "hsmm", "fp1");
  const auto cmp = compare(score, other);
  CHECK(*cmp.ppl_ratio == doctest::Approx(*other.latent_ppl / *score.latent_ppl).epsilon(1e-12));
  CHECK(cmp.delta_nll == doctest::Approx(other.latent_nll - score.latent_nll).epsilon(1e-12));

  auto mismatched = corpus_score({uniform_projection(4, 3)}, "hsmm", "fp2");
  CHECK_THROWS_AS(compare(score, mismatched), Error);

  const auto j = comparison_to_json(cmp);
  CHECK(j.at("critic") == "hsmm");
  CHECK(j.at("reference").at("latent_ppl").get<double>() == doctest::Approx(4.0));
  CHECK(j.at("delta_nll").get<double>() == doctest::Approx(cmp.delta_nll));
}

TEST_CASE("aggregated posterior minimizes the cross-entropy objective") {
  // F(q) = sum_i H(p_i, q) is minimized at the aggregated posterior; random
  // perturbations projected back to the simplex never do better.
  Rng rng(31);
  for (int trial = 0; trial < 20; ++trial) {
    const int K = 2 + static_cast<int>(rng.uniform_int(6));
    const int n = 3 + static_cast<int>(rng.uniform_int(20));
    std::vector<std::vector<double>> posteriors;
    for (int i = 0; i < n; ++i) {
      std::vector<double> p(static_cast<std::size_t>(K));
      double sum = 0.0;
      for (auto& v : p) {
        v = rng.uniform() + 1e-6;
        sum += v;
      }
      for (auto& v : p) v /= sum;
      posteriors.push_back(std::move(p));
    }
    std::vector<double> agg(static_cast<std::size_t>(K), 0.0);
    for (const auto& p : posteriors)
      for (int k = 0; k < K; ++k)
        agg[static_cast<std::size_t>(k)] += p[static_cast<std::size_t>(k)] / n;

    auto objective = [&](const std::vector<double>& q) {
      double f = 0.0;
      for (const auto& p : posteriors)
        for (int k = 0; k < K; ++k)
          f -= p[static_cast<std::size_t>(k)] * std::log(q[static_cast<std::size_t>(k)]);
      return f;
    };
    const double best = objective(agg);
    for (int perturb = 0; perturb < 100; ++perturb) {
      std::vector<double> q = agg;
      double sum = 0.0;
      for (auto& v : q) {
        v = std::max(1e-9, v + 0.3 * (rng.uniform() - 0.5));
        sum += v;
      }
      for (auto& v : q) v /= sum;
      CHECK(objective(q) >= best - 1e-12);
    }
  }
}
