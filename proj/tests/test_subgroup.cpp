#include <gtest/gtest.h>

#include <random>
#include <set>

#include "fgromov/subgroup.hpp"

using namespace fgromov;

namespace {

bool is_central_matrix(const Element& g) {
  // Unitriangular 3x3 with zero superdiagonal except the corner.
  return g[1] == 0 && g[5] == 0;
}

// Brute-force B_{S'}(L) by BFS from scratch, independent of expand_spheres.
std::set<Element> word_ball(const MarkedGroup& G, const std::vector<Element>& S, int L) {
  std::set<Element> seen{G.identity()};
  std::vector<Element> front{G.identity()};
  for (int l = 0; l < L; ++l) {
    std::vector<Element> next;
    for (const auto& x : front)
      for (const auto& s : S)
        for (const auto& t : {s, G.inverse(s)}) {
          Element y = G.multiply(x, t);
          if (seen.insert(y).second) next.push_back(y);
        }
    front = std::move(next);
  }
  return seen;
}

// Direct (K,R) check: every element of B_S(K+1) factors as x·h with
// ‖x‖ ≤ K and h ∈ B_{S'}(K), searched over all pairs.
bool brute_kr(const MarkedGroup& G, const std::vector<Element>& Sp, int K, int R) {
  Ball big = enumerate_ball(G, std::max(K + 1, R));
  for (const auto& s : Sp) {
    auto i = big.find(s);
    if (!i || big.norm(*i) > R) return false;
  }
  auto H = word_ball(G, Sp, K);
  std::set<Element> products;
  for (std::size_t i = 0; i < big.prefix(K); ++i)
    for (const auto& h : H) products.insert(G.multiply(big.element(i), h));
  for (std::size_t i = 0; i < big.prefix(K + 1); ++i)
    if (!products.count(big.element(i))) return false;
  return true;
}

int distance(const Ball& ball, const Element& a, const Element& b) {
  const auto& G = ball.group();
  auto i = ball.find(G.multiply(G.inverse(a), b));
  return i ? ball.norm(*i) : std::numeric_limits<int>::max();
}

}  // namespace

TEST(SeparatedNet, SingleCenter) {
  auto G = groups::free_abelian(2);
  Ball b = enumerate_ball(G, 3);
  const std::vector<Element> expected{{0, 0}};
  for (int r = 0; r <= 3; ++r) EXPECT_EQ(maximal_separated_net(b, {G.identity()}, r), expected);
}

TEST(SeparatedNet, IntegersRadiusOne) {
  auto G = groups::free_abelian(1);
  Ball b = enumerate_ball(G, 6);
  std::vector<Element> centers(b.elements().begin(), b.elements().begin() + b.prefix(4));
  auto X = maximal_separated_net(b, centers, 1);
  // Greedy in (norm, key) order keeps 0, then 3 and -3.
  EXPECT_EQ(X, (std::vector<Element>{{0}, {3}, {-3}}));
  for (std::size_t i = 0; i < X.size(); ++i)
    for (std::size_t j = i + 1; j < X.size(); ++j) EXPECT_GE(distance(b, X[i], X[j]), 3);
  for (const auto& c : centers) {
    bool blocked = std::find(X.begin(), X.end(), c) != X.end();
    for (const auto& x : X) blocked = blocked || distance(b, x, c) <= 2;
    EXPECT_TRUE(blocked) << format_element(c);
  }
}

TEST(SeparatedNet, CyclicSix) {
  auto G = groups::cyclic(6);
  Ball b = enumerate_ball(G, 3);
  ASSERT_TRUE(b.complete());
  EXPECT_EQ(maximal_separated_net(b, b.elements(), 1).size(), 2u);
}

TEST(SeparatedNet, DisjointAndMaximalOnHeisenberg) {
  auto G = groups::heisenberg();
  Ball b = enumerate_ball(G, 8);
  std::vector<Element> centers(b.elements().begin(), b.elements().begin() + b.prefix(4));
  auto X = maximal_separated_net(b, centers, 1);
  std::set<Element> used;
  for (const auto& x : X)
    for (std::size_t i = 0; i < b.prefix(1); ++i) EXPECT_TRUE(used.insert(G.multiply(x, b.element(i))).second);
  for (const auto& c : centers) {
    if (std::find(X.begin(), X.end(), c) != X.end()) continue;
    bool meets = false;
    for (std::size_t i = 0; i < b.prefix(1); ++i) meets = meets || used.count(G.multiply(c, b.element(i)));
    EXPECT_TRUE(meets);
  }
}

TEST(VerifyKR, AgreesWithBruteForce) {
  auto Z = groups::free_abelian(1);
  for (auto [Sp, K, R] : std::vector<std::tuple<std::vector<Element>, int, int>>{
           {{{2}, {-2}}, 2, 2}, {{{2}, {-2}}, 1, 2}, {{{3}, {-3}}, 2, 3}, {{{3}, {-3}}, 3, 3}, {{{5}, {-5}}, 3, 4}}) {
    auto cert = verify_kr_subgroup(Z, Sp, K, R);
    EXPECT_EQ(cert.checked_inclusion, brute_kr(Z, Sp, K, R)) << K << " " << R;
  }
  auto H = groups::heisenberg();
  std::vector<Element> center{{1, 0, 1, 0, 1, 0, 0, 0, 1}, {1, 0, -1, 0, 1, 0, 0, 0, 1}};
  EXPECT_EQ(verify_kr_subgroup(H, center, 3, 4).checked_inclusion, brute_kr(H, center, 3, 4));
  EXPECT_FALSE(verify_kr_subgroup(H, center, 3, 4).checked_inclusion);
}

TEST(GeneratorReduction, RedundantZ2) {
  std::vector<Element> S;
  for (Element v : std::vector<Element>{{1, 0}, {0, 1}, {1, 1}, {2, 1}, {1, 2}, {3, -1}})
    for (Int sgn : {1, -1}) S.push_back({sgn * v[0], sgn * v[1]});
  MarkedGroup G(FreeAbelianGroup{2}, S);
  ASSERT_EQ(G.num_generators(), 12u);
  auto red = generator_reduction(G, 64, 0.5);
  EXPECT_LE(red.S_prime.size(), 48u);
  EXPECT_TRUE(red.covering_verified);
  EXPECT_TRUE(red.cert.checked_inclusion);
  EXPECT_FALSE(red.scale_hypothesis);
  EXPECT_EQ(red.r, 1);
  EXPECT_EQ(red.K, 8);
  // Independent covering check with a fresh ball.
  Ball b = enumerate_ball(G, 4 * red.r);
  for (const auto& y : b.elements()) {
    bool hit = false;
    for (const auto& s : red.S_prime) {
      auto i = b.find(G.multiply(G.inverse(s), y));
      hit = hit || (i && b.norm(*i) <= 2 * red.r);
    }
    EXPECT_TRUE(hit);
  }
  EXPECT_TRUE(brute_kr(G, red.S_prime, red.K, red.K));
}

TEST(GeneratorReduction, CyclicAndMinimal) {
  auto C = groups::cyclic(101);
  auto red = generator_reduction(C, 100, 0.5);
  EXPECT_TRUE(red.covering_verified);
  EXPECT_TRUE(red.cert.checked_inclusion);
  EXPECT_EQ(red.r, 1);
  EXPECT_TRUE(brute_kr(C, red.S_prime, red.K, red.K));

  auto Z = groups::free_abelian(1);
  auto z = generator_reduction(Z, 100, 0.5);
  EXPECT_TRUE(z.cert.checked_inclusion);
  // Net of B(4) at separation 1 is {0, ±3}.
  EXPECT_EQ(z.S_prime.size(), 3u);
}

TEST(GeneratorReduction, ScaleHypothesisReportedAndFailureTyped) {
  auto Z = groups::free_abelian(1);
  EXPECT_TRUE(generator_reduction(Z, 10000, 0.5).scale_hypothesis);
  EXPECT_THROW(generator_reduction(Z, 5, 0.5), std::invalid_argument);
  EXPECT_THROW(generator_reduction(Z, 100, 1.5), std::invalid_argument);
  try {
    generator_reduction(groups::free_group(2), 100, 0.5, 2.0);
    FAIL();
  } catch (const BudgetExhausted& e) {
    ASSERT_GE(e.sizes().size(), 11u);
    EXPECT_EQ(e.sizes()[10], 2 * 59049u - 1);
  }
}

TEST(CommutatorGenerators, AbelianIsTrivial) {
  auto G = groups::free_abelian(2);
  auto res = commutator_generators(G, 5);
  EXPECT_EQ(res.S_prime, std::vector<Element>{G.identity()});
  EXPECT_EQ(res.r, 2);
  EXPECT_TRUE(res.inclusion_verified);
  for (auto s : res.cumulative_sizes) EXPECT_EQ(s, 1u);
}

TEST(CommutatorGenerators, HeisenbergCenter) {
  auto G = groups::heisenberg();
  auto res = commutator_generators(G, 6);
  EXPECT_EQ(res.r, 2);
  EXPECT_EQ(res.S_prime.size(), 3u);
  EXPECT_TRUE(res.inclusion_verified);
  for (std::size_t i = 0; i < res.S_prime.size(); ++i) {
    const auto& w = res.witnesses[i];
    EXPECT_EQ(G.multiply(G.multiply(w.g, G.commutator(w.e, w.e_prime)), G.inverse(w.g)), res.S_prime[i]);
  }
  auto words = word_ball(G, res.S_prime, 4);
  for (const auto& g : words) EXPECT_TRUE(is_central_matrix(g));
  Ball b = enumerate_ball(G, 8);
  std::size_t reached = 0, central = 0;
  for (const auto& g : b.elements())
    if (is_central_matrix(g)) {
      ++central;
      reached += words.count(g);
    }
  // Central elements of B_S(8) are z^k with |k| ≤ 4, all within four S'-steps.
  EXPECT_EQ(central, 9u);
  EXPECT_EQ(reached, central);
}

TEST(CommutatorGenerators, FreeGroupBudgetFailure) {
  EXPECT_THROW(commutator_generators(groups::free_group(2), 3, 20000), BudgetExhausted);
  EXPECT_THROW(commutator_generators(groups::free_group(2), 3), BudgetExhausted);
}

TEST(FiniteIndex, EvenIntegers) {
  auto Z = groups::free_abelian(1);
  auto res = finite_index_generators(Z, [](const Element& g) { return g[0] % 2 == 0; }, 2);
  EXPECT_EQ(res.r0, 1);
  EXPECT_EQ(res.cosets, 2u);
  std::set<Element> Sp(res.S_prime.begin(), res.S_prime.end());
  EXPECT_TRUE(Sp.count({2}) && Sp.count({-2}));
  EXPECT_TRUE(res.cert.checked_inclusion);
  EXPECT_TRUE(brute_kr(Z, res.S_prime, 5, 5));
}

TEST(FiniteIndex, WholeGroup) {
  auto G = groups::heisenberg();
  auto res = finite_index_generators(G, [](const Element&) { return true; }, 1);
  EXPECT_EQ(res.r0, 0);
  Ball b1 = enumerate_ball(G, 1);
  EXPECT_EQ(res.S_prime, b1.elements());
  EXPECT_TRUE(res.cert.checked_inclusion);
}

TEST(FiniteIndex, HeisenbergKernelModTwo) {
  auto G = groups::heisenberg();
  auto member = [](const Element& g) { return g[1] % 2 == 0; };
  auto res = finite_index_generators(G, member, 2);
  EXPECT_EQ(res.cosets, 2u);
  EXPECT_TRUE(res.cert.checked_inclusion);
  EXPECT_EQ(res.cert.K, 5);
  for (const auto& s : res.S_prime) EXPECT_TRUE(member(s));
}

TEST(FiniteIndex, IndexBoundViolated) {
  auto Z = groups::free_abelian(1);
  // Index 5 still saturates by radius 2 and certifies; index 7 cannot.
  EXPECT_TRUE(finite_index_generators(Z, [](const Element& g) { return g[0] % 5 == 0; }, 2).cert.checked_inclusion);
  EXPECT_THROW(finite_index_generators(Z, [](const Element& g) { return g[0] % 7 == 0; }, 2), BudgetExhausted);
}

TEST(Params, TransExamples) {
  EXPECT_EQ(trans_params(2, 2, 3, 1), std::make_pair(BigInt(54), BigInt(2)));
  EXPECT_EQ(trans_params(1, 1, 1, 1), std::make_pair(BigInt(3), BigInt(1)));
  std::mt19937 rng(7);
  for (int t = 0; t < 50; ++t) {
    long K = rng() % 1000, R = rng() % 1000, Kp = rng() % 1000, Rp = rng() % 1000;
    auto [K2, R2] = trans_params(K, R, Kp, Rp);
    EXPECT_EQ(K2, BigInt(K) * Kp * K + BigInt(K) * Kp * R * Kp + BigInt(K) * Kp);
    EXPECT_EQ(R2, BigInt(R) * Rp);
  }
}

TEST(Params, TransComposesVerifiedCertificates) {
  // Z ⊃ 2Z ⊃ 4Z, each link certified, composition re-certified directly.
  auto Z = groups::free_abelian(1);
  std::vector<Element> two{{2}, {-2}}, four{{4}, {-4}};
  auto c1 = verify_kr_subgroup(Z, two, 2, 2);
  ASSERT_TRUE(c1.checked_inclusion);
  MarkedGroup twoZ(FreeAbelianGroup{1}, two);
  auto c2 = verify_kr_subgroup(twoZ, four, 1, 2);
  ASSERT_TRUE(c2.checked_inclusion);
  auto [K, R] = trans_params(2, 2, 1, 2);
  EXPECT_EQ(K, 10);
  EXPECT_EQ(R, 4);
  EXPECT_TRUE(verify_kr_subgroup(Z, four, 10, 4).checked_inclusion);
  EXPECT_TRUE(brute_kr(Z, four, 10, 4));
}

TEST(Params, GrowthTransfer) {
  auto [R, d] = growth_transfer_params(100, 2, 0.5);
  EXPECT_NEAR(R, 10, 1e-12);
  EXPECT_NEAR(d, 4, 1e-12);
  auto [R0, d0] = growth_transfer_params(37, 3, 0);
  EXPECT_NEAR(R0, 37, 1e-12);
  EXPECT_NEAR(d0, 3, 1e-12);
  auto [Re, de] = growth_transfer_params(std::exp(4.0), 3, 0.25);
  EXPECT_NEAR(Re, std::exp(3.0), 1e-9);
  EXPECT_NEAR(de, 4, 1e-12);
}

TEST(Params, IndexFactorial) {
  EXPECT_EQ(index_factorial_bound(1, 1), 1);
  EXPECT_EQ(index_factorial_bound(2, 3), 720);
  EXPECT_EQ(index_factorial_bound(3, 3), 362880);
  EXPECT_EQ(index_factorial_bound(5, 5), BigInt("15511210043330985984000000"));
}

TEST(Nilpotency, Examples) {
  EXPECT_TRUE(nilpotency_check(groups::free_abelian(3), 1).nilpotent);
  auto H = groups::heisenberg();
  auto r1 = nilpotency_check(H, 1);
  EXPECT_FALSE(r1.nilpotent);
  ASSERT_EQ(r1.witness.size(), 2u);
  EXPECT_EQ(H.commutator(H.generators()[r1.witness[0]], H.generators()[r1.witness[1]]), r1.value);
  EXPECT_TRUE(is_central_matrix(r1.value));
  EXPECT_TRUE(nilpotency_check(H, 2).nilpotent);
  EXPECT_FALSE(nilpotency_check(groups::free_group(2), 5).nilpotent);
  EXPECT_THROW(nilpotency_check(groups::free_group(3), 10, 1000), ResourceLimitError);
}

TEST(Nilpotency, MonotoneInStep) {
  for (const auto& G : {groups::free_abelian(2), groups::heisenberg(), groups::cyclic(7), groups::lamplighter(),
                        groups::free_group(2)}) {
    bool prev = false;
    for (int s = 0; s <= 4; ++s) {
      bool now = nilpotency_check(G, s).nilpotent;
      if (prev) {
        EXPECT_TRUE(now);
      }
      prev = now;
    }
  }
}
