#pragma once

// Constructive subgroup lemmas: (K,R)-subgroup certificates, separated nets,
// generator reduction, commutator generators, finite-index generators and the
// parameter calculus that composes them.

#include <cmath>
#include <functional>
#include <optional>

#include "fgromov/group.hpp"

namespace fgromov {

/// (G', S') is a (K, R)-subgroup of (G, S): S' ⊆ B_S(R) and
/// B_S(K+1) ⊆ B_S(K)·B_{S'}(K).  `checked_inclusion` is only ever true after
/// exhaustive verification.
struct KRSubgroupCert {
  int K = 0;
  int R = 0;
  std::vector<Element> S_prime;
  bool checked_inclusion = false;
  std::string failure;  // empty on success
};

namespace detail {

inline std::vector<Element> symmetrize(const MarkedGroup& G, const std::vector<Element>& S) {
  std::vector<Element> out;
  ElementSet seen;
  for (const auto& s : S)
    for (auto t : {s, G.inverse(s)})
      if (seen.insert(t).second) out.push_back(t);
  return out;
}

/// Sorts by (norm in `ball` when present, canonical key).
inline void canonical_sort(std::vector<Element>& xs, const Ball* ball = nullptr) {
  auto rank = [&](const Element& g) {
    int n = std::numeric_limits<int>::max();
    if (ball)
      if (auto i = ball->find(g)) n = ball->norm(*i);
    return std::make_pair(n, canonical_key(g));
  };
  std::vector<std::pair<std::pair<int, std::string>, Element>> tagged;
  tagged.reserve(xs.size());
  for (auto& x : xs) tagged.emplace_back(rank(x), std::move(x));
  std::sort(tagged.begin(), tagged.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  xs.clear();
  for (auto& t : tagged) xs.push_back(std::move(t.second));
}

}  // namespace detail

/// Exhaustively checks the (K, R)-subgroup property.  `ambient` may be any
/// ball of radius ≥ max(K+1, R) for G; it is enumerated otherwise.
inline KRSubgroupCert verify_kr_subgroup(const MarkedGroup& G, const std::vector<Element>& S_prime, int K, int R,
                                         const Ball* ambient = nullptr, std::size_t cap = kDefaultElementCap) {
  KRSubgroupCert cert{K, R, S_prime, false, {}};
  if (S_prime.empty()) {
    cert.failure = "S' is empty";
    return cert;
  }
  std::optional<Ball> owned;
  if (!ambient || ambient->radius() < std::max(K + 1, R)) {
    owned.emplace(enumerate_ball(G, std::max(K + 1, R), cap));
    ambient = &*owned;
  }
  for (const auto& s : S_prime) {
    auto i = ambient->find(s);
    if (!i || ambient->norm(*i) > R) {
      cert.failure = "generator " + format_element(s) + " lies outside B_S(R)";
      return cert;
    }
  }
  // Elements of B_S(K) trivially lie in B_S(K)·{id}; only sphere K+1 matters.
  std::vector<Element> pending;
  for (std::size_t i = ambient->prefix(K); i < ambient->prefix(K + 1); ++i) pending.push_back(ambient->element(i));
  if (!pending.empty()) {
    MarkedGroup sub(G.backend(), detail::symmetrize(G, S_prime));
    detail::expand_spheres(sub, K, cap, [&](int, const std::vector<Element>& layer) {
      for (const auto& h : layer) {
        Element hinv = G.inverse(h);
        std::erase_if(pending, [&](const Element& y) {
          auto x = ambient->find(G.multiply(y, hinv));
          return x && ambient->norm(*x) <= K;
        });
        if (pending.empty()) return false;
      }
      return true;
    });
  }
  if (!pending.empty()) {
    cert.failure = "element " + format_element(pending.front()) + " of B_S(K+1) is not in B_S(K)·B_S'(K)";
    return cert;
  }
  cert.checked_inclusion = true;
  return cert;
}

/// Greedy maximal subset X of `centers`, scanned in canonical order, whose
/// translates x·B_S(r) are pairwise disjoint.
inline std::vector<Element> maximal_separated_net(const Ball& ball, std::vector<Element> centers, int r) {
  if (r < 0) throw std::invalid_argument("separation must be non-negative");
  if (ball.radius() < r) throw std::invalid_argument("ball radius is smaller than the separation");
  const auto& G = ball.group();
  detail::canonical_sort(centers, &ball);
  centers.erase(std::unique(centers.begin(), centers.end()), centers.end());
  const std::size_t nr = ball.prefix(r);
  ElementSet covered;
  std::vector<Element> X;
  std::vector<Element> translate;
  for (const auto& c : centers) {
    translate.clear();
    bool disjoint = true;
    for (std::size_t i = 0; i < nr && disjoint; ++i) {
      translate.push_back(G.multiply(c, ball.element(i)));
      disjoint = !covered.count(translate.back());
    }
    if (!disjoint) continue;
    covered.insert(translate.begin(), translate.end());
    X.push_back(c);
  }
  return X;
}

struct GeneratorReduction {
  std::vector<Element> S_prime;
  int r = 0;                    // pigeonhole radius
  double ratio = 0;             // |B(10r)| / |B(r)| at r
  int K = 0;                    // floor(R_0^κ), raised to 4r when needed
  bool scale_hypothesis = false;  // R_0 ≥ 100^{1/κ}
  bool covering_verified = false;  // B_S(4r) ⊆ S'·B_S(2r)
  KRSubgroupCert cert;
  std::vector<std::size_t> sizes;
};

/// Pigeonholes r ∈ [1, max(1, R_0^κ/10)] minimizing |B(10r)|/|B(r)| (first on
/// ties), takes a maximal r-separated net X of B_S(4r), and certifies
/// S' = X ∪ X^{-1}.  `max_ratio`, when given, turns an unfavourable minimum
/// into a typed failure carrying the growth sequence.
inline GeneratorReduction generator_reduction(const MarkedGroup& G, double R0, double kappa,
                                              std::optional<double> max_ratio = std::nullopt,
                                              std::size_t cap = kDefaultElementCap) {
  if (!(kappa > 0 && kappa < 1)) throw std::invalid_argument("kappa must lie in (0, 1)");
  if (R0 < 10) throw std::invalid_argument("R_0 must be at least 10");
  GeneratorReduction out;
  const double scale = std::pow(R0, kappa);
  out.scale_hypothesis = R0 >= std::pow(100.0, 1.0 / kappa) * (1 - 1e-12);
  const int r_max = std::max(1, static_cast<int>(std::floor(scale / 10 + 1e-9)));
  out.K = static_cast<int>(std::floor(scale + 1e-9));
  const int radius = std::max(10 * r_max, out.K + 1);
  Ball ball = enumerate_ball(G, radius, cap);
  out.sizes = growth_sequence(ball).sizes;
  out.ratio = std::numeric_limits<double>::infinity();
  for (int r = 1; r <= r_max; ++r) {
    double q = static_cast<double>(out.sizes[10 * r]) / static_cast<double>(out.sizes[r]);
    if (q < out.ratio) out.ratio = q, out.r = r;
  }
  if (max_ratio && out.ratio > *max_ratio)
    throw BudgetExhausted("no pigeonhole radius with |B(10r)|/|B(r)| <= " + std::to_string(*max_ratio), out.sizes);
  const int r = out.r;
  std::vector<Element> centers(ball.elements().begin(), ball.elements().begin() + ball.prefix(4 * r));
  auto X = maximal_separated_net(ball, centers, r);
  out.S_prime = detail::symmetrize(G, X);
  detail::canonical_sort(out.S_prime, &ball);

  // B_S(4r) ⊆ S'·B_S(2r): each y has some s ∈ S' with s^{-1}y ∈ B_S(2r).
  out.covering_verified = true;
  std::vector<Element> inv;
  for (const auto& s : out.S_prime) inv.push_back(G.inverse(s));
  for (std::size_t i = 0; i < ball.prefix(4 * r) && out.covering_verified; ++i) {
    bool hit = false;
    for (const auto& si : inv) {
      auto k = ball.find(G.multiply(si, ball.element(i)));
      if (k && ball.norm(*k) <= 2 * r) {
        hit = true;
        break;
      }
    }
    out.covering_verified = hit;
  }
  if (!out.covering_verified) throw CertificateFailure("net covering B_S(4r) ⊆ S'·B_S(2r) failed");
  out.K = std::max(out.K, 4 * r);
  out.cert = verify_kr_subgroup(G, out.S_prime, out.K, out.K, ball.radius() >= out.K + 1 ? &ball : nullptr, cap);
  if (!out.cert.checked_inclusion) throw CertificateFailure("generator reduction: " + out.cert.failure);
  return out;
}

struct ZonkWitness {
  Element g, e, e_prime;  // generator = g [e, e'] g^{-1}
};

struct CommutatorGenerators {
  std::vector<Element> S_prime;
  std::vector<ZonkWitness> witnesses;  // aligned with S_prime
  int r = 0;
  std::vector<std::size_t> cumulative_sizes;  // |A_{≤0}|, |A_{≤1}|, ...
  bool inclusion_verified = false;            // A_{≤r+1} ⊆ A_{≤r}·A_{≤r}^{-1}
};

/// Conjugated commutators A_r = {g[e,e']g^{-1} : g ∈ B_S(r)} and the product
/// sets A_{≤r} = A_r·A_{≤r-1}; returns the first r ≥ 2 with
/// |A_{≤r+1}| < 2|A_{≤r}|.  Runs out of budget with a typed failure.
inline CommutatorGenerators commutator_generators(const MarkedGroup& G, int budget_radius,
                                                  std::size_t product_cap = 2'000'000,
                                                  std::size_t cap = kDefaultElementCap) {
  if (budget_radius < 3) throw std::invalid_argument("radius budget must be at least 3");
  const auto& S = G.generators();
  std::vector<Element> commutators;
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  for (std::size_t a = 0; a < S.size(); ++a)
    for (std::size_t b = 0; b < S.size(); ++b) {
      commutators.push_back(G.commutator(S[a], S[b]));
      pairs.emplace_back(a, b);
    }
  Ball ball = enumerate_ball(G, budget_radius, cap);
  CommutatorGenerators out;

  ElementMap<ZonkWitness> A;  // A_r, growing with r
  std::vector<Element> A_order;
  auto extend_A = [&](int r) {
    for (std::size_t i = ball.prefix(r - 1); i < ball.prefix(r); ++i) {
      const Element& g = ball.element(i);
      Element ginv = G.inverse(g);
      for (std::size_t c = 0; c < commutators.size(); ++c) {
        Element x = G.multiply(G.multiply(g, commutators[c]), ginv);
        if (!A.count(x)) {
          A.emplace(x, ZonkWitness{g, S[pairs[c].first], S[pairs[c].second]});
          A_order.push_back(x);
        }
      }
    }
  };
  auto product = [&](const ElementSet& rhs) {
    ElementSet out_set;
    for (const auto& a : A_order)
      for (const auto& b : rhs) {
        out_set.insert(G.multiply(a, b));
        if (out_set.size() > product_cap)
          throw BudgetExhausted("commutator product set exceeded " + std::to_string(product_cap) + " elements",
                                out.cumulative_sizes);
      }
    return out_set;
  };

  std::vector<ElementSet> cumulative;
  extend_A(0);
  cumulative.emplace_back(A_order.begin(), A_order.end());
  out.cumulative_sizes.push_back(cumulative.back().size());
  for (int r = 1; r <= budget_radius; ++r) {
    extend_A(r);
    cumulative.push_back(product(cumulative.back()));
    out.cumulative_sizes.push_back(cumulative.back().size());
    const int cand = r - 1;
    if (cand >= 2 && cumulative[cand + 1].size() < 2 * cumulative[cand].size()) {
      out.r = cand;
      break;
    }
  }
  if (out.r == 0) throw BudgetExhausted("commutator pigeonhole did not fire within the radius budget", out.cumulative_sizes);

  const auto& small = cumulative[out.r];
  out.inclusion_verified = true;
  for (const auto& x : cumulative[out.r + 1]) {
    bool hit = false;
    for (const auto& b : small)
      if (small.count(G.multiply(x, b))) {
        hit = true;
        break;
      }
    if (!hit) {
      out.inclusion_verified = false;
      break;
    }
  }
  if (!out.inclusion_verified) throw CertificateFailure("A_{<=r+1} ⊆ A_{<=r}·A_{<=r}^{-1} failed");

  // S' = A_r: recompute A_r at the selected radius with first witnesses.
  A.clear();
  A_order.clear();
  for (int k = 0; k <= out.r; ++k) extend_A(k);
  out.S_prime = A_order;
  detail::canonical_sort(out.S_prime, &ball);
  for (const auto& s : out.S_prime) out.witnesses.push_back(A.at(s));
  return out;
}

struct FiniteIndexGenerators {
  int r0 = 0;
  std::size_t cosets = 0;
  std::vector<Element> coset_representatives;  // canonical minimal representatives
  std::vector<Element> S_prime;                // G' ∩ B_S(2r_0 + 1)
  KRSubgroupCert cert;                         // (2I+1, 2I+1)
};

/// Generators for a subgroup G' of index ≤ I given by a membership oracle.
inline FiniteIndexGenerators finite_index_generators(const MarkedGroup& G,
                                                     const std::function<bool(const Element&)>& member, int I,
                                                     std::size_t cap = kDefaultElementCap) {
  if (I < 1) throw std::invalid_argument("index bound must be positive");
  const int K = 2 * I + 1;
  Ball ball = enumerate_ball(G, K + 1, cap);
  FiniteIndexGenerators out;
  std::vector<Element> reps, rep_inv;
  std::vector<std::size_t> cosets_at(static_cast<std::size_t>(I) + 2, 0);
  for (std::size_t i = 0; i < ball.prefix(I + 1); ++i) {
    const Element& x = ball.element(i);
    bool known = false;
    for (const auto& ci : rep_inv)
      if (member(G.multiply(ci, x))) {
        known = true;
        break;
      }
    if (!known) {
      reps.push_back(x);
      rep_inv.push_back(G.inverse(x));
    }
  }
  for (const auto& c : reps) {
    int n = ball.norm(*ball.find(c));
    for (int r = n; r <= I + 1; ++r) ++cosets_at[r];
  }
  std::optional<int> r0;
  for (int r = 0; r <= I; ++r)
    if (cosets_at[r + 1] == cosets_at[r]) {
      r0 = r;
      break;
    }
  if (!r0) {
    std::vector<std::size_t> counts(cosets_at.begin(), cosets_at.end());
    throw BudgetExhausted("coset saturation not reached by radius I (index bound violated or oracle inconsistent)",
                          counts);
  }
  out.r0 = *r0;
  for (const auto& c : reps)
    if (ball.norm(*ball.find(c)) <= out.r0) out.coset_representatives.push_back(c);
  out.cosets = out.coset_representatives.size();
  for (std::size_t i = 0; i < ball.prefix(2 * out.r0 + 1); ++i)
    if (member(ball.element(i))) out.S_prime.push_back(ball.element(i));
  out.cert = verify_kr_subgroup(G, out.S_prime, K, K, &ball, cap);
  if (!out.cert.checked_inclusion) throw CertificateFailure("finite index generators: " + out.cert.failure);
  return out;
}

/// Composition of (K,R)- and (K',R')-subgroups: (K·K'·(K + R·K' + 1), R·R').
inline std::pair<BigInt, BigInt> trans_params(const BigInt& K, const BigInt& R, const BigInt& Kp, const BigInt& Rp) {
  return {K * Kp * (K + R * Kp + 1), R * Rp};
}

/// A (K, R_0^κ)-subgroup of an (R_0, d)-growth group is an
/// (R_0^{1-κ}, d/(1-κ))-growth group.
inline std::pair<double, double> growth_transfer_params(double R0, double d, double kappa) {
  if (!(kappa >= 0 && kappa < 1)) throw std::invalid_argument("kappa must lie in [0, 1)");
  return {std::pow(R0, 1 - kappa), d / (1 - kappa)};
}

/// (I·J)! exactly.
inline BigInt index_factorial_bound(unsigned I, unsigned J) {
  BigInt out = 1;
  for (unsigned k = 2; k <= I * J; ++k) out *= k;
  return out;
}

struct NilpotencyResult {
  bool nilpotent = false;
  std::vector<std::size_t> witness;  // generator indices of a non-vanishing commutator
  Element value;
  std::size_t tuples_checked = 0;
};

/// All (s+1)-fold left-nested commutators [[..[s_1, s_2], ..], s_{s+1}] of
/// generators vanish.  Prefixes that already vanish are pruned.
inline NilpotencyResult nilpotency_check(const MarkedGroup& G, int step, std::size_t tuple_cap = 10'000'000) {
  if (step < 0) throw std::invalid_argument("step must be non-negative");
  const auto& S = G.generators();
  const double tuples = std::pow(static_cast<double>(S.size()), step + 1);
  if (tuples > static_cast<double>(tuple_cap))
    throw ResourceLimitError("|S|^(s+1) exceeds the commutator tuple cap", tuple_cap);
  NilpotencyResult out;
  const Element id = G.identity();
  std::vector<std::size_t> idx;
  std::function<bool(const Element&, int)> dfs = [&](const Element& c, int depth) {
    if (depth == step + 1) {
      ++out.tuples_checked;
      if (c != id) {
        out.witness = idx;
        out.value = c;
        return false;
      }
      return true;
    }
    if (c == id) {
      ++out.tuples_checked;
      return true;
    }
    for (std::size_t j = 0; j < S.size(); ++j) {
      idx.push_back(j);
      bool ok = dfs(G.commutator(c, S[j]), depth + 1);
      idx.pop_back();
      if (!ok) return false;
    }
    return true;
  };
  out.nilpotent = true;
  for (std::size_t j = 0; j < S.size() && out.nilpotent; ++j) {
    idx = {j};
    out.nilpotent = dfs(S[j], 1);
  }
  return out;
}

}  // namespace fgromov
