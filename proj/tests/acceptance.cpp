// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <unistd.h>

#include "fgromov/fgromov.hpp"

using namespace fgromov;

namespace {

constexpr double kPi = 3.14159265358979323846;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

int failures = 0;

void criterion(int id, const char* name, double limit_s, const std::function<Outcome()>& body) {
  const auto t0 = std::chrono::steady_clock::now();
  Outcome out;
  try {
    out = body();
  } catch (const std::exception& ex) {
    out = {false, std::string("exception: ") + ex.what()};
  }
  const double dt = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (limit_s > 0 && dt >= limit_s) {
    out.pass = false;
    out.detail += "; over time limit " + fmt("%.0f s", limit_s);
  }
  if (!out.pass) ++failures;
  std::printf("%s %2d %-28s %s [%.2f s]\n", out.pass ? "PASS" : "FAIL", id, name, out.detail.c_str(), dt);
  std::fflush(stdout);
}

BallFunction random_function(const BallPtr& b, int domain, int support, std::mt19937& rng) {
  std::uniform_real_distribution<double> U(-1, 1);
  auto f = BallFunction::zeros(b, domain);
  for (std::size_t i = 0; i < b->prefix(support); ++i) f[i] = U(rng);
  return f;
}

// BFS in the subgroup generated by S (symmetrised), written against the raw group law.
std::map<Element, int> word_norms_in(const MarkedGroup& G, const std::vector<Element>& S, int L) {
  std::map<Element, int> dist{{G.identity(), 0}};
  std::vector<Element> front{G.identity()};
  for (int l = 1; l <= L; ++l) {
    std::vector<Element> next;
    for (const auto& x : front)
      for (const auto& s : S)
        for (const auto& t : {s, G.inverse(s)}) {
          Element y = G.multiply(x, t);
          if (dist.emplace(y, l).second) next.push_back(y);
        }
    front = std::move(next);
  }
  return dist;
}

// Every element of B_S(K+1) is x·h with ‖x‖_S ≤ K and h ∈ B_{S'}(K); S' ⊆ B_S(R).
bool brute_kr(const MarkedGroup& G, const std::vector<Element>& Sp, int K, int R) {
  Ball big = enumerate_ball(G, std::max(K + 1, R));
  for (const auto& s : Sp) {
    auto i = big.find(s);
    if (!i || big.norm(*i) > R) return false;
  }
  const auto H = word_norms_in(G, Sp, K);
  std::set<Element> products;
  for (std::size_t i = 0; i < big.prefix(K); ++i)
    for (const auto& [h, n] : H) products.insert(G.multiply(big.element(i), h));
  for (std::size_t i = 0; i < big.prefix(K + 1); ++i)
    if (!products.count(big.element(i))) return false;
  return true;
}

std::vector<long long> mat2_mul(const std::vector<long long>& a, const std::vector<long long>& b) {
  return {a[0] * b[0] + a[1] * b[2], a[0] * b[1] + a[1] * b[3], a[2] * b[0] + a[3] * b[2],
          a[2] * b[1] + a[3] * b[3]};
}

std::filesystem::path scratch(const std::string& tag) {
  auto p = std::filesystem::temp_directory_path() / ("fgromov_accept_" + std::to_string(::getpid()) + "_" + tag);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace

int main() {
  criterion(1, "growth oracles", 5, [] {
    const auto z2 = enumerate_ball(groups::free_abelian(2), 2);
    const bool b2 = z2.size() == 13;
    const auto cyc = growth_sequence(groups::cyclic(101), 60);
    const auto stab = detect_finite(cyc);
    const bool c = stab && *stab == 50;
    const auto f2 = growth_sequence(groups::free_group(2), 8);
    bool f = f2.sizes.size() == 9;
    long long p3 = 1;
    for (int r = 0; r <= 8 && f; ++r, p3 *= 3) f = f2.sizes[r] == static_cast<std::size_t>(2 * p3 - 1);
    return Outcome{b2 && c && f, "|B_Z2(2)|=" + std::to_string(z2.size()) + " cyclic101 stabilizes at " +
                                     (stab ? std::to_string(*stab) : "never") + " free2 " + (f ? "2*3^r-1" : "mismatch")};
  });

  criterion(2, "sine almost-harmonic", 1, [] {
    const double N = 128;
    auto b = make_ball(groups::cyclic(128), 64);
    auto u = BallFunction::from(b, 64, [N](const Element& g) {
      return N / (2 * kPi) * std::sin(2 * kPi * static_cast<double>(g[0]) / N);
    });
    const double lap = sup_norm(laplacian(u));
    const double closed = 2 * N / kPi * (1 - std::cos(2 * kPi / N));
    const double lip = lipschitz_norm(u);
    const bool ok = lap >= 0.09 && lap <= 0.11 && std::abs(lap - closed) <= 1e-12 && lip <= 1.5;
    return Outcome{ok, "|Du|=" + fmt("%.6f", lap) + " closed=" + fmt("%.6f", closed) + " lip=" + fmt("%.4f", lip)};
  });

  criterion(3, "almost-harmonic contract", 120, [] {
    const MarkedGroup G = groups::cyclic(4096);
    const int R = 512;
    AlmostHarmonicOptions opt;
    opt.window = 2048;
    const auto h = build_almost_harmonic(G, R, opt);
    const double S = static_cast<double>(G.num_generators());
    const double bound = S * std::pow(R, -1.0 / 3);
    const bool ok = h.u && h.eps <= bound && h.lip <= 1 && h.grad_at_id >= 1 / S;
    return Outcome{ok, std::string(to_string(h.kind)) + " R=512 eps=" + fmt("%.3g", h.eps) + " <= " +
                           fmt("%.4f", bound) + " lip=" + fmt("%.4f", h.lip) + " grad=" + fmt("%.4f", h.grad_at_id)};
  });

  criterion(4, "Poincare inequality", 60, [] {
    std::mt19937 rng(41);
    struct Case {
      MarkedGroup G;
      int radius;
      int r_max;
    };
    std::vector<Case> cases{{groups::free_abelian(2), 12, 3}, {groups::heisenberg(), 8, 2}, {groups::cyclic(64), 32, 10}};
    std::size_t checked = 0, violations = 0;
    for (auto& c : cases) {
      auto b = make_ball(c.G, c.radius);
      std::uniform_int_distribution<int> rr(1, c.r_max);
      for (int t = 0; t < 1000; ++t) {
        auto f = random_function(b, c.radius, c.radius, rng);
        const int r = rr(rng);
        const std::size_t reach = b->complete() ? b->size() : b->prefix(c.radius - 3 * r - 1);
        const Element x = b->element(std::uniform_int_distribution<std::size_t>(0, reach - 1)(rng));
        ++checked;
        if (!poincare_check(f, x, r, 1e-9).holds) ++violations;
      }
    }
    return Outcome{violations == 0, std::to_string(checked) + " functions, " + std::to_string(violations) + " violations"};
  });

  criterion(5, "Heisenberg harmonic dim", 300, [] {
    const MarkedGroup H = groups::heisenberg();
    auto hb = make_ball(H, 8);
    std::vector<std::function<double(const Element&)>> coords{[](const Element& g) { return double(g[1]); },
                                                               [](const Element& g) { return double(g[5]); }};
    auto cands = harmonic_candidates(hb, 40, 2024, BoundaryModel::AffineCoordinates, coords);
    const auto g = greedy_dimension(cands, 8, 1e-3);
    const int window = 4;
    const std::vector<Element> central{{1, 0, 1, 0, 1, 0, 0, 0, 1}, {1, 0, -1, 0, 1, 0, 0, 0, 1}};
    double worst = 0;
    bool dev_ok = true;
    for (auto i : g.chosen) {
      const double lip = lipschitz_norm(cands[i]);
      const double dev = trivial_directions_check(cands[i], central, window);
      worst = std::max(worst, dev / (lip * window));
      dev_ok = dev_ok && dev <= kTrivialDirectionTolerance * lip * window;
    }
    const bool ok = cands.size() >= 40 && g.dim() == 2 && dev_ok;
    return Outcome{ok, "dim=" + std::to_string(g.dim()) + " over " + std::to_string(cands.size()) +
                           " candidates, central deviation/(lip*window)=" + fmt("%.3g", worst)};
  });

  criterion(6, "convolution identities", 60, [] {
    std::mt19937 rng(6);
    double worst = 0;
    const std::vector<MarkedGroup> groups_{groups::heisenberg(), groups::free_abelian(2)};
    std::vector<BallPtr> balls;
    for (const auto& G : groups_) balls.push_back(make_ball(G, 7));
    auto upd = [&](double a, double b) { worst = std::max(worst, std::abs(a - b)); };
    for (int t = 0; t < 500; ++t) {
      const auto& b = balls[t % balls.size()];
      auto f1 = random_function(b, 7, 2, rng), f2 = random_function(b, 7, 3, rng);
      auto g1 = gradient(convolve(f1, f2, 7));
      auto g2 = convolve(f1, gradient(f2), 6);
      for (std::size_t i = 0; i < g1.values.size(); ++i) upd(g1.values[i], g2.values[i]);
      auto l1 = laplacian(convolve(f1, f2, 7));
      auto l2 = convolve(f1, laplacian(f2), 6);
      for (std::size_t i = 0; i < l1.size(); ++i) upd(l1[i], l2[i]);
      auto F = gradient(random_function(b, 7, 2, rng));
      auto d1 = divergence(convolve(f1, F, 6));
      auto d2 = convolve(f1, divergence(F), 6);
      for (std::size_t i = 0; i < d1.size(); ++i) upd(d1[i], d2[i]);
      // Summation by parts: Σ Δu·v = Σ ∇u·∇v for finitely supported u, v.
      auto u = random_function(b, 7, 4, rng), v = random_function(b, 7, 4, rng);
      auto lap = laplacian(u);
      auto gu = gradient(u), gv = gradient(v);
      double lhs = 0, rhs = 0;
      for (std::size_t i = 0; i < lap.size(); ++i) lhs += lap[i] * v[i];
      for (std::size_t i = 0; i < gu.size(); ++i)
        for (std::size_t j = 0; j < gu.width(); ++j) rhs += gu(i, j) * gv(i, j);
      upd(lhs, rhs);
    }
    return Outcome{worst <= 1e-9, "500 pairs per identity, max deviation " + fmt("%.2e", worst)};
  });

  criterion(7, "lattice dichotomy", 1, [] {
    const auto cat = dichotomy(IntMatrix(2, {2, 1, 1, 1}), 20);
    bool ok = !cat.periodic();
    std::string d;
    if (ok) {
      const auto& g = cat.as_growth();
      ok = g.mahler >= 2.618033 && g.mahler <= 2.618035 && g.measured_rate >= 2.60 && g.measured_rate <= 2.64;
      d = "cat mahler=" + fmt("%.9f", g.mahler) + " rate=" + fmt("%.4f", g.measured_rate);
    }
    const IntMatrix rot(2, {0, -1, 1, 0}), shear(2, {1, 1, 0, 1});
    const IntMatrix six = companion(IntPoly{1, -1, 1});
    const auto r = dichotomy(rot), s = dichotomy(shear), c6 = dichotomy(six);
    ok = ok && r.periodic() && r.as_periodic().n == 4 &&
         matrix_power(rot, 4).apply(r.as_periodic().w) == r.as_periodic().w;
    ok = ok && s.periodic() && s.as_periodic().n == 1;
    ok = ok && c6.periodic() && c6.as_periodic().n == 6 && matrix_power(six, 6) == IntMatrix::identity(2);
    d += " rotation n=" + (r.periodic() ? std::to_string(r.as_periodic().n) : "-") +
         " shear n=" + (s.periodic() ? std::to_string(s.as_periodic().n) : "-") +
         " x^2-x+1 n=" + (c6.periodic() ? std::to_string(c6.as_periodic().n) : "-");
    return Outcome{ok, d};
  });

  criterion(8, "Mahler measure", 10, [] {
    std::mt19937 rng(8);
    std::uniform_int_distribution<int> c(-5, 5), deg(1, 5);
    auto random_poly = [&] {
      IntPoly p(static_cast<std::size_t>(deg(rng)) + 1);
      for (auto& x : p) x = c(rng);
      if (p.back() == 0) p.back() = 1;
      if (p.front() == 0) p.front() = 1;
      return p;
    };
    double worst = 0;
    for (int t = 0; t < 100; ++t) {
      const IntPoly p = random_poly(), q = random_poly();
      worst = std::max(worst, std::abs(mahler_measure(detail::multiply(p, q)) / (mahler_measure(p) * mahler_measure(q)) - 1));
    }
    double cyc = 0;
    std::uniform_int_distribution<int> n(1, 30), k(1, 4);
    for (int t = 0; t < 50; ++t) {
      IntPoly p{1};
      for (int j = k(rng); j > 0; --j) p = detail::multiply(p, cyclotomic_polynomial(n(rng)));
      cyc = std::max(cyc, std::abs(mahler_measure(p) - 1));
    }
    return Outcome{worst <= 1e-8 && cyc <= 1e-9,
                   "product rel err " + fmt("%.2e", worst) + ", cyclotomic products |M-1| " + fmt("%.2e", cyc)};
  });

  criterion(9, "commutator generators", 60, [] {
    const MarkedGroup H = groups::heisenberg();
    const auto res = commutator_generators(H, 6);
    bool ok = !res.S_prime.empty() && res.witnesses.size() == res.S_prime.size();
    for (std::size_t i = 0; ok && i < res.S_prime.size(); ++i) {
      const auto& w = res.witnesses[i];
      ok = H.multiply(H.multiply(w.g, H.commutator(w.e, w.e_prime)), H.inverse(w.g)) == res.S_prime[i];
    }
    const Ball b6 = enumerate_ball(H, 6);
    const auto generated = word_norms_in(H, res.S_prime, 24);
    std::size_t central = 0, mismatched = 0;
    for (const auto& g : b6.elements()) {
      const bool is_central = g[1] == 0 && g[5] == 0;
      central += is_central;
      if (is_central != (generated.count(g) > 0)) ++mismatched;
    }
    ok = ok && mismatched == 0;
    return Outcome{ok, std::to_string(res.S_prime.size()) + " witnessed generators, " + std::to_string(central) +
                           " central elements in B(6), " + std::to_string(mismatched) + " mismatches"};
  });

  criterion(10, "finite-index certificates", 30, [] {
    const MarkedGroup Z = groups::free_abelian(1), H = groups::heisenberg();
    const auto even = [](const Element& g) { return g[0] % 2 == 0; };
    const auto xker = [](const Element& g) { return g[1] % 2 == 0; };
    std::string d;
    bool ok = true;
    for (auto [G, member, name] : {std::tuple{Z, std::function<bool(const Element&)>(even), "Z/2Z"},
                                   std::tuple{H, std::function<bool(const Element&)>(xker), "Heisenberg/x-kernel"}}) {
      const auto res = finite_index_generators(G, member, 2);
      bool good = res.cert.K == 5 && res.cert.R == 5 && res.cert.checked_inclusion;
      for (const auto& s : res.S_prime) good = good && member(s);
      good = good && brute_kr(G, res.S_prime, res.cert.K, res.cert.R);
      ok = ok && good;
      d += std::string(name) + (good ? " re-verified " : " FAILED ");
    }
    return Outcome{ok, d + "at (5,5)"};
  });

  criterion(11, "slow growth generators", 120, [] {
    const MarkedGroup G = groups::semidirect(2, {1, 1, 0, 1});
    const auto sg = slow_growth_generators(G, G.generators()[0], [](const Element& g) { return g[0] == 0; });
    const auto dist = word_norms_in(G, sg.S_tilde, 3);
    bool ok = sg.range >= 1;
    std::vector<long long> fwd{1, 0, 0, 1}, bwd{1, 0, 0, 1};
    for (int n = 1; ok && n <= sg.range; ++n) {
      fwd = mat2_mul(fwd, {1, 1, 0, 1});
      bwd = mat2_mul(bwd, {1, -1, 0, 1});
      for (const auto& M : {fwd, bwd})
        for (const auto& s : sg.S_tilde) {
          const Element t{0, M[0] * s[1] + M[1] * s[2], M[2] * s[1] + M[3] * s[2]};
          ok = ok && dist.count(t);
        }
    }
    std::string d = "shear R=" + std::to_string(sg.R) + " range=" + std::to_string(sg.range) + " |S~|=" +
                    std::to_string(sg.S_tilde.size());
    const MarkedGroup cat = groups::semidirect(2, {2, 1, 1, 1});
    try {
      slow_growth_generators(cat, cat.generators()[0], [](const Element& g) { return g[0] == 0; });
      ok = false;
      d += "; cat returned";
    } catch (const BudgetExhausted& ex) {
      ok = ok && !ex.sizes().empty();
      d += "; cat BudgetExhausted";
    }
    return Outcome{ok, d};
  });

  criterion(12, "virtually nilpotent assembly", 10, [] {
    const MarkedGroup rot = groups::semidirect(2, {0, -1, 1, 0});
    const auto a = assemble_virtually_nilpotent(rot, rot.generators()[0], 4, {rot.generators()[2], rot.generators()[4]}, 1);
    const MarkedGroup Gn = MarkedGroup::closed_under_inverse(rot.backend(), a.S_new);
    const bool ok = a.step == 2 && a.nilpotency.nilpotent && nilpotency_check(Gn, 2).nilpotent;
    return Outcome{ok, "P=4 step " + std::to_string(a.step) + (a.nilpotency.nilpotent ? " nilpotent" : " not nilpotent")};
  });

  criterion(13, "reduce on Heisenberg", 600, [] {
    const MarkedGroup H = groups::heisenberg();
    const ReduceConfig cfg;
    const auto t = cmd_reduce(H, cfg);
    bool found = false;
    double before = 0, after = 0;
    for (const auto& l : t.levels)
      if (l.kernel && !found) {
        found = true;
        before = l.kernel->degree_before;
        after = l.kernel->degree_after;
      }
    const auto v = verify_reduce_report(make_report("reduce", group_json(H), to_json(cfg), to_json(t)), H);
    const bool ok = found && before >= 3.2 && after <= 1.5 && v.ok();
    return Outcome{ok, "ambient " + fmt("%.3f", before) + " -> commutator " + fmt("%.3f", after) + ", " +
                           std::to_string(v.checked) + " certificates re-verified, " +
                           std::to_string(v.failures.size()) + " failures"};
  });

  criterion(14, "determinism", 0, [] {
    const MarkedGroup H = groups::heisenberg();
    const ReduceConfig cfg;
    auto report = [&] { return dump_report(make_report("reduce", group_json(H), to_json(cfg), to_json(cmd_reduce(H, cfg)))); };
    const bool reduce_same = report() == report();
    const auto d1 = scratch("a"), d2 = scratch("b");
    const auto g1 = dump_report(make_report("growth", group_json(H), {}, to_json(cmd_growth(H, 10, d1))));
    const auto g2 = dump_report(make_report("growth", group_json(H), {}, to_json(cmd_growth(H, 10, d2))));
    const auto g3 = dump_report(make_report("growth", group_json(H), {}, to_json(cmd_growth(H, 10, d1))));
    const bool cache_same = read_file(ball_cache_path(d1, H, 10)) == read_file(ball_cache_path(d2, H, 10));
    auto hb = make_ball(H, 5);
    const auto c1 = harmonic_candidates(hb, 6, 99, BoundaryModel::RandomLipschitz);
    const auto c2 = harmonic_candidates(hb, 6, 99, BoundaryModel::RandomLipschitz);
    bool cand_same = c1.size() == c2.size();
    for (std::size_t i = 0; cand_same && i < c1.size(); ++i) cand_same = c1[i].values() == c2[i].values();
    std::filesystem::remove_all(d1);
    std::filesystem::remove_all(d2);
    const bool ok = reduce_same && g1 == g2 && g1 == g3 && cache_same && cand_same;
    return Outcome{ok, std::string("reduce ") + (reduce_same ? "identical" : "differs") + ", growth " +
                           (g1 == g2 && g1 == g3 ? "identical" : "differs") + ", cache " +
                           (cache_same ? "identical" : "differs") + ", seeded candidates " +
                           (cand_same ? "identical" : "differ")};
  });

  std::printf("%d of 14 criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
