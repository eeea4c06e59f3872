#include <gtest/gtest.h>

#include <numbers>

#include "fgromov/approx_rep.hpp"

using namespace fgromov;

namespace {

using Coordinate = std::function<double(const Element&)>;

BallFunction coordinate(const BallPtr& b, int radius, Coordinate f) { return BallFunction::from(b, radius, f); }

// Q_R-orthonormal copy of a family that is already Q_R-orthogonal.
std::vector<BallFunction> normalized(std::vector<BallFunction> us, int R) {
  for (auto& u : us) u *= 1.0 / std::sqrt(gram_form(u, u, R));
  return us;
}

BallFunction combo(const std::vector<BallFunction>& basis, const std::vector<double>& c) {
  auto out = BallFunction::zeros(basis[0].ball_ptr(), basis[0].radius());
  for (std::size_t j = 0; j < basis.size(); ++j)
    for (std::size_t x = 0; x < out.size(); ++x) out[x] += c[j] * basis[j][x];
  return out;
}

const Coordinate hx = [](const Element& g) { return double(g[1]); };
const Coordinate hz = [](const Element& g) { return double(g[5]); };
const Coordinate hy = [](const Element& g) { return double(g[2]); };

Element heis(Int a, Int c, Int b = 0) { return {1, a, b, 0, 1, c, 0, 0, 1}; }

EllipsoidFrame heisenberg_frame(int ball_radius, int R1, std::vector<Coordinate> coords) {
  auto b = make_ball(groups::heisenberg(), ball_radius);
  std::vector<BallFunction> basis;
  for (const auto& c : coords) basis.push_back(coordinate(b, ball_radius, c));
  auto V = make_subspace(basis, R1);
  const std::size_t D = coords.size();
  return ellipsoid_frame(affine_sample(b, ball_radius, coords, 20 * D * D, 99), V, R1);
}

void expect_orthonormal(const EllipsoidFrame& f) {
  for (std::size_t i = 0; i < f.dim(); ++i)
    for (std::size_t j = 0; j < f.dim(); ++j)
      EXPECT_NEAR(gram_form(f.directions[i], f.directions[j], f.R1), i == j ? 1.0 : 0.0, 1e-8);
  for (std::size_t i = 1; i < f.dim(); ++i) EXPECT_GE(f.radii[i - 1], f.radii[i]);
}

}  // namespace

TEST(EllipsoidFrame, SphereSample) {
  auto b = make_ball(groups::free_abelian(2), 6);
  auto o = normalized({coordinate(b, 6, [](const Element& g) { return double(g[0]); }),
                       coordinate(b, 6, [](const Element& g) { return double(g[1]); })},
                      4);
  std::vector<BallFunction> sample;
  for (int k = 0; k < 80; ++k) {
    const double th = 2 * std::numbers::pi * k / 80;
    sample.push_back(combo(o, {std::cos(th), std::sin(th)}));
  }
  auto f = ellipsoid_frame(sample, make_subspace(o, 4), 4);
  expect_orthonormal(f);
  EXPECT_LE(f.alpha, 1.01);
  EXPECT_GE(f.alpha, 1.0);
  for (double lam : f.radii) EXPECT_NEAR(lam, 1.0, 0.01);
}

TEST(EllipsoidFrame, BoxSample) {
  auto b = make_ball(groups::free_abelian(2), 6);
  auto o = normalized({coordinate(b, 6, [](const Element& g) { return double(g[0]); }),
                       coordinate(b, 6, [](const Element& g) { return double(g[1]); })},
                      4);
  std::vector<BallFunction> sample;
  for (int i = -2; i <= 2; ++i)
    for (int j = -2; j <= 2; ++j) sample.push_back(combo(o, {2.0 * i / 2, 1.0 * j / 2}));
  auto f = ellipsoid_frame(sample, make_subspace(o, 4), 4);
  expect_orthonormal(f);
  EXPECT_LE(f.alpha, std::sqrt(2.0) + 0.01);
  // Axes along the box edges, longest first.
  EXPECT_NEAR(std::abs(gram_form(f.directions[0], o[0], 4)), 1.0, 1e-3);
  EXPECT_NEAR(std::abs(gram_form(f.directions[1], o[1], 4)), 1.0, 1e-3);
  EXPECT_NEAR(f.radii[0], 2.0, 0.02);
  EXPECT_NEAR(f.radii[1], 1.0, 0.01);
}

TEST(EllipsoidFrame, InnerAndOuterEllipsoidsAgainstSample) {
  auto hf = heisenberg_frame(8, 6, {hx, hz});
  expect_orthonormal(hf);
  auto b = hf.directions[0].ball_ptr();
  auto sample = affine_sample(b, 8, {hx, hz}, 80, 99);
  for (std::size_t i = 0; i < hf.dim(); ++i) {
    // λ_i e_i ∈ conv(±sample) needs a sample point at least that far along e_i.
    double support = 0, outer = 0;
    for (const auto& s : sample) support = std::max(support, std::abs(gram_form(s, hf.directions[i], 6)));
    EXPECT_GE(support, hf.radii[i] * (1 - 1e-9));
    for (const auto& s : sample) {
      double q = 0;
      for (std::size_t j = 0; j < hf.dim(); ++j) q += std::pow(gram_form(s, hf.directions[j], 6) / (hf.alpha * hf.radii[j]), 2);
      outer = std::max(outer, q);
    }
    EXPECT_LE(outer, 1 + 1e-9);
  }
  EXPECT_LE(hf.alpha, std::sqrt(2.0) + 0.01);  // John's bound √D
  EXPECT_LE(hf.max_coefficient, hf.alpha * 1.0001);
}

TEST(EllipsoidFrame, InradiusMatchesDirectionScan) {
  std::mt19937 rng(8);
  std::normal_distribution<double> N(0, 1);
  Eigen::MatrixXd Y(2, 40);
  for (int k = 0; k < 20; ++k) {
    Eigen::Vector2d p(N(rng), N(rng));
    p /= std::max(1.0, p.norm() * 1.2);
    Y.col(k) = p;
    Y.col(20 + k) = -p;
  }
  double scan = 1e9;
  for (int t = 0; t < 200000; ++t) {
    const double th = std::numbers::pi * t / 200000;
    Eigen::Vector2d w(std::cos(th), std::sin(th));
    scan = std::min(scan, (w.transpose() * Y).cwiseAbs().maxCoeff());
  }
  const double exact = detail::symmetric_hull_inradius(Y);
  EXPECT_LE(exact, scan + 1e-12);
  EXPECT_NEAR(exact, scan, 1e-5);
  // A reduced budget only ever lowers the inradius.
  bool full = true;
  EXPECT_LE(detail::symmetric_hull_inradius(Y, 100, &full), exact + 1e-12);
  EXPECT_FALSE(full);
}

TEST(EllipsoidFrame, RankDeficientSampleIsTyped) {
  auto b = make_ball(groups::free_abelian(2), 4);
  auto x = coordinate(b, 4, [](const Element& g) { return double(g[0]); });
  auto y = coordinate(b, 4, [](const Element& g) { return double(g[1]); });
  auto V = make_subspace({x, y}, 4);
  EXPECT_THROW(ellipsoid_frame({x, x, x}, V, 4), NumericalFailure);
  EXPECT_THROW(ellipsoid_frame({}, V, 4), NumericalFailure);
}

TEST(TranslationMatrix, IdentityAndLinearZ) {
  auto b = make_ball(groups::free_abelian(1), 12);
  auto x = coordinate(b, 12, [](const Element& g) { return double(g[0]); });
  std::vector<BallFunction> sample{x, x};
  sample[1] *= -2.0;
  auto f = ellipsoid_frame(sample, make_subspace({x}, 8), 8);
  for (Int g = -3; g <= 3; ++g) {
    auto U = translation_matrix({g}, f, 8);
    EXPECT_NEAR(U.t(0, 0), 1.0, 1e-8);
    EXPECT_LE(U.residuals[0], 1e-8);
  }
  EXPECT_THROW(translation_matrix({5}, f, 8), SupportEscape);
}

TEST(TranslationMatrix, HeisenbergCentralAndNonCentral) {
  auto f = heisenberg_frame(10, 8, {hx, hz, hy});
  expect_orthonormal(f);
  auto Uid = translation_matrix(heis(0, 0), f, 6);
  EXPECT_LE((Uid.t - Eigen::MatrixXd::Identity(3, 3)).cwiseAbs().maxCoeff(), 1e-8);
  for (double r : Uid.residuals) EXPECT_LE(r, 1e-8);
  // y∘g^{-1} = y − g_12·z + const, so only the x-generator moves the frame.
  auto Uc = translation_matrix(heis(0, 0, 1), f, 6);
  EXPECT_LE((Uc.t - Eigen::MatrixXd::Identity(3, 3)).cwiseAbs().maxCoeff(), 1e-8);
  auto Uz = translation_matrix(heis(0, 1), f, 6);
  EXPECT_LE((Uz.t - Eigen::MatrixXd::Identity(3, 3)).cwiseAbs().maxCoeff(), 1e-8);
  auto Ux = translation_matrix(heis(1, 0), f, 6);
  EXPECT_GT((Ux.t - Eigen::MatrixXd::Identity(3, 3)).cwiseAbs().maxCoeff(), 1e-3);
  for (double r : Ux.residuals) EXPECT_LE(r, 1e-8);
  // Unipotent: (U_x − I)² = 0 since the y column only picks up z.
  const Eigen::MatrixXd N = Ux.t - Eigen::MatrixXd::Identity(3, 3);
  EXPECT_LE((N * N).cwiseAbs().maxCoeff(), 1e-8);
}

TEST(Multiplicativity, IdentityAndAbelian) {
  auto b = make_ball(groups::free_abelian(2), 14);
  std::vector<Coordinate> coords{[](const Element& g) { return double(g[0]); },
                                 [](const Element& g) { return double(g[1]); },
                                 [](const Element& g) { return double(g[0] * g[1]); },
                                 [](const Element& g) { return double(g[0] * g[0] - g[1] * g[1]); }};
  std::vector<BallFunction> basis;
  for (const auto& c : coords) basis.push_back(coordinate(b, 14, c));
  auto f = ellipsoid_frame(affine_sample(b, 14, coords, 320, 5), make_subspace(basis, 6), 6);
  const Element id{0, 0};
  std::vector<Element> gs{{1, 0}, {0, -1}, {2, 1}, {-1, 3}};
  for (const auto& g : gs) {
    EXPECT_LE(multiplicativity_defect(g, id, f, 6), 1e-8);
    EXPECT_LE(multiplicativity_defect(id, g, f, 6), 1e-8);
    for (const auto& h : gs) {
      const double dg = multiplicativity_defect(g, h, f, 6), dh = multiplicativity_defect(h, g, f, 6);
      EXPECT_LE(dg, 1e-6);
      auto Ug = translation_matrix(g, f, 6).t, Uh = translation_matrix(h, f, 6).t;
      // Entry-wise commutator against the λ-weighted defects.
      const Eigen::MatrixXd C = Ug * Uh - Uh * Ug;
      for (Eigen::Index k = 0; k < C.rows(); ++k)
        EXPECT_LE(C.row(k).cwiseAbs().maxCoeff() * f.radii[std::size_t(k)], 2 * (dg + dh) + 1e-9);
    }
  }
  // The quadratic harmonics make some U_g non-trivial.
  EXPECT_GT((translation_matrix({2, 1}, f, 6).t - Eigen::MatrixXd::Identity(4, 4)).cwiseAbs().maxCoeff(), 1e-3);
}

TEST(Multiplicativity, HeisenbergGenerators) {
  auto f = heisenberg_frame(10, 8, {hx, hz, hy});
  const auto& G = f.ball().group();
  const double minlam = *std::min_element(f.radii.begin(), f.radii.end());
  for (const auto& g : G.generators())
    for (const auto& h : G.generators()) {
      const double d = multiplicativity_defect(g, h, f, 7);
      EXPECT_LE(d, kMultiplicativityTolerance * minlam);
      EXPECT_LE(d, 1e-8);
    }
}

TEST(CommutatorDefect, Examples) {
  auto f = heisenberg_frame(10, 8, {hx, hz, hy});
  auto same = commutator_defect_ratio(heis(1, 0), heis(1, 0), heis(0, 0), f, 5);
  EXPECT_LE(same.defect_out, 1e-8);
  EXPECT_EQ(same.quadratic_ratio, 0.0);

  auto b = make_ball(groups::free_abelian(2), 8);
  auto zx = coordinate(b, 8, [](const Element& g) { return double(g[0]); });
  auto zy = coordinate(b, 8, [](const Element& g) { return double(g[1]); });
  auto fz = ellipsoid_frame(affine_sample(b, 8, {[](const Element& g) { return double(g[0]); },
                                                 [](const Element& g) { return double(g[1]); }},
                                          80, 3),
                            make_subspace({zx, zy}, 5), 5);
  EXPECT_LE(commutator_defect_ratio({1, 0}, {0, 1}, {0, 0}, fz, 5).defect_out, 1e-8);
}

TEST(CommutatorDefect, HeisenbergAcrossScales) {
  std::vector<double> ratios;
  for (int R1 : {6, 8, 10}) {
    auto f = heisenberg_frame(R1 + 2, R1, {hx, hz, hy});
    auto c = commutator_defect_ratio(heis(1, 0), heis(0, 1), heis(0, 1), f, R1 - 4);
    EXPECT_GT(c.defect_in, 1e-3);
    EXPECT_LE(c.defect_out, 1e-3 * c.defect_in);
    ratios.push_back(c.quadratic_ratio);
  }
  for (double r : ratios) EXPECT_LE(r, 100 * ratios[0] + kNoiseFloor);
}

TEST(BoxPrinciple, IntegersTrivialFrame) {
  auto b = make_ball(groups::free_abelian(1), 12);
  auto x = coordinate(b, 12, [](const Element& g) { return double(g[0]); });
  auto f = ellipsoid_frame({x}, make_subspace({x}, 6), 6);
  auto box = box_principle_subgroup(groups::free_abelian(1), f, 0.1, 6, 4);
  EXPECT_EQ(box.r, 0);
  EXPECT_EQ(box.index_bound, 1u);
  const std::vector<Element> expected{{1}, {-1}};
  std::vector<Element> got = box.S_prime;
  std::sort(got.begin(), got.end());
  std::vector<Element> want = expected;
  std::sort(want.begin(), want.end());
  EXPECT_EQ(got, want);
}

TEST(BoxPrinciple, CyclicRotationFrame) {
  const Int N = 12;
  auto G = groups::cyclic(N);
  auto b = make_ball(G, 6);
  auto c = coordinate(b, 6, [&](const Element& g) { return std::cos(2 * std::numbers::pi * double(g[0]) / N); });
  auto s = coordinate(b, 6, [&](const Element& g) { return std::sin(2 * std::numbers::pi * double(g[0]) / N); });
  std::vector<BallFunction> sample;
  for (int k = 0; k < 40; ++k) sample.push_back(combo({c, s}, {std::cos(0.3 * k), std::sin(0.3 * k)}));
  auto f = ellipsoid_frame(sample, make_subspace({c, s}, 6), 6);
  const double mesh = 0.25;
  auto box = box_principle_subgroup(G, f, mesh, 6, 7);
  // U_g is a rotation, so every entry lies in [−1, 1].
  const std::size_t cells = static_cast<std::size_t>(std::pow(2.0 / mesh + 1, 4));
  EXPECT_LE(box.index_bound, std::min<std::size_t>(cells, N));
  EXPECT_GE(box.index_bound, 1u);
  for (const auto& e : box.S_prime) EXPECT_NE(e, G.identity());
  EXPECT_EQ(box.residuals.size(), box.S_prime.size());
}

TEST(BoxPrinciple, HeisenbergDeskRun) {
  auto f = heisenberg_frame(10, 8, {hx, hz});
  const double mesh = 0.05;
  auto box = box_principle_subgroup(groups::heisenberg(), f, mesh, 6, 3);
  EXPECT_EQ(box.index_bound, 1u);
  EXPECT_EQ(box.S_prime.size(), 4u);
  for (double r : box.residuals) EXPECT_LE(r, kBoxResidualFactor * mesh);
}

TEST(BoxPrinciple, UnboundedMatricesExhaustBudget) {
  // The central coordinate is not Lipschitz: its U_g grow with g, so cells never saturate.
  auto f = heisenberg_frame(12, 8, {hx, hz, hy});
  EXPECT_THROW(box_principle_subgroup(groups::heisenberg(), f, 1e-3, 3, 3), BudgetExhausted);
}

TEST(TrivialDirections, Examples) {
  auto zb = make_ball(groups::free_abelian(1), 6);
  auto lin = coordinate(zb, 6, [](const Element& g) { return 3.0 * double(g[0]) + 1; });
  EXPECT_EQ(trivial_directions_check(lin, {{0}}, 6), 0.0);
  EXPECT_EQ(trivial_directions_check(lin, {{1}}, 5), 3.0);

  auto hb = make_ball(groups::heisenberg(), 8);
  auto u = dirichlet_solve(hb, hx);
  const double lip = lipschitz_norm(u);
  const int window = 4;
  const std::vector<Element> central{heis(0, 0, 1), heis(0, 0, -1)};
  EXPECT_LE(trivial_directions_check(u, central, window), kTrivialDirectionTolerance * lip * window);
  // Negative control: the word norm is Lipschitz but not harmonic.
  auto norm = BallFunction::zeros(hb, 8);
  for (std::size_t i = 0; i < norm.size(); ++i) norm[i] = hb->norm(i);
  EXPECT_GT(trivial_directions_check(norm, central, window), kTrivialDirectionTolerance * lipschitz_norm(norm) * window);
  EXPECT_THROW(trivial_directions_check(u, central, 8), SupportEscape);
}

TEST(RangeLowerBound, Examples) {
  auto zb = make_ball(groups::free_abelian(1), 6);
  EXPECT_EQ(range_lower_bound_measure(coordinate(zb, 6, [](const Element&) { return 2.0; }), 6).sup_deviation, 0.0);
  EXPECT_EQ(range_lower_bound_measure(coordinate(zb, 6, [](const Element& g) { return double(g[0]); }), 6).ratio, 1.0);
  // Sine oracle: sup over B(R) of (N/2π) sin(2πx/N) against R = N/8.
  const Int N = 256;
  auto cb = make_ball(groups::cyclic(N), 128);
  auto sine = coordinate(cb, 128, [&](const Element& g) {
    return double(N) / (2 * std::numbers::pi) * std::sin(2 * std::numbers::pi * double(g[0]) / double(N));
  });
  EXPECT_NEAR(range_lower_bound_measure(sine, 32).ratio, 8 / (2 * std::numbers::pi) * std::sin(std::numbers::pi / 4),
              1e-12);
}

TEST(RangeLowerBound, AlmostHarmonicOnCyclic) {
  AlmostHarmonicOptions opt;
  opt.window = 512;
  auto res = build_almost_harmonic(groups::cyclic(4096), 512, opt);
  ASSERT_TRUE(res.u);
  EXPECT_GE(range_lower_bound_measure(*res.u, 512).ratio, 0.01);
}

TEST(MatrixReport, Layout) {
  auto b = make_ball(groups::free_abelian(1), 4);
  auto x = coordinate(b, 4, [](const Element& g) { return double(g[0]); });
  auto f = ellipsoid_frame({x}, make_subspace({x}, 2), 2);
  auto csv = matrix_report_csv(f, {{"defect", "s1", 0.5}});
  EXPECT_EQ(csv.substr(0, 17), "kind,label,value\n");
  EXPECT_NE(csv.find("radius,1,"), std::string::npos);
  EXPECT_NE(csv.find("alpha,,1\n"), std::string::npos);
  EXPECT_NE(csv.find("defect,s1,0.5\n"), std::string::npos);
}
