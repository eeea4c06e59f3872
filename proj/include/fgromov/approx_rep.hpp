#pragma once

// Approximate representation of G on a finite-dimensional space of
// almost-harmonic functions: ellipsoid frame, translation matrices U_g,
// multiplicativity and commutator-collapse measurements, box principle.

#include <map>
#include <numeric>
#include <set>

#include "fgromov/kleiner.hpp"
#include "fgromov/subgroup.hpp"

namespace fgromov {

// Desk-scale stand-ins for the R_0-power tolerances.
inline constexpr double kTrivialDirectionTolerance = 0.05;  // × lip × window
inline constexpr double kMultiplicativityTolerance = 0.1;   // × min λ
inline constexpr double kBoxResidualFactor = 10.0;          // × mesh
/// Defects below this are treated as rounding noise.
inline constexpr double kNoiseFloor = 1e-8;

struct EllipsoidFrame {
  int R1 = 0;
  std::vector<BallFunction> directions;  // e_i, Q_{R1}-orthonormal
  std::vector<double> radii;             // λ_i, descending
  double alpha = 1;                      // E ⊆ conv(±sample) ⊆ α·E, measured
  bool alpha_exact = true;               // false: α is an upper bound (large samples)
  double max_coefficient = 0;            // max |t_i| over sample points in the λ_i e_i basis
  std::size_t iterations = 0;            // Khachiyan steps

  std::size_t dim() const { return directions.size(); }
  const Ball& ball() const { return directions.at(0).ball(); }
};

struct TranslationMatrix {
  Element g;
  Eigen::MatrixXd t;               // column i: coefficients of λ_i ρ(g) e_i on λ_j e_j
  std::vector<double> residuals;   // per column, ℓ² over the window after the best constant
};

namespace detail {

/// Coordinates of u's Q_R-projection onto span(basis) in the orthonormal
/// frame o = basis · L^{-T}, where L L^T is the Gram matrix.
inline Eigen::VectorXd orthonormal_coordinates(const BallFunction& u, const std::vector<BallFunction>& basis,
                                               const Eigen::LLT<Eigen::MatrixXd>& llt, int R) {
  Eigen::VectorXd b(static_cast<Eigen::Index>(basis.size()));
  for (std::size_t j = 0; j < basis.size(); ++j) b(static_cast<Eigen::Index>(j)) = gram_form(basis[j], u, R);
  return llt.matrixL().solve(b);
}

inline double count_subsets(Eigen::Index m, Eigen::Index D) {
  double c = 1;
  for (Eigen::Index i = 0; i < D; ++i) c = c * static_cast<double>(m - i) / static_cast<double>(i + 1);
  return c;
}

/// Inradius of conv(columns of Y) (a symmetric set inside the unit ball),
/// by enumerating hyperplanes through D of the points and keeping the
/// supporting ones.  Exact when the subset count fits `budget`; otherwise
/// only the farthest points and their negatives are used, whose hull is
/// contained in the full one, so the result is a lower bound.
inline double symmetric_hull_inradius(const Eigen::MatrixXd& Y, double budget = 1e7, bool* exact = nullptr) {
  const auto D = Y.rows();
  Eigen::Index m = Y.cols();
  if (exact) *exact = count_subsets(m, D) <= budget;
  Eigen::MatrixXd Z = Y;
  if (count_subsets(m, D) > budget) {
    // Keep the farthest points together with their negatives.
    std::vector<Eigen::Index> order(static_cast<std::size_t>(m));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](Eigen::Index a, Eigen::Index b) { return Y.col(a).norm() > Y.col(b).norm(); });
    Eigen::Index k = m / 2;
    while (k > D && count_subsets(2 * k, D) > budget) --k;
    Z.resize(D, 2 * k);
    for (Eigen::Index t = 0; t < k; ++t) {
      Z.col(t) = Y.col(order[static_cast<std::size_t>(t)]);
      Z.col(k + t) = -Z.col(t);
    }
    m = 2 * k;
  }

  double best = std::numeric_limits<double>::infinity();
  std::vector<Eigen::Index> pick(static_cast<std::size_t>(D));
  std::iota(pick.begin(), pick.end(), 0);
  Eigen::MatrixXd A(D, D);
  const Eigen::VectorXd ones = Eigen::VectorXd::Ones(D);
  while (true) {
    for (Eigen::Index i = 0; i < D; ++i) A.row(i) = Z.col(pick[static_cast<std::size_t>(i)]).transpose();
    Eigen::FullPivLU<Eigen::MatrixXd> lu(A);
    if (lu.isInvertible()) {
      const Eigen::VectorXd n = lu.solve(ones);
      const double dist = 1.0 / n.norm();
      if (dist < best) {
        bool supporting = true;
        for (Eigen::Index k = 0; k < m && supporting; ++k) supporting = std::abs(n.dot(Z.col(k))) <= 1.0 + 1e-9;
        if (supporting) best = dist;
      }
    }
    // Next D-subset in lexicographic order.
    Eigen::Index i = D - 1;
    while (i >= 0 && pick[static_cast<std::size_t>(i)] == m - D + i) --i;
    if (i < 0) break;
    ++pick[static_cast<std::size_t>(i)];
    for (Eigen::Index j = i + 1; j < D; ++j) pick[static_cast<std::size_t>(j)] = pick[static_cast<std::size_t>(j - 1)] + 1;
  }
  if (!std::isfinite(best)) throw NumericalFailure("sample hull has no facet; it does not span");
  return best;
}

}  // namespace detail

/// Approximate John frame of the symmetrized sample inside V, in Q_{R1}
/// geometry.  Khachiyan's reweighting gives an enclosing ellipsoid within
/// factor 1+1e-3 of minimal volume; the inner ellipsoid is that one shrunk by
/// the measured α = 1/inradius, so λ_i e_i lie in conv(±sample).
inline EllipsoidFrame ellipsoid_frame(const std::vector<BallFunction>& omega_sample, const GramSubspace& V, int R1,
                                      double tolerance = 1e-3, std::size_t max_iterations = 200'000) {
  const auto D = static_cast<Eigen::Index>(V.dim());
  if (D == 0) throw std::invalid_argument("empty subspace");
  if (omega_sample.empty()) throw NumericalFailure("empty sample");
  Eigen::LLT<Eigen::MatrixXd> llt(gram_matrix(V.basis, R1));
  if (llt.info() != Eigen::Success) throw NumericalFailure("subspace basis is degenerate at R1");

  const auto n = static_cast<Eigen::Index>(omega_sample.size());
  Eigen::MatrixXd P(D, 2 * n);
  for (Eigen::Index k = 0; k < n; ++k) {
    P.col(k) = detail::orthonormal_coordinates(omega_sample[static_cast<std::size_t>(k)], V.basis, llt, R1);
    P.col(n + k) = -P.col(k);
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(P);
  if (svd.singularValues()(D - 1) < 1e-8) throw NumericalFailure("sample does not span V");

  // Centered Khachiyan iteration.
  const auto m = P.cols();
  const double d = static_cast<double>(D);
  Eigen::VectorXd w = Eigen::VectorXd::Constant(m, 1.0 / static_cast<double>(m));
  Eigen::MatrixXd M(D, D);
  Eigen::VectorXd lev(m);
  EllipsoidFrame out;
  out.R1 = R1;
  for (;;) {
    M.noalias() = P * w.asDiagonal() * P.transpose();
    Eigen::LDLT<Eigen::MatrixXd> ldlt(M);
    lev = (P.array() * ldlt.solve(P).array()).colwise().sum().transpose();
    Eigen::Index j = 0;
    const double top = lev.maxCoeff(&j);
    if (top <= d * (1.0 + tolerance)) break;
    if (++out.iterations > max_iterations) throw NumericalFailure("ellipsoid iteration did not converge");
    const double step = (top - d) / (d * (top - 1.0));
    w *= 1.0 - step;
    w(j) += step;
  }
  // Enclosing ellipsoid {x : x^T (top·M)^{-1} x ≤ 1}.
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(lev.maxCoeff() * M);
  Eigen::VectorXd semi = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  const Eigen::MatrixXd Y = semi.cwiseInverse().asDiagonal() * eig.eigenvectors().transpose() * P;
  // {x : x^T M^{-1} x ≤ 1} always lies in the hull (its support function is
  // (w^T M w)^{1/2} ≤ max_k |y_k·w|), so 1/√top bounds the inradius below.
  const double inradius = std::max(detail::symmetric_hull_inradius(Y, 1e7, &out.alpha_exact),
                                   1.0 / std::sqrt(lev.maxCoeff()));
  out.alpha = 1.0 / inradius;

  // Eigen sorts ascending; the frame is descending.
  const Eigen::MatrixXd Linv_T = llt.matrixU().solve(Eigen::MatrixXd::Identity(D, D));
  for (Eigen::Index t = D - 1; t >= 0; --t) {
    const Eigen::VectorXd coef = Linv_T * eig.eigenvectors().col(t);
    auto e = BallFunction::zeros(V.basis[0].ball_ptr(), V.basis[0].radius());
    for (Eigen::Index j = 0; j < D; ++j)
      for (std::size_t x = 0; x < e.size(); ++x) e[x] += coef(j) * V.basis[static_cast<std::size_t>(j)][x];
    out.directions.push_back(std::move(e));
    out.radii.push_back(semi(t) * inradius);
  }
  for (Eigen::Index k = 0; k < n; ++k)
    for (Eigen::Index t = 0; t < D; ++t) {
      const double coord = eig.eigenvectors().col(t).dot(P.col(k));
      out.max_coefficient = std::max(out.max_coefficient, std::abs(coord) / (semi(t) * inradius));
    }
  return out;
}

/// Lipschitz-normalized random affine combinations of exactly harmonic
/// coordinate functions.  These coincide with the Dirichlet solutions for the
/// same boundary data, without the solve.
inline std::vector<BallFunction> affine_sample(const BallPtr& ball, int radius,
                                               const std::vector<std::function<double(const Element&)>>& coordinates,
                                               std::size_t count, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> N(0.0, 1.0);
  std::vector<BallFunction> out;
  for (std::size_t c = 0; c < count; ++c) {
    std::vector<double> coef(coordinates.size());
    for (auto& a : coef) a = N(rng);
    const double shift = N(rng);
    auto u = BallFunction::from(ball, radius, [&](const Element& g) {
      double v = shift;
      for (std::size_t t = 0; t < coef.size(); ++t) v += coef[t] * coordinates[t](g);
      return v;
    });
    const double lip = lipschitz_norm(u);
    if (lip > 0) u *= 1.0 / lip;
    out.push_back(std::move(u));
  }
  return out;
}

/// U_g by least squares of λ_i e_i(g^{-1}x) against {λ_j e_j(x)} and a
/// constant, over x ∈ B_S(window).
inline TranslationMatrix translation_matrix(const Element& g, const EllipsoidFrame& frame, int window) {
  const Ball& b = frame.ball();
  const auto& G = b.group();
  const auto D = static_cast<Eigen::Index>(frame.dim());
  const std::size_t n = b.prefix(window);
  const Element ginv = G.inverse(g);
  Eigen::MatrixXd X(static_cast<Eigen::Index>(n), D + 1);
  Eigen::MatrixXd Y(static_cast<Eigen::Index>(n), D);
  for (std::size_t x = 0; x < n; ++x) {
    const auto xi = static_cast<Eigen::Index>(x);
    const Element y = G.multiply(ginv, b.element(x));
    for (Eigen::Index j = 0; j < D; ++j) {
      const auto& e = frame.directions[static_cast<std::size_t>(j)];
      if (window > e.radius()) throw SupportEscape("translation window exceeds the frame's domain");
      const double lam = frame.radii[static_cast<std::size_t>(j)];
      X(xi, j) = lam * e[x];
      auto iy = e.index_of(y);
      if (!iy) throw SupportEscape("g^{-1}·B_S(window) escapes the frame's ball");
      Y(xi, j) = lam * e[*iy];
    }
    X(xi, D) = 1.0;
  }
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(X);
  if (qr.rank() < D + 1) throw NumericalFailure("frame directions are dependent on the window");
  const Eigen::MatrixXd C = qr.solve(Y);
  TranslationMatrix out{g, C.topRows(D), {}};
  const Eigen::MatrixXd R = X * C - Y;
  for (Eigen::Index i = 0; i < D; ++i) out.residuals.push_back(R.col(i).norm());
  return out;
}

/// max_{k,i} |(A − I)_{k,i}| / min(1, λ_i/λ_k): the two-sided λ-weighted
/// distance to the identity.
inline double lambda_deviation(const Eigen::MatrixXd& A, const std::vector<double>& radii) {
  double worst = 0;
  for (Eigen::Index k = 0; k < A.rows(); ++k)
    for (Eigen::Index i = 0; i < A.cols(); ++i) {
      const double wgt = std::min(1.0, radii[static_cast<std::size_t>(i)] / radii[static_cast<std::size_t>(k)]);
      worst = std::max(worst, std::abs(A(k, i) - (k == i ? 1.0 : 0.0)) / wgt);
    }
  return worst;
}

/// max_{k,i} |(U_{gh} − U_g U_h)_{k,i}| · λ_k.
inline double multiplicativity_defect(const Element& g, const Element& h, const EllipsoidFrame& frame, int window) {
  const auto& G = frame.ball().group();
  const auto Ug = translation_matrix(g, frame, window).t;
  const auto Uh = translation_matrix(h, frame, window).t;
  const auto Ugh = translation_matrix(G.multiply(g, h), frame, window).t;
  const Eigen::MatrixXd diff = Ugh - Ug * Uh;
  double worst = 0;
  for (Eigen::Index k = 0; k < diff.rows(); ++k)
    worst = std::max(worst, diff.row(k).cwiseAbs().maxCoeff() * frame.radii[static_cast<std::size_t>(k)]);
  return worst;
}

struct CommutatorDefect {
  double defect_in = 0;   // max λ-deviation of U_e, U_{e'}
  double defect_out = 0;  // λ-deviation of U_{g[e,e']g^{-1}}
  double quadratic_ratio = 0;  // defect_out / defect_in², 0 when defect_out is noise
};

inline CommutatorDefect commutator_defect_ratio(const Element& e, const Element& e_prime, const Element& g,
                                                const EllipsoidFrame& frame, int window) {
  const auto& G = frame.ball().group();
  CommutatorDefect out;
  out.defect_in = std::max(lambda_deviation(translation_matrix(e, frame, window).t, frame.radii),
                           lambda_deviation(translation_matrix(e_prime, frame, window).t, frame.radii));
  const Element c = G.multiply(G.multiply(g, G.commutator(e, e_prime)), G.inverse(g));
  out.defect_out = lambda_deviation(translation_matrix(c, frame, window).t, frame.radii);
  if (out.defect_out <= kNoiseFloor)
    out.quadratic_ratio = 0;
  else if (out.defect_in <= kNoiseFloor)
    out.quadratic_ratio = std::numeric_limits<double>::infinity();
  else
    out.quadratic_ratio = out.defect_out / (out.defect_in * out.defect_in);
  return out;
}

struct BoxPrinciple {
  std::vector<Element> S_prime;
  std::size_t index_bound = 0;            // occupied cells |A_r|
  int r = 0;
  std::vector<Element> representatives;   // g_m, one per occupied cell
  std::vector<double> residuals;          // λ-deviation of U_e for e ∈ S'
};

/// Pigeonholes the cells of {U_g : g ∈ B_S(r)} (side mesh · min(1, λ_i/λ_k)
/// per entry, centred on the lattice so I sits mid-cell) over r = 0, 1, ... up to r_max, then emits S' = {g g_m^{-1},
/// g_m g^{-1}} without the identity.  U is evaluated over B_S(window), so
/// B_S(2 r_max + 1 + window) must lie in the frame's ball.
inline BoxPrinciple box_principle_subgroup(const MarkedGroup& G, const EllipsoidFrame& frame, double mesh,
                                           int window, int r_max) {
  if (!(mesh > 0)) throw std::invalid_argument("mesh must be positive");
  const Ball& b = frame.ball();
  if (r_max + 1 > b.radius() && !b.complete()) throw SupportEscape("r_max exceeds the frame's ball");
  const auto D = static_cast<Eigen::Index>(frame.dim());
  auto cell_of = [&](const Eigen::MatrixXd& U) {
    std::vector<std::int64_t> key;
    key.reserve(static_cast<std::size_t>(D * D));
    for (Eigen::Index k = 0; k < D; ++k)
      for (Eigen::Index i = 0; i < D; ++i) {
        const double wgt = std::min(1.0, frame.radii[static_cast<std::size_t>(i)] / frame.radii[static_cast<std::size_t>(k)]);
        key.push_back(std::llround(U(k, i) / (mesh * wgt)));
      }
    return key;
  };
  std::map<std::vector<std::int64_t>, std::size_t> rep;  // cell -> ball index of g_m
  std::vector<std::vector<std::int64_t>> cells;          // per ball index
  std::vector<std::size_t> sizes;
  int r = -1;
  for (int radius = 0; radius <= r_max + 1; ++radius) {
    bool grew = false;
    for (std::size_t x = b.prefix(radius - 1); x < b.prefix(radius); ++x) {
      cells.push_back(cell_of(translation_matrix(b.element(x), frame, window).t));
      if (rep.emplace(cells.back(), x).second) grew = true;
    }
    if (radius > 0 && !grew) {
      r = radius - 1;
      break;
    }
    sizes.push_back(rep.size());
  }
  if (r < 0) throw BudgetExhausted("box principle did not saturate within r_max", sizes);

  BoxPrinciple out;
  out.r = r;
  out.index_bound = sizes[static_cast<std::size_t>(r)];
  for (const auto& [cell, idx] : rep) out.representatives.push_back(b.element(idx));
  detail::canonical_sort(out.representatives, &b);
  ElementSet seen;
  const Element id = G.identity();
  for (std::size_t x = 0; x < b.prefix(r + 1); ++x) {
    const Element& g = b.element(x);
    const Element& gm = b.element(rep.at(cells[x]));
    for (Element e : {G.multiply(g, G.inverse(gm)), G.multiply(gm, G.inverse(g))})
      if (e != id && seen.insert(e).second) out.S_prime.push_back(std::move(e));
  }
  detail::canonical_sort(out.S_prime, &b);
  for (const auto& e : out.S_prime) out.residuals.push_back(lambda_deviation(translation_matrix(e, frame, window).t, frame.radii));
  return out;
}

/// max over e ∈ S_derived and x ∈ B_S(window) of |u(ex) − u(x)|.
inline double trivial_directions_check(const BallFunction& u, const std::vector<Element>& S_derived, int window) {
  const Ball& b = u.ball();
  const auto& G = b.group();
  double worst = 0;
  for (const auto& e : S_derived)
    for (std::size_t x = 0; x < b.prefix(window); ++x)
      worst = std::max(worst, std::abs(u.at(G.multiply(e, b.element(x))) - u[x]));
  return worst;
}

struct RangeMeasure {
  double sup_deviation = 0;  // sup_{B_S(R)} |u(x) − u(id)|
  double ratio = 0;          // sup_deviation / R
};

inline RangeMeasure range_lower_bound_measure(const BallFunction& u, int R) {
  if (R < 1) throw std::invalid_argument("R must be positive");
  if (R > u.radius()) throw SupportEscape("R exceeds the function's domain");
  RangeMeasure out;
  for (std::size_t x = 0; x < u.ball().prefix(R); ++x) out.sup_deviation = std::max(out.sup_deviation, std::abs(u[x] - u[0]));
  out.ratio = out.sup_deviation / R;
  return out;
}

struct ReportRow {
  std::string kind;
  std::string label;
  double value = 0;
};

/// kind,label,value CSV: frame radii and α first, then the caller's rows.
inline std::string matrix_report_csv(const EllipsoidFrame& frame, const std::vector<ReportRow>& rows) {
  std::ostringstream os;
  os.precision(17);
  os << "kind,label,value\n";
  for (std::size_t i = 0; i < frame.radii.size(); ++i) os << "radius," << i + 1 << ',' << frame.radii[i] << '\n';
  os << "alpha,," << frame.alpha << '\n';
  for (const auto& row : rows) os << row.kind << ',' << row.label << ',' << row.value << '\n';
  return os.str();
}

}  // namespace fgromov
