#pragma once

// Q_R Gram calculus: volumes, monotonicity and volume-decrease measurements,
// greedy approximation of function families, good-scale search.

#include <random>

#include "fgromov/harmonic.hpp"

namespace fgromov {

/// Q_R(u, v) = Σ_{x∈B_S(R)} (u(x) − u(id))(v(x) − v(id)).
inline double gram_form(const BallFunction& u, const BallFunction& v, int R) {
  detail::require_same_ball(u.ball(), v.ball());
  if (R > u.radius() || R > v.radius()) throw SupportEscape("Q_R needs both functions on B_S(R)");
  const std::size_t n = u.ball().prefix(R);
  double s = 0;
  for (std::size_t i = 0; i < n; ++i) s += (u[i] - u[0]) * (v[i] - v[0]);
  return s;
}

inline Eigen::MatrixXd gram_matrix(const std::vector<BallFunction>& us, int R) {
  const auto k = static_cast<Eigen::Index>(us.size());
  Eigen::MatrixXd G(k, k);
  if (k == 0) return G;
  const std::size_t n = us[0].ball().prefix(R);
  // Pinned value vectors, then one symmetric product.
  Eigen::MatrixXd P(static_cast<Eigen::Index>(n), k);
  for (Eigen::Index j = 0; j < k; ++j) {
    const auto& u = us[static_cast<std::size_t>(j)];
    detail::require_same_ball(us[0].ball(), u.ball());
    if (R > u.radius()) throw SupportEscape("Q_R needs all functions on B_S(R)");
    for (std::size_t i = 0; i < n; ++i) P(static_cast<Eigen::Index>(i), j) = u[i] - u[0];
  }
  G.noalias() = P.transpose() * P;
  return G;
}

/// det of a PSD Gram matrix from its eigenvalues.  Eigenvalues in
/// [−1e−9·max(1, λ_max), 0) are clamped to zero; anything more negative is
/// a numerical failure.
inline double gram_determinant(const Eigen::MatrixXd& G) {
  if (G.rows() == 0) return 1.0;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(G, Eigen::EigenvaluesOnly);
  if (eig.info() != Eigen::Success) throw NumericalFailure("Gram eigendecomposition failed");
  const auto& ev = eig.eigenvalues();
  const double tol = 1e-9 * std::max(1.0, ev.maxCoeff());
  double det = 1.0;
  for (Eigen::Index i = 0; i < ev.size(); ++i) {
    if (ev(i) < -tol) throw NumericalFailure("Gram matrix has a negative eigenvalue");
    det *= std::max(ev(i), 0.0);
  }
  return det;
}

/// Vol_R(u_1..u_k) = det(Q_R(u_i, u_j))^{1/2}; Vol of the empty list is 1.
inline double volume(const std::vector<BallFunction>& us, int R) {
  return std::sqrt(gram_determinant(gram_matrix(us, R)));
}

/// Vol_R ≤ Vol_{4R} up to rounding, measured against the Hadamard bound
/// Π Q_{4R}(u_i, u_i)^{1/2} so nearly dependent families are not flagged.
inline bool volume_monotonicity_check(const std::vector<BallFunction>& us, int R) {
  const Eigen::MatrixXd G4 = gram_matrix(us, 4 * R);
  double hadamard = 1.0;
  for (Eigen::Index i = 0; i < G4.rows(); ++i) hadamard *= std::sqrt(G4(i, i));
  return volume(us, R) <= std::sqrt(gram_determinant(G4)) + 1e-6 * hadamard + 1e-12;
}

struct VolumeDecreaseReport {
  std::size_t k = 0;
  double vol_R = 0;
  double vol_4R = 0;
  double ratio = 0;          // Vol_R / Vol_4R, NaN when degenerate
  bool degenerate = false;   // Vol_4R vanishes
  double reference_factor = 0;  // δ^{k/2} (|B(7δR)|/|B(δR)|)^{k/2}
  double k_required = 0;        // 2(|B(2R)|/|B(δR)| + 1)
  bool hypothesis_holds = false;
};

/// Pure measurement of Vol_R/Vol_{4R} next to the proposition's reference
/// factor; δR is rounded down (at least 1).
inline VolumeDecreaseReport volume_decrease_measure(const std::vector<BallFunction>& us, int R, double delta) {
  if (us.empty()) throw std::invalid_argument("empty function list");
  if (!(delta > 0 && delta < 1)) throw std::invalid_argument("delta must lie in (0, 1)");
  const Ball& b = us[0].ball();
  const int dR = std::max(1, static_cast<int>(std::floor(delta * R)));
  if (!b.complete() && b.radius() < std::max(4 * R, 7 * dR)) throw SupportEscape("ball too small for 4R and 7δR");
  VolumeDecreaseReport rep;
  rep.k = us.size();
  rep.vol_R = volume(us, R);
  rep.vol_4R = volume(us, 4 * R);
  rep.degenerate = rep.vol_4R <= 1e-12;
  rep.ratio = rep.degenerate ? std::numeric_limits<double>::quiet_NaN() : rep.vol_R / rep.vol_4R;
  const double k = static_cast<double>(rep.k);
  const double grow = static_cast<double>(b.prefix(7 * dR)) / static_cast<double>(b.prefix(dR));
  rep.reference_factor = std::pow(delta, k / 2) * std::pow(grow, k / 2);
  rep.k_required = 2.0 * (static_cast<double>(b.prefix(2 * R)) / static_cast<double>(b.prefix(dR)) + 1.0);
  rep.hypothesis_holds = k >= rep.k_required;
  return rep;
}

/// Basis functions with their Q_R Gram matrix.
struct GramSubspace {
  std::vector<BallFunction> basis;
  int R = 0;
  Eigen::MatrixXd gram;

  std::size_t dim() const { return basis.size(); }
  double volume() const { return std::sqrt(gram_determinant(gram)); }
};

inline GramSubspace make_subspace(std::vector<BallFunction> basis, int R) {
  GramSubspace V{std::move(basis), R, {}};
  V.gram = gram_matrix(V.basis, R);
  return V;
}

/// dist_{Q_R}(u, V) = Vol(basis, u) / Vol(basis) (base times height).
inline double subspace_distance(const BallFunction& u, const GramSubspace& V) {
  auto all = V.basis;
  all.push_back(u);
  const double base = V.volume();
  if (base <= 0) throw NumericalFailure("subspace basis is degenerate");
  return volume(all, V.R) / base;
}

struct GreedyStep {
  std::size_t candidate = 0;
  double volume = 0;      // Vol of the basis after this step
  double drop_ratio = 0;  // Vol(after)/Vol(before)
};

struct GreedyResult {
  GramSubspace basis;
  std::vector<std::size_t> chosen;
  std::vector<GreedyStep> steps;
  double stop_ratio = 0;  // best remaining Vol(basis ∪ {u}) / Vol(basis)
  std::size_t dim() const { return chosen.size(); }
};

/// Greedy volume maximization: repeatedly add the candidate maximizing
/// Vol(basis ∪ {u}) until the best such volume is ≤ drop_factor·Vol(basis).
/// Implemented as pivoted Cholesky on the candidate Gram matrix, since
/// Vol(basis ∪ {u}) = Vol(basis)·dist(u, span(basis)).
inline GreedyResult greedy_dimension(const std::vector<BallFunction>& candidates, int R, double drop_factor = 1e-3) {
  if (candidates.empty()) throw std::invalid_argument("no candidates");
  const Eigen::MatrixXd G = gram_matrix(candidates, R);
  const auto n = G.rows();
  Eigen::VectorXd resid = G.diagonal();
  Eigen::MatrixXd L = Eigen::MatrixXd::Zero(n, n);
  std::vector<bool> used(static_cast<std::size_t>(n), false);
  GreedyResult out;
  double vol = 1.0;
  for (Eigen::Index step = 0; step < n; ++step) {
    Eigen::Index best = -1;
    for (Eigen::Index i = 0; i < n; ++i)
      if (!used[static_cast<std::size_t>(i)] && (best < 0 || resid(i) > resid(best))) best = i;
    const double height = std::sqrt(std::max(resid(best), 0.0));
    out.stop_ratio = height;
    if (height <= drop_factor) break;
    used[static_cast<std::size_t>(best)] = true;
    for (Eigen::Index i = 0; i < n; ++i) {
      if (used[static_cast<std::size_t>(i)]) continue;
      double v = G(i, best);
      for (Eigen::Index t = 0; t < step; ++t) v -= L(i, t) * L(best, t);
      L(i, step) = v / height;
      resid(i) -= L(i, step) * L(i, step);
    }
    L(best, step) = height;
    vol *= height;
    out.chosen.push_back(static_cast<std::size_t>(best));
    out.steps.push_back({static_cast<std::size_t>(best), vol, height});
    out.stop_ratio = 0;
  }
  std::vector<BallFunction> basis;
  for (auto i : out.chosen) basis.push_back(candidates[i]);
  out.basis = make_subspace(std::move(basis), R);
  return out;
}

/// CSV of (k, Vol_k, drop ratio) per greedy step.
inline std::string greedy_csv(const GreedyResult& g) {
  std::ostringstream os;
  os.precision(17);
  os << "k,volume,drop_ratio\n";
  for (std::size_t i = 0; i < g.steps.size(); ++i)
    os << i + 1 << ',' << g.steps[i].volume << ',' << g.steps[i].drop_ratio << '\n';
  return os.str();
}

// ---------------------------------------------------------------------------
// Candidate families

enum class BoundaryModel {
  /// Random affine combinations of user-supplied coordinate functions.
  AffineCoordinates,
  /// Random convex combinations of word-distance functions to anchors in the
  /// ball (1-Lipschitz per generator), plus a random constant.
  RandomLipschitz,
};

/// Dirichlet-harmonic candidates on `ball`, each normalized to Lipschitz
/// seminorm 1 on the interior.  Deterministic in `seed`.
inline std::vector<BallFunction> harmonic_candidates(
    const BallPtr& ball, std::size_t count, std::uint64_t seed, BoundaryModel model,
    const std::vector<std::function<double(const Element&)>>& coordinates = {}, std::size_t anchors = 4) {
  DirichletSolver solver(ball);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> N(0.0, 1.0);
  const Ball& b = *ball;
  const auto& G = b.group();
  std::optional<Ball> metric;  // for distances between ball points
  if (model == BoundaryModel::RandomLipschitz) metric.emplace(enumerate_ball(G, 2 * b.radius()));
  if (model == BoundaryModel::AffineCoordinates && coordinates.empty())
    throw std::invalid_argument("affine boundary model needs coordinate functions");

  std::vector<BallFunction> out;
  out.reserve(count);
  std::vector<double> boundary(b.size());
  for (std::size_t c = 0; c < count; ++c) {
    std::fill(boundary.begin(), boundary.end(), 0.0);
    const double shift = N(rng);
    if (model == BoundaryModel::AffineCoordinates) {
      std::vector<double> coef(coordinates.size());
      for (auto& a : coef) a = N(rng);
      for (std::size_t i = b.prefix(b.radius() - 1); i < b.size(); ++i) {
        double v = shift;
        for (std::size_t t = 0; t < coef.size(); ++t) v += coef[t] * coordinates[t](b.element(i));
        boundary[i] = v;
      }
    } else {
      std::uniform_int_distribution<std::size_t> pick(0, b.size() - 1);
      std::vector<std::pair<Element, double>> terms;
      double total = 0;
      for (std::size_t a = 0; a < anchors; ++a) {
        double w = N(rng);
        total += std::abs(w);
        terms.emplace_back(G.inverse(b.element(pick(rng))), w);
      }
      for (std::size_t i = b.prefix(b.radius() - 1); i < b.size(); ++i) {
        double v = shift;
        for (const auto& [ainv, w] : terms) v += w / total * metric->norm(*metric->find(G.multiply(ainv, b.element(i))));
        boundary[i] = v;
      }
    }
    auto u = solver.solve(boundary);
    const double lip = lipschitz_norm(u);
    if (lip > 0) u *= 1.0 / lip;
    out.push_back(std::move(u));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Good scale

struct GoodScale {
  int R1 = 0;
  double ratio = 0;   // det Q_{R1} / det Q_{R1 − step}
  double target = 0;  // (1 + R_0^{−κ})^{2 dim}
  std::vector<double> profile;  // det Q_r for r = R_min − step .. R1
};

/// First r in [R_min, R_max] with det Q_r ≤ target · det Q_{r−step}, given
/// the profile of determinants indexed from R_min − step.
inline GoodScale good_scale_from_profile(const std::vector<double>& dets, int R_min, int step, double target) {
  GoodScale out;
  out.target = target;
  for (std::size_t t = static_cast<std::size_t>(step); t < dets.size(); ++t) {
    const int r = R_min + static_cast<int>(t) - step;
    const double lo = dets[t - static_cast<std::size_t>(step)];
    const double q = lo > 0 ? dets[t] / lo : (dets[t] > 0 ? std::numeric_limits<double>::infinity() : 1.0);
    if (q <= target) {
      out.R1 = r;
      out.ratio = q;
      out.profile.assign(dets.begin(), dets.begin() + static_cast<std::ptrdiff_t>(t) + 1);
      return out;
    }
  }
  throw ScaleSearchFailure("no admissible scale: every determinant ratio exceeds the target", dets);
}

inline GoodScale good_scale_search(const GramSubspace& V, int R_min, int R_max, double R0, double kappa,
                                   int step = 1) {
  if (step < 1 || R_min - step < 0 || R_max < R_min) throw std::invalid_argument("bad scale range");
  const double target = std::pow(1.0 + std::pow(R0, -kappa), 2.0 * static_cast<double>(V.dim()));
  std::vector<double> dets;
  for (int r = R_min - step; r <= R_max; ++r) dets.push_back(gram_determinant(gram_matrix(V.basis, r)));
  return good_scale_from_profile(dets, R_min, step, target);
}

/// log K for K = (C|S|)^{C d^3/κ^2}; C is user-supplied.
inline double kleiner_log_K(double C, std::size_t S, double d, double kappa) {
  if (C <= 0 || kappa <= 0) throw std::invalid_argument("C and kappa must be positive");
  return C * d * d * d / (kappa * kappa) * std::log(C * static_cast<double>(S));
}

}  // namespace fgromov
