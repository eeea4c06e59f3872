#pragma once

// Discrete calculus on Cayley balls and the construction of almost-harmonic
// Lipschitz functions.
//
// A BallFunction lives on the prefix B_S(r) of an enumerated ball.  Operators
// that look at neighbours x·s lose one unit of radius, except on a complete
// ball (the whole finite group).  Finitely supported functions are modelled
// by a domain large enough to hold the support plus the margin needed by the
// operators applied to them.

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/IterativeLinearSolvers>
#include <boost/multiprecision/cpp_int.hpp>
#include <cmath>
#include <functional>
#include <memory>
#include <sstream>

#include "fgromov/group.hpp"

namespace fgromov {

using BallPtr = std::shared_ptr<const Ball>;
using BigRational = boost::multiprecision::cpp_rational;

inline BallPtr make_ball(const MarkedGroup& G, int R, std::size_t cap = kDefaultElementCap) {
  return std::make_shared<const Ball>(enumerate_ball(G, R, cap));
}

class BallFunction {
 public:
  BallFunction(BallPtr ball, int radius, std::vector<double> values)
      : ball_(std::move(ball)), radius_(radius), values_(std::move(values)) {
    if (!ball_) throw std::invalid_argument("null ball");
    if (radius_ < 0) throw std::invalid_argument("negative radius");
    if (values_.size() != ball_->prefix(radius_))
      throw std::invalid_argument("value count does not match |B_S(r)|");
    for (double v : values_)
      if (!std::isfinite(v)) throw NumericalFailure("non-finite value in BallFunction");
  }

  static BallFunction zeros(BallPtr ball, int radius) {
    auto n = ball->prefix(radius);
    return BallFunction(std::move(ball), radius, std::vector<double>(n, 0.0));
  }
  static BallFunction from(BallPtr ball, int radius, const std::function<double(const Element&)>& f) {
    std::vector<double> v(ball->prefix(radius));
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = f(ball->element(i));
    return BallFunction(std::move(ball), radius, std::move(v));
  }

  const Ball& ball() const { return *ball_; }
  const BallPtr& ball_ptr() const { return ball_; }
  int radius() const { return radius_; }
  std::size_t size() const { return values_.size(); }
  double operator[](std::size_t i) const { return values_[i]; }
  double& operator[](std::size_t i) { return values_[i]; }
  const std::vector<double>& values() const { return values_; }
  std::vector<double>& values() { return values_; }

  /// Domain is all of G.
  bool whole_group() const { return ball_->complete() && values_.size() == ball_->size(); }
  /// Radius on which neighbour-based operators are defined.
  int inner_radius() const { return whole_group() ? radius_ : radius_ - 1; }

  std::optional<std::size_t> index_of(const Element& g) const {
    auto i = ball_->find(g);
    if (i && *i < values_.size()) return i;
    return std::nullopt;
  }
  double at(const Element& g) const {
    auto i = index_of(g);
    if (!i) throw SupportEscape("element " + format_element(g) + " outside the function's domain");
    return values_[*i];
  }
  /// Zero-extension outside the domain.
  double at_or_zero(const Element& g) const {
    auto i = index_of(g);
    return i ? values_[*i] : 0.0;
  }

  BallFunction restrict(int r) const {
    if (r > radius_) throw std::invalid_argument("cannot restrict to a larger radius");
    return BallFunction(ball_, r, std::vector<double>(values_.begin(), values_.begin() + ball_->prefix(r)));
  }
  BallFunction& operator*=(double c) {
    for (auto& v : values_) v *= c;
    return *this;
  }

 private:
  BallPtr ball_;
  int radius_;
  std::vector<double> values_;
};

/// F = (F_s)_{s∈S}, stored row-major by (element, generator).
struct VectorField {
  BallPtr ball;
  int radius = 0;
  std::vector<double> values;

  std::size_t width() const { return ball->group().num_generators(); }
  std::size_t size() const { return ball->prefix(radius); }
  double operator()(std::size_t i, std::size_t j) const { return values[i * width() + j]; }
  double norm_at(std::size_t i) const {
    double s = 0;
    for (std::size_t j = 0; j < width(); ++j) s += values[i * width() + j] * values[i * width() + j];
    return std::sqrt(s);
  }
};

namespace detail {

inline int checked_inner(const BallFunction& u) {
  int r = u.inner_radius();
  if (r < 0) throw PreconditionError("function has an empty interior");
  return r;
}

inline std::size_t nb(const Ball& b, std::size_t i, std::size_t j) {
  auto k = b.neighbor(i, j);
  if (k < 0) throw InternalError("interior point with a missing neighbour");
  return static_cast<std::size_t>(k);
}

/// num/den as a double without overflowing on huge operands.
inline double ratio_to_double(const BigInt& num, const BigInt& den) {
  if (num == 0) return 0.0;
  if (den == 0) throw std::domain_error("zero denominator");
  BigInt a = abs(num), b = abs(den);
  long shift = static_cast<long>(msb(b)) - static_cast<long>(msb(a)) + 62;
  BigInt q = shift >= 0 ? BigInt((a << shift) / b) : BigInt((a >> -shift) / b);
  double out = std::ldexp(q.convert_to<double>(), static_cast<int>(-shift));
  return (num < 0) != (den < 0) ? -out : out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Operators

inline VectorField gradient(const BallFunction& u) {
  const int r = detail::checked_inner(u);
  const Ball& b = u.ball();
  const std::size_t k = b.group().num_generators();
  VectorField F{u.ball_ptr(), r, std::vector<double>(b.prefix(r) * k)};
  for (std::size_t i = 0; i < b.prefix(r); ++i)
    for (std::size_t j = 0; j < k; ++j) F.values[i * k + j] = u[detail::nb(b, i, j)] - u[i];
  return F;
}

/// (∇·F)(x) = Σ_s F_s(x s^{-1}) − F_s(x).
inline BallFunction divergence(const VectorField& F) {
  const Ball& b = *F.ball;
  const bool whole = b.complete() && F.size() == b.size();
  const int r = whole ? F.radius : F.radius - 1;
  if (r < 0) throw PreconditionError("vector field has an empty interior");
  const std::size_t k = F.width();
  std::vector<double> out(b.prefix(r), 0.0);
  for (std::size_t i = 0; i < out.size(); ++i)
    for (std::size_t j = 0; j < k; ++j) out[i] += F(detail::nb(b, i, b.group().inverse_generator(j)), j) - F(i, j);
  return BallFunction(F.ball, r, std::move(out));
}

/// Δu(x) = 2|S|u(x) − 2Σ_s u(xs).
inline BallFunction laplacian(const BallFunction& u) {
  const int r = detail::checked_inner(u);
  const Ball& b = u.ball();
  const std::size_t k = b.group().num_generators();
  std::vector<double> out(b.prefix(r));
  for (std::size_t i = 0; i < out.size(); ++i) {
    double s = 0;
    for (std::size_t j = 0; j < k; ++j) s += u[detail::nb(b, i, j)];
    out[i] = 2.0 * static_cast<double>(k) * u[i] - 2.0 * s;
  }
  return BallFunction(u.ball_ptr(), r, std::move(out));
}

inline double sup_norm(const BallFunction& u) {
  double m = 0;
  for (double v : u.values()) m = std::max(m, std::abs(v));
  return m;
}
inline double l1_norm(const BallFunction& u) {
  double s = 0;
  for (double v : u.values()) s += std::abs(v);
  return s;
}
inline double l2_norm(const BallFunction& u) {
  double s = 0;
  for (double v : u.values()) s += v * v;
  return std::sqrt(s);
}

/// sup_x |∇u(x)| over the interior.
inline double lipschitz_norm(const BallFunction& u) {
  auto F = gradient(u);
  double m = 0;
  for (std::size_t i = 0; i < F.size(); ++i) m = std::max(m, F.norm_at(i));
  return m;
}

struct HarmonicCheck {
  double lip = 0;
  double eps = 0;
  bool holds = false;
};

inline HarmonicCheck eps_harmonic_check(const BallFunction& u, double eps) {
  HarmonicCheck c;
  c.lip = lipschitz_norm(u);
  c.eps = sup_norm(laplacian(u));
  c.holds = c.lip <= 1.0 && c.eps <= eps;
  return c;
}

// ---------------------------------------------------------------------------
// Convolution: u*v(x) = Σ_y u(y) v(y^{-1}x), zero outside the domains.

namespace detail {

inline void require_same_ball(const Ball& a, const Ball& b) {
  if (&a != &b && a.group().fingerprint() != b.group().fingerprint())
    throw BackendMismatch("functions live on different groups");
}

template <class Accumulate>
void convolve_pairs(const BallFunction& u, const Ball& b, std::size_t nv, const std::vector<bool>& v_nonzero,
                    int out_radius, Accumulate&& acc) {
  const auto& G = b.group();
  const std::size_t limit = b.prefix(out_radius);
  for (std::size_t y = 0; y < u.size(); ++y) {
    if (u[y] == 0.0) continue;
    for (std::size_t z = 0; z < nv; ++z) {
      if (!v_nonzero[z]) continue;
      auto k = b.find(G.multiply(b.element(y), b.element(z)));
      if (!k || *k >= limit) throw SupportEscape("convolution support escapes the working ball");
      acc(*k, y, z);
    }
  }
}

}  // namespace detail

inline BallFunction convolve(const BallFunction& u, const BallFunction& v, int out_radius = -1) {
  detail::require_same_ball(u.ball(), v.ball());
  const Ball& b = u.ball();
  if (out_radius < 0) out_radius = b.radius();
  std::vector<bool> nz(v.size());
  for (std::size_t z = 0; z < v.size(); ++z) nz[z] = v[z] != 0.0;
  std::vector<double> out(b.prefix(out_radius), 0.0);
  detail::convolve_pairs(u, b, v.size(), nz, out_radius,
                         [&](std::size_t k, std::size_t y, std::size_t z) { out[k] += u[y] * v[z]; });
  return BallFunction(u.ball_ptr(), out_radius, std::move(out));
}

/// (f*F)_s = f*F_s componentwise.
inline VectorField convolve(const BallFunction& f, const VectorField& F, int out_radius = -1) {
  detail::require_same_ball(f.ball(), *F.ball);
  const Ball& b = f.ball();
  if (out_radius < 0) out_radius = b.radius();
  const std::size_t k = F.width();
  std::vector<bool> nz(F.size());
  for (std::size_t z = 0; z < F.size(); ++z)
    for (std::size_t j = 0; j < k && !nz[z]; ++j) nz[z] = F(z, j) != 0.0;
  VectorField out{f.ball_ptr(), out_radius, std::vector<double>(b.prefix(out_radius) * k, 0.0)};
  detail::convolve_pairs(f, b, F.size(), nz, out_radius, [&](std::size_t t, std::size_t y, std::size_t z) {
    for (std::size_t j = 0; j < k; ++j) out.values[t * k + j] += f[y] * F(z, j);
  });
  return out;
}

// ---------------------------------------------------------------------------
// Random walks

/// σ^{(m)} with exact rational masses counts[i] / |S|^m on B_S(m).
struct WalkMeasure {
  BallPtr ball;
  int steps = 0;
  std::vector<BigInt> counts;  // words of length m evaluating to each element
  BigInt denominator;          // |S|^m

  BigRational mass(std::size_t i) const { return BigRational(counts[i], denominator); }
  BigRational total() const {
    BigInt s = 0;
    for (const auto& c : counts) s += c;
    return BigRational(s, denominator);
  }
  double mass_double(std::size_t i) const { return detail::ratio_to_double(counts[i], denominator); }
};

namespace detail {

/// Word counts for lengths 0..m, each over prefix(m).
inline std::vector<std::vector<BigInt>> word_counts(const Ball& b, int m) {
  if (m < 0) throw std::invalid_argument("negative step count");
  if (!b.complete() && b.radius() < m) throw SupportEscape("walk support exceeds the enumerated ball");
  const std::size_t n = b.prefix(m), k = b.group().num_generators();
  std::vector<std::vector<BigInt>> out;
  std::vector<BigInt> c(n, 0);
  c[0] = 1;
  out.push_back(c);
  for (int t = 0; t < m; ++t) {
    std::vector<BigInt> next(n, 0);
    for (std::size_t y = 0; y < b.prefix(t); ++y) {
      if (c[y] == 0) continue;
      for (std::size_t j = 0; j < k; ++j) next[nb(b, y, j)] += c[y];
    }
    c = std::move(next);
    out.push_back(c);
  }
  return out;
}

}  // namespace detail

inline WalkMeasure walk_measure(BallPtr ball, int m) {
  auto counts = detail::word_counts(*ball, m);
  BigInt den = pow(BigInt(ball->group().num_generators()), static_cast<unsigned>(m));
  return WalkMeasure{std::move(ball), m, std::move(counts.back()), std::move(den)};
}

/// f = (1/(R+1)) Σ_{m=0}^{R} σ^{(m)}, exact: numerators[i] / denominator.
struct CesaroAverage {
  BallPtr ball;
  int R = 0;
  std::vector<BigInt> numerators;
  BigInt denominator;

  BigRational total() const {
    BigInt s = 0;
    for (const auto& c : numerators) s += c;
    return BigRational(s, denominator);
  }
  /// Double values on the prefix of the given radius (≥ R), zero beyond B(R).
  BallFunction to_function(int radius) const {
    std::vector<double> v(ball->prefix(radius), 0.0);
    for (std::size_t i = 0; i < numerators.size() && i < v.size(); ++i)
      v[i] = detail::ratio_to_double(numerators[i], denominator);
    return BallFunction(ball, radius, std::move(v));
  }
};

inline CesaroAverage cesaro_average(BallPtr ball, int R) {
  if (R < 0) throw std::invalid_argument("negative radius");
  auto counts = detail::word_counts(*ball, R);
  const BigInt k = ball->group().num_generators();
  CesaroAverage f{ball, R, std::vector<BigInt>(ball->prefix(R), 0), 0};
  // Σ_m c_m |S|^{R-m} over the common denominator (R+1)|S|^R.
  BigInt scale = 1;
  for (int m = R; m >= 0; --m) {
    for (std::size_t i = 0; i < counts[m].size(); ++i)
      if (counts[m][i] != 0) f.numerators[i] += counts[m][i] * scale;
    scale *= k;
  }
  f.denominator = pow(k, static_cast<unsigned>(R)) * (R + 1);
  return f;
}

// ---------------------------------------------------------------------------
// Dirichlet problem

/// Harmonic extension of boundary values on the sphere of radius R into the
/// interior B_S(R−1).  The Dirichlet Laplacian is symmetric positive
/// definite; it is factored once (LDLT) for up to `dense_limit` unknowns and
/// solved by conjugate gradients beyond.
class DirichletSolver {
 public:
  explicit DirichletSolver(BallPtr ball, std::size_t dense_limit = 4000) : ball_(std::move(ball)) {
    const Ball& b = *ball_;
    R_ = b.radius();
    if (R_ < 1) throw PreconditionError("Dirichlet problem needs a non-empty interior");
    n_ = b.prefix(R_ - 1);
    const std::size_t k = b.group().num_generators();
    dense_ = n_ <= dense_limit;
    if (dense_) {
      Eigen::MatrixXd M = Eigen::MatrixXd::Zero(n_, n_);
      for (std::size_t i = 0; i < n_; ++i) {
        M(i, i) += 2.0 * static_cast<double>(k);
        for (std::size_t j = 0; j < k; ++j) {
          auto t = detail::nb(b, i, j);
          if (t < n_) M(i, t) -= 2.0;
        }
      }
      ldlt_.compute(M);
      if (ldlt_.info() != Eigen::Success) throw NumericalFailure("Dirichlet factorization failed");
    } else {
      std::vector<Eigen::Triplet<double>> trip;
      for (std::size_t i = 0; i < n_; ++i) {
        trip.emplace_back(i, i, 2.0 * static_cast<double>(k));
        for (std::size_t j = 0; j < k; ++j) {
          auto t = detail::nb(b, i, j);
          if (t < n_) trip.emplace_back(i, t, -2.0);
        }
      }
      sparse_.resize(n_, n_);
      sparse_.setFromTriplets(trip.begin(), trip.end());
      cg_.setTolerance(1e-12);
      cg_.setMaxIterations(static_cast<int>(10 * n_ + 1000));
      cg_.compute(sparse_);
    }
  }

  const BallPtr& ball() const { return ball_; }
  bool dense() const { return dense_; }
  std::size_t interior_size() const { return n_; }

  /// `values` holds the full ball; only the sphere of radius R is read.
  BallFunction solve(std::vector<double> values) const {
    const Ball& b = *ball_;
    if (values.size() != b.size()) throw std::invalid_argument("boundary vector must cover the ball");
    const std::size_t k = b.group().num_generators();
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(n_);
    for (std::size_t i = 0; i < n_; ++i)
      for (std::size_t j = 0; j < k; ++j) {
        auto t = detail::nb(b, i, j);
        if (t >= n_) rhs(i) += 2.0 * values[t];
      }
    Eigen::VectorXd x = dense_ ? Eigen::VectorXd(ldlt_.solve(rhs)) : Eigen::VectorXd(cg_.solve(rhs));
    if (!dense_ && cg_.info() != Eigen::Success) throw NumericalFailure("conjugate gradient did not converge");
    for (std::size_t i = 0; i < n_; ++i) values[i] = x(i);
    return BallFunction(ball_, R_, std::move(values));
  }
  BallFunction solve(const std::function<double(const Element&)>& boundary) const {
    const Ball& b = *ball_;
    std::vector<double> v(b.size(), 0.0);
    for (std::size_t i = n_; i < b.size(); ++i) v[i] = boundary(b.element(i));
    return solve(std::move(v));
  }

 private:
  BallPtr ball_;
  int R_ = 0;
  std::size_t n_ = 0;
  bool dense_ = true;
  Eigen::LDLT<Eigen::MatrixXd> ldlt_;
  Eigen::SparseMatrix<double> sparse_;
  Eigen::ConjugateGradient<Eigen::SparseMatrix<double>, Eigen::Lower | Eigen::Upper> cg_;
};

inline BallFunction dirichlet_solve(BallPtr ball, const std::function<double(const Element&)>& boundary) {
  return DirichletSolver(std::move(ball)).solve(boundary);
}

// ---------------------------------------------------------------------------
// Almost-harmonic construction

enum class HarmonicCase { FiniteGroup, NonAmenable, Amenable };

inline const char* to_string(HarmonicCase c) {
  switch (c) {
    case HarmonicCase::FiniteGroup: return "finite_group";
    case HarmonicCase::NonAmenable: return "non_amenable";
    case HarmonicCase::Amenable: return "amenable";
  }
  return "?";
}

struct AlmostHarmonicOptions {
  int window = -1;  // measurement radius, defaults to R
  std::optional<HarmonicCase> force_case;
  std::size_t dense_limit = 4000;  // spectral projection size cap
  std::size_t cap = kDefaultElementCap;
};

struct AlmostHarmonic {
  HarmonicCase kind = HarmonicCase::FiniteGroup;
  int R = 0;
  std::optional<BallFunction> u;  // on B_S(window + 1)
  double lip = 0;                 // measured over B_S(window)
  double eps = 0;
  double grad_at_id = 0;
  double grad_f_l1 = 0;       // ‖∇f‖_1 of the Cesàro average
  double laplacian_f_l1 = 0;  // ‖Δf‖_1
  double case_threshold = 0;  // R^{-2/3}
  double eps_bound = 0;       // |S| R^{-1/3}
  std::size_t generator = 0;  // the pigeonholed s
  std::size_t spectral_modes = 0;
  double normalization = 1;  // divisor applied when measured lip exceeded 1
};

namespace detail {

inline void measure_almost_harmonic(AlmostHarmonic& out) {
  auto& u = *out.u;
  out.lip = lipschitz_norm(u);
  if (out.lip > 1.0) {
    out.normalization = out.lip;
    u *= 1.0 / out.lip;
    out.lip = lipschitz_norm(u);
  }
  out.eps = sup_norm(laplacian(u));
  out.grad_at_id = gradient(u).norm_at(0);
}

}  // namespace detail

/// Either B_S(R) = G, or a function u with ‖u‖_Lip ≤ 1, |∇u(id)| ≥ 1/|S| and
/// small Laplacian.  The non-amenable branch convolves the Cesàro average f
/// with a sign kernel; the amenable branch convolves the low spectral part F'
/// of |f|^{1/2} (Dirichlet Laplacian on B_S(3R)) with its own gradient
/// component.  All postconditions are measured on B_S(window).
inline AlmostHarmonic build_almost_harmonic(const MarkedGroup& G, int R, const AlmostHarmonicOptions& opt = {}) {
  if (R < 1) throw std::invalid_argument("R must be at least 1");
  AlmostHarmonic out;
  out.R = R;
  const int window = opt.window < 0 ? R : opt.window;
  const double k = static_cast<double>(G.num_generators());
  out.case_threshold = std::pow(static_cast<double>(R), -2.0 / 3.0);
  out.eps_bound = k * std::pow(static_cast<double>(R), -1.0 / 3.0);

  BallPtr ball = make_ball(G, std::max(R + 1, window + 1), opt.cap);
  if (ball->sphere_sizes()[R + 1] == 0) {
    out.kind = HarmonicCase::FiniteGroup;
    return out;
  }
  const std::size_t nS = G.num_generators();

  auto cesaro = cesaro_average(ball, R);
  BallFunction f = cesaro.to_function(ball->radius());
  // ∇f and Δf are supported on B(R+1); neighbours missing from the ball lie
  // beyond B(R) where f vanishes.
  auto f_at = [&](std::int64_t t) { return t < 0 ? 0.0 : f[static_cast<std::size_t>(t)]; };
  std::vector<double> fs_l1(nS, 0.0);
  for (std::size_t i = 0; i < ball->prefix(R + 1); ++i) {
    double g2 = 0, lap = 2 * k * f[i];
    for (std::size_t j = 0; j < nS; ++j) {
      double d = f_at(ball->neighbor(i, j)) - f[i];
      g2 += d * d;
      fs_l1[j] += std::abs(d);
      lap -= 2 * f_at(ball->neighbor(i, j));
    }
    out.grad_f_l1 += std::sqrt(g2);
    out.laplacian_f_l1 += std::abs(lap);
  }
  out.kind = out.grad_f_l1 >= out.case_threshold ? HarmonicCase::NonAmenable : HarmonicCase::Amenable;
  if (opt.force_case && *opt.force_case != HarmonicCase::FiniteGroup) out.kind = *opt.force_case;

  // kernel[z] and the function it is convolved against; u(x) = Σ_z kernel[z]·g(zx).
  std::vector<std::pair<std::size_t, double>> kernel;
  std::function<double(const Element&)> g_at;
  std::optional<BallFunction> Fp;

  if (out.kind == HarmonicCase::NonAmenable) {
    out.generator = static_cast<std::size_t>(std::max_element(fs_l1.begin(), fs_l1.end()) - fs_l1.begin());
    for (std::size_t z = 0; z < ball->prefix(R + 1); ++z) {
      double d = f_at(ball->neighbor(z, out.generator)) - f[z];
      if (d != 0.0) kernel.emplace_back(z, (d > 0 ? 1.0 : -1.0) / out.grad_f_l1);
    }
    g_at = [&](const Element& y) {
      auto i = ball->find(y);
      return i && ball->norm(*i) <= R ? f[*i] : 0.0;
    };
  } else {
    const int R3 = 3 * R;
    if (ball->radius() < R3 + 1) ball = make_ball(G, std::max(R3 + 1, window + 1), opt.cap);
    const std::size_t n3 = ball->prefix(R3);
    if (n3 > opt.dense_limit)
      throw ResourceLimitError("spectral projection needs a dense " + std::to_string(n3) + "-dimensional operator",
                               opt.dense_limit);
    Eigen::MatrixXd L = Eigen::MatrixXd::Zero(n3, n3);
    for (std::size_t i = 0; i < n3; ++i) {
      L(i, i) += 2 * k;
      for (std::size_t j = 0; j < nS; ++j) {
        auto t = ball->neighbor(i, j);
        if (t >= 0 && static_cast<std::size_t>(t) < n3) L(i, t) -= 2;
      }
    }
    // Sub-ball orderings agree across radii, so f's indices carry over.
    Eigen::VectorXd F = Eigen::VectorXd::Zero(n3);
    for (std::size_t i = 0; i < cesaro.numerators.size(); ++i) F(i) = std::sqrt(std::abs(f[i]));
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(L);
    if (eig.info() != Eigen::Success) throw NumericalFailure("eigendecomposition failed");
    Eigen::VectorXd proj = Eigen::VectorXd::Zero(n3);
    for (Eigen::Index m = 0; m < eig.eigenvalues().size(); ++m)
      if (eig.eigenvalues()(m) <= out.eps_bound) {
        proj += eig.eigenvectors().col(m) * eig.eigenvectors().col(m).dot(F);
        ++out.spectral_modes;
      }
    if (proj.norm() < 1e-12) throw NumericalFailure("spectral projection is numerically degenerate");
    std::vector<double> vals(ball->prefix(R3 + 1), 0.0);
    for (std::size_t i = 0; i < n3; ++i) vals[i] = proj(i);
    Fp.emplace(ball, R3 + 1, std::move(vals));
    std::vector<double> fs_l2(nS, 0.0);
    double grad2 = 0;
    auto fp_at = [&](std::int64_t t) {
      return t < 0 || static_cast<std::size_t>(t) >= n3 ? 0.0 : (*Fp)[static_cast<std::size_t>(t)];
    };
    for (std::size_t i = 0; i < ball->prefix(R3 + 1); ++i)
      for (std::size_t j = 0; j < nS; ++j) {
        double d = fp_at(ball->neighbor(i, j)) - (*Fp)[i];
        fs_l2[j] += d * d;
        grad2 += d * d;
      }
    out.generator = static_cast<std::size_t>(std::max_element(fs_l2.begin(), fs_l2.end()) - fs_l2.begin());
    for (std::size_t z = 0; z < ball->prefix(R3 + 1); ++z) {
      double d = fp_at(ball->neighbor(z, out.generator)) - (*Fp)[z];
      if (d != 0.0) kernel.emplace_back(z, d / grad2);
    }
    g_at = [&, n3](const Element& y) {
      auto i = ball->find(y);
      return i && *i < n3 ? (*Fp)[*i] : 0.0;
    };
  }

  const std::size_t nu = ball->prefix(window + 1);
  std::vector<double> u(nu, 0.0);
  for (std::size_t x = 0; x < nu; ++x) {
    double s = 0;
    for (const auto& [z, w] : kernel) s += w * g_at(G.multiply(ball->element(z), ball->element(x)));
    u[x] = s;
  }
  out.u.emplace(ball, window + 1, std::move(u));
  detail::measure_almost_harmonic(out);
  return out;
}

// ---------------------------------------------------------------------------
// Poincaré inequalities

struct PoincareReport {
  double lhs = 0;
  double rhs = 0;
  bool holds = false;
};

namespace detail {

/// Indices in f's domain of x·B_S(r), in ball order of B_S(r).
inline std::vector<std::size_t> translate_indices(const BallFunction& f, const Element& x, int r) {
  const Ball& b = f.ball();
  const auto& G = b.group();
  if (!b.complete() && b.radius() < r) throw SupportEscape("radius exceeds the enumerated ball");
  std::vector<std::size_t> out;
  out.reserve(b.prefix(r));
  for (std::size_t i = 0; i < b.prefix(r); ++i) {
    auto k = f.index_of(G.multiply(x, b.element(i)));
    if (!k) throw SupportEscape("translated ball leaves the function's domain");
    out.push_back(*k);
  }
  return out;
}

inline double grad_l2_on(const BallFunction& f, const std::vector<std::size_t>& idx) {
  const Ball& b = f.ball();
  const std::size_t k = b.group().num_generators();
  double s = 0;
  for (auto i : idx)
    for (std::size_t j = 0; j < k; ++j) {
      auto t = b.neighbor(i, j);
      if (t < 0 || static_cast<std::size_t>(t) >= f.size())
        throw SupportEscape("gradient needs values outside the function's domain");
      double d = f[static_cast<std::size_t>(t)] - f[i];
      s += d * d;
    }
  return std::sqrt(s);
}

}  // namespace detail

/// ‖f − f_{B(x,r)}‖_{ℓ²(B(x,r))} ≤ 2r·|B_S(2r)|/|B_S(r)|·‖∇f‖_{ℓ²(B(x,3r))}.
inline PoincareReport poincare_check(const BallFunction& f, const Element& x, int r, double tol = 1e-9) {
  if (r < 1) throw std::invalid_argument("r must be at least 1");
  auto inner = detail::translate_indices(f, x, r);
  auto outer = detail::translate_indices(f, x, 3 * r);
  const Ball& b = f.ball();
  double mean = 0;
  for (auto i : inner) mean += f[i];
  mean /= static_cast<double>(inner.size());
  double dev = 0;
  for (auto i : inner) dev += (f[i] - mean) * (f[i] - mean);
  PoincareReport rep;
  rep.lhs = std::sqrt(dev);
  rep.rhs = 2.0 * r * static_cast<double>(b.prefix(2 * r)) / static_cast<double>(b.prefix(r)) *
            detail::grad_l2_on(f, outer);
  rep.holds = rep.lhs <= rep.rhs + tol;
  return rep;
}

struct ReversePoincareReport {
  double lhs = 0;    // ‖∇f‖_{ℓ²(B(x,r))}
  double scale = 0;  // |S|·((1/r)‖f‖_{ℓ²(B(x,2r))} + ε r |B_S(2r)|^{1/2})
  double C_min = 0;  // smallest sufficient constant
  bool holds = false;
};

/// Evaluates the reverse Poincaré inequality with |S|^c, c = 1, and reports
/// the smallest constant that makes it hold.
inline ReversePoincareReport reverse_poincare_check(const BallFunction& f, const Element& x, int r, double eps,
                                                    double C_probe) {
  if (r < 1) throw std::invalid_argument("r must be at least 1");
  auto inner = detail::translate_indices(f, x, r);
  auto outer = detail::translate_indices(f, x, 2 * r);
  const Ball& b = f.ball();
  double f2 = 0;
  for (auto i : outer) f2 += f[i] * f[i];
  ReversePoincareReport rep;
  rep.lhs = detail::grad_l2_on(f, inner);
  rep.scale = static_cast<double>(b.group().num_generators()) *
              (std::sqrt(f2) / r + eps * r * std::sqrt(static_cast<double>(b.prefix(2 * r))));
  rep.C_min = rep.scale > 0 ? rep.lhs / rep.scale : (rep.lhs > 0 ? std::numeric_limits<double>::infinity() : 0.0);
  rep.holds = rep.lhs <= C_probe * rep.scale + 1e-12;
  return rep;
}

/// CSV with columns key (hex), norm, value.
inline std::string to_csv(const BallFunction& u) {
  std::ostringstream os;
  os.precision(17);
  os << "key,norm,value\n";
  static const char* hex = "0123456789abcdef";
  for (std::size_t i = 0; i < u.size(); ++i) {
    for (unsigned char c : u.ball().key(i)) os << hex[c >> 4] << hex[c & 15];
    os << ',' << u.ball().norm(i) << ',' << u[i] << '\n';
  }
  return os.str();
}

}  // namespace fgromov
