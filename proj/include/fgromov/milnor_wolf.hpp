#pragma once

// Lattice automorphisms and the cyclic-extension step: exact characteristic
// polynomials, cyclotomic periodicity, Mahler measure, growth witnesses,
// unipotent towers, slow conjugation growth, torsion-free reduction and the
// final nilpotency assembly.
//
// Every branch decision is made in exact arithmetic (cpp_int / cpp_rational).
// Floating point is used only for eigenvectors, root moduli and reported rates.

#include <Eigen/Dense>
#include <boost/multiprecision/cpp_int.hpp>
#include <complex>
#include <functional>
#include <numeric>
#include <set>

#include "fgromov/subgroup.hpp"

namespace fgromov {

using BigRational = boost::multiprecision::cpp_rational;

/// Coefficients from the constant term up.
using IntPoly = std::vector<BigInt>;
using RatPoly = std::vector<BigRational>;
using IntVector = std::vector<BigInt>;

// ---------------------------------------------------------------------------
// Integer matrices

struct IntMatrix {
  int D = 0;
  std::vector<BigInt> a;  // row-major

  IntMatrix() = default;
  explicit IntMatrix(int dim) : D(dim), a(static_cast<std::size_t>(dim) * dim) {}
  IntMatrix(int dim, const std::vector<long long>& entries) : IntMatrix(dim) {
    if (entries.size() != a.size()) throw std::invalid_argument("matrix entry count does not match dimension");
    for (std::size_t i = 0; i < a.size(); ++i) a[i] = entries[i];
  }
  static IntMatrix identity(int dim) {
    IntMatrix I(dim);
    for (int i = 0; i < dim; ++i) I(i, i) = 1;
    return I;
  }

  BigInt& operator()(int i, int j) { return a[static_cast<std::size_t>(i) * D + j]; }
  const BigInt& operator()(int i, int j) const { return a[static_cast<std::size_t>(i) * D + j]; }
  bool operator==(const IntMatrix& o) const { return D == o.D && a == o.a; }
  bool is_zero() const {
    return std::all_of(a.begin(), a.end(), [](const BigInt& x) { return x == 0; });
  }

  IntVector apply(const IntVector& v) const {
    IntVector out(static_cast<std::size_t>(D));
    for (int i = 0; i < D; ++i)
      for (int j = 0; j < D; ++j) out[static_cast<std::size_t>(i)] += (*this)(i, j) * v[static_cast<std::size_t>(j)];
    return out;
  }
  Eigen::MatrixXd to_double() const {
    Eigen::MatrixXd M(D, D);
    for (int i = 0; i < D; ++i)
      for (int j = 0; j < D; ++j) M(i, j) = (*this)(i, j).convert_to<double>();
    return M;
  }
};

inline IntMatrix operator*(const IntMatrix& A, const IntMatrix& B) {
  if (A.D != B.D) throw std::invalid_argument("matrix dimensions differ");
  IntMatrix C(A.D);
  for (int i = 0; i < A.D; ++i)
    for (int k = 0; k < A.D; ++k) {
      if (A(i, k) == 0) continue;
      for (int j = 0; j < A.D; ++j) C(i, j) += A(i, k) * B(k, j);
    }
  return C;
}

inline IntMatrix operator-(const IntMatrix& A, const IntMatrix& B) {
  if (A.D != B.D) throw std::invalid_argument("matrix dimensions differ");
  IntMatrix C(A.D);
  for (std::size_t i = 0; i < A.a.size(); ++i) C.a[i] = A.a[i] - B.a[i];
  return C;
}

inline IntMatrix matrix_power(IntMatrix T, unsigned long long n) {
  IntMatrix out = IntMatrix::identity(T.D);
  while (n > 0) {
    if (n & 1) out = out * T;
    n >>= 1;
    if (n) T = T * T;
  }
  return out;
}

/// Fraction-free (Bareiss) determinant.
inline BigInt determinant(const IntMatrix& T) {
  const int n = T.D;
  if (n == 0) return 1;
  std::vector<BigInt> m = T.a;
  auto at = [&](int i, int j) -> BigInt& { return m[static_cast<std::size_t>(i) * n + j]; };
  BigInt prev = 1;
  int sign = 1;
  for (int k = 0; k < n - 1; ++k) {
    if (at(k, k) == 0) {
      int p = k + 1;
      while (p < n && at(p, k) == 0) ++p;
      if (p == n) return 0;
      for (int j = 0; j < n; ++j) std::swap(at(k, j), at(p, j));
      sign = -sign;
    }
    for (int i = k + 1; i < n; ++i)
      for (int j = k + 1; j < n; ++j) at(i, j) = (at(i, j) * at(k, k) - at(i, k) * at(k, j)) / prev;
    prev = at(k, k);
  }
  return sign * at(n - 1, n - 1);
}

// ---------------------------------------------------------------------------
// Polynomials

namespace detail {

template <class P>
inline void trim(P& p) {
  while (!p.empty() && p.back() == 0) p.pop_back();
}

inline RatPoly to_rat(const IntPoly& p) { return RatPoly(p.begin(), p.end()); }

/// Primitive integer multiple with positive leading coefficient.
inline IntPoly primitive(const RatPoly& p) {
  BigInt den = 1;
  for (const auto& c : p) den = boost::multiprecision::lcm(den, boost::multiprecision::denominator(c));
  IntPoly out;
  BigInt g = 0;
  for (const auto& c : p) {
    out.push_back(boost::multiprecision::numerator(c) * (den / boost::multiprecision::denominator(c)));
    g = boost::multiprecision::gcd(g, out.back());
  }
  trim(out);
  if (out.empty()) return out;
  if (out.back() < 0) g = -g;
  for (auto& c : out) c /= g;
  return out;
}

inline std::pair<RatPoly, RatPoly> divmod(RatPoly a, const RatPoly& b) {
  if (b.empty()) throw std::invalid_argument("polynomial division by zero");
  trim(a);
  RatPoly q(a.size() >= b.size() ? a.size() - b.size() + 1 : 0);
  while (a.size() >= b.size() && !a.empty()) {
    const BigRational c = a.back() / b.back();
    const std::size_t shift = a.size() - b.size();
    q[shift] = c;
    for (std::size_t i = 0; i < b.size(); ++i) a[shift + i] -= c * b[i];
    trim(a);
  }
  trim(q);
  return {q, a};
}

/// Monic gcd over Q.
inline RatPoly gcd(RatPoly a, RatPoly b) {
  trim(a);
  trim(b);
  while (!b.empty()) {
    auto r = divmod(a, b).second;
    a = std::move(b);
    b = std::move(r);
  }
  if (a.empty()) return a;
  const BigRational lead = a.back();
  for (auto& c : a) c /= lead;
  return a;
}

inline RatPoly derivative(const RatPoly& p) {
  RatPoly d;
  for (std::size_t i = 1; i < p.size(); ++i) d.push_back(p[i] * static_cast<long long>(i));
  return d;
}

inline IntPoly multiply(const IntPoly& a, const IntPoly& b) {
  if (a.empty() || b.empty()) return {};
  IntPoly c(a.size() + b.size() - 1);
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < b.size(); ++j) c[i + j] += a[i] * b[j];
  return c;
}

/// a / b over Z when b divides a exactly.
inline std::optional<IntPoly> exact_quotient(const IntPoly& a, const IntPoly& b) {
  auto [q, r] = divmod(to_rat(a), to_rat(b));
  if (!r.empty()) return std::nullopt;
  IntPoly out;
  for (const auto& c : q) {
    if (boost::multiprecision::denominator(c) != 1) return std::nullopt;
    out.push_back(boost::multiprecision::numerator(c));
  }
  return out;
}

inline std::complex<long double> evaluate(const std::vector<long double>& p, std::complex<long double> z) {
  std::complex<long double> acc = 0;
  for (std::size_t i = p.size(); i-- > 0;) acc = acc * z + p[i];
  return acc;
}

inline double log_norm(const IntVector& v) {
  BigInt s = 0;
  for (const auto& x : v) s += x * x;
  if (s == 0) return -std::numeric_limits<double>::infinity();
  const auto bits = boost::multiprecision::msb(s);
  const unsigned shift = bits > 60 ? static_cast<unsigned>(bits - 60) : 0u;
  BigInt top = s >> shift;
  return 0.5 * (std::log(top.convert_to<double>()) + shift * std::log(2.0));
}

}  // namespace detail

inline int degree(const IntPoly& p) { return static_cast<int>(p.size()) - 1; }

/// Faddeev–LeVerrier with exact integer division: det(xI − T).
inline IntPoly char_poly(const IntMatrix& T) {
  const int D = T.D;
  IntPoly c(static_cast<std::size_t>(D) + 1);
  c[static_cast<std::size_t>(D)] = 1;
  IntMatrix M(D);  // M_0 = 0
  for (int k = 1; k <= D; ++k) {
    IntMatrix next = T * M;
    for (int i = 0; i < D; ++i) next(i, i) += c[static_cast<std::size_t>(D - k + 1)];
    M = std::move(next);
    const IntMatrix TM = T * M;
    BigInt tr = 0;
    for (int i = 0; i < D; ++i) tr += TM(i, i);
    if (tr % k != 0) throw InternalError("Faddeev-LeVerrier trace not divisible");
    c[static_cast<std::size_t>(D - k)] = -tr / k;
  }
  return c;
}

/// Companion matrix of a monic integer polynomial.
inline IntMatrix companion(const IntPoly& p) {
  const int D = degree(p);
  if (D < 1 || p.back() != 1) throw std::invalid_argument("companion matrix needs a monic polynomial of degree ≥ 1");
  IntMatrix C(D);
  for (int i = 1; i < D; ++i) C(i, i - 1) = 1;
  for (int i = 0; i < D; ++i) C(i, D - 1) = -p[static_cast<std::size_t>(i)];
  return C;
}

inline long long euler_phi(long long n) {
  long long out = n;
  for (long long p = 2; p * p <= n; ++p)
    if (n % p == 0) {
      while (n % p == 0) n /= p;
      out -= out / p;
    }
  if (n > 1) out -= out / n;
  return out;
}

/// Every n ≥ 1 with φ(n) ≤ D, ascending.  φ(n) ≥ √(n/2) bounds the scan by 2D².
inline std::vector<long long> period_candidates(int D) {
  std::vector<long long> out;
  for (long long n = 1; n <= 2LL * D * D + 2; ++n)
    if (euler_phi(n) <= D) out.push_back(n);
  return out;
}

/// n-th cyclotomic polynomial: (x^n − 1) divided by Φ_d for the proper divisors d.
inline IntPoly cyclotomic_polynomial(long long n) {
  if (n < 1) throw std::invalid_argument("cyclotomic index must be positive");
  IntPoly p(static_cast<std::size_t>(n) + 1);
  p[0] = -1;
  p.back() = 1;
  for (long long d = 1; d < n; ++d)
    if (n % d == 0) p = *detail::exact_quotient(p, cyclotomic_polynomial(d));
  return p;
}

inline IntPoly x_pow_minus_one(long long n) {
  IntPoly p(static_cast<std::size_t>(n) + 1);
  p[0] = -1;
  p.back() = 1;
  return p;
}

/// Removes all cyclotomic factors of a polynomial whose roots of unity have
/// φ(n) ≤ deg p.  Returns (cyclotomic part, remainder).
inline std::pair<IntPoly, IntPoly> strip_cyclotomic(IntPoly p) {
  IntPoly cyc{1};
  for (long long n : period_candidates(std::max(1, degree(p)))) {
    const IntPoly phi = cyclotomic_polynomial(n);
    while (degree(p) >= degree(phi)) {
      auto q = detail::exact_quotient(p, phi);
      if (!q) break;
      p = std::move(*q);
      cyc = detail::multiply(cyc, phi);
    }
  }
  return {cyc, p};
}

// ---------------------------------------------------------------------------
// Exact linear algebra

namespace detail {

using RatMatrix = std::vector<std::vector<BigRational>>;

/// In-place reduced row echelon form; returns pivot columns.
inline std::vector<std::size_t> rref(RatMatrix& A, std::size_t cols) {
  std::vector<std::size_t> pivots;
  std::size_t row = 0;
  for (std::size_t c = 0; c < cols && row < A.size(); ++c) {
    std::size_t p = row;
    while (p < A.size() && A[p][c] == 0) ++p;
    if (p == A.size()) continue;
    std::swap(A[p], A[row]);
    const BigRational inv = 1 / A[row][c];
    for (auto& x : A[row]) x *= inv;
    for (std::size_t i = 0; i < A.size(); ++i) {
      if (i == row || A[i][c] == 0) continue;
      const BigRational f = A[i][c];
      for (std::size_t j = 0; j < A[i].size(); ++j) A[i][j] -= f * A[row][j];
    }
    pivots.push_back(c);
    ++row;
  }
  return pivots;
}

inline IntVector clear_denominators(const std::vector<BigRational>& v) {
  BigInt den = 1;
  for (const auto& x : v) den = boost::multiprecision::lcm(den, boost::multiprecision::denominator(x));
  IntVector out;
  BigInt g = 0;
  for (const auto& x : v) {
    out.push_back(boost::multiprecision::numerator(x) * (den / boost::multiprecision::denominator(x)));
    g = boost::multiprecision::gcd(g, out.back());
  }
  if (g > 1)
    for (auto& x : out) x /= g;
  return out;
}

}  // namespace detail

/// Primitive integer basis of the rational kernel of A.
inline std::vector<IntVector> integer_kernel(const IntMatrix& A) {
  const auto D = static_cast<std::size_t>(A.D);
  detail::RatMatrix M(D, std::vector<BigRational>(D));
  for (std::size_t i = 0; i < D; ++i)
    for (std::size_t j = 0; j < D; ++j) M[i][j] = A(static_cast<int>(i), static_cast<int>(j));
  const auto pivots = detail::rref(M, D);
  std::vector<IntVector> out;
  std::vector<bool> is_pivot(D, false);
  for (auto c : pivots) is_pivot[c] = true;
  for (std::size_t f = 0; f < D; ++f) {
    if (is_pivot[f]) continue;
    std::vector<BigRational> v(D);
    v[f] = 1;
    for (std::size_t r = 0; r < pivots.size(); ++r) v[pivots[r]] = -M[r][f];
    out.push_back(detail::clear_denominators(v));
  }
  return out;
}

/// Hermite-style integer row echelon basis of the Z-span of `rows`.
inline std::vector<IntVector> lattice_basis(std::vector<IntVector> rows) {
  if (rows.empty()) return rows;
  const std::size_t n = rows[0].size();
  std::size_t top = 0;
  for (std::size_t c = 0; c < n && top < rows.size(); ++c) {
    // Euclid down the column until a single nonzero entry remains at `top`.
    for (;;) {
      std::size_t best = rows.size();
      for (std::size_t i = top; i < rows.size(); ++i)
        if (rows[i][c] != 0 && (best == rows.size() || abs(rows[i][c]) < abs(rows[best][c]))) best = i;
      if (best == rows.size()) break;
      std::swap(rows[top], rows[best]);
      bool clean = true;
      for (std::size_t i = top + 1; i < rows.size(); ++i) {
        if (rows[i][c] == 0) continue;
        const BigInt q = rows[i][c] / rows[top][c];
        for (std::size_t j = c; j < n; ++j) rows[i][j] -= q * rows[top][j];
        if (rows[i][c] != 0) clean = false;
      }
      if (clean) break;
    }
    if (rows[top][c] == 0) continue;
    if (rows[top][c] < 0)
      for (auto& x : rows[top]) x = -x;
    for (std::size_t i = 0; i < top; ++i) {
      BigInt q = rows[i][c] / rows[top][c];
      if (rows[i][c] - q * rows[top][c] < 0) q -= 1;
      for (std::size_t j = c; j < n; ++j) rows[i][j] -= q * rows[top][j];
    }
    ++top;
  }
  rows.resize(top);
  return rows;
}

/// Matrix of T restricted to the T-invariant lattice spanned by `basis`
/// (rows), in that basis.
inline IntMatrix restrict_to_lattice(const IntMatrix& T, const std::vector<IntVector>& basis) {
  const auto k = basis.size();
  const auto D = static_cast<std::size_t>(T.D);
  IntMatrix out(static_cast<int>(k));
  for (std::size_t j = 0; j < k; ++j) {
    const IntVector y = T.apply(basis[j]);
    // Solve Σ_i c_i basis_i = y: D equations in k unknowns.
    detail::RatMatrix M(D, std::vector<BigRational>(k + 1));
    for (std::size_t r = 0; r < D; ++r) {
      for (std::size_t i = 0; i < k; ++i) M[r][i] = basis[i][r];
      M[r][k] = y[r];
    }
    const auto pivots = detail::rref(M, k + 1);
    if (!pivots.empty() && pivots.back() == k) throw InternalError("lattice is not T-invariant");
    for (std::size_t r = 0; r < pivots.size(); ++r) {
      const BigRational& c = M[r][k];
      if (boost::multiprecision::denominator(c) != 1) throw InternalError("restriction has non-integral entries");
      out(static_cast<int>(pivots[r]), static_cast<int>(j)) = boost::multiprecision::numerator(c);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Periodicity

struct Periodic {
  long long n = 0;
  IntVector w;
};

/// Minimal n with φ(n) ≤ D such that char_poly shares a factor with x^n − 1,
/// plus a primitive integer w with T^n w = w.
inline std::optional<Periodic> cyclotomic_periodicity(const IntMatrix& T) {
  const BigInt det = determinant(T);
  if (det != 1 && det != -1) throw PreconditionError("periodicity search needs |det T| = 1");
  const RatPoly cp = detail::to_rat(char_poly(T));
  for (long long n : period_candidates(T.D)) {
    if (degree(detail::primitive(detail::gcd(cp, detail::to_rat(x_pow_minus_one(n))))) < 1) continue;
    const IntMatrix A = matrix_power(T, static_cast<unsigned long long>(n)) - IntMatrix::identity(T.D);
    auto ker = integer_kernel(A);
    if (ker.empty()) throw InternalError("T^n − I is nonsingular although x^n − 1 meets the characteristic polynomial");
    Periodic out{n, ker.front()};
    if (matrix_power(T, static_cast<unsigned long long>(n)).apply(out.w) != out.w)
      throw InternalError("kernel vector is not fixed by T^n");
    return out;
  }
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Roots and Mahler measure

/// Yun's square-free decomposition: p = c · Π q_i^i with q_i square-free.
inline std::vector<std::pair<IntPoly, int>> squarefree_decomposition(const IntPoly& p) {
  std::vector<std::pair<IntPoly, int>> out;
  RatPoly f = detail::to_rat(p);
  detail::trim(f);
  if (f.size() <= 1) return out;
  RatPoly fp = detail::derivative(f);
  RatPoly a = detail::gcd(f, fp);
  RatPoly b = detail::divmod(f, a).first;
  RatPoly c = detail::divmod(fp, a).first;
  RatPoly d = c;
  {
    RatPoly bp = detail::derivative(b);
    d.resize(std::max(c.size(), bp.size()));
    for (std::size_t i = 0; i < bp.size(); ++i) d[i] -= bp[i];
    detail::trim(d);
  }
  int i = 1;
  while (b.size() > 1) {
    RatPoly g = detail::gcd(b, d);
    if (g.size() > 1) out.emplace_back(detail::primitive(g), i);
    b = detail::divmod(b, g).first;
    c = detail::divmod(d, g).first;
    RatPoly bp = detail::derivative(b);
    d = c;
    d.resize(std::max(c.size(), bp.size()));
    for (std::size_t k = 0; k < bp.size(); ++k) d[k] -= bp[k];
    detail::trim(d);
    ++i;
  }
  return out;
}

/// Roots of a square-free integer polynomial: companion eigenvalues refined
/// by Newton's method in long double.
inline std::vector<std::complex<double>> squarefree_roots(const IntPoly& p) {
  const int D = degree(p);
  if (D < 1) return {};
  const double lead = p.back().convert_to<double>();
  Eigen::MatrixXd C = Eigen::MatrixXd::Zero(D, D);
  for (int i = 1; i < D; ++i) C(i, i - 1) = 1;
  for (int i = 0; i < D; ++i) C(i, D - 1) = -p[static_cast<std::size_t>(i)].convert_to<double>() / lead;
  Eigen::EigenSolver<Eigen::MatrixXd> es(C, false);
  if (es.info() != Eigen::Success) throw NumericalFailure("companion eigenvalues did not converge");
  std::vector<long double> coef, dcoef;
  for (const auto& c : p) coef.push_back(c.convert_to<long double>());
  for (std::size_t i = 1; i < coef.size(); ++i) dcoef.push_back(coef[i] * static_cast<long double>(i));
  std::vector<std::complex<double>> out;
  for (Eigen::Index k = 0; k < D; ++k) {
    std::complex<long double> z(es.eigenvalues()(k).real(), es.eigenvalues()(k).imag());
    for (int it = 0; it < 60; ++it) {
      const auto dp = detail::evaluate(dcoef, z);
      if (std::abs(dp) == 0) break;
      const auto step = detail::evaluate(coef, z) / dp;
      z -= step;
      if (std::abs(step) <= 1e-18L * std::max<long double>(1, std::abs(z))) break;
    }
    out.emplace_back(static_cast<double>(z.real()), static_cast<double>(z.imag()));
  }
  return out;
}

struct RootModuli {
  double mahler = 1;
  double max_modulus = 0;
};

inline RootModuli root_moduli(const IntPoly& p) {
  IntPoly q = p;
  detail::trim(q);
  if (q.empty()) throw std::invalid_argument("zero polynomial");
  RootModuli out;
  long double m = std::abs(q.back().convert_to<long double>());
  for (const auto& [factor, mult] : squarefree_decomposition(q))
    for (const auto& z : squarefree_roots(factor)) {
      out.max_modulus = std::max(out.max_modulus, std::abs(z));
      m *= std::pow(std::max<long double>(1, std::abs(std::complex<long double>(z))), mult);
    }
  out.mahler = static_cast<double>(m);
  return out;
}

/// |a_n| Π max(1, |root|), with multiplicity.
inline double mahler_measure(const IntPoly& p) { return root_moduli(p).mahler; }

/// Dobrowolski's explicit lower bound 1 + (1/1200)(log log D / log D)^3 for
/// the Mahler measure of a non-cyclotomic algebraic integer of degree D ≥ 3.
/// Display only.
inline double dobrowolski_reference(int D) {
  if (D < 3) return 1.0;
  const double L = std::log(static_cast<double>(D));
  return 1.0 + std::pow(std::log(L) / L, 3) / 1200.0;
}

// ---------------------------------------------------------------------------
// Growth witness and dichotomy

struct Growth {
  double lambda_max = 0;
  double mahler = 0;
  IntVector v;
  double measured_rate = 0;  // (|T^N v| / |v|)^{1/N}
  int N = 0;
};

namespace detail {

/// Last continued-fraction convergent of x with denominator ≤ qmax.
inline std::pair<BigInt, BigInt> best_rational(double x, long long qmax) {
  BigInt p0 = 0, q0 = 1, p1 = 1, q1 = 0;
  double r = x;
  for (int it = 0; it < 64; ++it) {
    const double a = std::floor(r);
    const BigInt ai = static_cast<long long>(a);
    const BigInt p2 = ai * p1 + p0, q2 = ai * q1 + q0;
    if (q2 > qmax) break;
    p0 = p1, q0 = q1, p1 = p2, q1 = q2;
    if (std::abs(r - a) < 1e-15) break;
    r = 1.0 / (r - a);
  }
  if (q1 == 0) return {0, 1};
  return {p1, q1};
}

}  // namespace detail

/// Integer vector along the real or imaginary part of a dominant eigenvector,
/// with its measured growth rate under T^N.
inline Growth growth_witness(const IntMatrix& T, int N) {
  if (N < 1) throw std::invalid_argument("N must be positive");
  const auto moduli = root_moduli(char_poly(T));
  if (!(moduli.mahler > 1 + 1e-9)) throw PreconditionError("growth witness needs Mahler measure > 1");
  Eigen::EigenSolver<Eigen::MatrixXd> es(T.to_double());
  if (es.info() != Eigen::Success) throw NumericalFailure("eigen decomposition failed");
  Eigen::Index top = 0;
  for (Eigen::Index k = 1; k < es.eigenvalues().size(); ++k)
    if (std::abs(es.eigenvalues()(k)) > std::abs(es.eigenvalues()(top))) top = k;
  const Eigen::VectorXcd ev = es.eigenvectors().col(top);
  Eigen::VectorXd part = ev.real().norm() >= ev.imag().norm() ? Eigen::VectorXd(ev.real()) : Eigen::VectorXd(ev.imag());
  part /= part.cwiseAbs().maxCoeff();

  const IntMatrix TN = matrix_power(T, static_cast<unsigned long long>(N));
  for (long long qmax : {1'000LL, 1'000'000LL, 1'000'000'000LL}) {
    std::vector<BigRational> rat;
    for (Eigen::Index i = 0; i < part.size(); ++i) {
      auto [p, q] = detail::best_rational(part(i), qmax);
      rat.emplace_back(p, q);
    }
    IntVector v = detail::clear_denominators(rat);
    if (std::all_of(v.begin(), v.end(), [](const BigInt& x) { return x == 0; })) continue;
    const double rate = std::exp((detail::log_norm(TN.apply(v)) - detail::log_norm(v)) / N);
    if (rate >= 1 + 1e-6) return {moduli.max_modulus, moduli.mahler, std::move(v), rate, N};
  }
  throw NumericalFailure("rational rounding of the dominant eigenvector fell into a non-growing subspace");
}

struct DichotomyResult {
  std::variant<Periodic, Growth> branch;
  IntPoly char_poly;
  IntPoly cyclotomic_part;

  bool periodic() const { return std::holds_alternative<Periodic>(branch); }
  const Periodic& as_periodic() const { return std::get<Periodic>(branch); }
  const Growth& as_growth() const { return std::get<Growth>(branch); }
};

/// Periodic exactly when the characteristic polynomial is a product of
/// cyclotomic factors; otherwise a root of modulus > 1 exists and the growth
/// branch is taken even if a periodic vector also exists.
inline DichotomyResult dichotomy(const IntMatrix& T, int N = 20) {
  const BigInt det = determinant(T);
  if (det != 1 && det != -1) throw PreconditionError("dichotomy needs |det T| = 1");
  DichotomyResult out;
  out.char_poly = char_poly(T);
  auto [cyc, rest] = strip_cyclotomic(out.char_poly);
  out.cyclotomic_part = cyc;
  if (degree(rest) == 0) {
    auto per = cyclotomic_periodicity(T);
    if (!per) throw InternalError("cyclotomic characteristic polynomial without a periodic vector");
    out.branch = std::move(*per);
    return out;
  }
  const auto moduli = root_moduli(rest);
  if (!(moduli.max_modulus > 1 + 1e-9)) throw InternalError("Kronecker violation: no root of unity and no root outside the circle");
  out.branch = growth_witness(T, N);
  return out;
}

// ---------------------------------------------------------------------------
// Unipotent tower

struct UnipotentTower {
  std::vector<long long> periods;             // p_1..p_m
  BigInt P = 1;                               // Π p_i
  std::vector<std::vector<IntVector>> chain;  // lattice bases, from Z^D down to {0}
  std::vector<std::size_t> ranks;             // rank of each chain member
};

struct NonPolynomialGrowth {
  std::size_t level = 0;  // chain index where periodicity failed
  Growth witness;         // in coordinates of that lattice
};

/// Peels periodic directions: L_{i+1} = (T^{p_i} − I) L_i until L = 0, then
/// verifies (T^P − I)^D = 0.
inline std::variant<UnipotentTower, NonPolynomialGrowth> unipotent_tower(const IntMatrix& T, int N = 20) {
  const int D = T.D;
  UnipotentTower out;
  std::vector<IntVector> basis;
  for (int i = 0; i < D; ++i) {
    IntVector e(static_cast<std::size_t>(D));
    e[static_cast<std::size_t>(i)] = 1;
    basis.push_back(std::move(e));
  }
  out.chain.push_back(basis);
  out.ranks.push_back(basis.size());
  while (!basis.empty()) {
    const IntMatrix TL = restrict_to_lattice(T, basis);
    auto per = cyclotomic_periodicity(TL);
    if (!per) return NonPolynomialGrowth{out.chain.size() - 1, growth_witness(TL, N)};
    const IntMatrix step = matrix_power(T, static_cast<unsigned long long>(per->n)) - IntMatrix::identity(D);
    std::vector<IntVector> image;
    for (const auto& b : basis) image.push_back(step.apply(b));
    auto next = lattice_basis(std::move(image));
    if (next.size() >= basis.size()) throw InternalError("tower step did not drop rank");
    out.periods.push_back(per->n);
    out.P *= per->n;
    basis = std::move(next);
    out.chain.push_back(basis);
    out.ranks.push_back(basis.size());
  }
  const IntMatrix U = matrix_power(T, out.P.convert_to<unsigned long long>()) - IntMatrix::identity(D);
  if (!matrix_power(U, static_cast<unsigned long long>(D)).is_zero()) throw InternalError("T^P is not unipotent");
  return out;
}

// ---------------------------------------------------------------------------
// Slow growth of iterated conjugation

struct SlowGrowthParams {
  int R_min = 2;
  int R_max = 3;
  double ratio_bound = 1e3;  // accepted |B(10R)∩H| / |B(R)∩H|
  int delta = 1;             // N-pigeonhole step
  int range_cap = 6;         // largest |n| tested in the certificate
  std::size_t cap = 2'000'000;
};

struct SlowGrowth {
  int R = 0;
  int N = 0;
  int range = 0;  // T^n S̃ ⊆ B_S̃(3) verified for all |n| ≤ range
  // No N met |A_{N+δ}·B_H| < |A_N·B_H| + |B_H|; N minimises the gain instead
  // and only the exact certificate below vouches for S̃.
  bool pigeonhole_fallback = false;
  std::vector<Element> S_tilde;  // A_N, canonical order, contains the identity
  std::vector<std::pair<int, double>> ratio_profile;
  std::vector<std::size_t> product_sizes;  // |A_N·B_H| for N = 0, 1, ...
};

namespace detail {

inline ElementSet product_set(const MarkedGroup& G, const ElementSet& A, const std::vector<Element>& B,
                              std::size_t cap) {
  ElementSet out;
  for (const auto& a : A)
    for (const auto& b : B) {
      out.insert(G.multiply(a, b));
      if (out.size() > cap) throw ResourceLimitError("product set exceeds cap", cap);
    }
  return out;
}

}  // namespace detail

/// Conjugation T(h) = e h e^{-1}, iterated |n| times (e^{-1} for n < 0).
inline Element conjugate_power(const MarkedGroup& G, const Element& e, long long n, Element h) {
  const Element a = n >= 0 ? e : G.inverse(e);
  const Element ainv = G.inverse(a);
  for (long long k = 0; k < std::abs(n); ++k) h = G.multiply(G.multiply(a, h), ainv);
  return h;
}

inline SlowGrowth slow_growth_generators(const MarkedGroup& G, const Element& e,
                                         const std::function<bool(const Element&)>& in_H,
                                         const SlowGrowthParams& params = {}) {
  SlowGrowth out;
  std::vector<std::size_t> growth_data;
  int best_R = -1;
  double best_ratio = std::numeric_limits<double>::infinity();
  for (int R = params.R_min; R <= params.R_max; ++R) {
    std::optional<Ball> maybe;
    try {
      maybe = enumerate_ball(G, 10 * R, params.cap);
    } catch (const ResourceLimitError&) {
      // Record |B(R)| and the radius whose ball blew the cap.
      growth_data.push_back(enumerate_ball(G, R, params.cap).size());
      growth_data.push_back(static_cast<std::size_t>(10 * R));
      break;
    }
    const Ball& ball = *maybe;
    std::size_t small = 0, large = 0;
    for (std::size_t i = 0; i < ball.size(); ++i)
      if (in_H(ball.element(i))) {
        ++large;
        if (ball.norm(i) <= R) ++small;
      }
    growth_data.push_back(small);
    growth_data.push_back(large);
    const double ratio = static_cast<double>(large) / static_cast<double>(small);
    out.ratio_profile.emplace_back(R, ratio);
    if (ratio <= params.ratio_bound && ratio < best_ratio) best_ratio = ratio, best_R = R;
  }
  if (best_R < 0) throw BudgetExhausted("no radius with a bounded tenfold ratio in the enumerated range", growth_data);
  out.R = best_R;

  const Ball ball = enumerate_ball(G, out.R, params.cap);
  std::vector<Element> BH;
  for (const auto& g : ball.elements())
    if (in_H(g)) BH.push_back(g);

  auto A = [&](int N) {
    ElementSet s;
    for (long long n = -N; n <= N; ++n)
      for (const auto& h : BH) s.insert(conjugate_power(G, e, n, h));
    return s;
  };
  const int last = out.R / 2;
  int chosen = -1;
  std::size_t best_gain = std::numeric_limits<std::size_t>::max();
  int best_gain_N = 0;
  for (int N = 0; N <= last; ++N) {
    const std::size_t here = detail::product_set(G, A(N), BH, params.cap).size();
    const std::size_t next = detail::product_set(G, A(N + params.delta), BH, params.cap).size();
    out.product_sizes.push_back(here);
    if (next < here + BH.size()) {
      chosen = N;
      break;
    }
    if (next - here < best_gain) best_gain = next - here, best_gain_N = N;
  }
  if (chosen < 0) {
    out.pigeonhole_fallback = true;
    chosen = best_gain_N;
  }
  out.N = chosen;
  const ElementSet S = A(out.N);
  out.S_tilde.assign(S.begin(), S.end());
  detail::canonical_sort(out.S_tilde);

  ElementSet cube = detail::product_set(G, detail::product_set(G, S, out.S_tilde, params.cap), out.S_tilde, params.cap);
  for (int n = 1; n <= params.range_cap; ++n) {
    bool ok = true;
    for (long long sgn : {1LL, -1LL})
      for (const auto& s : out.S_tilde)
        if (!cube.count(conjugate_power(G, e, sgn * n, s))) {
          ok = false;
          break;
        }
    if (!ok) break;
    out.range = n;
  }
  if (out.range == 0) throw CertificateFailure("T S̃ is not contained in B_S̃(3)");
  return out;
}

// ---------------------------------------------------------------------------
// Torsion-free reduction

struct DroppedRelation {
  std::vector<Int> coefficients;  // Σ n_i f_i = 0
  std::size_t dropped = 0;        // index into the generator list of that round
};

struct TorsionFreeCert {
  std::vector<Element> S_prime;  // f_1..f_{D'} (inverses implied)
  BigInt M = 1;
  BigInt F_M = 0;                // F(M) at which torsion-freeness was verified
  std::vector<DroppedRelation> lineage;
  std::size_t iterations = 0;
};

inline BigInt default_torsion_F(const BigInt& M) { return 8 * M + 8; }

namespace detail {

/// One generator per inverse pair, identity removed, in generator order.
inline std::vector<Element> positive_generators(const MarkedGroup& A) {
  std::vector<Element> out;
  const Element id = A.identity();
  for (const auto& s : A.generators()) {
    if (s == id) continue;
    if (std::find(out.begin(), out.end(), A.inverse(s)) != out.end()) continue;
    out.push_back(s);
  }
  return out;
}

/// First relation among Σ n_i f_i with Σ|n_i| ≤ F, by canonical collision.
inline std::optional<std::vector<Int>> find_relation(const MarkedGroup& A, const std::vector<Element>& f, Int F,
                                                     std::size_t budget) {
  const std::size_t k = f.size();
  if (k == 0) return std::nullopt;
  // powers[i][F + m] = f_i^m
  std::vector<std::vector<Element>> powers(k);
  for (std::size_t i = 0; i < k; ++i) {
    powers[i].assign(static_cast<std::size_t>(2 * F + 1), A.identity());
    for (Int m = 1; m <= F; ++m) {
      powers[i][static_cast<std::size_t>(F + m)] = A.multiply(powers[i][static_cast<std::size_t>(F + m - 1)], f[i]);
      powers[i][static_cast<std::size_t>(F - m)] =
          A.multiply(powers[i][static_cast<std::size_t>(F - m + 1)], A.inverse(f[i]));
    }
  }
  ElementMap<std::vector<Int>> seen;
  std::vector<Int> n(k, 0);
  std::optional<std::vector<Int>> found;
  std::size_t visited = 0;
  std::function<void(std::size_t, Int, const Element&)> rec = [&](std::size_t i, Int left, const Element& acc) {
    if (found) return;
    if (i == k) {
      if (++visited > budget) throw BudgetExhausted("torsion search budget exceeded", {visited});
      auto [it, fresh] = seen.emplace(acc, n);
      if (!fresh) {
        std::vector<Int> rel(k);
        for (std::size_t t = 0; t < k; ++t) rel[t] = n[t] - it->second[t];
        found = rel;
      }
      return;
    }
    for (Int m = -left; m <= left && !found; ++m) {
      n[i] = m;
      rec(i + 1, left - std::abs(m), A.multiply(acc, powers[i][static_cast<std::size_t>(F + m)]));
    }
    n[i] = 0;
  };
  rec(0, F, A.identity());
  return found;
}

}  // namespace detail

/// Rank reduction: while some Σ n_i f_i with Σ|n_i| ≤ F(M) collide, drop the
/// generator with the largest |n_i| (lowest index on ties) and compose M with
/// the (D'·2F(M), 1) step.  At most D rounds.
inline TorsionFreeCert torsion_free_reduce(const MarkedGroup& A,
                                           const std::function<BigInt(const BigInt&)>& F = default_torsion_F,
                                           std::size_t budget = 5'000'000) {
  TorsionFreeCert out;
  out.S_prime = detail::positive_generators(A);
  const std::size_t D = out.S_prime.size();
  for (;;) {
    out.F_M = F(out.M);
    if (out.F_M > BigInt(std::numeric_limits<Int>::max() / 4))
      throw BudgetExhausted("F(M) beyond the enumerable range", {out.S_prime.size()});
    const Int FM = out.F_M.convert_to<Int>();
    auto rel = detail::find_relation(A, out.S_prime, FM, budget);
    if (!rel) return out;
    if (++out.iterations > D) throw InternalError("rank reduction did not terminate within D rounds");
    std::size_t drop = 0;
    for (std::size_t i = 1; i < rel->size(); ++i)
      if (std::abs((*rel)[i]) > std::abs((*rel)[drop])) drop = i;
    out.lineage.push_back({*rel, drop});
    const BigInt Kp = BigInt(out.S_prime.size()) * 2 * out.F_M;
    out.M = trans_params(out.M, 1, Kp, 1).first;
    out.S_prime.erase(out.S_prime.begin() + static_cast<std::ptrdiff_t>(drop));
  }
}

// ---------------------------------------------------------------------------
// Norm comparability and assembly

struct NormComparability {
  double M_est = 1;        // max(expansion, compression)
  double expansion = 0;    // max ‖h‖_S̃ / ‖h‖_S'''
  double compression = 0;  // max ‖h‖_S''' / ‖h‖_S̃
  Element worst;           // element attaining M_est
  int radius = 0;          // S'''-ball radius examined
};

/// max over h in the S'''-ball of ‖h‖_S̃/‖h‖_S''' and its reciprocal, by BFS
/// in both Cayley graphs.
inline NormComparability norm_comparability_estimate(const MarkedGroup& G, const std::vector<Element>& S_tilde,
                                                     const std::vector<Element>& S_triple, int radius,
                                                     std::size_t cap = kDefaultElementCap) {
  const MarkedGroup Gt = MarkedGroup::closed_under_inverse(G.backend(), S_tilde);
  const MarkedGroup G3 = MarkedGroup::closed_under_inverse(G.backend(), S_triple);
  const Ball ball3 = enumerate_ball(G3, radius, cap);
  int reach = 0;
  const auto gen_norms = word_norms(Gt, G3.generators(), 64, cap);
  for (const auto& n : gen_norms) {
    if (!n) throw BudgetExhausted("an S''' generator is not reached by S̃ within radius 64", {});
    reach = std::max(reach, *n);
  }
  const auto norms = word_norms(Gt, ball3.elements(), reach * radius, cap);
  NormComparability out;
  out.radius = radius;
  for (std::size_t i = 0; i < ball3.size(); ++i) {
    if (ball3.norm(i) == 0) continue;
    if (!norms[i]) throw InternalError("S''' element beyond its S̃ norm bound");
    const double a = *norms[i], b = ball3.norm(i);
    out.expansion = std::max(out.expansion, a / b);
    out.compression = std::max(out.compression, b / a);
    const double m = std::max(a / b, b / a);
    if (m > out.M_est) out.M_est = m, out.worst = ball3.element(i);
  }
  return out;
}

struct AssemblyCert {
  std::vector<Element> S_new;
  int step = 0;
  NilpotencyResult nilpotency;
};

/// S_new = {e^{±P}} ∪ H_part, checked for nilpotency of step r + 1.
inline AssemblyCert assemble_virtually_nilpotent(const MarkedGroup& G, const Element& e, long long P,
                                                 const std::vector<Element>& H_part, int r) {
  if (P < 1) throw std::invalid_argument("P must be positive");
  Element eP = G.identity();
  for (long long k = 0; k < P; ++k) eP = G.multiply(eP, e);
  std::vector<Element> S{eP};
  S.insert(S.end(), H_part.begin(), H_part.end());
  const MarkedGroup Gn = MarkedGroup::closed_under_inverse(G.backend(), S);
  AssemblyCert out{Gn.generators(), r + 1, {}};
  out.nilpotency = nilpotency_check(Gn, r + 1);
  return out;
}

}  // namespace fgromov
