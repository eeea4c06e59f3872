#pragma once

// Group backends, marked groups and exact Cayley-ball enumeration.
//
// Elements of every backend share one representation: a vector of 64-bit
// integers holding the backend's normal form.  The canonical key of an element
// is the concatenated signed-LEB128 encoding of that vector, so it is
// self-delimiting and injective, and byte order of keys gives a total order
// that is stable across runs and platforms.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <variant>
#include <vector>

#include <boost/multiprecision/cpp_int.hpp>

#include "fgromov/errors.hpp"

namespace fgromov {

using Int = std::int64_t;
using Element = std::vector<Int>;
using BigInt = boost::multiprecision::cpp_int;

inline constexpr std::size_t kDefaultElementCap = 5'000'000;

struct ElementHash {
  std::size_t operator()(const Element& e) const noexcept {
    std::uint64_t h = 0x84222325cbf29ce4ull ^ e.size();
    for (Int v : e) {
      std::uint64_t z = static_cast<std::uint64_t>(v) + 0x9e3779b97f4a7c15ull + h;
      z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
      z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
      h = z ^ (z >> 31);
    }
    return static_cast<std::size_t>(h);
  }
};

using ElementSet = std::unordered_set<Element, ElementHash>;
template <class V>
using ElementMap = std::unordered_map<Element, V, ElementHash>;

namespace detail {

inline Int checked_add(Int a, Int b) {
  Int r;
  if (__builtin_add_overflow(a, b, &r)) throw ArithmeticOverflow("integer overflow in group law");
  return r;
}

inline Int checked_mul(Int a, Int b) {
  Int r;
  if (__builtin_mul_overflow(a, b, &r)) throw ArithmeticOverflow("integer overflow in group law");
  return r;
}

inline void append_sleb128(std::string& out, Int value) {
  bool more = true;
  while (more) {
    auto byte = static_cast<unsigned char>(value & 0x7f);
    value >>= 7;  // arithmetic shift
    if ((value == 0 && !(byte & 0x40)) || (value == -1 && (byte & 0x40)))
      more = false;
    else
      byte |= 0x80;
    out.push_back(static_cast<char>(byte));
  }
}

inline Int read_sleb128(std::string_view in, std::size_t& pos) {
  std::uint64_t result = 0;
  unsigned shift = 0;
  unsigned char byte = 0;
  do {
    if (pos >= in.size() || shift >= 64) throw ParseError("truncated or oversized varint");
    byte = static_cast<unsigned char>(in[pos++]);
    result |= static_cast<std::uint64_t>(byte & 0x7f) << shift;
    shift += 7;
  } while (byte & 0x80);
  if (shift < 64 && (byte & 0x40)) result |= ~std::uint64_t{0} << shift;
  return static_cast<Int>(result);
}

inline void append_uleb128(std::string& out, std::uint64_t value) {
  do {
    auto byte = static_cast<unsigned char>(value & 0x7f);
    value >>= 7;
    if (value != 0) byte |= 0x80;
    out.push_back(static_cast<char>(byte));
  } while (value != 0);
}

inline std::uint64_t read_uleb128(std::string_view in, std::size_t& pos) {
  std::uint64_t result = 0;
  unsigned shift = 0;
  unsigned char byte = 0;
  do {
    if (pos >= in.size() || shift >= 64) throw ParseError("truncated or oversized varint");
    byte = static_cast<unsigned char>(in[pos++]);
    result |= static_cast<std::uint64_t>(byte & 0x7f) << shift;
    shift += 7;
  } while (byte & 0x80);
  return result;
}

inline std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t h = 0xcbf29ce484222325ull) {
  for (char c : bytes) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

// Fraction-free determinant (Bareiss) of an n×n matrix in row-major order.
inline __int128 bareiss_det(std::vector<__int128> a, int n) {
  if (n == 0) return 1;
  __int128 sign = 1, prev = 1;
  for (int k = 0; k < n - 1; ++k) {
    if (a[k * n + k] == 0) {
      int p = k + 1;
      while (p < n && a[p * n + k] == 0) ++p;
      if (p == n) return 0;
      for (int j = 0; j < n; ++j) std::swap(a[k * n + j], a[p * n + j]);
      sign = -sign;
    }
    for (int i = k + 1; i < n; ++i)
      for (int j = k + 1; j < n; ++j)
        a[i * n + j] = (a[i * n + j] * a[k * n + k] - a[i * n + k] * a[k * n + j]) / prev;
    prev = a[k * n + k];
  }
  return sign * a[(n - 1) * n + (n - 1)];
}

inline Int narrow(__int128 v) {
  if (v > std::numeric_limits<Int>::max() || v < std::numeric_limits<Int>::min())
    throw ArithmeticOverflow("integer overflow in matrix inverse");
  return static_cast<Int>(v);
}

inline std::vector<Int> mat_mul(const std::vector<Int>& a, const std::vector<Int>& b, int n) {
  std::vector<Int> c(static_cast<std::size_t>(n) * n, 0);
  for (int i = 0; i < n; ++i)
    for (int k = 0; k < n; ++k) {
      Int aik = a[i * n + k];
      if (aik == 0) continue;
      for (int j = 0; j < n; ++j)
        c[i * n + j] = checked_add(c[i * n + j], checked_mul(aik, b[k * n + j]));
    }
  return c;
}

inline std::vector<Int> mat_vec(const std::vector<Int>& a, const Int* v, int n) {
  std::vector<Int> out(n, 0);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) out[i] = checked_add(out[i], checked_mul(a[i * n + j], v[j]));
  return out;
}

/// Exact inverse of a unimodular integer matrix via the adjugate.
inline std::vector<Int> unimodular_inverse(const std::vector<Int>& a, int n) {
  std::vector<__int128> wide(a.begin(), a.end());
  __int128 det = bareiss_det(wide, n);
  if (det != 1 && det != -1) throw BackendMismatch("matrix is not invertible over the integers");
  std::vector<Int> inv(static_cast<std::size_t>(n) * n);
  std::vector<__int128> minor(static_cast<std::size_t>(n - 1) * (n - 1));
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      int m = 0;
      for (int r = 0; r < n; ++r) {
        if (r == i) continue;
        for (int c = 0; c < n; ++c)
          if (c != j) minor[m++] = a[r * n + c];
      }
      __int128 cof = bareiss_det(minor, n - 1);
      if ((i + j) % 2) cof = -cof;
      inv[j * n + i] = narrow(cof * det);
    }
  return inv;
}

inline Int matrix_determinant(const std::vector<Int>& a, int n) {
  return narrow(bareiss_det(std::vector<__int128>(a.begin(), a.end()), n));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Backends

/// D×D integer matrices under multiplication; only unimodular elements are
/// invertible, which is all a generating set can produce.
struct IntegerMatrixGroup {
  int dim = 2;
};

/// Z/N, normal form in [0, N).
struct CyclicGroup {
  Int modulus = 1;
};

struct FreeAbelianGroup {
  int dim = 1;
};

/// Z ⋉_T Z^D with (n, v)·(m, w) = (n + m, v + T^n w).  Normal form [n, v...].
class SemidirectGroup {
 public:
  SemidirectGroup(int dim, std::vector<Int> T) : dim_(dim), T_(std::move(T)) {
    if (dim_ < 1 || T_.size() != static_cast<std::size_t>(dim_) * dim_)
      throw BackendMismatch("semidirect matrix has wrong shape");
    Int det = detail::matrix_determinant(T_, dim_);
    if (det != 1 && det != -1) throw BackendMismatch("semidirect matrix must have determinant ±1");
    T_inv_ = detail::unimodular_inverse(T_, dim_);
  }
  int dim() const { return dim_; }
  const std::vector<Int>& matrix() const { return T_; }
  const std::vector<Int>& inverse_matrix() const { return T_inv_; }

  /// T^n v.
  std::vector<Int> act(Int n, const Int* v) const {
    std::vector<Int> out(v, v + dim_);
    const auto& M = n >= 0 ? T_ : T_inv_;
    for (Int k = 0, steps = n >= 0 ? n : -n; k < steps; ++k) out = detail::mat_vec(M, out.data(), dim_);
    return out;
  }

 private:
  int dim_;
  std::vector<Int> T_;
  std::vector<Int> T_inv_;
};

/// Z/2 ≀ Z.  Normal form [cursor, lit lamps in increasing order...].
struct LamplighterGroup {};

/// Free group of rank k.  Normal form is a reduced word of letters ±(i+1).
struct FreeGroup {
  int rank = 2;
};

using GroupBackend =
    std::variant<IntegerMatrixGroup, CyclicGroup, FreeAbelianGroup, SemidirectGroup, LamplighterGroup, FreeGroup>;

namespace detail {

template <class... Fs>
struct overloaded : Fs... {
  using Fs::operator()...;
};
template <class... Fs>
overloaded(Fs...) -> overloaded<Fs...>;

inline Element lamp_product(const Element& g, const Element& h) {
  // (a, f)(b, g) = (a + b, f Δ (g + a))
  Int shift = g[0];
  Element out;
  out.reserve(g.size() + h.size());
  out.push_back(checked_add(g[0], h[0]));
  auto i = g.begin() + 1, ie = g.end();
  auto j = h.begin() + 1, je = h.end();
  while (i != ie || j != je) {
    if (j == je || (i != ie && *i < checked_add(*j, shift))) {
      out.push_back(*i++);
    } else {
      Int hj = checked_add(*j, shift);
      if (i != ie && *i == hj) {
        ++i;  // toggled off
      } else {
        out.push_back(hj);
      }
      ++j;
    }
  }
  return out;
}

}  // namespace detail

inline std::size_t element_width(const GroupBackend& b) {
  return std::visit(
      detail::overloaded{
          [](const IntegerMatrixGroup& m) { return static_cast<std::size_t>(m.dim) * m.dim; },
          [](const CyclicGroup&) { return std::size_t{1}; },
          [](const FreeAbelianGroup& a) { return static_cast<std::size_t>(a.dim); },
          [](const SemidirectGroup& s) { return static_cast<std::size_t>(s.dim()) + 1; },
          [](const LamplighterGroup&) { return std::size_t{0}; },  // variable
          [](const FreeGroup&) { return std::size_t{0}; },         // variable
      },
      b);
}

inline bool is_valid(const GroupBackend& b, const Element& g) {
  return std::visit(
      detail::overloaded{
          [&](const IntegerMatrixGroup& m) { return g.size() == static_cast<std::size_t>(m.dim) * m.dim; },
          [&](const CyclicGroup& c) { return g.size() == 1 && g[0] >= 0 && g[0] < c.modulus; },
          [&](const FreeAbelianGroup& a) { return g.size() == static_cast<std::size_t>(a.dim); },
          [&](const SemidirectGroup& s) { return g.size() == static_cast<std::size_t>(s.dim()) + 1; },
          [&](const LamplighterGroup&) {
            if (g.empty()) return false;
            for (std::size_t i = 2; i < g.size(); ++i)
              if (g[i - 1] >= g[i]) return false;
            return true;
          },
          [&](const FreeGroup& f) {
            for (std::size_t i = 0; i < g.size(); ++i) {
              if (g[i] == 0 || g[i] > f.rank || g[i] < -f.rank) return false;
              if (i > 0 && g[i] == -g[i - 1]) return false;
            }
            return true;
          },
      },
      b);
}

inline Element identity(const GroupBackend& b) {
  return std::visit(detail::overloaded{
                        [](const IntegerMatrixGroup& m) {
                          Element e(static_cast<std::size_t>(m.dim) * m.dim, 0);
                          for (int i = 0; i < m.dim; ++i) e[i * m.dim + i] = 1;
                          return e;
                        },
                        [](const CyclicGroup&) { return Element{0}; },
                        [](const FreeAbelianGroup& a) { return Element(a.dim, 0); },
                        [](const SemidirectGroup& s) { return Element(s.dim() + 1, 0); },
                        [](const LamplighterGroup&) { return Element{0}; },
                        [](const FreeGroup&) { return Element{}; },
                    },
                    b);
}

inline Element multiply(const GroupBackend& b, const Element& g, const Element& h) {
  return std::visit(
      detail::overloaded{
          [&](const IntegerMatrixGroup& m) {
            if (!is_valid(b, g) || !is_valid(b, h)) throw BackendMismatch("matrix size mismatch");
            return detail::mat_mul(g, h, m.dim);
          },
          [&](const CyclicGroup& c) {
            if (!is_valid(b, g) || !is_valid(b, h)) throw BackendMismatch("not a residue");
            Int s = g[0] + h[0];  // both < modulus ≤ 2^62
            return Element{s >= c.modulus ? s - c.modulus : s};
          },
          [&](const FreeAbelianGroup& a) {
            if (!is_valid(b, g) || !is_valid(b, h)) throw BackendMismatch("lattice dimension mismatch");
            Element out(a.dim);
            for (int i = 0; i < a.dim; ++i) out[i] = detail::checked_add(g[i], h[i]);
            return out;
          },
          [&](const SemidirectGroup& s) {
            if (!is_valid(b, g) || !is_valid(b, h)) throw BackendMismatch("semidirect element size mismatch");
            auto tw = s.act(g[0], h.data() + 1);
            Element out(s.dim() + 1);
            out[0] = detail::checked_add(g[0], h[0]);
            for (int i = 0; i < s.dim(); ++i) out[i + 1] = detail::checked_add(g[i + 1], tw[i]);
            return out;
          },
          [&](const LamplighterGroup&) {
            if (g.empty() || h.empty()) throw BackendMismatch("lamplighter state is empty");
            return detail::lamp_product(g, h);
          },
          [&](const FreeGroup&) {
            Element out = g;
            std::size_t j = 0;
            while (j < h.size() && !out.empty() && out.back() == -h[j]) {
              out.pop_back();
              ++j;
            }
            out.insert(out.end(), h.begin() + static_cast<std::ptrdiff_t>(j), h.end());
            return out;
          },
      },
      b);
}

inline Element inverse(const GroupBackend& b, const Element& g) {
  return std::visit(detail::overloaded{
                        [&](const IntegerMatrixGroup& m) { return detail::unimodular_inverse(g, m.dim); },
                        [&](const CyclicGroup& c) { return Element{g[0] == 0 ? 0 : c.modulus - g[0]}; },
                        [&](const FreeAbelianGroup&) {
                          Element out(g.size());
                          for (std::size_t i = 0; i < g.size(); ++i) out[i] = detail::checked_mul(g[i], -1);
                          return out;
                        },
                        [&](const SemidirectGroup& s) {
                          // (n, v)^{-1} = (-n, -T^{-n} v)
                          auto w = s.act(-g[0], g.data() + 1);
                          Element out(s.dim() + 1);
                          out[0] = -g[0];
                          for (int i = 0; i < s.dim(); ++i) out[i + 1] = detail::checked_mul(w[i], -1);
                          return out;
                        },
                        [&](const LamplighterGroup&) {
                          // (a, f)^{-1} = (-a, f - a)
                          Element out{-g[0]};
                          for (std::size_t i = 1; i < g.size(); ++i) out.push_back(detail::checked_add(g[i], -g[0]));
                          return out;
                        },
                        [&](const FreeGroup&) {
                          Element out(g.rbegin(), g.rend());
                          for (auto& l : out) l = -l;
                          return out;
                        },
                    },
                    b);
}

inline std::string describe(const GroupBackend& b) {
  return std::visit(detail::overloaded{
                        [](const IntegerMatrixGroup& m) { return "integer_matrix(" + std::to_string(m.dim) + ")"; },
                        [](const CyclicGroup& c) { return "cyclic(" + std::to_string(c.modulus) + ")"; },
                        [](const FreeAbelianGroup& a) { return "free_abelian(" + std::to_string(a.dim) + ")"; },
                        [](const SemidirectGroup& s) {
                          std::string out = "semidirect(" + std::to_string(s.dim()) + ";";
                          for (std::size_t i = 0; i < s.matrix().size(); ++i)
                            out += (i ? "," : "") + std::to_string(s.matrix()[i]);
                          return out + ")";
                        },
                        [](const LamplighterGroup&) { return std::string("lamplighter"); },
                        [](const FreeGroup& f) { return "free(" + std::to_string(f.rank) + ")"; },
                    },
                    b);
}

inline std::string canonical_key(const Element& g) {
  std::string key;
  key.reserve(g.size() * 2);
  for (Int v : g) detail::append_sleb128(key, v);
  return key;
}

inline Element decode_key(std::string_view key) {
  Element g;
  std::size_t pos = 0;
  while (pos < key.size()) g.push_back(detail::read_sleb128(key, pos));
  return g;
}

inline std::string format_element(const Element& g) {
  std::string out = "[";
  for (std::size_t i = 0; i < g.size(); ++i) out += (i ? " " : "") + std::to_string(g[i]);
  return out + "]";
}

inline bool key_less(const Element& a, const Element& b) { return canonical_key(a) < canonical_key(b); }

// ---------------------------------------------------------------------------
// Marked groups

class MarkedGroup {
 public:
  MarkedGroup(GroupBackend backend, std::vector<Element> generators) : backend_(std::move(backend)) {
    for (auto& s : generators) {
      if (!is_valid(backend_, s)) throw InvalidGeneratingSet("generator " + format_element(s) + " is not a backend element");
      if (std::find(gens_.begin(), gens_.end(), s) == gens_.end()) gens_.push_back(std::move(s));
    }
    if (gens_.empty()) throw InvalidGeneratingSet("generating set must be non-empty");
    const Element id = fgromov::identity(backend_);
    inverse_gen_.resize(gens_.size());
    for (std::size_t j = 0; j < gens_.size(); ++j) {
      Element inv = fgromov::inverse(backend_, gens_[j]);
      auto it = std::find(gens_.begin(), gens_.end(), inv);
      if (it == gens_.end())
        throw InvalidGeneratingSet("generating set is not symmetric: missing inverse of " + format_element(gens_[j]));
      inverse_gen_[j] = static_cast<std::size_t>(it - gens_.begin());
      if (gens_[j] == id) has_identity_ = true;
    }
    std::string blob = describe(backend_);
    for (const auto& s : gens_) {
      blob.push_back('|');
      blob += canonical_key(s);
    }
    fingerprint_ = detail::hex64(detail::fnv1a64(blob));
  }

  /// Adds missing inverses; `added` reports whether anything was appended.
  static MarkedGroup closed_under_inverse(GroupBackend backend, std::vector<Element> generators, bool* added = nullptr) {
    std::vector<Element> out;
    bool grew = false;
    for (const auto& s : generators)
      if (std::find(out.begin(), out.end(), s) == out.end()) out.push_back(s);
    const std::size_t n = out.size();
    for (std::size_t i = 0; i < n; ++i) {
      if (!is_valid(backend, out[i])) throw InvalidGeneratingSet("generator " + format_element(out[i]) + " is not a backend element");
      Element inv = fgromov::inverse(backend, out[i]);
      if (std::find(out.begin(), out.end(), inv) == out.end()) {
        out.push_back(std::move(inv));
        grew = true;
      }
    }
    if (added) *added = grew;
    return MarkedGroup(std::move(backend), std::move(out));
  }

  const GroupBackend& backend() const { return backend_; }
  const std::vector<Element>& generators() const { return gens_; }
  std::size_t num_generators() const { return gens_.size(); }
  std::size_t inverse_generator(std::size_t j) const { return inverse_gen_[j]; }
  bool contains_identity() const { return has_identity_; }
  const std::string& fingerprint() const { return fingerprint_; }

  Element identity() const { return fgromov::identity(backend_); }
  Element multiply(const Element& g, const Element& h) const { return fgromov::multiply(backend_, g, h); }
  Element inverse(const Element& g) const { return fgromov::inverse(backend_, g); }
  Element commutator(const Element& a, const Element& b) const {
    return multiply(multiply(a, b), multiply(inverse(a), inverse(b)));
  }

 private:
  GroupBackend backend_;
  std::vector<Element> gens_;
  std::vector<std::size_t> inverse_gen_;
  bool has_identity_ = false;
  std::string fingerprint_;
};

/// Commonly used marked groups.
namespace groups {

inline MarkedGroup free_abelian(int dim) {
  std::vector<Element> S;
  for (int i = 0; i < dim; ++i) {
    Element e(dim, 0);
    e[i] = 1;
    S.push_back(e);
    e[i] = -1;
    S.push_back(e);
  }
  return MarkedGroup(FreeAbelianGroup{dim}, S);
}

/// Z/N with S = {±step}.
inline MarkedGroup cyclic(Int modulus, Int step = 1) {
  if (modulus < 1) throw InvalidGeneratingSet("modulus must be positive");
  Int s = ((step % modulus) + modulus) % modulus;
  return MarkedGroup(CyclicGroup{modulus}, {{s}, {s == 0 ? 0 : modulus - s}});
}

/// Upper unitriangular 3×3 integer matrices with the elementary generators
/// I ± E12 and I ± E23.
inline MarkedGroup heisenberg() {
  auto m = [](Int a, Int c) { return Element{1, a, 0, 0, 1, c, 0, 0, 1}; };
  return MarkedGroup(IntegerMatrixGroup{3}, {m(1, 0), m(-1, 0), m(0, 1), m(0, -1)});
}

inline MarkedGroup lamplighter() { return MarkedGroup(LamplighterGroup{}, {{1}, {-1}, {0, 0}}); }

inline MarkedGroup free_group(int rank) {
  std::vector<Element> S;
  for (int i = 1; i <= rank; ++i) {
    S.push_back({i});
    S.push_back({-i});
  }
  return MarkedGroup(FreeGroup{rank}, S);
}

/// Z ⋉_T Z^D with S = {e^{±1}} ∪ {±f_i}; e = (1, 0) and f_i the lattice basis.
inline MarkedGroup semidirect(int dim, std::vector<Int> T) {
  SemidirectGroup backend(dim, std::move(T));
  std::vector<Element> S;
  Element e(dim + 1, 0);
  e[0] = 1;
  S.push_back(e);
  e[0] = -1;
  S.push_back(e);
  for (int i = 0; i < dim; ++i) {
    Element f(dim + 1, 0);
    f[i + 1] = 1;
    S.push_back(f);
    f[i + 1] = -1;
    S.push_back(f);
  }
  return MarkedGroup(backend, S);
}

}  // namespace groups

// ---------------------------------------------------------------------------
// Balls

/// Exact enumeration of B_S(R), ordered by (word norm, canonical key).
/// Immutable once built.
class Ball {
 public:
  const MarkedGroup& group() const { return group_; }
  int radius() const { return radius_; }
  std::size_t size() const { return elements_.size(); }
  const Element& element(std::size_t i) const { return elements_[i]; }
  const std::vector<Element>& elements() const { return elements_; }
  int norm(std::size_t i) const { return norms_[i]; }
  std::string key(std::size_t i) const { return canonical_key(elements_[i]); }
  const std::vector<std::size_t>& sphere_sizes() const { return sphere_sizes_; }

  /// Whether the ball is the whole group: every x·s is enumerated.
  bool complete() const { return complete_; }

  std::optional<std::size_t> find(const Element& g) const {
    auto it = index_.find(g);
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }
  bool contains(const Element& g) const { return index_.count(g) != 0; }

  /// Index of x_i·s_j, or -1 when it lies outside the ball.
  std::int64_t neighbor(std::size_t i, std::size_t j) const {
    return right_[i * group_.num_generators() + j];
  }
  std::size_t inverse_index(std::size_t i) const { return inverse_[i]; }

  /// |B_S(min(r, R))|; elements of the sub-ball form a prefix of the ordering.
  std::size_t prefix(int r) const {
    if (r < 0) return 0;
    if (r >= radius_) return size();
    return offsets_[r + 1];
  }

  /// All neighbours present.
  bool interior(std::size_t i) const {
    const std::size_t k = group_.num_generators();
    for (std::size_t j = 0; j < k; ++j)
      if (right_[i * k + j] < 0) return false;
    return true;
  }

  Ball(MarkedGroup group, int radius) : group_(std::move(group)), radius_(radius) {}

  /// Used by enumeration and cache loading; elements must already be in
  /// canonical order with matching sphere sizes.
  void finalize(std::vector<Element> elements, std::vector<std::size_t> sphere_sizes) {
    elements_ = std::move(elements);
    sphere_sizes_ = std::move(sphere_sizes);
    offsets_.assign(sphere_sizes_.size() + 1, 0);
    norms_.clear();
    norms_.reserve(elements_.size());
    for (std::size_t r = 0; r < sphere_sizes_.size(); ++r) {
      offsets_[r + 1] = offsets_[r] + sphere_sizes_[r];
      for (std::size_t k = 0; k < sphere_sizes_[r]; ++k) norms_.push_back(static_cast<int>(r));
    }
    if (offsets_.back() != elements_.size()) throw InternalError("sphere sizes do not sum to the ball size");
    index_.clear();
    index_.reserve(elements_.size());
    for (std::size_t i = 0; i < elements_.size(); ++i)
      if (!index_.emplace(elements_[i], i).second) throw InternalError("duplicate element in ball");
    const std::size_t k = group_.num_generators();
    right_.assign(elements_.size() * k, -1);
    complete_ = true;
    for (std::size_t i = 0; i < elements_.size(); ++i)
      for (std::size_t j = 0; j < k; ++j) {
        auto it = index_.find(group_.multiply(elements_[i], group_.generators()[j]));
        if (it != index_.end())
          right_[i * k + j] = static_cast<std::int64_t>(it->second);
        else
          complete_ = false;
      }
    inverse_.resize(elements_.size());
    for (std::size_t i = 0; i < elements_.size(); ++i) {
      auto it = index_.find(group_.inverse(elements_[i]));
      if (it == index_.end()) throw InternalError("ball is not closed under inversion");
      inverse_[i] = it->second;
    }
  }

 private:
  MarkedGroup group_;
  int radius_;
  bool complete_ = false;
  std::vector<Element> elements_;
  std::vector<int> norms_;
  std::vector<std::size_t> sphere_sizes_;
  std::vector<std::size_t> offsets_;
  ElementMap<std::size_t> index_;
  std::vector<std::int64_t> right_;
  std::vector<std::size_t> inverse_;
};

namespace detail {

/// Breadth-first sphere expansion.  `visit(r, sphere)` receives each sphere
/// sorted by canonical key and returns false to stop early.  Returns the
/// number of spheres produced.
template <class Visit>
int expand_spheres(const MarkedGroup& G, int R, std::size_t cap, Visit&& visit) {
  ElementSet seen;
  std::vector<Element> frontier{G.identity()};
  seen.insert(frontier.front());
  if (!visit(0, frontier)) return 1;
  for (int r = 1; r <= R; ++r) {
    std::vector<std::pair<std::string, Element>> next;
    for (const auto& x : frontier)
      for (const auto& s : G.generators()) {
        Element y = G.multiply(x, s);
        if (seen.insert(y).second) {
          if (seen.size() > cap)
            throw ResourceLimitError("ball enumeration exceeded the element cap of " + std::to_string(cap) +
                                         " at radius " + std::to_string(r),
                                     cap);
          std::string k = canonical_key(y);
          next.emplace_back(std::move(k), std::move(y));
        }
      }
    std::sort(next.begin(), next.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    frontier.clear();
    frontier.reserve(next.size());
    for (auto& kv : next) frontier.push_back(std::move(kv.second));
    if (!visit(r, frontier)) return r + 1;
    if (frontier.empty()) return r + 1;
  }
  return R + 1;
}

}  // namespace detail

inline Ball enumerate_ball(const MarkedGroup& G, int R, std::size_t cap = kDefaultElementCap) {
  if (R < 0) throw std::invalid_argument("radius must be non-negative");
  std::vector<Element> elements;
  std::vector<std::size_t> spheres(static_cast<std::size_t>(R) + 1, 0);
  detail::expand_spheres(G, R, cap, [&](int r, const std::vector<Element>& sphere) {
    spheres[r] = sphere.size();
    elements.insert(elements.end(), sphere.begin(), sphere.end());
    return true;
  });
  Ball ball(G, R);
  ball.finalize(std::move(elements), std::move(spheres));
  return ball;
}

/// Exact word norms of several targets, found by one BFS that stops as soon as
/// all are located or R_max is reached.
inline std::vector<std::optional<int>> word_norms(const MarkedGroup& G, const std::vector<Element>& targets, int R_max,
                                                  std::size_t cap = kDefaultElementCap) {
  std::vector<std::optional<int>> out(targets.size());
  ElementMap<std::vector<std::size_t>> wanted;
  for (std::size_t i = 0; i < targets.size(); ++i) wanted[targets[i]].push_back(i);
  std::size_t remaining = targets.size();
  if (remaining == 0) return out;
  detail::expand_spheres(G, R_max, cap, [&](int r, const std::vector<Element>& sphere) {
    for (const auto& x : sphere) {
      auto it = wanted.find(x);
      if (it == wanted.end()) continue;
      for (auto i : it->second) out[i] = r;
      remaining -= it->second.size();
      wanted.erase(it);
    }
    return remaining > 0;
  });
  return out;
}

inline std::optional<int> word_norm(const MarkedGroup& G, const Element& g, int R_max,
                                    std::size_t cap = kDefaultElementCap) {
  return word_norms(G, {g}, R_max, cap).front();
}

// ---------------------------------------------------------------------------
// Growth

struct GrowthSequence {
  std::vector<std::size_t> sizes;
  std::string fingerprint;
};

inline GrowthSequence growth_sequence(const Ball& ball) {
  GrowthSequence seq{{}, ball.group().fingerprint()};
  std::size_t total = 0;
  for (auto s : ball.sphere_sizes()) seq.sizes.push_back(total += s);
  return seq;
}

inline GrowthSequence growth_sequence(const MarkedGroup& G, int R_max, std::size_t cap = kDefaultElementCap) {
  GrowthSequence seq{std::vector<std::size_t>(static_cast<std::size_t>(R_max) + 1, 0), G.fingerprint()};
  std::size_t total = 0;
  int produced = detail::expand_spheres(G, R_max, cap, [&](int r, const std::vector<Element>& sphere) {
    seq.sizes[r] = total += sphere.size();
    return true;
  });
  for (int r = produced; r <= R_max; ++r) seq.sizes[r] = total;
  return seq;
}

namespace detail {

/// Best rational approximation with denominator ≤ qmax, when it reproduces x
/// to 1e-12.
inline std::optional<std::pair<BigInt, BigInt>> small_rational(double x, long long qmax = 1'000'000) {
  if (!std::isfinite(x) || x < 0) return std::nullopt;
  long long p0 = 0, q0 = 1, p1 = 1, q1 = 0;
  double y = x;
  for (int it = 0; it < 64; ++it) {
    double a = std::floor(y);
    if (a > 1e15) break;
    long long ai = static_cast<long long>(a);
    long long p2 = ai * p1 + p0, q2 = ai * q1 + q0;
    if (q2 > qmax) break;
    p0 = p1, q0 = q1, p1 = p2, q1 = q2;
    if (std::fabs(x - static_cast<double>(p1) / static_cast<double>(q1)) <= 1e-12 * std::max(1.0, x))
      return std::make_pair(BigInt(p1), BigInt(q1));
    double frac = y - a;
    if (frac <= 0) break;
    y = 1.0 / frac;
  }
  return std::nullopt;
}

}  // namespace detail

/// sizes[R_0] ≤ R_0^d, compared exactly whenever d is a rational with small
/// denominator (equality counts as growth).
inline bool is_growth_group(const GrowthSequence& seq, int R0, double d) {
  if (R0 < 1 || static_cast<std::size_t>(R0) >= seq.sizes.size())
    throw std::invalid_argument("R_0 outside the growth sequence");
  const std::size_t n = seq.sizes[R0];
  if (R0 == 1) return n <= 1;
  if (auto pq = detail::small_rational(d)) {
    const auto& [p, q] = *pq;
    if (p * static_cast<long long>(std::ceil(std::log2(R0))) < 200000) {
      BigInt lhs = boost::multiprecision::pow(BigInt(n), static_cast<unsigned>(q));
      BigInt rhs = boost::multiprecision::pow(BigInt(R0), static_cast<unsigned>(p));
      return lhs <= rhs;
    }
  }
  return std::log(static_cast<long double>(n)) <= static_cast<long double>(d) * std::log(static_cast<long double>(R0));
}

/// Smallest r with sizes[r] = sizes[r+1]; nullopt when no stabilization is seen.
inline std::optional<int> detect_finite(const GrowthSequence& seq) {
  for (std::size_t r = 0; r + 1 < seq.sizes.size(); ++r)
    if (seq.sizes[r] == seq.sizes[r + 1]) return static_cast<int>(r);
  return std::nullopt;
}

struct GrowthEstimate {
  double degree = 0;
  bool exponential = false;
};

/// Two-point log-log slope, plus a flag set when every consecutive ratio in
/// [r1, r2] is at least 1 + delta.  The flag is a crude ratio test: at small
/// radii polynomial growth of degree d also has ratios near 1 + d/r.
inline GrowthEstimate growth_degree_estimate(const GrowthSequence& seq, int r1, int r2, double delta = 0.05) {
  if (r1 < 1 || r2 <= r1 || static_cast<std::size_t>(r2) >= seq.sizes.size())
    throw std::invalid_argument("need 1 <= r1 < r2 <= R_max");
  if (seq.sizes[r1] < 2) throw std::invalid_argument("sizes[r1] must be at least 2");
  GrowthEstimate est;
  est.degree = std::log(static_cast<double>(seq.sizes[r2]) / static_cast<double>(seq.sizes[r1])) /
               std::log(static_cast<double>(r2) / static_cast<double>(r1));
  est.exponential = true;
  for (int r = r1; r < r2; ++r)
    if (static_cast<double>(seq.sizes[r + 1]) < (1.0 + delta) * static_cast<double>(seq.sizes[r])) {
      est.exponential = false;
      break;
    }
  return est;
}

// ---------------------------------------------------------------------------
// Ball cache

inline constexpr std::string_view kBallMagic = "FGBALL1";

inline std::string serialize_ball(const Ball& ball) {
  std::string out(kBallMagic);
  const auto& fp = ball.group().fingerprint();
  detail::append_uleb128(out, fp.size());
  out += fp;
  detail::append_uleb128(out, static_cast<std::uint64_t>(ball.radius()));
  detail::append_uleb128(out, ball.sphere_sizes().size());
  for (auto s : ball.sphere_sizes()) detail::append_uleb128(out, s);
  for (std::size_t i = 0; i < ball.size(); ++i) {
    std::string k = ball.key(i);
    detail::append_uleb128(out, k.size());
    out += k;
  }
  return out;
}

inline Ball deserialize_ball(const MarkedGroup& G, std::string_view bytes) {
  if (bytes.substr(0, kBallMagic.size()) != kBallMagic) throw ParseError("not a ball cache (bad magic)");
  std::size_t pos = kBallMagic.size();
  auto fp_len = detail::read_uleb128(bytes, pos);
  if (pos + fp_len > bytes.size()) throw ParseError("truncated ball cache");
  std::string fp(bytes.substr(pos, fp_len));
  pos += fp_len;
  if (fp != G.fingerprint()) throw ParseError("ball cache belongs to a different marked group");
  int R = static_cast<int>(detail::read_uleb128(bytes, pos));
  auto nspheres = detail::read_uleb128(bytes, pos);
  if (nspheres != static_cast<std::uint64_t>(R) + 1) throw ParseError("ball cache sphere count mismatch");
  std::vector<std::size_t> spheres(nspheres);
  std::size_t total = 0;
  for (auto& s : spheres) total += s = detail::read_uleb128(bytes, pos);
  std::vector<Element> elements;
  elements.reserve(total);
  for (std::size_t i = 0; i < total; ++i) {
    auto len = detail::read_uleb128(bytes, pos);
    if (pos + len > bytes.size()) throw ParseError("truncated ball cache");
    elements.push_back(decode_key(bytes.substr(pos, len)));
    pos += len;
    if (!is_valid(G.backend(), elements.back())) throw ParseError("ball cache holds an invalid element");
  }
  if (pos != bytes.size()) throw ParseError("trailing bytes in ball cache");
  Ball ball(G, R);
  ball.finalize(std::move(elements), std::move(spheres));
  return ball;
}

/// Writes to a temporary sibling and renames it into place.
inline void write_file_atomic(const std::filesystem::path& path, std::string_view bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot open " + tmp.string() + " for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error("failed writing " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline std::filesystem::path ball_cache_path(const std::filesystem::path& dir, const MarkedGroup& G, int R) {
  return dir / (G.fingerprint() + "-R" + std::to_string(R) + ".fgball");
}

inline void write_ball_cache(const Ball& ball, const std::filesystem::path& path) {
  write_file_atomic(path, serialize_ball(ball));
}

inline Ball read_ball_cache(const MarkedGroup& G, const std::filesystem::path& path) {
  return deserialize_ball(G, read_file(path));
}

/// Loads B_S(R) from `dir` when cached, otherwise enumerates and stores it.
inline Ball cached_ball(const MarkedGroup& G, int R, const std::filesystem::path& dir,
                        std::size_t cap = kDefaultElementCap) {
  auto path = ball_cache_path(dir, G, R);
  if (std::filesystem::exists(path)) return read_ball_cache(G, path);
  Ball ball = enumerate_ball(G, R, cap);
  write_ball_cache(ball, path);
  return ball;
}

}  // namespace fgromov
