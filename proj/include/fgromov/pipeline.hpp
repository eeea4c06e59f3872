#pragma once

// Group spec files, the desk-scale reduction loop, report emission and the
// command implementations behind the fgromov CLI.

#include <chrono>
#include <fstream>
#include <sstream>

#include "fgromov/approx_rep.hpp"
#include "fgromov/kleiner.hpp"
#include "fgromov/milnor_wolf.hpp"
#include "json.hpp"

namespace fgromov {

using Json = nlohmann::ordered_json;

inline constexpr const char* kToolName = "fgromov";
inline constexpr const char* kToolVersion = "0.1.0";
inline constexpr int kReportSchema = 1;

// ---------------------------------------------------------------------------
// Group spec files
//
//   # comment
//   name = heisenberg
//   kind = integer_matrix
//   dimension = 3
//   generator = 1 1 0 0 1 0 0 0 1
//   ...
//
// Keys: name, kind, dimension, modulus, rank, row (semidirect matrix, one per
// row), generator (repeatable), auto_close.  Kinds: integer_matrix, cyclic,
// free_abelian, semidirect, lamplighter, free_group.  Without generator rows
// the standard marking of the kind is used.

struct GroupSpec {
  std::string name;
  std::string kind;
  int dimension = 0;
  Int modulus = 0;
  int rank = 0;
  std::vector<std::vector<Int>> rows;
  std::vector<Element> generators;
  bool auto_close = false;

  bool operator==(const GroupSpec&) const = default;
};

namespace detail {

inline std::string trim_ws(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

inline std::vector<Int> parse_ints(const std::string& value, int line) {
  std::vector<Int> out;
  std::istringstream in(value);
  std::string tok;
  while (in >> tok) {
    std::size_t used = 0;
    long long v = 0;
    try {
      v = std::stoll(tok, &used);
    } catch (const std::exception&) {
      throw ParseError("expected an integer, got '" + tok + "'", line);
    }
    if (used != tok.size()) throw ParseError("expected an integer, got '" + tok + "'", line);
    out.push_back(v);
  }
  if (out.empty()) throw ParseError("expected at least one integer", line);
  return out;
}

inline Int parse_single(const std::string& value, int line) {
  auto v = parse_ints(value, line);
  if (v.size() != 1) throw ParseError("expected a single integer", line);
  return v[0];
}

/// key = value lines with '#' comments; calls `on` for each pair.
inline void for_each_entry(std::string_view text, const std::function<void(const std::string&, const std::string&, int)>& on) {
  int line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto nl = text.find('\n', pos);
    std::string_view line = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    const std::string trimmed = trim_ws(line);
    if (trimmed.empty()) continue;
    const auto eq = trimmed.find('=');
    if (eq == std::string::npos) throw ParseError("expected 'key = value'", line_no);
    const std::string key = trim_ws(std::string_view(trimmed).substr(0, eq));
    const std::string value = trim_ws(std::string_view(trimmed).substr(eq + 1));
    if (key.empty()) throw ParseError("empty key", line_no);
    on(key, value, line_no);
  }
}

}  // namespace detail

inline GroupSpec parse_group_spec_text(std::string_view text) {
  GroupSpec spec;
  std::set<std::string> seen;
  detail::for_each_entry(text, [&](const std::string& key, const std::string& value, int line) {
    const bool repeatable = key == "row" || key == "generator";
    if (!repeatable && !seen.insert(key).second) throw ParseError("duplicate key '" + key + "'", line);
    if (key == "name") {
      spec.name = value;
    } else if (key == "kind") {
      static const std::set<std::string> kinds{"integer_matrix", "cyclic",      "free_abelian",
                                               "semidirect",     "lamplighter", "free_group"};
      if (!kinds.count(value)) throw ParseError("unknown kind '" + value + "'", line);
      spec.kind = value;
    } else if (key == "dimension") {
      spec.dimension = static_cast<int>(detail::parse_single(value, line));
      if (spec.dimension < 1) throw ParseError("dimension must be positive", line);
    } else if (key == "modulus") {
      spec.modulus = detail::parse_single(value, line);
      if (spec.modulus < 1) throw ParseError("modulus must be positive", line);
    } else if (key == "rank") {
      spec.rank = static_cast<int>(detail::parse_single(value, line));
      if (spec.rank < 1) throw ParseError("rank must be positive", line);
    } else if (key == "row") {
      spec.rows.push_back(detail::parse_ints(value, line));
    } else if (key == "generator") {
      spec.generators.push_back(detail::parse_ints(value, line));
    } else if (key == "auto_close") {
      if (value != "true" && value != "false") throw ParseError("auto_close must be true or false", line);
      spec.auto_close = value == "true";
    } else {
      throw ParseError("unknown key '" + key + "'", line);
    }
  });
  if (spec.kind.empty()) throw ParseError("missing 'kind'");
  return spec;
}

/// Validates the spec and builds the marked group.  Auto-closed generating
/// sets append a note to `warnings`.
inline MarkedGroup build_group(const GroupSpec& spec, std::vector<std::string>* warnings = nullptr) {
  auto need = [&](bool ok, const std::string& what) {
    if (!ok) throw ParseError(spec.kind + " spec: " + what);
  };
  std::optional<GroupBackend> backend;
  std::optional<MarkedGroup> standard;
  if (spec.kind == "integer_matrix") {
    need(spec.dimension >= 1, "needs 'dimension'");
    need(!spec.generators.empty(), "needs generator rows");
    backend = IntegerMatrixGroup{spec.dimension};
    for (const auto& g : spec.generators) {
      need(g.size() == static_cast<std::size_t>(spec.dimension) * spec.dimension,
           "generator has " + std::to_string(g.size()) + " entries, expected dimension^2");
      const Int det = detail::matrix_determinant(g, spec.dimension);
      need(det == 1 || det == -1, "generator " + format_element(g) + " has determinant " + std::to_string(det));
    }
  } else if (spec.kind == "cyclic") {
    need(spec.modulus >= 1, "needs 'modulus'");
    backend = CyclicGroup{spec.modulus};
    standard = groups::cyclic(spec.modulus);
  } else if (spec.kind == "free_abelian") {
    need(spec.dimension >= 1, "needs 'dimension'");
    backend = FreeAbelianGroup{spec.dimension};
    standard = groups::free_abelian(spec.dimension);
  } else if (spec.kind == "semidirect") {
    need(!spec.rows.empty(), "needs matrix rows");
    const int D = static_cast<int>(spec.rows.size());
    need(spec.dimension == 0 || spec.dimension == D, "dimension disagrees with the number of rows");
    std::vector<Int> T;
    for (const auto& r : spec.rows) {
      need(r.size() == static_cast<std::size_t>(D), "matrix is not square");
      T.insert(T.end(), r.begin(), r.end());
    }
    try {
      backend = SemidirectGroup(D, T);
    } catch (const BackendMismatch& e) {
      throw ParseError(std::string("semidirect spec: ") + e.what());
    }
    standard = groups::semidirect(D, T);
  } else if (spec.kind == "lamplighter") {
    backend = LamplighterGroup{};
    standard = groups::lamplighter();
  } else if (spec.kind == "free_group") {
    need(spec.rank >= 1, "needs 'rank'");
    backend = FreeGroup{spec.rank};
    standard = groups::free_group(spec.rank);
  }
  if (spec.generators.empty()) return *standard;
  for (const auto& g : spec.generators)
    need(is_valid(*backend, g), "generator " + format_element(g) + " is not an element of the backend");
  bool added = false;
  MarkedGroup closed = MarkedGroup::closed_under_inverse(*backend, spec.generators, &added);
  if (added) {
    need(spec.auto_close, "generating set is not symmetric (set auto_close = true to add inverses)");
    if (warnings) warnings->push_back("generating set closed under inversion");
  }
  return closed;
}

inline GroupSpec read_group_spec(const std::filesystem::path& path) { return parse_group_spec_text(read_file(path)); }

inline MarkedGroup parse_group_spec(const std::filesystem::path& path, std::vector<std::string>* warnings = nullptr) {
  return build_group(read_group_spec(path), warnings);
}

inline std::string emit_group_spec(const GroupSpec& spec) {
  std::ostringstream out;
  auto ints = [&](const std::vector<Int>& v) {
    for (std::size_t i = 0; i < v.size(); ++i) out << (i ? " " : "") << v[i];
    out << '\n';
  };
  if (!spec.name.empty()) out << "name = " << spec.name << '\n';
  out << "kind = " << spec.kind << '\n';
  if (spec.dimension) out << "dimension = " << spec.dimension << '\n';
  if (spec.modulus) out << "modulus = " << spec.modulus << '\n';
  if (spec.rank) out << "rank = " << spec.rank << '\n';
  for (const auto& r : spec.rows) out << "row = ", ints(r);
  for (const auto& g : spec.generators) out << "generator = ", ints(g);
  if (spec.auto_close) out << "auto_close = true\n";
  return out.str();
}

/// Square integer matrix file: optional `name`, then one `row` per line.
inline IntMatrix parse_matrix_text(std::string_view text, std::string* name = nullptr) {
  std::vector<std::vector<Int>> rows;
  detail::for_each_entry(text, [&](const std::string& key, const std::string& value, int line) {
    if (key == "row")
      rows.push_back(detail::parse_ints(value, line));
    else if (key == "name") {
      if (name) *name = value;
    } else
      throw ParseError("unknown key '" + key + "'", line);
  });
  if (rows.empty()) throw ParseError("matrix file has no rows");
  const int D = static_cast<int>(rows.size());
  IntMatrix T(D);
  for (int i = 0; i < D; ++i) {
    if (rows[static_cast<std::size_t>(i)].size() != static_cast<std::size_t>(D)) throw ParseError("matrix is not square");
    for (int j = 0; j < D; ++j) T(i, j) = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
  }
  return T;
}

inline IntMatrix parse_matrix_file(const std::filesystem::path& path, std::string* name = nullptr) {
  return parse_matrix_text(read_file(path), name);
}

// ---------------------------------------------------------------------------
// JSON helpers

namespace detail {

inline Json big_json(const BigInt& x) {
  if (x >= std::numeric_limits<std::int64_t>::min() && x <= std::numeric_limits<std::int64_t>::max())
    return x.convert_to<std::int64_t>();
  return x.str();
}

inline Json big_json(const std::vector<BigInt>& v) {
  Json out = Json::array();
  for (const auto& x : v) out.push_back(big_json(x));
  return out;
}

inline Json elements_json(const std::vector<Element>& xs) {
  Json out = Json::array();
  for (const auto& x : xs) out.push_back(x);
  return out;
}

inline std::vector<Element> elements_from_json(const Json& j) {
  std::vector<Element> out;
  for (const auto& x : j) out.push_back(x.get<Element>());
  return out;
}

/// Doubles rounded to 12 significant digits so reports do not depend on the
/// last bits of floating-point evaluation order.
inline Json num(double x) {
  if (!std::isfinite(x)) return x > 0 ? Json("inf") : x < 0 ? Json("-inf") : Json("nan");
  if (x == 0) return 0.0;
  const double scale = std::pow(10.0, 11 - static_cast<int>(std::floor(std::log10(std::abs(x)))));
  return std::round(x * scale) / scale;
}

}  // namespace detail

inline Json group_json(const MarkedGroup& G, const std::string& name = {}) {
  Json g;
  g["name"] = name;
  g["backend"] = describe(G.backend());
  g["fingerprint"] = G.fingerprint();
  g["generators"] = detail::elements_json(G.generators());
  return g;
}

/// Versioned envelope shared by every command.
inline Json make_report(const std::string& command, Json group, Json config, Json result) {
  Json r;
  r["schema"] = kReportSchema;
  r["tool"] = kToolName;
  r["version"] = kToolVersion;
  r["command"] = command;
  r["group"] = std::move(group);
  r["config"] = std::move(config);
  r["result"] = std::move(result);
  return r;
}

inline std::string dump_report(const Json& report) { return report.dump(2) + "\n"; }

inline void emit_report(const Json& report, const std::filesystem::path& path) {
  write_file_atomic(path, dump_report(report));
}

// ---------------------------------------------------------------------------
// Growth

struct GrowthReport {
  GrowthSequence seq;
  std::optional<int> stabilized;
  std::vector<double> d_hat;  // d_hat[r]: slope on [⌈r/2⌉, r]; NaN where undefined
  double degree = std::nan("");  // slope on [⌈R/2⌉, R]
  bool exponential = false;
};

namespace detail {

inline double window_slope(const GrowthSequence& seq, int lo, int hi) {
  if (lo < 1 || hi <= lo || seq.sizes[static_cast<std::size_t>(lo)] < 2) return std::nan("");
  return growth_degree_estimate(seq, lo, hi).degree;
}

}  // namespace detail

/// Growth table with windowed slopes.  The exponential flag compares the
/// slopes on [R/4, R/2] and [R/2, R]: polynomial growth has converging
/// slopes, exponential growth roughly doubles them.
inline GrowthReport growth_report(const GrowthSequence& seq) {
  GrowthReport out;
  out.seq = seq;
  out.stabilized = detect_finite(seq);
  const int R = static_cast<int>(seq.sizes.size()) - 1;
  out.d_hat.assign(seq.sizes.size(), std::nan(""));
  for (int r = 2; r <= R; ++r) out.d_hat[static_cast<std::size_t>(r)] = detail::window_slope(seq, (r + 1) / 2, r);
  out.degree = R >= 2 ? out.d_hat[static_cast<std::size_t>(R)] : std::nan("");
  if (!out.stabilized && R >= 8) {
    const double lo = detail::window_slope(seq, R / 4, R / 2), hi = detail::window_slope(seq, R / 2, R);
    out.exponential = std::isfinite(lo) && std::isfinite(hi) && hi >= 1.5 * lo;
  }
  if (out.stabilized) out.degree = 0;
  return out;
}

/// Ball of radius R, loaded from or stored to `cache_dir` when one is given.
inline Ball load_ball(const MarkedGroup& G, int R, const std::optional<std::filesystem::path>& cache_dir,
                      std::size_t cap = kDefaultElementCap) {
  if (!cache_dir) return enumerate_ball(G, R, cap);
  std::filesystem::create_directories(*cache_dir);
  return cached_ball(G, R, *cache_dir, cap);
}

inline GrowthReport cmd_growth(const MarkedGroup& G, int R_max, const std::optional<std::filesystem::path>& cache_dir = {},
                               std::size_t cap = kDefaultElementCap) {
  return growth_report(growth_sequence(load_ball(G, R_max, cache_dir, cap)));
}

/// RFC 4180 table r,size,d_hat,note with CRLF line ends.
inline std::string growth_csv(const GrowthReport& g) {
  std::ostringstream out;
  out << "r,size,d_hat,note\r\n";
  for (std::size_t r = 0; r < g.seq.sizes.size(); ++r) {
    out << r << ',' << g.seq.sizes[r] << ',';
    if (std::isfinite(g.d_hat[r])) out << detail::num(g.d_hat[r]).get<double>();
    out << ',';
    if (g.stabilized && static_cast<std::size_t>(*g.stabilized) == r) out << "stabilized";
    out << "\r\n";
  }
  return out.str();
}

inline Json to_json(const GrowthReport& g) {
  Json j;
  j["sizes"] = g.seq.sizes;
  j["stabilized_at"] = g.stabilized ? Json(*g.stabilized) : Json(nullptr);
  Json d = Json::array();
  for (double x : g.d_hat) d.push_back(std::isfinite(x) ? detail::num(x) : Json(nullptr));
  j["d_hat"] = std::move(d);
  j["degree"] = std::isfinite(g.degree) ? detail::num(g.degree) : Json(nullptr);
  j["exponential"] = g.exponential;
  return j;
}

// ---------------------------------------------------------------------------
// Reduction loop

struct ReduceConfig {
  int growth_radius = 16;        // growth degree window [R/2, R]
  int max_steps = 10;            // subgroup passages
  double descent = 0.5;          // required growth-degree drop per kernel step
  double R0 = 100;               // generator reduction scale
  double kappa = 0.5;
  int commutator_radius = 6;     // radius budget for commutator generators
  int harmonic_radius = 4;
  std::size_t finite_probe_cap = 200'000;  // elements enumerated when looking for a finite group
  std::size_t cap = kDefaultElementCap;
  double wall_seconds = 600;
};

/// Passage to a finite-index subgroup: here the regenerated group itself
/// (index bound 1), certified as a (K, K)-subgroup.
struct FiniteIndexStep {
  std::size_t index_bound = 1;
  int r = 0;
  double ratio = 0;
  KRSubgroupCert cert;
  std::vector<std::size_t> sizes_after;  // |B_{S'}(r)|, r ≤ 2
};

/// Passage to the commutator subgroup, which lies in the kernel of every
/// homomorphism to a cyclic group.
struct KernelStep {
  std::string target = "commutator subgroup (kernel of every map to a cyclic group)";
  CommutatorGenerators gens;
  std::vector<std::size_t> sizes_after;
  double degree_before = 0;
  double degree_after = 0;
  bool descent_ok = false;
  // Almost-harmonic function on the ambient group and its variation along
  // the derived generators.
  std::string harmonic_case;
  double harmonic_eps = 0;
  double harmonic_lip = 0;
  double harmonic_grad_id = 0;
  double trivial_direction_deviation = 0;
};

struct ReductionLevel {
  std::vector<Element> generators;
  GrowthReport growth;
  std::optional<FiniteIndexStep> finite_index;
  std::optional<KernelStep> kernel;
};

struct ReductionTrace {
  std::vector<ReductionLevel> levels;
  std::string terminal;  // trivial | finite | budget
  std::string reason;
  std::size_t steps() const {
    std::size_t n = 0;
    for (const auto& l : levels) n += (l.finite_index ? 1 : 0) + (l.kernel ? 1 : 0);
    return n;
  }
};

inline bool is_trivial_set(const MarkedGroup& G, const std::vector<Element>& S) {
  const Element id = G.identity();
  return std::all_of(S.begin(), S.end(), [&](const Element& s) { return s == id; });
}

/// |G| when the whole group fits in `cap` elements.
inline std::optional<std::size_t> finite_order_probe(const MarkedGroup& G, std::size_t cap) {
  try {
    const auto seq = growth_sequence(G, 1 << 16, cap);
    if (detect_finite(seq)) return seq.sizes.back();
  } catch (const ResourceLimitError&) {
  }
  return std::nullopt;
}

inline ReductionTrace cmd_reduce(const MarkedGroup& G0, const ReduceConfig& cfg = {}) {
  const auto start = std::chrono::steady_clock::now();
  auto out_of_time = [&] {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count() > cfg.wall_seconds;
  };
  ReductionTrace trace;
  MarkedGroup G = G0;
  for (;;) {
    ReductionLevel level;
    level.generators = G.generators();
    try {
      level.growth = growth_report(growth_sequence(G, cfg.growth_radius, cfg.cap));
    } catch (const ResourceLimitError& e) {
      trace.levels.push_back(std::move(level));
      trace.terminal = "budget";
      trace.reason = e.what();
      return trace;
    }
    if (is_trivial_set(G, G.generators()) || level.growth.seq.sizes.back() == 1) {
      trace.levels.push_back(std::move(level));
      trace.terminal = "trivial";
      return trace;
    }
    if (level.growth.stabilized || finite_order_probe(G, cfg.finite_probe_cap)) {
      trace.levels.push_back(std::move(level));
      trace.terminal = "finite";
      return trace;
    }
    if (trace.steps() + 2 > static_cast<std::size_t>(cfg.max_steps) || out_of_time()) {
      trace.levels.push_back(std::move(level));
      trace.terminal = "budget";
      trace.reason = "step or wall-clock budget exhausted";
      return trace;
    }
    try {
      const auto red = generator_reduction(G, cfg.R0, cfg.kappa, std::nullopt, cfg.cap);
      FiniteIndexStep fi{1, red.r, red.ratio, red.cert, {}};
      fi.sizes_after = growth_sequence(MarkedGroup::closed_under_inverse(G.backend(), red.S_prime), 2, cfg.cap).sizes;
      level.finite_index = std::move(fi);

      KernelStep k;
      k.gens = commutator_generators(G, cfg.commutator_radius, 2'000'000, cfg.cap);
      const MarkedGroup sub = MarkedGroup::closed_under_inverse(G.backend(), k.gens.S_prime);
      const auto sub_growth = growth_report(growth_sequence(sub, cfg.growth_radius, cfg.cap));
      k.sizes_after = sub_growth.seq.sizes;
      k.degree_before = level.growth.degree;
      k.degree_after = is_trivial_set(G, k.gens.S_prime) ? 0.0 : sub_growth.degree;
      k.descent_ok = k.degree_before - k.degree_after >= cfg.descent;

      int reach = 0;
      for (const auto& n : word_norms(G, k.gens.S_prime, 4 * cfg.commutator_radius + 4, cfg.cap)) reach = std::max(reach, n.value_or(0));
      AlmostHarmonicOptions opt;
      opt.window = cfg.harmonic_radius + std::max(reach, 1) - 1;
      opt.cap = cfg.cap;
      const auto ah = build_almost_harmonic(G, cfg.harmonic_radius, opt);
      k.harmonic_case = to_string(ah.kind);
      k.harmonic_eps = ah.eps;
      k.harmonic_lip = ah.lip;
      k.harmonic_grad_id = ah.grad_at_id;
      if (ah.u) k.trivial_direction_deviation = trivial_directions_check(*ah.u, k.gens.S_prime, cfg.harmonic_radius);
      level.kernel = std::move(k);
    } catch (const BudgetExhausted& e) {
      trace.levels.push_back(std::move(level));
      trace.terminal = "budget";
      trace.reason = e.what();
      return trace;
    } catch (const ResourceLimitError& e) {
      trace.levels.push_back(std::move(level));
      trace.terminal = "budget";
      trace.reason = e.what();
      return trace;
    }
    const bool descended = level.kernel->descent_ok;
    std::vector<Element> next = level.kernel->gens.S_prime;
    trace.levels.push_back(std::move(level));
    if (!descended) {
      trace.terminal = "budget";
      trace.reason = "growth degree did not drop by the descent threshold";
      return trace;
    }
    G = MarkedGroup::closed_under_inverse(G.backend(), next);
  }
}

inline Json to_json(const KRSubgroupCert& c) {
  Json j;
  j["K"] = c.K;
  j["R"] = c.R;
  j["S_prime"] = detail::elements_json(c.S_prime);
  j["checked_inclusion"] = c.checked_inclusion;
  j["failure"] = c.failure;
  return j;
}

inline Json to_json(const ReductionTrace& t) {
  Json levels = Json::array();
  for (const auto& l : t.levels) {
    Json j;
    j["generators"] = detail::elements_json(l.generators);
    j["growth"] = to_json(l.growth);
    Json steps = Json::array();
    if (l.finite_index) {
      Json s;
      s["kind"] = "finite_index";
      s["index_bound"] = l.finite_index->index_bound;
      s["pigeonhole_r"] = l.finite_index->r;
      s["ratio"] = detail::num(l.finite_index->ratio);
      s["certificate"] = to_json(l.finite_index->cert);
      s["sizes_after"] = l.finite_index->sizes_after;
      steps.push_back(std::move(s));
    }
    if (l.kernel) {
      const auto& k = *l.kernel;
      Json s;
      s["kind"] = "cyclic_kernel";
      s["target"] = k.target;
      s["S_prime"] = detail::elements_json(k.gens.S_prime);
      Json w = Json::array();
      for (const auto& z : k.gens.witnesses) w.push_back(Json{{"g", z.g}, {"e", z.e}, {"e_prime", z.e_prime}});
      s["witnesses"] = std::move(w);
      s["pigeonhole_r"] = k.gens.r;
      s["cumulative_sizes"] = k.gens.cumulative_sizes;
      s["inclusion_verified"] = k.gens.inclusion_verified;
      s["sizes_after"] = k.sizes_after;
      s["degree_before"] = detail::num(k.degree_before);
      s["degree_after"] = detail::num(k.degree_after);
      s["descent_ok"] = k.descent_ok;
      s["harmonic"] = Json{{"case", k.harmonic_case},
                           {"eps", detail::num(k.harmonic_eps)},
                           {"lip", detail::num(k.harmonic_lip)},
                           {"grad_at_id", detail::num(k.harmonic_grad_id)},
                           {"trivial_direction_deviation", detail::num(k.trivial_direction_deviation)}};
      steps.push_back(std::move(s));
    }
    j["steps"] = std::move(steps);
    levels.push_back(std::move(j));
  }
  Json r;
  r["levels"] = std::move(levels);
  r["step_count"] = t.steps();
  r["terminal"] = t.terminal;
  r["reason"] = t.reason;
  return r;
}

inline Json to_json(const ReduceConfig& c) {
  return Json{{"growth_radius", c.growth_radius}, {"max_steps", c.max_steps},     {"descent", c.descent},
              {"R0", c.R0},                       {"kappa", c.kappa},             {"commutator_radius", c.commutator_radius},
              {"harmonic_radius", c.harmonic_radius}, {"finite_probe_cap", c.finite_probe_cap}, {"cap", c.cap}};
}

struct VerifyOutcome {
  std::size_t checked = 0;
  std::vector<std::string> failures;
  bool ok() const { return failures.empty(); }
};

/// Re-verifies every certificate of a reduce report against the group:
/// (K, K)-inclusions are recomputed exhaustively, every derived generator is
/// re-derived from its witness, and subgroup growth sizes are recounted.
inline VerifyOutcome verify_reduce_report(const Json& report, const MarkedGroup& G0, std::size_t cap = kDefaultElementCap) {
  VerifyOutcome out;
  if (report.at("command") != "reduce") throw ParseError("not a reduce report");
  if (report.at("group").at("fingerprint") != G0.fingerprint()) out.failures.push_back("group fingerprint mismatch");
  const auto& levels = report.at("result").at("levels");
  for (std::size_t li = 0; li < levels.size(); ++li) {
    const auto& lv = levels[li];
    const auto gens = detail::elements_from_json(lv.at("generators"));
    const MarkedGroup G(G0.backend(), gens);
    const std::string where = "level " + std::to_string(li);
    const auto sizes = lv.at("growth").at("sizes").get<std::vector<std::size_t>>();
    ++out.checked;
    if (growth_sequence(G, static_cast<int>(sizes.size()) - 1, cap).sizes != sizes)
      out.failures.push_back(where + ": growth sizes differ");
    for (const auto& s : lv.at("steps")) {
      ++out.checked;
      if (s.at("kind") == "finite_index") {
        const auto& c = s.at("certificate");
        const auto cert = verify_kr_subgroup(G, detail::elements_from_json(c.at("S_prime")), c.at("K").get<int>(),
                                             c.at("R").get<int>(), nullptr, cap);
        if (!cert.checked_inclusion) out.failures.push_back(where + ": (K,R) certificate fails: " + cert.failure);
      } else {
        const auto S_prime = detail::elements_from_json(s.at("S_prime"));
        const auto& w = s.at("witnesses");
        if (w.size() != S_prime.size()) out.failures.push_back(where + ": witness count mismatch");
        for (std::size_t i = 0; i < std::min(w.size(), S_prime.size()); ++i) {
          const Element g = w[i].at("g").get<Element>(), e = w[i].at("e").get<Element>(),
                        ep = w[i].at("e_prime").get<Element>();
          const auto& S = G.generators();
          const bool gens_ok = std::find(S.begin(), S.end(), e) != S.end() && std::find(S.begin(), S.end(), ep) != S.end();
          if (!gens_ok || G.multiply(G.multiply(g, G.commutator(e, ep)), G.inverse(g)) != S_prime[i])
            out.failures.push_back(where + ": witness " + std::to_string(i) + " does not reproduce its generator");
        }
        const auto after = s.at("sizes_after").get<std::vector<std::size_t>>();
        const MarkedGroup sub = MarkedGroup::closed_under_inverse(G0.backend(), S_prime);
        if (growth_sequence(sub, static_cast<int>(after.size()) - 1, cap).sizes != after)
          out.failures.push_back(where + ": subgroup growth sizes differ");
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Nilpotency certificate

struct NilpotentCertificate {
  KRSubgroupCert kr;
  NilpotencyResult nilpotency;
  int step = 0;
  bool certified() const { return kr.checked_inclusion && nilpotency.nilpotent; }
};

/// (K, R)-inclusion of the subgroup generated by S' (default: S itself) plus
/// vanishing of all (s+1)-fold commutators of its generators.
inline NilpotentCertificate cmd_certify_nilpotent(const MarkedGroup& G, int s, int K, int R,
                                                  std::optional<std::vector<Element>> S_prime = std::nullopt,
                                                  std::size_t cap = kDefaultElementCap) {
  const std::vector<Element> sub = S_prime ? *S_prime : G.generators();
  NilpotentCertificate out;
  out.step = s;
  out.kr = verify_kr_subgroup(G, sub, K, R, nullptr, cap);
  out.nilpotency = nilpotency_check(MarkedGroup::closed_under_inverse(G.backend(), sub), s);
  return out;
}

inline Json to_json(const NilpotentCertificate& c) {
  Json j;
  j["certified"] = c.certified();
  j["step"] = c.step;
  j["kr"] = to_json(c.kr);
  j["nilpotent"] = c.nilpotency.nilpotent;
  j["witness"] = c.nilpotency.witness;
  j["witness_value"] = c.nilpotency.value;
  j["tuples_checked"] = c.nilpotency.tuples_checked;
  return j;
}

// ---------------------------------------------------------------------------
// Dichotomy, slow growth, harmonic, Kleiner dimension

inline Json to_json(const DichotomyResult& d) {
  Json j;
  j["char_poly"] = detail::big_json(d.char_poly);
  j["cyclotomic_part"] = detail::big_json(d.cyclotomic_part);
  if (d.periodic()) {
    j["branch"] = "periodic";
    j["n"] = d.as_periodic().n;
    j["w"] = detail::big_json(d.as_periodic().w);
  } else {
    const auto& g = d.as_growth();
    j["branch"] = "growth";
    j["lambda_max"] = detail::num(g.lambda_max);
    j["mahler"] = detail::num(g.mahler);
    j["v"] = detail::big_json(g.v);
    j["N"] = g.N;
    j["measured_rate"] = detail::num(g.measured_rate);
  }
  j["dobrowolski_reference"] = detail::num(dobrowolski_reference(degree(d.char_poly)));
  return j;
}

inline Json matrix_json(const IntMatrix& T) {
  Json rows = Json::array();
  for (int i = 0; i < T.D; ++i) {
    Json r = Json::array();
    for (int j = 0; j < T.D; ++j) r.push_back(detail::big_json(T(i, j)));
    rows.push_back(std::move(r));
  }
  return rows;
}

inline Json to_json(const SlowGrowth& s) {
  Json j;
  j["R"] = s.R;
  j["N"] = s.N;
  j["range"] = s.range;
  j["pigeonhole_fallback"] = s.pigeonhole_fallback;
  j["S_tilde"] = detail::elements_json(s.S_tilde);
  Json prof = Json::array();
  for (const auto& [R, q] : s.ratio_profile) prof.push_back(Json{{"R", R}, {"ratio", detail::num(q)}});
  j["ratio_profile"] = std::move(prof);
  j["product_sizes"] = s.product_sizes;
  return j;
}

inline Json to_json(const AlmostHarmonic& a) {
  Json j;
  j["case"] = to_string(a.kind);
  j["R"] = a.R;
  j["eps"] = detail::num(a.eps);
  j["eps_bound"] = detail::num(a.eps_bound);
  j["lip"] = detail::num(a.lip);
  j["grad_at_id"] = detail::num(a.grad_at_id);
  j["case_threshold"] = detail::num(a.case_threshold);
  j["generator"] = a.generator;
  j["spectral_modes"] = a.spectral_modes;
  j["normalization"] = detail::num(a.normalization);
  return j;
}

inline Json to_json(const GreedyResult& g) {
  Json j;
  j["dimension"] = g.dim();
  j["chosen"] = g.chosen;
  Json steps = Json::array();
  for (const auto& s : g.steps)
    steps.push_back(Json{{"candidate", s.candidate}, {"volume", detail::num(s.volume)}, {"drop_ratio", detail::num(s.drop_ratio)}});
  j["steps"] = std::move(steps);
  j["stop_ratio"] = detail::num(g.stop_ratio);
  return j;
}

// ---------------------------------------------------------------------------
// Milnor's inequality

struct MilnorCheck {
  double lhs = 0;             // 4 (Δ/δ) exp(2πΔ√K R)
  double rhs = 0;             // R
  bool conclusion = false;    // lhs < rhs
  double log_ball_bound = 0;  // log of 4^n (Δ/δ)^n R^n exp(2πΔ√K R)
  std::optional<bool> hypothesis_ok;  // R ≥ exp(exp(C (2n)^C)), when C is given
  std::string warning;
};

inline MilnorCheck milnor_bound_check(int n, double K, double Delta, double delta, double R,
                                      std::optional<double> C = std::nullopt) {
  if (n < 1 || K < 0 || !(Delta > 0) || !(delta > 0) || !(R > 0))
    throw std::invalid_argument("need n ≥ 1, K ≥ 0, Δ, δ, R > 0");
  MilnorCheck out;
  const double expo = 2 * M_PI * Delta * std::sqrt(K) * R;
  out.lhs = 4 * (Delta / delta) * std::exp(expo);
  out.rhs = R;
  out.conclusion = std::log(4 * Delta / delta) + expo < std::log(R);
  out.log_ball_bound = n * std::log(4 * Delta / delta * R) + expo;
  if (C) {
    // log log R versus C (2n)^C.
    out.hypothesis_ok = R > M_E && std::log(std::log(R)) >= *C * std::pow(2.0 * n, *C);
    if (!*out.hypothesis_ok) out.warning = "R is below exp(exp(C(2n)^C)); the corollary's hypothesis does not hold";
  }
  return out;
}

inline Json to_json(const MilnorCheck& m) {
  Json j;
  j["lhs"] = detail::num(m.lhs);
  j["rhs"] = detail::num(m.rhs);
  j["conclusion"] = m.conclusion;
  j["log_ball_bound"] = detail::num(m.log_ball_bound);
  j["hypothesis_ok"] = m.hypothesis_ok ? Json(*m.hypothesis_ok) : Json(nullptr);
  j["warning"] = m.warning;
  return j;
}

}  // namespace fgromov
