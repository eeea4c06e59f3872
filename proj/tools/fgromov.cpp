// fgromov: command-line front end for growth tables, the reduction loop,
// nilpotency certificates, lattice dichotomies and the harmonic measurements.
//
// Exit codes: 0 success, 1 negative verdict (not certified, verification
// failed), 2 usage or input error, 3 computation failure.

#include <CLI11.hpp>
#include <cstdlib>
#include <iostream>

#include "fgromov/pipeline.hpp"

using namespace fgromov;
namespace fs = std::filesystem;

namespace {

struct Common {
  std::string group;
  std::string report;
  std::optional<std::string> cache_dir;
  std::uint64_t seed = 1;
  std::size_t cap = kDefaultElementCap;
};

std::optional<fs::path> cache_dir(const Common& c) {
  if (c.cache_dir) return fs::path(*c.cache_dir);
  if (const char* env = std::getenv("FGROMOV_CACHE"); env && *env) return fs::path(env);
  return std::nullopt;
}

struct LoadedGroup {
  std::string name;
  MarkedGroup group;
};

LoadedGroup load(const Common& c) {
  std::vector<std::string> warnings;
  const GroupSpec spec = read_group_spec(c.group);
  MarkedGroup G = build_group(spec, &warnings);
  for (const auto& w : warnings) std::cerr << "warning: " << w << "\n";
  return {spec.name, std::move(G)};
}

void finish(const Common& c, const Json& report) {
  if (!c.report.empty()) emit_report(report, c.report);
}

void add_common(CLI::App* sub, Common& c, bool needs_group = true) {
  if (needs_group) sub->add_option("--group", c.group, "group spec file")->required()->check(CLI::ExistingFile);
  sub->add_option("--report", c.report, "write the JSON report here");
  sub->add_option("--cache-dir", c.cache_dir, "ball cache directory (default: $FGROMOV_CACHE)");
  sub->add_option("--seed", c.seed, "random seed");
  sub->add_option("--cap", c.cap, "element cap per ball");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Desk-scale tools for finitely generated groups of polynomial growth"};
  app.set_version_flag("--version", std::string(kToolVersion));
  app.require_subcommand(1);
  Common c;

  // growth
  int growth_R = 16;
  std::string csv_path;
  auto* growth = app.add_subcommand("growth", "ball sizes |B(r)| with growth-degree estimates");
  add_common(growth, c);
  growth->add_option("--radius", growth_R, "largest radius")->check(CLI::PositiveNumber);
  growth->add_option("--csv", csv_path, "write the CSV table here instead of stdout");

  // reduce
  ReduceConfig rcfg;
  auto* reduce = app.add_subcommand("reduce", "subgroup reduction loop with certificates");
  add_common(reduce, c);
  reduce->add_option("--budget", rcfg.max_steps, "maximum number of subgroup passages");
  reduce->add_option("--radius", rcfg.growth_radius, "growth-degree radius");
  reduce->add_option("--descent", rcfg.descent, "required growth-degree drop per kernel step");
  reduce->add_option("--wall-seconds", rcfg.wall_seconds, "wall-clock budget");

  // certify
  int cert_s = 1, cert_K = 1, cert_R = 1;
  std::string subgroup_spec;
  auto* certify = app.add_subcommand("certify", "(K,R)-subgroup plus nilpotency certificate");
  add_common(certify, c);
  certify->add_option("--step", cert_s, "nilpotency step s")->check(CLI::NonNegativeNumber);
  certify->add_option("--K", cert_K, "covering parameter K");
  certify->add_option("--R", cert_R, "generator radius R");
  certify->add_option("--subgroup", subgroup_spec, "spec file whose generators span the subgroup (default: G)")
      ->check(CLI::ExistingFile);

  // dichotomy
  std::string matrix_path;
  int dich_N = 20;
  auto* dich = app.add_subcommand("dichotomy", "periodicity / exponential growth of an integer matrix");
  add_common(dich, c, false);
  dich->add_option("--matrix", matrix_path, "matrix file")->required()->check(CLI::ExistingFile);
  dich->add_option("-N", dich_N, "power used for the growth rate")->check(CLI::PositiveNumber);

  // harmonic
  int harm_R = 4, harm_window = -1;
  std::string harm_csv;
  auto* harm = app.add_subcommand("harmonic", "almost-harmonic Lipschitz function");
  add_common(harm, c);
  harm->add_option("--radius", harm_R, "construction radius R")->check(CLI::PositiveNumber);
  harm->add_option("--window", harm_window, "measurement radius (default R)");
  harm->add_option("--csv", harm_csv, "write u as CSV here");

  // kleiner-dim
  int kd_R = 6;
  std::size_t kd_count = 40;
  double kd_drop = 1e-3;
  std::string kd_model = "lipschitz";
  std::vector<std::size_t> kd_coords;
  auto* kd = app.add_subcommand("kleiner-dim", "greedy dimension of Dirichlet-harmonic candidates");
  add_common(kd, c);
  kd->add_option("--radius", kd_R, "ball radius")->check(CLI::PositiveNumber);
  kd->add_option("--count", kd_count, "number of candidates");
  kd->add_option("--drop", kd_drop, "greedy drop factor");
  kd->add_option("--model", kd_model, "boundary model")->check(CLI::IsMember({"lipschitz", "affine"}));
  kd->add_option("--coord", kd_coords, "element coordinate index for the affine model (repeatable)");

  // slowg
  SlowGrowthParams sg;
  auto* slowg = app.add_subcommand("slowg", "slow conjugation growth generators on Z ⋉_T Z^D");
  add_common(slowg, c);
  slowg->add_option("--r-min", sg.R_min);
  slowg->add_option("--r-max", sg.R_max);
  slowg->add_option("--range-cap", sg.range_cap);

  // milnor-check
  int m_n = 1;
  double m_K = 0, m_Delta = 1, m_delta = 1, m_R = 100;
  std::optional<double> m_C;
  auto* milnor = app.add_subcommand("milnor-check", "evaluate Milnor's inequality and the ball bound");
  add_common(milnor, c, false);
  milnor->add_option("--n", m_n, "dimension")->required();
  milnor->add_option("--K", m_K, "curvature bound K")->required();
  milnor->add_option("--Delta", m_Delta, "Δ_v")->required();
  milnor->add_option("--delta", m_delta, "δ_v")->required();
  milnor->add_option("--R", m_R, "radius R")->required();
  milnor->add_option("--C", m_C, "constant C for the hypothesis check");

  // verify
  std::string verify_path;
  auto* verify = app.add_subcommand("verify", "re-verify the certificates of a reduce report");
  add_common(verify, c);
  verify->add_option("report_file", verify_path, "reduce report")->required()->check(CLI::ExistingFile);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }

  try {
    if (growth->parsed()) {
      const auto G = load(c);
      const auto g = cmd_growth(G.group, growth_R, cache_dir(c), c.cap);
      const std::string csv = growth_csv(g);
      if (csv_path.empty())
        std::cout << csv;
      else
        write_file_atomic(csv_path, csv);
      finish(c, make_report("growth", group_json(G.group, G.name), Json{{"radius", growth_R}, {"cap", c.cap}}, to_json(g)));
      return 0;
    }
    if (reduce->parsed()) {
      const auto G = load(c);
      rcfg.cap = c.cap;
      const auto trace = cmd_reduce(G.group, rcfg);
      for (std::size_t i = 0; i < trace.levels.size(); ++i) {
        const auto& l = trace.levels[i];
        std::cout << "level " << i << ": |S| = " << l.generators.size() << ", degree ≈ " << l.growth.degree;
        if (l.kernel) std::cout << " -> derived subgroup degree ≈ " << l.kernel->degree_after;
        std::cout << "\n";
      }
      std::cout << "terminal: " << trace.terminal << (trace.reason.empty() ? "" : " (" + trace.reason + ")") << "\n";
      finish(c, make_report("reduce", group_json(G.group, G.name), to_json(rcfg), to_json(trace)));
      return 0;
    }
    if (certify->parsed()) {
      const auto G = load(c);
      std::optional<std::vector<Element>> sub;
      if (!subgroup_spec.empty()) sub = read_group_spec(subgroup_spec).generators;
      const auto cert = cmd_certify_nilpotent(G.group, cert_s, cert_K, cert_R, sub, c.cap);
      std::cout << (cert.certified() ? "certified" : "not certified");
      if (!cert.kr.checked_inclusion) std::cout << " (covering: " << cert.kr.failure << ")";
      if (!cert.nilpotency.nilpotent) std::cout << " (non-vanishing commutator " << format_element(cert.nilpotency.value) << ")";
      std::cout << "\n";
      finish(c, make_report("certify", group_json(G.group, G.name), Json{{"step", cert_s}, {"K", cert_K}, {"R", cert_R}},
                            to_json(cert)));
      return cert.certified() ? 0 : 1;
    }
    if (dich->parsed()) {
      std::string name;
      const IntMatrix T = parse_matrix_file(matrix_path, &name);
      const auto d = dichotomy(T, dich_N);
      if (d.periodic())
        std::cout << "periodic: n = " << d.as_periodic().n << "\n";
      else
        std::cout << "growth: mahler = " << d.as_growth().mahler << ", rate = " << d.as_growth().measured_rate << "\n";
      finish(c, make_report("dichotomy", Json{{"name", name}, {"matrix", matrix_json(T)}}, Json{{"N", dich_N}}, to_json(d)));
      return 0;
    }
    if (harm->parsed()) {
      const auto G = load(c);
      AlmostHarmonicOptions opt;
      opt.window = harm_window;
      opt.cap = c.cap;
      const auto a = build_almost_harmonic(G.group, harm_R, opt);
      std::cout << to_string(a.kind) << ": eps = " << a.eps << ", lip = " << a.lip << ", |grad u(id)| = " << a.grad_at_id
                << "\n";
      if (!harm_csv.empty() && a.u) write_file_atomic(harm_csv, to_csv(*a.u));
      finish(c, make_report("harmonic", group_json(G.group, G.name), Json{{"R", harm_R}, {"window", harm_window}}, to_json(a)));
      return 0;
    }
    if (kd->parsed()) {
      const auto G = load(c);
      const auto ball = make_ball(G.group, kd_R, c.cap);
      std::vector<std::function<double(const Element&)>> coords;
      for (auto i : kd_coords) coords.push_back([i](const Element& g) { return static_cast<double>(g.at(i)); });
      const auto model = kd_model == "affine" ? BoundaryModel::AffineCoordinates : BoundaryModel::RandomLipschitz;
      const auto cands = harmonic_candidates(ball, kd_count, c.seed, model, coords);
      const auto g = greedy_dimension(cands, kd_R, kd_drop);
      std::cout << greedy_csv(g);
      finish(c, make_report("kleiner-dim", group_json(G.group, G.name),
                            Json{{"radius", kd_R}, {"count", kd_count}, {"drop", kd_drop}, {"model", kd_model},
                                 {"coords", kd_coords}, {"seed", c.seed}},
                            to_json(g)));
      return 0;
    }
    if (slowg->parsed()) {
      const auto G = load(c);
      if (!std::holds_alternative<SemidirectGroup>(G.group.backend()))
        throw ParseError("slowg needs a semidirect group spec");
      if (slowg->count("--cap")) sg.cap = c.cap;
      Element e = G.group.identity();
      e[0] = 1;
      const auto s = slow_growth_generators(G.group, e, [](const Element& g) { return g[0] == 0; }, sg);
      std::cout << "R = " << s.R << ", N = " << s.N << ", |S~| = " << s.S_tilde.size() << ", range = " << s.range << "\n";
      finish(c, make_report("slowg", group_json(G.group, G.name),
                            Json{{"R_min", sg.R_min}, {"R_max", sg.R_max}, {"ratio_bound", sg.ratio_bound},
                                 {"delta", sg.delta}, {"range_cap", sg.range_cap}},
                            to_json(s)));
      return 0;
    }
    if (milnor->parsed()) {
      const auto m = milnor_bound_check(m_n, m_K, m_Delta, m_delta, m_R, m_C);
      std::cout << "lhs = " << m.lhs << ", R = " << m.rhs << ", inequality " << (m.conclusion ? "holds" : "fails") << "\n";
      if (!m.warning.empty()) std::cerr << "warning: " << m.warning << "\n";
      Json cfg{{"n", m_n}, {"K", m_K}, {"Delta", m_Delta}, {"delta", m_delta}, {"R", m_R}};
      cfg["C"] = m_C ? Json(*m_C) : Json(nullptr);
      finish(c, make_report("milnor-check", Json(nullptr), cfg, to_json(m)));
      return 0;
    }
    if (verify->parsed()) {
      const auto G = load(c);
      const Json report = Json::parse(read_file(verify_path));
      const auto v = verify_reduce_report(report, G.group, c.cap);
      for (const auto& f : v.failures) std::cout << "FAIL " << f << "\n";
      std::cout << v.checked << " certificates checked, " << v.failures.size() << " failures\n";
      return v.ok() ? 0 : 1;
    }
  } catch (const ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
