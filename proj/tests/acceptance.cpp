// Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>
#include <string>
#include <thread>
#include <vector>

#include "kato/calculus.hpp"
#include "kato/dyadic.hpp"
#include "kato/lp.hpp"
#include "kato/operator.hpp"
#include "kato/parallel.hpp"
#include "kato/runner.hpp"
#include "kato/scenario.hpp"
#include "kato/tb.hpp"

using namespace kato;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail += " [failed: " + what + "]";
    }
  }
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}
std::string sci(double v) { return fmt("%.3e", v); }

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// Relative change between two resolutions.
double drift(double a, double b) { return std::abs(a - b) / std::max(std::abs(a), 1e-300); }

GridSpec line(int Nx, int Nt) { return GridSpec{1, Nx, Nt, 1.0, 1.0}; }

ParabolicOperator unit_operator(const GridSpec& spec) {
  const Weight w = make_weight(WeightParams{}, spec);
  return ParabolicOperator(w, scaled_identity(w));
}

ParabolicOperator rough_operator(const GridSpec& spec, const WeightParams& wp, double kappa,
                                 bool time_dependent, std::uint64_t seed, int lattice_x = 0,
                                 int lattice_t = 0) {
  const Weight w = make_weight(wp, spec);
  return ParabolicOperator(
      w, random_coefficients(w, {kappa, time_dependent, seed, lattice_x, lattice_t}));
}

WeightParams power(double a) { return {WeightKind::power, a, 0.0, 0}; }
WeightParams dyadic_random(double amplitude, std::uint64_t seed) {
  return {WeightKind::dyadic_random, 0.0, amplitude, seed};
}

// The weighted rough operators shared by the accretivity and coercivity checks.
std::vector<ParabolicOperator> rough_family() {
  std::vector<ParabolicOperator> ops;
  ops.push_back(rough_operator(line(32, 16), power(0.5), 0.5, true, 11));
  ops.push_back(rough_operator(line(32, 16), power(-0.4), 0.7, true, 12));
  ops.push_back(rough_operator(line(32, 16), dyadic_random(0.4, 5), 0.5, false, 13));
  ops.push_back(rough_operator(GridSpec{2, 8, 16, 1.0, 1.0}, power(0.5), 0.5, true, 14));
  ops.push_back(rough_operator(GridSpec{2, 8, 16, 1.0, 1.0}, dyadic_random(0.3, 6), 0.6, true, 15));
  return ops;
}

const std::vector<cplx> sigmas{cplx(0.01, 0.0), cplx(1.0, 0.0), cplx(1.0, 10.0)};

GridFunction noise(const GridSpec& spec, CounterRng& rng) {
  GridFunction u(spec.size());
  for (Index k = 0; k < u.size(); ++k) u[k] = rng.complex_normal();
  return u;
}

// ---------------------------------------------------------------------------

Outcome fourier_anchor() {
  const auto t0 = std::chrono::steady_clock::now();
  const GridSpec spec = line(32, 16);
  const ParabolicOperator op = unit_operator(spec);
  const SqrtResult root = sqrt_schur(op);
  double symbol_err = 0.0;
  for (int kx = -spec.Nx / 2; kx < spec.Nx / 2; ++kx)
    for (int m = -spec.Nt / 2; m < spec.Nt / 2; ++m) {
      const GridFunction e = fourier_mode(spec, kx, 0, m);
      const cplx s = std::sqrt(unit_symbol(spec, kx, 0, m));
      const double err = (root.matrix * e - s * e).cwiseAbs().maxCoeff();
      symbol_err = std::max(symbol_err, err / std::max(std::abs(s), 1.0));
    }
  const KatoReport rep = kato_ratios(op, dense_root(root.matrix), 20, CounterRng(1));
  const double elapsed = seconds_since(t0);
  const double lo = std::pow(2.0, -0.25) - 1e-6, hi = 1.0 + 1e-6;
  Outcome o;
  o.detail = "r_min=" + fmt("%.6f", rep.r_min) + " r_max=" + fmt("%.6f", rep.r_max) +
             " symbol_err=" + sci(symbol_err) + " time=" + fmt("%.1fs", elapsed);
  o.require(rep.r_min >= lo && rep.r_max <= hi, "ratio band");
  o.require(symbol_err <= 1e-8, "symbol root 1e-8");
  o.require(elapsed < 10.0, "runtime < 10 s");
  return o;
}

Outcome oracle_agreement() {
  const auto t0 = std::chrono::steady_clock::now();
  const GridSpec spec = line(32, 16);
  const ParabolicOperator op = rough_operator(spec, power(0.5), 0.5, true, 21);
  const SqrtResult schur = sqrt_schur(op);
  CalderonRoot calderon(op, LambdaQuadrature::standard(spec, 8));
  CounterRng rng(2);
  std::vector<GridFunction> probes;
  for (int i = 0; i < 20; ++i) probes.push_back(random_packet_field(spec, rng));
  const std::vector<CalderonRoot::Value> vals = calderon.apply_many(probes);
  double worst = 0.0;
  for (std::size_t i = 0; i < probes.size(); ++i) {
    const GridFunction ref = schur.matrix * probes[i];
    worst = std::max(worst, mu_norm(op, vals[i].value - ref) / mu_norm(op, ref));
  }
  const double elapsed = seconds_since(t0);
  Outcome o;
  o.detail = "max_rel_err=" + sci(worst) + " widenings=" + std::to_string(vals[0].widenings) +
             " nodes=" + std::to_string(calderon.quadrature().size()) +
             " time=" + fmt("%.1fs", elapsed);
  o.require(worst <= 1e-3, "relative error 1e-3");
  o.require(elapsed < 60.0, "runtime < 60 s");
  return o;
}

Outcome accretivity() {
  double worst = -1.0;
  long trials = 0;
  CounterRng base(3);
  const std::vector<ParabolicOperator> ops = rough_family();
  for (std::size_t k = 0; k < ops.size(); ++k) {
    const ParabolicOperator& op = ops[k];
    for (std::size_t s = 0; s < sigmas.size(); ++s) {
      const ResolventSolver solver(op, sigmas[s], 1.0);
      CounterRng rng = base.substream(k * 16 + s);
      for (int i = 0; i < 20; ++i) {
        // Constants attain the bound, so the first probe tests the tolerance itself.
        const GridFunction f =
            i == 0 ? GridFunction(GridFunction::Ones(op.spec().size())) : noise(op.spec(), rng);
        const GridFunction u = solver.solve(f);
        // Relative excess of Re(sigma) ||u|| over ||f||.
        worst = std::max(worst, sigmas[s].real() * mu_norm(op, u) / mu_norm(op, f) - 1.0);
        ++trials;
      }
    }
  }
  Outcome o;
  o.detail = "trials=" + std::to_string(trials) + " max_excess=" + sci(worst);
  o.require(worst <= 1e-10, "contraction to 1e-10");
  return o;
}

Outcome coercivity() {
  long trials = 0, violations = 0;
  double min_margin = std::numeric_limits<double>::infinity();
  CounterRng base(4);
  const std::vector<ParabolicOperator> ops = rough_family();
  for (std::size_t k = 0; k < ops.size(); ++k) {
    const ParabolicOperator& op = ops[k];
    CounterRng rng = base.substream(k);
    for (int i = 0; i < 100; ++i) {
      const GridFunction u = noise(op.spec(), rng);
      const double energy = energy_norm2(op, u);
      for (const cplx sigma : sigmas) {
        const double delta = explicit_delta(op.ellipticity(), sigma);
        const double lhs = form_B(op, u, u, delta, sigma).real();
        const double rhs = delta * energy;
        min_margin = std::min(min_margin, lhs / rhs);
        if (lhs < rhs * (1.0 - 1e-12)) ++violations;
        ++trials;
      }
    }
  }
  Outcome o;
  o.detail = "trials=" + std::to_string(trials) + " violations=" + std::to_string(violations) +
             " min_lhs_over_rhs=" + fmt("%.4f", min_margin);
  o.require(violations == 0, "zero violations");
  return o;
}

Outcome offdiag_decay() {
  Outcome o;
  const std::vector<ParabolicOperator> ops = [] {
    std::vector<ParabolicOperator> v;
    v.push_back(rough_operator(line(32, 16), power(0.5), 0.5, true, 31));
    v.push_back(rough_operator(line(32, 16), power(-0.4), 0.6, true, 32));
    v.push_back(rough_operator(line(32, 16), dyadic_random(0.4, 7), 0.5, true, 33));
    return v;
  }();
  double min_c = std::numeric_limits<double>::infinity(), min_r2 = 1.0;
  const char* names[] = {"E_f", "grad_E_f", "E_div"};
  const OffDiagVariant variants[] = {OffDiagVariant::E_f, OffDiagVariant::grad_E_f,
                                     OffDiagVariant::E_div};
  for (std::size_t k = 0; k < ops.size(); ++k) {
    ResolventCache cache(ops[k]);
    const double hx = ops[k].spec().hx();
    for (int v = 0; v < 3; ++v) {
      const auto samples =
          offdiag_sweep(cache, {hx, 2 * hx}, 2, variants[v], CounterRng(5).substream(k * 4 + v));
      const DecayFit fit = fit_decay(samples, 2.0, 20.0);
      min_c = std::min(min_c, fit.c);
      min_r2 = std::min(min_r2, fit.r2);
      if (!(fit.c > 0.0 && fit.r2 >= 0.9))
        o.require(false, "operator " + std::to_string(k) + " " + names[v]);
    }
  }
  o.detail = "operators=3 variants=3 min_c=" + fmt("%.4f", min_c) + " min_r2=" + fmt("%.4f", min_r2);
  return o;
}

// nu(j, Delta) = (s_j / s_top) int_Delta rho dmu with a fixed continuum density,
// so the measure refines consistently with the grid.
CarlesonMeasure structured_measure(const DyadicGrid& grid, const RealField& w) {
  const GridSpec& spec = grid.spec();
  const double pi = std::acos(-1.0);
  const GridFunction rho = sample(spec, [&](double x, double, double t) {
    return cplx(1.0 + 0.5 * std::cos(2 * pi * x) * std::cos(2 * pi * t), 0.0);
  });
  CarlesonMeasure nu = CarlesonMeasure::zero(grid);
  for (int g = 0; g <= grid.top(); ++g)
    for (Index c = 0; c < grid.cube_count(g); ++c) {
      double mass = 0.0;
      for (Index node : grid.nodes(grid.cube(g, c)))
        mass += rho[node].real() * w[spec.spatial_of(node)] * spec.cell_volume();
      nu.mass[std::size_t(g)][std::size_t(c)] = grid.side(g) / grid.side(grid.top()) * mass;
    }
  return nu;
}

Outcome carleson_embedding_check() {
  Outcome o;
  // Agreement of the two evaluation paths on random measures.
  const GridSpec spec = line(32, 16);
  const Weight w = make_weight(power(0.5), spec);
  const DyadicGrid grid(spec);
  CounterRng base(6);
  double gap = 0.0;
  for (int i = 0; i < 50; ++i) {
    CounterRng rng = base.substream(std::uint64_t(i));
    CarlesonMeasure nu = CarlesonMeasure::zero(grid);
    for (std::size_t g = 0; g < nu.mass.size(); ++g)
      for (std::size_t c = 0; c < nu.mass[g].size(); ++c)
        if (rng.uniform() < 0.3)
          nu.mass[g][c] = rng.uniform() * grid.mu(grid.cube(int(g), Index(c)), w.values);
    const GridFunction f = random_packet_field(spec, rng);
    const CarlesonEmbedding e = carleson_embedding(grid, nu, f, w.values);
    gap = std::max(gap, std::abs(e.lhs_direct - e.lhs_layer_cake) / std::max(e.lhs_direct, 1e-300));
  }
  // Resolution stability of the embedding constant on a refining family.
  std::vector<double> constants;
  for (const GridSpec s : {line(32, 16), line(64, 64)}) {
    const Weight ws = make_weight(power(0.5), s);
    const DyadicGrid gs(s);
    const CarlesonMeasure nu = structured_measure(gs, ws.values);
    double worst = 0.0;
    for (int i = 0; i < 10; ++i) {
      CounterRng rng = CounterRng(60).substream(std::uint64_t(i));
      const GridFunction f = random_packet_field(s, rng);
      worst = std::max(worst, carleson_embedding(gs, nu, f, ws.values).constant());
    }
    constants.push_back(worst);
  }
  const double d = drift(constants[0], constants[1]);
  o.detail = "max_gap=" + sci(gap) + " constant_32x16=" + fmt("%.4f", constants[0]) +
             " constant_64x64=" + fmt("%.4f", constants[1]) + " drift=" + fmt("%.3f", d);
  o.require(gap <= 1e-10, "path agreement 1e-10");
  o.require(std::isfinite(constants[0]) && std::isfinite(constants[1]), "finite constant");
  o.require(d <= 0.2, "stability 20%");
  return o;
}

Outcome lp_stability() {
  Outcome o;
  double worst_drift = 0.0;
  for (const WeightParams wp : {WeightParams{}, power(0.5)}) {
    std::vector<std::array<double, 3>> per_res;
    for (const GridSpec spec : {line(32, 16), line(64, 64)}) {
      const Weight w = make_weight(wp, spec);
      const DyadicGrid grid(spec);
      const Mollifier P(spec);
      const LambdaQuadrature quad = lp_quadrature(grid, 8);
      std::array<double, 3> worst{};
      for (int i = 0; i < 4; ++i) {
        CounterRng rng = CounterRng(7).substream(std::uint64_t(i));
        const LPReport rep = lp_suite(P, grid, w.values, random_packet_field(spec, rng), quad);
        worst = {std::max(worst[0], rep.little1()), std::max(worst[1], rep.little2()),
                 std::max(worst[2], rep.little3())};
      }
      per_res.push_back(worst);
    }
    const char* label = wp.kind == WeightKind::unit ? "unit" : "power";
    for (int c = 0; c < 3; ++c) {
      const double d = drift(per_res[0][c], per_res[1][c]);
      worst_drift = std::max(worst_drift, d);
      o.detail += std::string(" ") + label + ".c" + std::to_string(c + 1) + "=" +
                  fmt("%.4f", per_res[0][c]) + "/" + fmt("%.4f", per_res[1][c]);
      o.require(std::isfinite(per_res[0][c]) && std::isfinite(per_res[1][c]),
                std::string(label) + " constant finite");
      o.require(d <= 0.2, std::string(label) + ".c" + std::to_string(c + 1) + " stability 20%");
    }
  }
  o.detail = "max_drift=" + fmt("%.3f", worst_drift) + o.detail;
  return o;
}

std::vector<ParabolicCube> spread_cubes(const DyadicGrid& grid, int gen, int count) {
  const Index total = grid.cube_count(gen);
  const Index m = std::min<Index>(count, total);
  std::vector<ParabolicCube> cubes;
  for (Index k = 0; k < m; ++k) cubes.push_back(grid.cube(gen, k * total / m));
  return cubes;
}

Outcome tb_pipeline() {
  Outcome o;
  const GridSpec spec = line(32, 64);
  const DyadicGrid grid(spec);
  int gen = -1;
  for (int g = grid.top(); g >= 0 && gen < 0; --g)
    if (test_function_fits(grid, grid.cube(g, 0))) gen = g;
  const std::vector<double> epsilons{0.25, 0.125, 0.0625, 0.03125};
  std::vector<ParabolicOperator> ops;
  for (int k = 0; k < 10; ++k)
    ops.push_back(rough_operator(spec, power(k % 2 ? -0.3 : 0.5), 0.5, true, 800 + k));

  // Stopping-time sweep over the ensemble.
  std::vector<double> worst_ratio(epsilons.size(), 0.0), diff_sum(epsilons.size(), 0.0);
  for (const ParabolicOperator& op : ops) {
    ResolventCache cache(op);
    for (std::size_t e = 0; e < epsilons.size(); ++e) {
      const ConeSet cones = ConeSet::make(1, epsilons[e], ConeMode::phase_resolved);
      const int m = std::min(8, cones.size());
      for (const ParabolicCube& cube : spread_cubes(grid, gen, 4))
        for (int c = 0; c < m; ++c) {
          const TestFunction tf =
              build_test_function(cache, grid, cube, cones[c * cones.size() / m].zeta, epsilons[e]);
          worst_ratio[e] = std::max(worst_ratio[e], stopping_time(grid, op.w(), tf).measure_ratio);
          diff_sum[e] += tf.laa.diff_norm2;
        }
    }
  }
  const auto eps = calibrate_epsilon(epsilons, worst_ratio, 0.95);
  const double slope = laa_slope(epsilons, diff_sum);
  o.require(eps.has_value(), "measure ratio <= 0.95 at some epsilon");
  o.detail = "gen=" + std::to_string(gen) + " eps=" + (eps ? fmt("%g", *eps) : "none");
  if (eps) {
    const std::size_t e = std::size_t(std::find(epsilons.begin(), epsilons.end(), *eps) - epsilons.begin());
    o.detail += " measure_ratio=" + fmt("%.4f", worst_ratio[e]);
  }

  // Stopping estimate on S'' through the full reduction, both cone modes.
  long checks = 0, violations = 0, lit_checks = 0, lit_violations = 0;
  CarlesonMainConfig cfg;
  cfg.epsilon = eps.value_or(0.125);
  cfg.final_bound = false;
  cfg.max_cubes_per_gen = 2;
  for (const ParabolicOperator& op : ops) {
    const CarlesonMainReport rep = carleson_main(op, cfg);
    checks += rep.est9_checks;
    violations += rep.est9_violations;
  }
  const ParabolicOperator plane =
      rough_operator(GridSpec{2, 8, 16, 1.0, 1.0}, power(0.5), 0.5, true, 900);
  for (const ConeMode mode : {ConeMode::phase_resolved, ConeMode::literal}) {
    CarlesonMainConfig c2 = cfg;
    c2.mode = mode;
    c2.max_cubes_per_gen = 1;
    const CarlesonMainReport rep = carleson_main(plane, c2);
    if (mode == ConeMode::phase_resolved) {
      checks += rep.est9_checks;
      violations += rep.est9_violations;
    } else {
      lit_checks += rep.est9_checks;
      lit_violations += rep.est9_violations;
    }
  }
  o.detail += " est9=" + std::to_string(violations) + "/" + std::to_string(checks) +
              " literal_findings=" + std::to_string(lit_violations) + "/" +
              std::to_string(lit_checks) + " laa_slope=" + fmt("%.3f", slope);
  o.require(checks > 0 && violations == 0, "est9 rate 0");
  o.require(std::abs(slope - 2.0) <= 0.2, "laa slope 2 +/- 0.2");
  return o;
}

Outcome main_carleson_kato() {
  const auto t0 = std::chrono::steady_clock::now();
  Outcome o;
  std::vector<double> sup, r_min, r_max;
  for (const GridSpec spec : {line(32, 16), line(64, 64)}) {
    const ParabolicOperator op = rough_operator(spec, power(0.5), 0.5, true, 7, 32, 16);
    CarlesonMainConfig cfg;
    cfg.tb = false;
    sup.push_back(carleson_main(op, cfg).sup_ratio);
    CalderonRoot root(op, LambdaQuadrature::standard(spec, 8), false, false);
    const KatoReport rep = kato_ratios(op, calderon_root(root), 20, CounterRng(9));
    r_min.push_back(rep.r_min);
    r_max.push_back(rep.r_max);
  }
  const double elapsed = seconds_since(t0);
  o.detail = "sup=" + fmt("%.4f", sup[0]) + "/" + fmt("%.4f", sup[1]) + " r_min=" +
             fmt("%.4f", r_min[0]) + "/" + fmt("%.4f", r_min[1]) + " r_max=" +
             fmt("%.4f", r_max[0]) + "/" + fmt("%.4f", r_max[1]) + " spread=" +
             fmt("%.4f", r_max[0] / r_min[0]) + "/" + fmt("%.4f", r_max[1] / r_min[1]) +
             " time=" + fmt("%.0fs", elapsed);
  const std::pair<const char*, const std::vector<double>*> series[] = {
      {"sup", &sup}, {"r_min", &r_min}, {"r_max", &r_max}};
  for (const auto& [name, v] : series) {
    o.require(std::isfinite((*v)[0]) && std::isfinite((*v)[1]), std::string(name) + " finite");
    o.require(drift((*v)[0], (*v)[1]) <= 0.3, std::string(name) + " stability 30%");
  }
  o.require(elapsed < 1800.0, "runtime < 30 min");
  return o;
}

Outcome determinism() {
  Scenario sc;
  sc.name = "determinism";
  sc.seed = 10;
  sc.grid = line(16, 16);
  sc.weight = power(0.5);
  sc.coefficients.kind = CoefficientKind::random;
  sc.coefficients.random.kappa = 0.5;
  sc.experiments = {Experiment::ellipticity, Experiment::coercivity,    Experiment::resolvents,
                    Experiment::offdiag,     Experiment::lp,            Experiment::carleson_embed,
                    Experiment::tb,          Experiment::carleson_main, Experiment::kato};
  sc.carleson_main.final_bound = false;
  const RunOptions quiet{false, true};
  std::vector<std::string> dumps;
  for (const int threads : {1, 1, 3}) {
    sc.threads = threads;
    dumps.push_back(dump_summary(run(sc, quiet).summary));
  }
  set_thread_count(int(std::max(1u, std::thread::hardware_concurrency())));
  Outcome o;
  o.detail = "bytes=" + std::to_string(dumps[0].size()) + " hash=" + hex64(fnv1a(dumps[0]));
  o.require(dumps[0] == dumps[1], "rerun identical");
  o.require(dumps[0] == dumps[2], "thread count independent");
  return o;
}

}  // namespace

// With arguments, only the listed criteria (1-based) run.
int main(int argc, char** argv) {
  struct Criterion {
    const char* name;
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> criteria{
      {"fourier_symbol_anchor", fourier_anchor},
      {"oracle_agreement", oracle_agreement},
      {"accretivity_exactness", accretivity},
      {"hidden_coercivity", coercivity},
      {"off_diagonal_decay", offdiag_decay},
      {"carleson_embedding", carleson_embedding_check},
      {"littlewood_paley", lp_stability},
      {"tb_pipeline", tb_pipeline},
      {"main_carleson_and_kato", main_carleson_kato},
      {"determinism", determinism},
  };
  std::vector<std::size_t> selected;
  for (int a = 1; a < argc; ++a) selected.push_back(std::size_t(std::stoul(argv[a])) - 1);
  if (selected.empty())
    for (std::size_t i = 0; i < criteria.size(); ++i) selected.push_back(i);
  set_thread_count(int(std::max(1u, std::thread::hardware_concurrency())));
  int failed = 0;
  for (const std::size_t i : selected) {
    if (i >= criteria.size()) {
      std::fprintf(stderr, "no criterion %zu\n", i + 1);
      return 2;
    }
    Outcome o;
    try {
      o = criteria[i].run();
    } catch (const std::exception& ex) {
      o = {false, std::string(" [exception: ") + ex.what() + "]"};
    }
    failed += !o.pass;
    std::printf("C%zu %s %s: %s\n", i + 1, o.pass ? "PASS" : "FAIL", criteria[i].name,
                o.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%d of %zu criteria passed\n", int(selected.size()) - failed, selected.size());
  return failed == 0 ? 0 : 1;
}
