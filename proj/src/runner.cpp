#include "kato/runner.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <sstream>

#include "kato/calculus.hpp"
#include "kato/dyadic.hpp"
#include "kato/lp.hpp"
#include "kato/operator.hpp"
#include "kato/parallel.hpp"
#include "kato/tb.hpp"

namespace kato {

namespace {

using json = nlohmann::json;
namespace fs = std::filesystem;

constexpr int kSchemaVersion = 1;

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

/// Rows of one CSV table; cells are preformatted so output is bit-stable.
struct Table {
  std::string file;
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  template <class... Cells>
  void row(const Cells&... cells) {
    rows.push_back({cell(cells)...});
  }

 private:
  static std::string cell(double v) { return num(v); }
  static std::string cell(int v) { return std::to_string(v); }
  static std::string cell(long v) { return std::to_string(v); }
  static std::string cell(std::size_t v) { return std::to_string(v); }
  static std::string cell(bool v) { return v ? "1" : "0"; }
  static std::string cell(const std::string& v) { return v; }
  static std::string cell(const char* v) { return v; }
};

struct Result {
  json constants = json::object();
  std::vector<Check> checks;
  std::vector<Table> tables;

  void check(std::string name, std::string tag, double value, std::string relation, double limit) {
    bool pass = false;
    if (relation == "<=") pass = value <= limit;
    else if (relation == ">=") pass = value >= limit;
    else if (relation == "<") pass = value < limit;
    else if (relation == ">") pass = value > limit;
    checks.push_back({std::move(name), std::move(tag), value, limit, std::move(relation), pass});
  }
};

struct Context {
  const Scenario& sc;
  const ParabolicOperator& op;
  const DyadicGrid& grid;
  std::optional<double> calibrated_epsilon;

  [[nodiscard]] const GridSpec& spec() const { return op.spec(); }
  [[nodiscard]] const RealField& w() const { return op.w(); }
  /// Every experiment draws from its own stream of the master generator.
  [[nodiscard]] CounterRng rng(Experiment e) const {
    return CounterRng(sc.seed).substream(100 + std::uint64_t(e));
  }
};

double finite_or_inf(double v) { return std::isfinite(v) ? v : std::numeric_limits<double>::infinity(); }

GridFunction noise_field(const GridSpec& spec, CounterRng& rng) {
  GridFunction u(spec.size());
  for (Index k = 0; k < u.size(); ++k) u[k] = rng.complex_normal();
  return u;
}

/// `count` cube indices spread evenly over generation `gen`.
std::vector<ParabolicCube> spread_cubes(const DyadicGrid& grid, int gen, int count) {
  const Index total = grid.cube_count(gen);
  const Index m = std::min<Index>(count, total);
  std::vector<ParabolicCube> out;
  for (Index i = 0; i < m; ++i) out.push_back(grid.cube(gen, i * total / m));
  return out;
}

// ---------------------------------------------------------------------------

void run_ellipticity(Context& ctx, Result& r) {
  const Ellipticity& e = ctx.op.ellipticity();
  const Weight& w = ctx.op.weight();
  r.constants = {{"c1", e.c1},
                 {"c2", e.c2},
                 {"a2", w.a2},
                 {"doubling", w.doubling},
                 {"mu_doubling", w.mu_doubling()},
                 {"ainf_eta", w.ainf.eta},
                 {"ainf_beta", w.ainf.beta}};
  r.check("c1_positive", "weighted_ellipticity", e.c1, ">", 0.0);
  const CoefficientSpec& cs = ctx.sc.coefficients;
  if (cs.kind == CoefficientKind::identity) {
    r.check("c1_identity", "weighted_ellipticity", std::abs(e.c1 - cs.scale), "<=", 1e-12 * cs.scale);
    r.check("c2_identity", "weighted_ellipticity", std::abs(e.c2 - cs.scale), "<=", 1e-12 * cs.scale);
  } else {
    r.check("c1_certified", "weighted_ellipticity", e.c1, ">=", 1.0 - cs.random.kappa - 1e-12);
    r.check("c2_certified", "weighted_ellipticity", e.c2, "<=", 1.0 + cs.random.kappa + 1e-12);
  }
  Table t{"weight.csv", {"index", "value"}, {}};
  for (Index s = 0; s < ctx.w().size(); ++s) t.row(s, ctx.w()[s]);
  r.tables.push_back(std::move(t));
}

void run_coercivity(Context& ctx, Result& r) {
  const auto& set = ctx.sc.coercivity;
  const CounterRng base = ctx.rng(Experiment::coercivity);
  const std::size_t S = std::size_t(set.samples);
  // Samples alternate between white noise and smooth wave packets.
  std::vector<GridFunction> us(S);
  for (std::size_t i = 0; i < S; ++i) {
    CounterRng rng = base.substream(i);
    us[i] = i % 2 == 0 ? noise_field(ctx.spec(), rng) : random_packet_field(ctx.spec(), rng);
  }
  Table t{"coercivity.csv", {"sigma_re", "sigma_im", "delta", "sample", "lhs", "rhs", "ratio"}, {}};
  const double c1 = ctx.op.ellipticity().c1;
  long violations = 0;
  double worst_slack = std::numeric_limits<double>::infinity();
  json per_sigma = json::array();
  for (const cplx& sigma : set.sigmas) {
    const double delta = explicit_delta(ctx.op.ellipticity(), sigma);
    std::vector<std::array<double, 2>> sides(S);
    parallel_for(S, [&](std::size_t i) {
      sides[i] = {form_B(ctx.op, us[i], us[i], delta, sigma).real(),
                  delta * energy_norm2(ctx.op, us[i])};
    });
    double min_ratio = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < S; ++i) {
      const auto [lhs, rhs] = sides[i];
      const double ratio = lhs / rhs;
      min_ratio = std::min(min_ratio, ratio);
      worst_slack = std::min(worst_slack, (lhs - rhs) / rhs);
      if (lhs < rhs * (1.0 - ctx.sc.tolerances.coercivity)) ++violations;
      t.row(sigma.real(), sigma.imag(), delta, i, lhs, rhs, ratio);
    }
    per_sigma.push_back({{"sigma", {sigma.real(), sigma.imag()}}, {"delta", delta},
                         {"min_ratio", min_ratio}});
  }
  // delta = 0, sigma = 0: the time part is skew, so only c1 ||grad u||^2 survives.
  std::vector<double> accretive(S);
  parallel_for(S, [&](std::size_t i) {
    const double lhs = form_B(ctx.op, us[i], us[i], 0.0, cplx(0.0)).real();
    const double rhs = c1 * norm2(ctx.spec(), grad_x(ctx.spec(), us[i]), MeasureKind::mu, ctx.w());
    accretive[i] = (lhs - rhs) / std::max(rhs, std::numeric_limits<double>::min());
  });
  const double accretive_slack = *std::min_element(accretive.begin(), accretive.end());
  r.constants = {{"per_sigma", per_sigma},
                 {"worst_relative_slack", worst_slack},
                 {"violations", violations},
                 {"accretive_relative_slack", accretive_slack}};
  r.check("violations", "hidden_coercivity", double(violations), "<=", 0.0);
  r.check("accretive_form", "weighted_ellipticity", accretive_slack, ">=",
          -ctx.sc.tolerances.coercivity);
  r.tables.push_back(std::move(t));
}

void run_resolvents(Context& ctx, Result& r) {
  const auto& set = ctx.sc.resolvents;
  const CounterRng base = ctx.rng(Experiment::resolvents);
  const GridSpec& spec = ctx.spec();
  Eigen::MatrixXcd F(spec.size(), set.samples);
  for (int i = 0; i < set.samples; ++i) {
    CounterRng rng = base.substream(std::uint64_t(i));
    F.col(i) = i % 2 == 0 ? noise_field(spec, rng) : random_packet_field(spec, rng);
  }
  Table acc{"accretivity.csv", {"sigma_re", "sigma_im", "adjoint", "sample", "ratio", "residual"}, {}};
  double worst_excess = -std::numeric_limits<double>::infinity();
  double worst_residual = 0.0;
  for (const cplx& sigma : set.sigmas)
    for (bool adjoint : {false, true}) {
      const ResolventSolver solver(ctx.op, sigma, cplx(1.0), adjoint);
      const Eigen::MatrixXcd U = solver.solve(F);
      for (int i = 0; i < set.samples; ++i) {
        const GridFunction u = U.col(i), f = F.col(i);
        const double fn = std::sqrt(norm2(spec, f, MeasureKind::mu, ctx.w()));
        const double ratio = std::sqrt(norm2(spec, u, MeasureKind::mu, ctx.w())) * sigma.real() / fn;
        const GridFunction Hu = adjoint ? ctx.op.apply_adjoint(u) : ctx.op.apply(u);
        const double residual =
            std::sqrt(norm2(spec, GridFunction(sigma * u + Hu - f), MeasureKind::mu, ctx.w())) / fn;
        worst_excess = std::max(worst_excess, ratio - 1.0);
        worst_residual = std::max(worst_residual, residual);
        acc.row(sigma.real(), sigma.imag(), adjoint, i, ratio, residual);
      }
    }
  ResolventCache cache(ctx.op);
  const LambdaQuadrature quad =
      LambdaQuadrature::make(spec.hx() / 4.0, 4.0 * spec.Lx, set.le8_per_octave);
  const ResolventEstimates est = lemma_le8_suite(cache, quad.nodes, set.le8_samples,
                                                 base.substream(1u << 20),
                                                 ctx.sc.tolerances.resolvent_ceiling);
  Table le8{"resolvent_bounds.csv", {"lambda"}, {}};
  for (const char* name : ResolventEstimates::names) le8.header.push_back(name);
  for (std::size_t j = 0; j < est.lambdas.size(); ++j) {
    std::vector<std::string> row{num(est.lambdas[j])};
    for (const auto& series : est.per_lambda) row.push_back(num(series[j]));
    le8.rows.push_back(std::move(row));
  }
  json max_ratio = json::object();
  double worst_bound = 0.0;
  for (std::size_t k = 0; k < est.max_ratio.size(); ++k) {
    max_ratio[ResolventEstimates::names[k]] = est.max_ratio[k];
    worst_bound = std::max(worst_bound, finite_or_inf(est.max_ratio[k]));
  }
  r.constants = {{"accretivity_excess", worst_excess},
                 {"residual", worst_residual},
                 {"uniform_bounds", max_ratio},
                 {"upward_trend", est.upward_trend}};
  r.check("accretivity", "maximal_accretivity", worst_excess, "<=", ctx.sc.tolerances.accretivity);
  r.check("residual", "maximal_accretivity", worst_residual, "<=", ctx.sc.tolerances.accretivity);
  r.check("uniform_bounds", "uniform_resolvent_bounds", worst_bound, "<=",
          ctx.sc.tolerances.resolvent_ceiling);
  r.tables.push_back(std::move(acc));
  r.tables.push_back(std::move(le8));
}

void run_offdiag(Context& ctx, Result& r) {
  const auto& set = ctx.sc.offdiag;
  const CounterRng base = ctx.rng(Experiment::offdiag);
  ResolventCache cache(ctx.op);
  std::vector<double> lambdas;
  for (double c : set.lambda_cells) lambdas.push_back(c * ctx.spec().hx());
  Table t{"offdiag.csv", {"variant", "lambda", "d", "d_over_lambda", "ratio"}, {}};
  const std::array<std::pair<const char*, OffDiagVariant>, 3> variants = {
      {{"E_f", OffDiagVariant::E_f},
       {"grad_E_f", OffDiagVariant::grad_E_f},
       {"E_div", OffDiagVariant::E_div}}};
  for (std::size_t v = 0; v < variants.size(); ++v) {
    const auto& [name, variant] = variants[v];
    const auto samples = offdiag_sweep(cache, lambdas, set.width, variant, base.substream(v));
    const DecayFit fit = fit_decay(samples);
    for (const auto& s : samples) t.row(std::string(name), s.lambda, s.d, s.d / s.lambda, s.ratio);
    r.constants[name] = {{"c", fit.c}, {"r2", fit.r2}, {"intercept", fit.intercept},
                         {"points", fit.used}};
    r.check(std::string(name) + "_decay_constant", "off_diagonal_decay", fit.c, ">", 0.0);
    r.check(std::string(name) + "_fit_r2", "off_diagonal_decay", fit.r2, ">=",
            ctx.sc.tolerances.offdiag_r2);
  }
  r.tables.push_back(std::move(t));
}

void run_lp(Context& ctx, Result& r) {
  const auto& set = ctx.sc.lp;
  const CounterRng base = ctx.rng(Experiment::lp);
  const Mollifier P(ctx.spec(), set.profile);
  const LambdaQuadrature quad = lp_quadrature(ctx.grid, set.per_octave);
  Table t{"lp.csv",
          {"sample", "gradient", "time", "half", "smoothing", "averaging", "f_norm", "d_norm",
           "little1", "little2", "little3"},
          {}};
  std::array<double, 3> worst{};
  double split_defect = 0.0;
  for (int i = 0; i < set.samples; ++i) {
    CounterRng rng = base.substream(std::uint64_t(i));
    const GridFunction f = random_packet_field(ctx.spec(), rng);
    const LPReport rep = lp_suite(P, ctx.grid, ctx.w(), f, quad);
    t.row(i, rep.gradient, rep.time, rep.half, rep.smoothing, rep.averaging, rep.f_norm,
          rep.d_norm, rep.little1(), rep.little2(), rep.little3());
    worst[0] = std::max(worst[0], finite_or_inf(rep.little1()));
    worst[1] = std::max(worst[1], finite_or_inf(rep.little2()));
    worst[2] = std::max(worst[2], finite_or_inf(rep.little3()));
    const double lam = quad.nodes[quad.size() / 2];
    for (const SplitCheck& s :
         {smoothing_split(P, f, lam), averaging_split(P, ctx.grid, f, lam)})
      split_defect = std::max(split_defect, (s.lhs - s.rhs).norm() / std::max(s.lhs.norm(), 1e-300));
  }
  r.constants = {{"gradient_time_half", worst[0]},
                 {"smoothing", worst[1]},
                 {"averaging", worst[2]},
                 {"split_defect", split_defect},
                 {"lambda_min", quad.lambda_min},
                 {"lambda_max", quad.lambda_max}};
  const double ceiling = ctx.sc.tolerances.lp_ceiling;
  r.check("gradient_time_half", "littlewood_paley_gradient", worst[0], "<=", ceiling);
  r.check("smoothing", "littlewood_paley_smoothing", worst[1], "<=", ceiling);
  r.check("averaging", "littlewood_paley_averaging", worst[2], "<=", ceiling);
  r.check("split_identities", "littlewood_paley_smoothing", split_defect, "<=", 1e-12);
  r.tables.push_back(std::move(t));
}

void run_poincare(Context& ctx, Result& r) {
  const auto& set = ctx.sc.poincare;
  const CounterRng base = ctx.rng(Experiment::poincare);
  std::vector<GridFunction> fs;
  for (int i = 0; i < set.samples; ++i) {
    CounterRng rng = base.substream(std::uint64_t(i));
    fs.push_back(random_packet_field(ctx.spec(), rng));
  }
  struct Item {
    int sample;
    ParabolicCube cube;
    int k;
  };
  std::vector<Item> items;
  for (int gen : set.generations)
    for (const ParabolicCube& c : spread_cubes(ctx.grid, gen, set.cubes_per_gen))
      for (int i = 0; i < set.samples; ++i)
        for (int k = 0; k <= set.max_k; ++k) items.push_back({i, c, k});
  std::vector<PoincareRatio> out(items.size());
  parallel_for(items.size(), [&](std::size_t j) {
    out[j] = poincare_ratio(ctx.grid, ctx.w(), fs[std::size_t(items[j].sample)], items[j].cube,
                            items[j].k);
  });
  Table t{"poincare.csv", {"sample", "generation", "cube", "k", "lhs", "rhs", "ratio", "clamped"}, {}};
  double worst = 0.0;
  long clamped = 0;
  for (std::size_t j = 0; j < items.size(); ++j) {
    const Item& it = items[j];
    t.row(it.sample, it.cube.gen, ctx.grid.index(it.cube), it.k, out[j].lhs, out[j].rhs,
          out[j].ratio, out[j].clamped);
    if (out[j].clamped) {
      ++clamped;
      continue;
    }
    worst = std::max(worst, finite_or_inf(out[j].ratio));
  }
  r.constants = {{"constant", worst}, {"evaluations", items.size()}, {"clamped", clamped}};
  r.check("constant", "weighted_poincare", worst, "<=", ctx.sc.tolerances.poincare_ceiling);
  r.tables.push_back(std::move(t));
}

void run_principal_part(Context& ctx, Result& r) {
  const auto& set = ctx.sc.principal_part;
  const CounterRng base = ctx.rng(Experiment::principal_part);
  const GridSpec& spec = ctx.spec();
  ResolventCache cache(ctx.op);
  Table t{"principal_part.csv", {"lambda", "sample", "principal_ratio", "product_ratio"}, {}};
  double worst_principal = 0.0, worst_product = 0.0, constant_defect = 0.0;
  for (double cells : set.lambda_cells) {
    const double lam = cells * spec.hx();
    const VectorField ones = VectorField::Ones(spec.size(), spec.n);
    const double scale = std::sqrt(norm2(spec, principal_part(cache, lam), MeasureKind::mu, ctx.w()));
    const double defect = std::sqrt(norm2(spec, r_lambda(cache, ctx.grid, lam, ones),
                                          MeasureKind::mu, ctx.w()));
    constant_defect = std::max(constant_defect, defect / std::max(scale, 1e-300));
    for (int i = 0; i < set.samples; ++i) {
      CounterRng rng = base.substream(std::uint64_t(i));
      VectorField F(spec.size(), spec.n);
      for (int c = 0; c < spec.n; ++c) F.col(c) = random_packet_field(spec, rng);
      // b is bounded by 1 pointwise; f is a smooth packet.
      VectorField b(spec.size(), spec.n);
      for (Index k = 0; k < b.size(); ++k) {
        const cplx z = rng.complex_normal();
        b.data()[k] = z / std::max(1.0, std::abs(z));
      }
      const GridFunction f = random_packet_field(spec, rng);
      const double pr = principal_ratio(cache, ctx.grid, lam, F);
      const double br = bounded_product_ratio(cache, ctx.grid, lam, b, f);
      worst_principal = std::max(worst_principal, finite_or_inf(pr));
      worst_product = std::max(worst_product, finite_or_inf(br));
      t.row(lam, i, pr, br);
    }
  }
  r.constants = {{"principal_constant", worst_principal},
                 {"product_constant", worst_product},
                 {"constant_field_defect", constant_defect}};
  const double ceiling = ctx.sc.tolerances.principal_ceiling;
  r.check("principal_constant", "principal_part_approximation", worst_principal, "<=", ceiling);
  r.check("product_constant", "bounded_product", worst_product, "<=", ceiling);
  r.check("constant_field", "principal_part_approximation", constant_defect, "<=", 1e-10);
  r.tables.push_back(std::move(t));
}

void run_carleson_embed(Context& ctx, Result& r) {
  const auto& set = ctx.sc.carleson_embed;
  const CounterRng base = ctx.rng(Experiment::carleson_embed);
  Table t{"carleson_embed.csv",
          {"sample", "lhs_direct", "lhs_layer_cake", "stopping_bound", "norm", "f_norm2",
           "constant"},
          {}};
  double worst_gap = 0.0, worst_constant = 0.0;
  for (int i = 0; i < set.samples; ++i) {
    CounterRng rng = base.substream(std::uint64_t(i));
    // Whitney masses at most mu(Delta), on a random subset of cubes.
    CarlesonMeasure nu = CarlesonMeasure::zero(ctx.grid);
    for (std::size_t g = 0; g < nu.mass.size(); ++g)
      for (std::size_t c = 0; c < nu.mass[g].size(); ++c)
        if (rng.uniform() < set.density)
          nu.mass[g][c] = rng.uniform() * ctx.grid.mu(ctx.grid.cube(int(g), Index(c)), ctx.w());
    const GridFunction f = random_packet_field(ctx.spec(), rng);
    const CarlesonEmbedding e = carleson_embedding(ctx.grid, nu, f, ctx.w());
    const double gap =
        std::abs(e.lhs_direct - e.lhs_layer_cake) / std::max(e.lhs_direct, 1e-300);
    worst_gap = std::max(worst_gap, gap);
    worst_constant = std::max(worst_constant, finite_or_inf(e.constant()));
    t.row(i, e.lhs_direct, e.lhs_layer_cake, e.stopping_bound, e.norm, e.f_norm2, e.constant());
  }
  r.constants = {{"constant", worst_constant}, {"path_disagreement", worst_gap}};
  r.check("path_agreement", "carleson_embedding", worst_gap, "<=",
          ctx.sc.tolerances.embed_agreement);
  r.check("constant_finite", "carleson_embedding", worst_constant, "<=",
          std::numeric_limits<double>::max());
  r.tables.push_back(std::move(t));
}

void run_tb(Context& ctx, Result& r) {
  const auto& set = ctx.sc.tb;
  int gen = set.generation;
  if (gen < 0)
    for (int g = ctx.grid.top(); g >= 0; --g)
      if (test_function_fits(ctx.grid, ctx.grid.cube(g, 0))) {
        gen = g;
        break;
      }
  if (gen < 0 || !test_function_fits(ctx.grid, ctx.grid.cube(gen, 0)))
    throw ScenarioError("tb: no cube generation leaves room for the test-function cutoff");
  const std::vector<ParabolicCube> cubes = spread_cubes(ctx.grid, gen, set.cubes);
  ResolventCache cache(ctx.op);
  Table t{"tb.csv",
          {"epsilon", "cone", "generation", "cube", "i_const", "ii_const", "iii_const",
           "diff_norm2", "measure_ratio", "mu_ratio", "stopped", "remainder"},
          {}};
  std::vector<double> worst_ratio, diff_sum;
  json per_eps = json::array();
  bool exact = true;
  for (double eps : set.epsilons) {
    const ConeSet cones = ConeSet::make(ctx.spec().n, eps, set.mode);
    const int m = set.cones == 0 ? cones.size() : std::min(set.cones, cones.size());
    std::vector<int> chosen;
    for (int k = 0; k < m; ++k) chosen.push_back(k * cones.size() / m);
    const std::size_t items = cubes.size() * chosen.size();
    std::vector<TestFunction> tfs(items);
    std::vector<StoppingResult> stops(items);
    std::vector<char> tiles(items, 0);
    parallel_for(items, [&](std::size_t j) {
      const ParabolicCube& cube = cubes[j / chosen.size()];
      const Cone& cone = cones[chosen[j % chosen.size()]];
      tfs[j] = build_test_function(cache, ctx.grid, cube, cone.zeta, eps);
      stops[j] = stopping_time(ctx.grid, ctx.w(), tfs[j]);
      tiles[j] = partition_is_exact(ctx.grid, cube,
                                    whitney_partition(ctx.grid, cube, stops[j].stopped));
    });
    double worst = 0.0, sum = 0.0;
    std::array<double, 3> max_laa{};
    for (std::size_t j = 0; j < items; ++j) {
      const LaaReport& l = tfs[j].laa;
      const StoppingResult& s = stops[j];
      worst = std::max(worst, s.measure_ratio);
      sum += l.diff_norm2;
      max_laa = {std::max(max_laa[0], l.i_const), std::max(max_laa[1], l.ii_const),
                 std::max(max_laa[2], l.iii_const)};
      exact = exact && tiles[j];
      t.row(eps, chosen[j % chosen.size()], gen, ctx.grid.index(tfs[j].cube), l.i_const,
            l.ii_const, l.iii_const, l.diff_norm2, s.measure_ratio, s.mu_ratio,
            s.stopped.size(), s.remainder.size());
    }
    worst_ratio.push_back(worst);
    diff_sum.push_back(sum);
    per_eps.push_back({{"epsilon", eps},
                       {"worst_measure_ratio", worst},
                       {"laa_i", max_laa[0]},
                       {"laa_ii", max_laa[1]},
                       {"laa_iii", max_laa[2]},
                       {"cones", m}});
  }
  const auto calibrated = calibrate_epsilon(set.epsilons, worst_ratio, ctx.sc.tolerances.measure_ratio);
  if (calibrated) ctx.calibrated_epsilon = calibrated;
  r.constants = {{"generation", gen},
                 {"per_epsilon", per_eps},
                 {"calibrated_epsilon", calibrated ? json(*calibrated) : json(nullptr)}};
  if (set.epsilons.size() >= 2) r.constants["laa_slope"] = laa_slope(set.epsilons, diff_sum);
  r.check("calibrated_epsilon", "stopping_time", calibrated ? *calibrated : 0.0, ">", 0.0);
  r.check("whitney_tiling", "stopping_time", exact ? 1.0 : 0.0, ">=", 1.0);
  r.tables.push_back(std::move(t));
}

void run_carleson_main(Context& ctx, Result& r) {
  CarlesonMainConfig cfg = ctx.sc.carleson_main;
  std::string source = "scenario";
  if (!ctx.sc.carleson_epsilon_set && ctx.calibrated_epsilon) {
    cfg.epsilon = *ctx.calibrated_epsilon;
    source = "calibration";
  } else if (!ctx.sc.carleson_epsilon_set) {
    source = "default";
  }
  const CarlesonMainReport rep = carleson_main(ctx.op, cfg);
  Table boxes{"carleson_main.csv", {"generation", "cube", "ratio"}, {}};
  for (std::size_t g = 0; g < rep.box_ratio.size(); ++g)
    for (std::size_t c = 0; c < rep.box_ratio[g].size(); ++c)
      boxes.row(g, c, rep.box_ratio[g][c]);
  Table pairs{"tb_pairs.csv",
              {"cone", "generation", "cube", "mu_cube", "measure_ratio", "mu_ratio", "stopped",
               "remainder", "gamma_box", "term_stopped", "term_whitney", "reduction_rhs",
               "ff1_term1", "ff1_term2", "ff1_term2_bound", "d_norm2", "split_residual",
               "est9_checks", "est9_violations", "est9_worst"},
              {}};
  for (const TbPair& p : rep.pairs)
    pairs.row(p.cone, p.cube.gen, ctx.grid.index(p.cube), p.mu_cube, p.measure_ratio, p.mu_ratio,
              p.stopped, p.remainder, p.gamma_box, p.term_stopped, p.term_whitney,
              p.reduction_rhs, p.ff1_term1, p.ff1_term2, p.ff1_term2_bound, p.d_norm2,
              p.split_residual, p.est9_checks, p.est9_violations, p.est9_worst);
  const double est9_rate =
      rep.est9_checks > 0 ? double(rep.est9_violations) / double(rep.est9_checks) : 0.0;
  double cone_total = 0.0;
  for (double m : rep.cone_mass) cone_total += m;
  r.constants = {{"epsilon", cfg.epsilon},
                 {"epsilon_source", source},
                 {"sup_ratio", rep.sup_ratio},
                 {"argmax", {{"generation", rep.argmax.gen}, {"cube", ctx.grid.index(rep.argmax)}}},
                 {"total_mass", rep.total_mass},
                 {"cone_mass_total", cone_total},
                 {"uncovered_mass", rep.uncovered_mass},
                 {"cones", rep.cone_mass.size()},
                 {"pairs", rep.pairs.size()},
                 {"est9_checks", rep.est9_checks},
                 {"est9_violations", rep.est9_violations},
                 {"worst_measure_ratio", rep.worst_measure_ratio},
                 {"worst_mu_ratio", rep.worst_mu_ratio},
                 {"absorbed_bound", rep.absorbed_bound},
                 {"max_split_residual", rep.max_split_residual},
                 {"max_partition_defect", rep.max_partition_defect}};
  r.check("sup_finite", "main_carleson", rep.sup_ratio, "<=", std::numeric_limits<double>::max());
  if (ctx.sc.tolerances.carleson_ceiling)
    r.check("sup_ratio", "main_carleson", rep.sup_ratio, "<=", *ctx.sc.tolerances.carleson_ceiling);
  const double partition_gap =
      std::abs(cone_total - rep.total_mass) / std::max(rep.total_mass, 1e-300);
  r.check("cone_partition", "cone_reduction", partition_gap, "<=", 1e-10);
  if (cfg.tb && !rep.pairs.empty()) {
    r.check("gamma_box_partition", "cone_reduction", rep.max_partition_defect, "<=", 1e-10);
    r.check("stopping_measure", "stopping_time", rep.worst_measure_ratio, "<=",
            ctx.sc.tolerances.measure_ratio);
    // In literal mode violations are findings and stay unasserted.
    if (cfg.mode == ConeMode::phase_resolved)
      r.check("est9_rate", "cone_alignment", est9_rate, "<=", ctx.sc.tolerances.est9_rate);
    if (cfg.final_bound)
      r.check("split_residual", "main_carleson_splitting", rep.max_split_residual, "<=",
              ctx.sc.tolerances.split_residual);
  }
  r.constants["est9_rate"] = est9_rate;
  r.tables.push_back(std::move(boxes));
  if (!rep.pairs.empty()) r.tables.push_back(std::move(pairs));
}

void run_kato(Context& ctx, Result& r) {
  const auto& set = ctx.sc.kato;
  const CounterRng rng = ctx.rng(Experiment::kato);
  KatoReport rep;
  if (set.method == SqrtMethod::schur_oracle) {
    const SqrtResult root = sqrt_schur(ctx.op);
    rep = kato_ratios(ctx.op, dense_root(root.matrix), set.ensemble, rng);
    r.constants["root_residual"] = root.residual;
  } else {
    CalderonRoot root(ctx.op, LambdaQuadrature::standard(ctx.spec(), set.per_octave), false,
                      set.retain);
    rep = kato_ratios(ctx.op, calderon_root(root), set.ensemble, rng);
    r.constants["lambda_min"] = root.quadrature().lambda_min;
    r.constants["lambda_max"] = root.quadrature().lambda_max;
  }
  r.constants["method"] = set.method == SqrtMethod::schur_oracle ? "schur" : "calderon";
  r.constants["r_min"] = rep.r_min;
  r.constants["r_max"] = rep.r_max;
  r.constants["spread"] = rep.r_max / rep.r_min;
  Table t{"kato.csv", {"sample", "ratio"}, {}};
  for (std::size_t i = 0; i < rep.ratios.size(); ++i) t.row(i, rep.ratios[i]);
  r.check("r_min_positive", "kato_two_sided", rep.r_min, ">", 0.0);
  r.check("r_max_finite", "kato_two_sided", rep.r_max, "<=", std::numeric_limits<double>::max());
  if (ctx.sc.tolerances.kato_min)
    r.check("r_min", "kato_two_sided", rep.r_min, ">=", *ctx.sc.tolerances.kato_min);
  if (ctx.sc.tolerances.kato_max)
    r.check("r_max", "kato_two_sided", rep.r_max, "<=", *ctx.sc.tolerances.kato_max);
  r.tables.push_back(std::move(t));
}

using ExperimentFn = void (*)(Context&, Result&);
constexpr std::array<ExperimentFn, experiment_count> kRunners = {
    run_ellipticity, run_coercivity,     run_resolvents, run_offdiag,
    run_lp,          run_poincare,       run_principal_part, run_carleson_embed,
    run_tb,          run_carleson_main,  run_kato};

const char* experiment_tag(Experiment e) {
  switch (e) {
    case Experiment::ellipticity: return "weighted_ellipticity";
    case Experiment::coercivity: return "hidden_coercivity";
    case Experiment::resolvents: return "maximal_accretivity";
    case Experiment::offdiag: return "off_diagonal_decay";
    case Experiment::lp: return "littlewood_paley";
    case Experiment::poincare: return "weighted_poincare";
    case Experiment::principal_part: return "principal_part_approximation";
    case Experiment::carleson_embed: return "carleson_embedding";
    case Experiment::tb: return "tb_test_function";
    case Experiment::carleson_main: return "main_carleson";
    case Experiment::kato: return "kato_two_sided";
  }
  return "";
}

json check_json(const Check& c) {
  return {{"name", c.name}, {"tag", c.tag}, {"value", c.value}, {"relation", c.relation},
          {"limit", c.limit}, {"pass", c.pass}};
}

void write_table(const fs::path& dir, const Table& t) {
  std::ofstream os(dir / t.file, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + (dir / t.file).string());
  for (std::size_t i = 0; i < t.header.size(); ++i) os << (i ? "," : "") << t.header[i];
  os << '\n';
  for (const auto& row : t.rows) {
    for (std::size_t i = 0; i < row.size(); ++i) os << (i ? "," : "") << row[i];
    os << '\n';
  }
}

std::string utc_timestamp() {
  const std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace

std::string dump_summary(const json& summary) { return summary.dump(2) + "\n"; }

ReportBundle run(const Scenario& sc, const RunOptions& options) {
  sc.validate();
  if (sc.threads > 0) set_thread_count(sc.threads);
  ReportBundle bundle;
  json scenario_doc = sc.to_json();
  scenario_doc.erase("out");
  scenario_doc.erase("threads");
  json& summary = bundle.summary;
  summary["schema"] = kSchemaVersion;
  summary["scenario_hash"] = hex64(sc.hash());
  summary["scenario"] = scenario_doc;
  summary["experiments"] = json::object();
  bundle.provenance = {{"timestamp", utc_timestamp()},
                       {"scenario_hash", hex64(sc.hash())},
                       {"threads", thread_count()},
                       {"seconds", json::object()}};

  const fs::path dir(sc.out);
  if (options.write) fs::create_directories(dir);

  if (!sc.experiments.empty()) {
    // Operator assembly failures are scenario errors: the inputs are inadmissible.
    std::optional<ParabolicOperator> op;
    try {
      WeightParams wp = sc.weight;
      wp.seed = sc.weight_seed();
      const Weight w = make_weight(wp, sc.grid);
      if (sc.coefficients.kind == CoefficientKind::identity) {
        op.emplace(w, scaled_identity(w, sc.coefficients.scale));
      } else {
        CoefficientParams cp = sc.coefficients.random;
        cp.seed = sc.coefficient_seed();
        op.emplace(w, random_coefficients(w, cp));
      }
    } catch (const ScenarioError&) {
      throw;
    } catch (const std::exception& e) {
      throw ScenarioError(std::string("cannot build the operator: ") + e.what());
    }
    summary["operator_fingerprint"] = hex64(op->fingerprint());
    const DyadicGrid grid(sc.grid);
    Context ctx{sc, *op, grid, std::nullopt};

    for (Experiment e : sc.experiments) {
      const std::string name(experiment_name(e));
      if (!options.quiet) std::cerr << "[" << name << "] running\n";
      const auto t0 = std::chrono::steady_clock::now();
      Result res;
      try {
        kRunners[std::size_t(e)](ctx, res);
      } catch (const ScenarioError&) {
        throw;
      } catch (const std::exception& ex) {
        res.constants["error"] = ex.what();
        res.check("completed", experiment_tag(e), 0.0, ">=", 1.0);
      }
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      bundle.provenance["seconds"][name] = secs;

      json ej;
      ej["tag"] = experiment_tag(e);
      ej["constants"] = res.constants;
      ej["checks"] = json::array();
      bool pass = true;
      for (const Check& c : res.checks) {
        ej["checks"].push_back(check_json(c));
        if (!c.pass) {
          pass = false;
          bundle.failures.push_back(c);
        }
      }
      ej["pass"] = pass;
      ej["tables"] = json::array();
      for (const Table& t : res.tables) {
        ej["tables"].push_back(t.file);
        bundle.files.push_back(t.file);
        if (options.write) write_table(dir, t);
      }
      summary["experiments"][name] = ej;
      if (!options.quiet)
        std::cerr << "[" << name << "] " << (pass ? "pass" : "FAIL") << " (" << num(secs) << " s)\n";
    }
  }

  summary["pass"] = bundle.failures.empty();
  json failures = json::array();
  for (const Check& c : bundle.failures)
    failures.push_back({{"check", c.name}, {"tag", c.tag}});
  summary["failures"] = failures;

  if (options.write) {
    std::ofstream(dir / "summary.json", std::ios::binary) << dump_summary(summary);
    std::ofstream(dir / "provenance.json", std::ios::binary) << bundle.provenance.dump(2) << "\n";
    bundle.files.push_back("summary.json");
    bundle.files.push_back("provenance.json");
  }
  return bundle;
}

std::string render_report(const json& summary) {
  std::ostringstream os;
  os << "scenario " << summary.value("scenario_hash", std::string("?"));
  if (summary.contains("scenario") && summary["scenario"].contains("name"))
    os << " (" << summary["scenario"]["name"].get<std::string>() << ")";
  os << ": " << (summary.value("pass", false) ? "pass" : "FAIL") << "\n";
  if (!summary.contains("experiments")) return os.str();
  const json& experiments = summary["experiments"];
  for (auto it = experiments.begin(); it != experiments.end(); ++it) {
    const json& ej = it.value();
    os << "\n[" << it.key() << "] " << ej.value("tag", std::string()) << " "
       << (ej.value("pass", false) ? "pass" : "FAIL") << "\n";
    const json& constants = ej["constants"];
    for (auto c = constants.begin(); c != constants.end(); ++c)
      os << "  " << c.key() << " = " << c.value().dump() << "\n";
    for (const auto& c : ej["checks"]) {
      os << "  check " << c["name"].get<std::string>() << " [" << c["tag"].get<std::string>()
         << "]: " << c["value"].dump() << " " << c["relation"].get<std::string>() << " "
         << c["limit"].dump() << " -> " << (c["pass"].get<bool>() ? "pass" : "FAIL") << "\n";
    }
  }
  return os.str();
}

}  // namespace kato
