#include <gtest/gtest.h>

#include <numbers>

#include "kato/tb.hpp"
#include "support.hpp"

namespace kato {
namespace {

using test::grid1;
using test::grid2;
using test::rough_operator;

VectorField constant_field(const GridSpec& g, const Eigen::VectorXcd& v) {
  VectorField F(g.size(), g.n);
  for (int c = 0; c < g.n; ++c) F.col(c).setConstant(v[c]);
  return F;
}

Eigen::VectorXcd unit_direction(int n) {
  Eigen::VectorXcd z(n);
  if (n == 1) {
    z << std::polar(1.0, 0.4);
  } else {
    z << cplx(0.6, 0.0), std::polar(0.8, 1.1);
  }
  return z;
}

// ---------------------------------------------------------------------------
// Principal part

TEST(ULambda, LinearAndAdjointToGradient) {
  const ParabolicOperator op = rough_operator(grid2(8, 4), 1);
  ResolventCache cache(op);
  const GridSpec& g = op.spec();
  EXPECT_EQ(u_lambda(cache, 0.2, VectorField::Zero(g.size(), g.n)).norm(), 0.0);
  CounterRng rng(2);
  const VectorField F = test::noise_field(g, rng);
  const GridFunction h = test::noise(g, rng);
  const double lam = 0.2;
  // <U F, h> = -lambda <F, grad E* h>.
  const cplx lhs = inner(g, u_lambda(cache, lam, F), h, MeasureKind::mu, op.w());
  const cplx rhs = -lam * inner(g, F, grad_x(g, cache.E(lam, h, true)), MeasureKind::mu, op.w());
  EXPECT_LT(std::abs(lhs - rhs), 1e-10 * std::abs(lhs));
}

TEST(PrincipalPart, ColumnsAreCoefficientImages) {
  const ParabolicOperator op = rough_operator(grid2(8, 4), 3);
  ResolventCache cache(op);
  const GridSpec& g = op.spec();
  const VectorField U = principal_part(cache, 0.15);
  ASSERT_EQ(U.cols(), g.n);
  for (int j = 0; j < g.n; ++j) {
    VectorField e = VectorField::Zero(g.size(), g.n);
    e.col(j).setOnes();
    const GridFunction col = u_lambda(cache, 0.15, op.apply_coefficients(e));
    EXPECT_LT((U.col(j) - col).norm(), 1e-12 * col.norm());
  }
}

TEST(PrincipalPart, ConstantFieldsAreReproduced) {
  for (const GridSpec& g : {grid1(16, 16), grid2(8, 4)}) {
    const ParabolicOperator op = rough_operator(g, 4);
    ResolventCache cache(op);
    const DyadicGrid D(g);
    const VectorField F = constant_field(g, unit_direction(g.n));
    for (double lam : {g.hx(), 0.3}) {
      const GridFunction R = r_lambda(cache, D, lam, F);
      EXPECT_LT(std::sqrt(norm2(g, R, MeasureKind::mu, op.w())), 1e-11);
    }
  }
}

TEST(PrincipalPart, RatioBoundedOnPackets) {
  const ParabolicOperator op = rough_operator(grid1(32, 16), 5);
  ResolventCache cache(op);
  const DyadicGrid D(op.spec());
  CounterRng rng(6);
  VectorField F(op.spec().size(), 1);
  F.col(0) = random_packet_field(op.spec(), rng);
  for (double lam : {op.spec().hx(), 2.0 * op.spec().hx(), 0.125}) {
    const double r = principal_ratio(cache, D, lam, F);
    EXPECT_GT(r, 0.0);
    EXPECT_LT(r, 50.0);
  }
}

TEST(BoundedProduct, RatioFinite) {
  const ParabolicOperator op = rough_operator(grid2(8, 4), 7);
  ResolventCache cache(op);
  const DyadicGrid D(op.spec());
  CounterRng rng(8);
  const VectorField b = test::noise_field(op.spec(), rng);
  const GridFunction f = test::noise(op.spec(), rng);
  const double r = bounded_product_ratio(cache, D, 0.2, b, f);
  EXPECT_GT(r, 0.0);
  EXPECT_LT(r, 10.0);
}

TEST(Dilates, GrowGeometricallyThenClamp) {
  const GridSpec g = grid1(32, 64);
  const DyadicGrid D(g);
  const ParabolicCube c = D.cube(1, 3);
  bool clamped = false;
  auto base = dilate_nodes(D, c, 0, &clamped);
  std::sort(base.begin(), base.end());
  auto own = D.nodes(c);
  std::sort(own.begin(), own.end());
  EXPECT_EQ(base, own);
  EXPECT_FALSE(clamped);
  EXPECT_EQ(dilate_nodes(D, c, 1).size(), 8 * own.size());
  const auto all = dilate_nodes(D, c, 5, &clamped);
  EXPECT_TRUE(clamped);
  EXPECT_EQ(Index(all.size()), g.size());
}

TEST(ExpansionProfile, EndsAtFullImage) {
  const ParabolicOperator op = rough_operator(grid1(32, 16), 9);
  ResolventCache cache(op);
  const DyadicGrid D(op.spec());
  const ParabolicCube c = D.cube(1, 2);
  const double lam = D.side(1);
  VectorField b = op.apply_coefficients(constant_field(op.spec(), unit_direction(1)));
  const std::vector<double> prof = expansion_profile(cache, D, lam, b, c);
  ASSERT_GE(prof.size(), 2u);
  const GridFunction full = u_lambda(cache, lam, b);
  double num = 0.0;
  for (Index k : D.nodes(c)) num += std::norm(full[k]) * node_mass(op.spec(), MeasureKind::mu, op.w(), k % op.spec().spatial_size());
  const double expect = std::sqrt(num / D.mu(c, op.w())) / b.cwiseAbs().maxCoeff();
  EXPECT_LT(test::rel(prof.back(), expect), 1e-10);
  // Off-diagonal decay: late dilates change the restriction very little.
  EXPECT_LT(std::abs(prof[prof.size() - 1] - prof[prof.size() - 2]),
            std::abs(prof[1] - prof[0]) + 1e-12);
}

TEST(Poincare, ConstantsVanish) {
  const GridSpec g = grid1(32, 64);
  const DyadicGrid D(g);
  const Weight w = make_weight(WeightParams{WeightKind::power, 0.5, 0, 0}, g);
  const PoincareRatio p =
      poincare_ratio(D, w.values, GridFunction::Constant(g.size(), cplx(3.0)), D.cube(1, 5), 0);
  EXPECT_EQ(p.ratio, 0.0);
  EXPECT_NEAR(p.lhs, 0.0, 1e-20);
}

// Affine-in-x data on a unit-weight annulus: both sides have closed forms
// given by cell sums, so the ratio is checked against a direct evaluation.
TEST(Poincare, RatioMatchesDirectSums) {
  const GridSpec g = grid1(32, 64);
  const DyadicGrid D(g);
  const RealField w = RealField::Ones(g.spatial_size());
  const GridFunction f = fourier_mode(g, 1, 0, 1);
  const ParabolicCube c = D.cube(1, 5);
  const int k = 0;
  const PoincareRatio p = poincare_ratio(D, w, f, c, k);
  // C_0 = 2 Delta; the unweighted mean of f over Delta.
  cplx mean = 0.0;
  const auto own = D.nodes(c);
  for (Index n : own) mean += f[n];
  mean /= double(own.size());
  double lhs = 0.0;
  for (Index n : dilate_nodes(D, c, 1)) lhs += std::norm(f[n] - mean) * g.cell_volume();
  EXPECT_LT(test::rel(p.lhs, lhs), 1e-12);
  const VectorField G = grad_x(g, f);
  const GridFunction ft = d_t(g, f);
  const double l = D.side(1), T = D.cells_t(1) * g.ht();
  double rhs = 0.0;
  for (Index n : dilate_nodes(D, c, 1))
    rhs += (l * l * std::norm(G(n, 0)) + T * T * std::norm(ft[n])) * g.cell_volume();
  EXPECT_LT(test::rel(p.rhs, rhs), 1e-12);
  EXPECT_LT(test::rel(p.ratio, lhs / rhs), 1e-12);
}

// ---------------------------------------------------------------------------
// Cones

TEST(Cones, PredicateAndPhase) {
  const Cone cone{unit_direction(2), 0.25};
  // u = zeta projects to 1.
  const Eigen::VectorXcd u = unit_direction(2);
  EXPECT_TRUE(cone.contains(u.data(), ConeMode::literal));
  EXPECT_TRUE(cone.contains(u.data(), ConeMode::phase_resolved));
  const Eigen::VectorXcd turned = cplx(0.0, 1.0) * u;
  EXPECT_TRUE(cone.contains(turned.data(), ConeMode::literal));
  EXPECT_FALSE(cone.contains(turned.data(), ConeMode::phase_resolved));
  Eigen::VectorXcd orth(2);
  orth << -std::conj(u[1]), std::conj(u[0]);
  EXPECT_NEAR(std::abs(cone.project(orth.data())), 0.0, 1e-15);
  EXPECT_FALSE(cone.contains(orth.data(), ConeMode::literal));
}

TEST(Cones, SetsCoverAndPartition) {
  for (int n : {1, 2})
    for (ConeMode mode : {ConeMode::phase_resolved, ConeMode::literal})
      for (double eps : {0.25, 0.125}) {
        const ConeSet W = ConeSet::make(n, eps, mode);
        EXPECT_GT(W.size(), 0);
        EXPECT_EQ(W.uncovered_fraction(2000, CounterRng(10)), 0.0);
        CounterRng rng(11);
        for (int i = 0; i < 200; ++i) {
          Eigen::VectorXcd u(n);
          for (int c = 0; c < n; ++c) u[c] = rng.complex_normal();
          const int cls = W.classify(u.data());
          ASSERT_GE(cls, 0);
          ASSERT_LT(cls, W.size());
          EXPECT_EQ(cls, W.first_match(u.data()));
          EXPECT_TRUE(W[cls].contains(u.data(), mode));
        }
      }
}

TEST(Cones, PhaseResolvedUsesEightPhases) {
  EXPECT_EQ(ConeSet::make(1, 0.25, ConeMode::phase_resolved).size(), ConeSet::phases);
}

// ---------------------------------------------------------------------------
// Test functions

TEST(Plateau, ShapeAndMonotone) {
  EXPECT_EQ(plateau(0.3, 0.5, 1.0), 1.0);
  EXPECT_EQ(plateau(-0.5, 0.5, 1.0), 1.0);
  EXPECT_EQ(plateau(1.0, 0.5, 1.0), 0.0);
  EXPECT_EQ(plateau(-1.2, 0.5, 1.0), 0.0);
  double prev = 1.0;
  for (double s = 0.5; s <= 1.0; s += 0.01) {
    const double v = plateau(s, 0.5, 1.0);
    EXPECT_LE(v, prev + 1e-15);
    EXPECT_GE(v, 0.0);
    prev = v;
  }
}

TEST(TestFunction, ProfileHasExactGradientOnCube) {
  for (const GridSpec& g : {grid1(32, 64), grid2(16, 16)}) {
    const ParabolicOperator op = rough_operator(g, 12);
    ResolventCache cache(op);
    const DyadicGrid D(g);
    const ParabolicCube c = D.cube(1, 1);
    ASSERT_TRUE(test_function_fits(D, c));
    const Eigen::VectorXcd z = unit_direction(g.n);
    const TestFunction tf = build_test_function(cache, D, c, z, 0.125);
    const VectorField GL = grad_x(g, tf.profile);
    for (Index k : D.nodes(c)) {
      EXPECT_EQ(tf.cutoff[k], 1.0);
      for (int j = 0; j < g.n; ++j) EXPECT_LT(std::abs(GL(k, j) - std::conj(z[j])), 1e-12);
    }
    // f = E_{eps l} L solves (1 + (eps l)^2 H) f = L.
    const double s = 0.125 * D.side(1);
    const GridFunction res = tf.f + s * s * op.apply(tf.f) - tf.profile;
    EXPECT_LT(res.norm(), 1e-9 * tf.profile.norm());
    EXPECT_LT((tf.gradient - grad_x(g, tf.f)).norm(), 1e-12 * tf.gradient.norm());
    EXPECT_GT(tf.laa.mu_cube, 0.0);
    EXPECT_NEAR(tf.laa.i_const, tf.laa.diff_norm2 / (s * s * tf.laa.mu_cube), 1e-12 * tf.laa.i_const);
  }
}

TEST(TestFunction, RejectsCubesThatDoNotFit) {
  const ParabolicOperator op = rough_operator(grid1(16, 16), 13);
  ResolventCache cache(op);
  const DyadicGrid D(op.spec());
  const ParabolicCube top = D.cube(D.top(), 0);
  EXPECT_FALSE(test_function_fits(D, top));
  EXPECT_THROW((void)build_test_function(cache, D, top, unit_direction(1), 0.25), std::domain_error);
}

TEST(TestFunction, LaaSlopeRecoversPower) {
  const std::vector<double> eps = {0.25, 0.125, 0.0625};
  std::vector<double> d;
  for (double e : eps) d.push_back(3.0 * e * e);
  EXPECT_NEAR(laa_slope(eps, d), 2.0, 1e-12);
}

// ---------------------------------------------------------------------------
// Stopping time

struct StopFixture {
  GridSpec g = grid1(32, 64);
  DyadicGrid D{g};
  RealField w = RealField::Ones(g.spatial_size());
  Eigen::VectorXcd z = unit_direction(1);
  ParabolicCube root = D.cube(2, 1);
  VectorField aligned(double scale) const {
    return constant_field(g, Eigen::VectorXcd(scale * z.conjugate()));
  }
};

TEST(StoppingTime, AlignedGradientNeverStops) {
  StopFixture s;
  const StoppingResult r = stopping_time(s.D, s.w, s.root, s.aligned(1.0), s.z, 0.125);
  EXPECT_TRUE(r.stopped.empty());
  EXPECT_EQ(r.measure_ratio, 0.0);
  EXPECT_EQ(r.remainder.size(), std::size_t(1 + 8 + 64));
  ASSERT_EQ(r.remainder_mean.size(), r.remainder.size());
  EXPECT_LT(std::abs(r.remainder_mean.front()[0] - std::conj(s.z[0])), 1e-14);
}

// The real-part threshold is inclusive: 3/4 stops, just above does not.
TEST(StoppingTime, RealPartThresholdBoundary) {
  StopFixture s;
  const StoppingResult at = stopping_time(s.D, s.w, s.root, s.aligned(0.75), s.z, 0.125);
  ASSERT_EQ(at.stopped.size(), 1u);
  EXPECT_EQ(at.stopped.front(), s.root);
  EXPECT_DOUBLE_EQ(at.measure_ratio, 1.0);
  const StoppingResult above = stopping_time(s.D, s.w, s.root, s.aligned(0.7500001), s.z, 0.125);
  EXPECT_TRUE(above.stopped.empty());
}

TEST(StoppingTime, GradientThresholdBoundary) {
  StopFixture s;
  const double eps = 0.25;  // threshold (4 eps)^{-2} = 1
  EXPECT_DOUBLE_EQ(stop_gradient_threshold(eps), 1.0);
  const StoppingResult at = stopping_time(s.D, s.w, s.root, s.aligned(1.0), s.z, eps);
  EXPECT_EQ(at.stopped.size(), 1u);
  const StoppingResult below = stopping_time(s.D, s.w, s.root, s.aligned(0.999), s.z, eps);
  EXPECT_TRUE(below.stopped.empty());
}

TEST(StoppingTime, BadChildIsTheMaximalStop) {
  StopFixture s;
  VectorField G = s.aligned(1.0);
  const ParabolicCube bad = s.D.children(s.root)[3];
  for (Index k : s.D.nodes(bad)) G(k, 0) = 0.0;
  const StoppingResult r = stopping_time(s.D, s.w, s.root, G, s.z, 0.125);
  ASSERT_EQ(r.stopped.size(), 1u);
  EXPECT_EQ(r.stopped.front(), bad);
  EXPECT_DOUBLE_EQ(r.measure_ratio, 1.0 / 8.0);
  // Everything else is remainder: root, 7 children and their 56 children.
  EXPECT_EQ(r.remainder.size(), std::size_t(1 + 7 + 56));
}

TEST(StoppingTime, MuRatioUsesWeight) {
  StopFixture s;
  const Weight w = make_weight(WeightParams{WeightKind::power, 0.5, 0, 0}, s.g);
  VectorField G = s.aligned(1.0);
  const ParabolicCube bad = s.D.children(s.root)[0];
  for (Index k : s.D.nodes(bad)) G(k, 0) = 0.0;
  const StoppingResult r = stopping_time(s.D, w.values, s.root, G, s.z, 0.125);
  EXPECT_NEAR(r.mu_ratio, s.D.mu(bad, w.values) / s.D.mu(s.root, w.values), 1e-14);
}

TEST(StoppingTime, CalibrationPicksLargestAdmissible) {
  EXPECT_EQ(calibrate_epsilon({0.25, 0.125, 0.0625}, {0.99, 0.9, 0.5}), 0.125);
  EXPECT_EQ(calibrate_epsilon({0.25, 0.125}, {0.2, 0.1}), 0.25);
  EXPECT_FALSE(calibrate_epsilon({0.25, 0.125}, {0.99, 0.97}).has_value());
}

// ---------------------------------------------------------------------------
// Main Carleson estimate

TEST(ShellQuadrature, ShellsAndGenerations) {
  const DyadicGrid D(grid1(32, 16));
  const ShellQuadrature q = shell_quadrature(D, 4, 3);
  const int shells = D.top() + 3;
  ASSERT_EQ(q.nodes.size(), std::size_t(4 * shells));
  double total = 0.0;
  for (double w : q.weights) total += w;
  EXPECT_NEAR(total, shells * std::log(2.0), 1e-12);
  for (std::size_t i = 0; i < q.nodes.size(); ++i) {
    const int j = int(i / 4) + 1 - 3;
    EXPECT_GT(q.nodes[i], std::ldexp(D.spec().hx(), j - 1));
    EXPECT_LE(q.nodes[i], std::ldexp(D.spec().hx(), j));
    EXPECT_EQ(q.generation[i], std::max(j, 0));
  }
}

TEST(CarlesonMain, MeasureOnlyRun) {
  const ParabolicOperator op = rough_operator(grid1(16, 16), 14);
  CarlesonMainConfig cfg;
  cfg.tb = false;
  const CarlesonMainReport rep = carleson_main(op, cfg);
  EXPECT_GT(rep.sup_ratio, 0.0);
  EXPECT_TRUE(std::isfinite(rep.sup_ratio));
  EXPECT_TRUE(rep.pairs.empty());
  double max_box = 0.0, cone_total = 0.0;
  for (const auto& gen : rep.box_ratio)
    for (double r : gen) max_box = std::max(max_box, r);
  EXPECT_DOUBLE_EQ(max_box, rep.sup_ratio);
  for (double m : rep.cone_mass) cone_total += m;
  EXPECT_NEAR(cone_total, rep.total_mass, 1e-12 * rep.total_mass);
}

TEST(CarlesonMain, ReductionIsConsistent) {
  const ParabolicOperator op = rough_operator(grid1(16, 64), 15);
  CarlesonMainConfig cfg;
  cfg.epsilon = 0.125;
  cfg.max_cubes_per_gen = 1;
  const CarlesonMainReport rep = carleson_main(op, cfg);
  ASSERT_FALSE(rep.pairs.empty());
  EXPECT_LT(rep.max_partition_defect, 1e-10);
  EXPECT_LT(rep.max_split_residual, 1e-8);
  EXPECT_GT(rep.est9_checks, 0);
  EXPECT_EQ(rep.est9_violations, 0);
  for (const TbPair& p : rep.pairs) {
    EXPECT_LE(p.measure_ratio, 1.0);
    EXPECT_GE(p.gamma_box, 0.0);
    EXPECT_LE(p.ff1_term2, p.ff1_term2_bound * (1.0 + 1e-9));
  }
}

}  // namespace
}  // namespace kato
