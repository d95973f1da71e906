#include <gtest/gtest.h>

#include <numbers>
#include <sstream>

#include "kato/grid.hpp"
#include "kato/weights.hpp"
#include "support.hpp"

namespace kato {
namespace {

using test::grid1;
using test::grid2;

TEST(GridSpec, ValidatesShape) {
  EXPECT_NO_THROW((GridSpec{1, 8, 4, 1.0, 1.0}.validate()));
  EXPECT_THROW((GridSpec{3, 8, 4, 1.0, 1.0}.validate()), std::invalid_argument);
  EXPECT_THROW((GridSpec{1, 4, 4, 1.0, 1.0}.validate()), std::invalid_argument);
  EXPECT_THROW((GridSpec{1, 12, 4, 1.0, 1.0}.validate()), std::invalid_argument);
  EXPECT_THROW((GridSpec{1, 8, 8, 1.0, 1.0}.validate()), std::invalid_argument);
  EXPECT_THROW((GridSpec{1, 8, 4, 0.0, 1.0}.validate()), std::invalid_argument);
}

TEST(GridSpec, Levels) {
  const GridSpec g{2, 32, 16, 1.0, 1.0};
  EXPECT_EQ(g.space_levels(), 5);
  EXPECT_EQ(g.time_levels(), 2);
  EXPECT_EQ(g.max_generation(), 2);
  EXPECT_EQ(g.size(), 32 * 32 * 16);
}

TEST(GridSpec, IndexRoundTrip) {
  const GridSpec g = grid2(8, 4);
  for (Index s = 0; s < g.spatial_size(); ++s) {
    EXPECT_EQ(g.spatial_index(g.coord(s, 0), g.coord(s, 1)), s);
    EXPECT_EQ(g.shifted(g.shifted(s, 1, 3), 1, -3), s);
  }
  EXPECT_EQ(g.spatial_index(-1, 0), 7);
}

TEST(CompensatedSum, RecoversCancelledMass) {
  CompensatedSum<double> acc;
  // Naive summation loses every 2^-60 term against 1.
  acc.add(1.0);
  for (int i = 0; i < 1024; ++i) acc.add(0x1p-60);
  acc.add(-1.0);
  EXPECT_EQ(acc.value(), 0x1p-50);
}

TEST(Inner, ConjugateSymmetricAndWeighted) {
  const GridSpec g = grid1(8, 4);
  CounterRng rng(3);
  const GridFunction f = test::noise(g, rng), h = test::noise(g, rng);
  RealField w(g.spatial_size());
  for (Index s = 0; s < w.size(); ++s) w[s] = 1.0 + s;
  EXPECT_NEAR(std::abs(inner(g, f, h, MeasureKind::mu, w) -
                       std::conj(inner(g, h, f, MeasureKind::mu, w))),
              0.0, 1e-13);
  EXPECT_NEAR(norm2(g, f, MeasureKind::mu, w), inner(g, f, f, MeasureKind::mu, w).real(), 1e-12);
  // The constant function 1 has mass w(Q) * Lt.
  const GridFunction one = GridFunction::Ones(g.size());
  EXPECT_NEAR(norm2(g, one, MeasureKind::mu, w), w.sum() * g.hx() * g.Lt, 1e-12);
  EXPECT_NEAR(norm2(g, one, MeasureKind::lebesgue, RealField()), g.Lx * g.Lt, 1e-12);
}

TEST(Inner, RejectsShapeMismatch) {
  const GridSpec g = grid1(8, 4);
  const RealField w = RealField::Ones(g.spatial_size());
  EXPECT_THROW((void)norm2(g, GridFunction::Zero(3), MeasureKind::mu, w), std::invalid_argument);
  EXPECT_THROW((void)norm2(g, GridFunction::Zero(g.size()), MeasureKind::mu, RealField::Ones(2)),
               std::invalid_argument);
}

// wdiv is the exact negative mu-adjoint of grad_x.
TEST(Wdiv, NegativeAdjointOfGradient) {
  for (const GridSpec& g : {grid1(16, 4), grid2(8, 4)}) {
    CounterRng rng(11);
    RealField w(g.spatial_size());
    for (Index s = 0; s < w.size(); ++s) w[s] = 0.2 + rng.uniform();
    const GridFunction u = test::noise(g, rng);
    const VectorField F = test::noise_field(g, rng);
    const cplx lhs = inner(g, grad_x(g, u), F, MeasureKind::mu, w);
    const cplx rhs = -inner(g, u, wdiv(g, F, w), MeasureKind::mu, w);
    EXPECT_LT(std::abs(lhs - rhs), 1e-10 * std::abs(lhs));
  }
}

TEST(TimeMultipliers, SymbolsOnModes) {
  const GridSpec g = grid1(8, 16);
  for (int m = -7; m <= 7; ++m) {
    const GridFunction e = sample(g, [&](double, double, double t) {
      return std::exp(cplx(0.0, 2.0 * std::numbers::pi * m * t / g.Lt));
    });
    const double tau = 2.0 * std::numbers::pi * m / g.Lt;
    EXPECT_LT((d_half(g, e) - std::sqrt(std::abs(tau)) * e).norm(), 1e-10 * e.norm());
    EXPECT_LT((d_t(g, e) - cplx(0.0, tau) * e).norm(), 1e-9 * e.norm());
    EXPECT_LT((hilbert(g, e) - symbol_hilbert(tau) * e).norm(), 1e-12 * e.norm());
  }
}

// d_t = D_half H D_half on every mode, the Nyquist mode included.
TEST(TimeMultipliers, HalfDerivativeFactorization) {
  const GridSpec g = grid1(8, 16);
  CounterRng rng(5);
  const GridFunction f = test::noise(g, rng);
  const GridFunction lhs = d_half(g, hilbert(g, d_half(g, f)));
  EXPECT_LT((lhs - d_t(g, f)).norm(), 1e-10 * d_t(g, f).norm());
}

// Difference-quotient oracle for the half derivative on the circle of length L:
//   ||D_half f||^2 = int int |f(t+h) - f(t)|^2 K(h) dh dt,
//   K(h) = (1 / (2 pi)) (pi / L)^2 / sin^2(pi h / L).
// The h integral is evaluated on the trigonometric interpolant with a fine
// midpoint rule, independent of the Fourier multiplier.
TEST(TimeMultipliers, HalfDerivativeDifferenceQuotientOracle) {
  const GridSpec g{1, 8, 16, 1.0, 2.0};
  const double L = g.Lt;
  const std::vector<std::pair<int, cplx>> modes = {{1, {0.7, 0.2}}, {-3, {0.1, -0.5}}, {5, {0.3, 0.0}}};
  auto f = [&](double t) {
    cplx v = 0.0;
    for (const auto& [m, a] : modes) v += a * std::exp(cplx(0.0, 2.0 * std::numbers::pi * m * t / L));
    return v;
  };
  const GridFunction fs = sample(g, [&](double, double, double t) { return f(t); });
  const double discrete = norm2(g, d_half(g, fs), MeasureKind::lebesgue, RealField());

  const int H = 20000;
  double oracle = 0.0;
  for (int j = 0; j < g.Nt; ++j) {
    const double t = j * g.ht();
    double inner_sum = 0.0;
    for (int i = 0; i < H; ++i) {
      const double h = (i + 0.5) * L / H;
      const double k = (1.0 / (2.0 * std::numbers::pi)) * std::pow(std::numbers::pi / L, 2) /
                       std::pow(std::sin(std::numbers::pi * h / L), 2);
      inner_sum += std::norm(f(t + h) - f(t)) * k * (L / H);
    }
    oracle += inner_sum * g.ht();
  }
  oracle *= g.Lx;  // constant in x
  EXPECT_LT(test::rel(discrete, oracle), 1e-6);
}

TEST(Distance, PeriodicAndParabolic) {
  const GridSpec g = grid1(16, 16);
  EXPECT_NEAR(periodic_distance(g, 0, 15), g.hx(), 1e-15);
  EXPECT_NEAR(periodic_distance(g, 0, 8), 0.5, 1e-15);
  // Time offset of 4 cells: sqrt(4 / 16) = 0.5 dominates one spatial cell.
  EXPECT_NEAR(parabolic_distance(g, g.node(0, 0), g.node(1, 4)), 0.5, 1e-15);
  EXPECT_NEAR(parabolic_distance(g, g.node(0, 0), g.node(1, 12)), 0.5, 1e-15);
}

// ---------------------------------------------------------------------------
// Weights

TEST(Weights, UnitConstantsAreOne) {
  const Weight w = make_weight(WeightParams{}, grid1(16, 4));
  EXPECT_DOUBLE_EQ(w.a2, 1.0);
  EXPECT_DOUBLE_EQ(w.doubling, 2.0);
  EXPECT_DOUBLE_EQ(w.mu_doubling(), 8.0);
}

TEST(Weights, A2AtLeastOneAndScaleInvariant) {
  const GridSpec g = grid2(8, 4);
  for (WeightParams p : {WeightParams{WeightKind::power, 0.5, 0, 0},
                         WeightParams{WeightKind::power, -0.5, 0, 0},
                         WeightParams{WeightKind::dyadic_random, 0, 0.45, 9}}) {
    const Weight w = make_weight(p, g);
    EXPECT_GE(w.a2, 1.0);
    EXPECT_TRUE(std::isfinite(w.a2));
    EXPECT_NEAR(a2_constant(g, 3.0 * w.values), w.a2, 1e-12 * w.a2);
    EXPECT_GE(w.doubling, 1.0);
  }
}

TEST(Weights, RejectsInadmissiblePower) {
  EXPECT_THROW((void)make_weight(WeightParams{WeightKind::power, 1.0, 0, 0}, grid1(8, 4)),
               std::domain_error);
}

// The fitted A-infinity exponents hold for random unions of cells.
TEST(Weights, AInfinitySandwichOnRandomSubsets) {
  const GridSpec g = grid1(32, 4);
  const Weight w = make_weight(WeightParams{WeightKind::dyadic_random, 0, 0.5, 4}, g);
  CounterRng rng(8);
  for (int m : ainf_cube_sides(g)) {
    for (int trial = 0; trial < 20; ++trial) {
      const int cx = int(rng.below(std::uint64_t(g.Nx)));
      const std::vector<Index> cells = cube_cells(g, cx, 0, m);
      double wq = 0.0, we = 0.0;
      int count = 0;
      for (Index s : cells) {
        wq += w.values[s];
        if (rng.uniform() < 0.5) {
          we += w.values[s];
          ++count;
        }
      }
      if (count == 0) continue;
      EXPECT_TRUE(ainf_sandwich_holds(w.ainf, double(count) / m, we / wq));
    }
  }
}

TEST(Weights, CsvRoundTrip) {
  const Weight w = make_weight(WeightParams{WeightKind::power, 0.3, 0, 0}, grid1(16, 4));
  std::stringstream ss;
  write_weight_csv(ss, w.values);
  const RealField back = read_weight_csv(ss);
  ASSERT_EQ(back.size(), w.values.size());
  EXPECT_EQ((back - w.values).cwiseAbs().maxCoeff(), 0.0);
}

}  // namespace
}  // namespace kato
