#pragma once

#include <optional>
#include <vector>

#include "kato/calculus.hpp"
#include "kato/dyadic.hpp"

namespace kato {

// ---------------------------------------------------------------------------
// Principal part

/// U_lambda F = lambda E_lambda w^{-1} div(w F).
[[nodiscard]] GridFunction u_lambda(ResolventCache& cache, double lambda, const VectorField& F);

/// U_lambda applied to the columns of w^{-1}A: column j holds U_lambda(w^{-1} A e_j),
/// so (U w^{-1}A) . v = sum_j col_j v_j. On the torus the expanding-cube
/// limit that defines U on bounded inputs is reached once the cube covers
/// the domain, so this is the direct application.
[[nodiscard]] VectorField principal_part(ResolventCache& cache, double lambda);

/// R_lambda F = U_lambda(w^{-1}A F) - (U_lambda w^{-1}A) . A_lambda F for an
/// n-column field F. R_lambda of a constant field vanishes.
[[nodiscard]] GridFunction r_lambda(ResolventCache& cache, const DyadicGrid& grid, double lambda,
                                    const VectorField& F);

/// ||R_lambda F|| / (||lambda grad F|| + ||lambda^2 d_t F||), all in L^2(mu).
[[nodiscard]] double principal_ratio(ResolventCache& cache, const DyadicGrid& grid, double lambda,
                                     const VectorField& F);

/// ||(U_lambda b) A_lambda f|| / (||b||_inf ||f||).
[[nodiscard]] double bounded_product_ratio(ResolventCache& cache, const DyadicGrid& grid,
                                           double lambda, const VectorField& b,
                                           const GridFunction& f);

/// Nodes of the concentric dilate 2^m Delta: 2^m times the spatial side and
/// 4^m times the time side. Generation-0 cubes round the offset down. Sets
/// *clamped and returns the whole torus when the dilate does not fit.
[[nodiscard]] std::vector<Index> dilate_nodes(const DyadicGrid& grid, const ParabolicCube& c,
                                              int m, bool* clamped = nullptr);

/// ||U_lambda(b 1_{2^k Delta})||_{L^2_mu(Delta)} / (mu(Delta)^{1/2} ||b||_inf) for
/// k = 0, 1, ... until the dilate covers the torus; the last entry is the
/// full U_lambda b.
[[nodiscard]] std::vector<double> expansion_profile(ResolventCache& cache, const DyadicGrid& grid,
                                                    double lambda, const VectorField& b,
                                                    const ParabolicCube& cube);

struct PoincareRatio {
  double lhs = 0.0;  // int_{C_k} |f - (f)_Delta|^2 dmu, (f)_Delta unweighted
  double rhs = 0.0;  // int_{2^{k+1} Delta} 4^k l^2 |grad f|^2 + 16^k T^2 |d_t f|^2 dmu
  double ratio = 0.0;  // lhs / ((k + 1) rhs); 0 when both sides vanish
  bool clamped = false;
};
/// Annulus C_k = 2^{k+1} Delta \ 2^k Delta (C_0 = 2 Delta). The time side T
/// of Delta plays the role of l(Delta)^2.
[[nodiscard]] PoincareRatio poincare_ratio(const DyadicGrid& grid, const RealField& w,
                                           const GridFunction& f, const ParabolicCube& cube,
                                           int k);

// ---------------------------------------------------------------------------
// Cones

enum class ConeMode {
  phase_resolved,  // cone predicate and |arg(u . conj zeta)| <= pi/8
  literal,         // cone predicate only
};

struct Cone {
  Eigen::VectorXcd zeta;
  double epsilon = 0.25;

  /// u . conj(zeta).
  [[nodiscard]] cplx project(const cplx* u) const;
  /// |u - (u . conj zeta) zeta| <= epsilon |u . conj zeta|.
  [[nodiscard]] bool contains(const cplx* u) const;
  [[nodiscard]] bool contains(const cplx* u, ConeMode mode) const;
};

/// Finite set W of cones covering C^n. Membership is made a partition by
/// taking the first cone that contains u.
class ConeSet {
 public:
  static constexpr int phases = 8;

  /// n = 1: zeta = e^{i theta}. n = 2: directions (cos a, e^{i phi} sin a)
  /// on a grid of the sphere of complex lines fine enough that every line is
  /// within aperture epsilon, times the phases in phase-resolved mode.
  [[nodiscard]] static ConeSet make(int n, double epsilon, ConeMode mode);

  [[nodiscard]] int size() const { return int(cones_.size()); }
  [[nodiscard]] const Cone& operator[](int i) const { return cones_[std::size_t(i)]; }
  [[nodiscard]] ConeMode mode() const { return mode_; }
  [[nodiscard]] double epsilon() const { return epsilon_; }
  /// First cone containing u, or -1.
  [[nodiscard]] int first_match(const cplx* u) const;
  /// first_match, falling back to the cone maximizing Re(u . conj zeta)/|u| so
  /// every vector lands in exactly one class.
  [[nodiscard]] int classify(const cplx* u) const;
  /// Fraction of `samples` random complex normal vectors left uncovered.
  [[nodiscard]] double uncovered_fraction(int samples, CounterRng rng) const;

 private:
  int n_ = 1;
  double epsilon_ = 0.25;
  ConeMode mode_ = ConeMode::phase_resolved;
  std::vector<Cone> cones_;
};

// ---------------------------------------------------------------------------
// Test functions

/// Smooth plateau: 1 for |s| <= inner, 0 for |s| >= outer.
[[nodiscard]] double plateau(double s, double inner, double outer);

struct LaaReport {
  double diff_norm2 = 0.0;    // ||f - L||^2
  double mu_cube = 0.0;       // mu(Delta)
  double side = 0.0;          // l(Delta)
  double i_const = 0.0;       // ||f - L||^2 / ((eps l)^2 mu(Delta))
  double ii_const = 0.0;      // ||D(f - L)||^2 / mu(Delta)
  double iii_const = 0.0;     // ||D f||^2 / mu(Delta)
  double mean_defect = 0.0;   // |avg_Delta (1 - grad f . zeta)|
  double mean_gradient = 0.0; // avg_Delta |grad f|
  double defect_scale = 0.0;  // eps^{eta / (eta + 1)} with the fitted A-infinity eta
};

struct TestFunction {
  ParabolicCube cube;
  Eigen::VectorXcd zeta;
  double epsilon = 0.0;
  RealField cutoff;       // chi_Delta
  GridFunction profile;   // L = chi_Delta (x - x_Delta) . conj zeta
  GridFunction f;         // E_{eps l} L
  VectorField gradient;   // grad_x f
  LaaReport laa;
};

/// True when the cutoff support (2 l in space, 4 T in time) fits the torus.
[[nodiscard]] bool test_function_fits(const DyadicGrid& grid, const ParabolicCube& cube);

/// chi_Delta = chi((x - x_Delta)/l) eta((t - t_Delta)/(2T)) with chi = 1 on
/// [-1/2, 1/2]^n and eta = 1 on [-1/4, 1/4], both supported in (-1, 1); x_Delta
/// is the geometric centre of the cube, so forward differences inside Delta
/// see the plateau only and grad_x L = conj zeta there. Throws
/// std::domain_error when the support does not fit.
[[nodiscard]] TestFunction build_test_function(ResolventCache& cache, const DyadicGrid& grid,
                                               const ParabolicCube& cube,
                                               const Eigen::VectorXcd& zeta, double epsilon);

/// Least-squares slope of log ||f - L||^2 against log eps.
[[nodiscard]] double laa_slope(const std::vector<double>& epsilons,
                               const std::vector<double>& diff_norm2);

// ---------------------------------------------------------------------------
// Stopping time

/// A subcube stops when avg Re(grad f . zeta) <= 3/4 ...
inline constexpr double stop_real_threshold = 0.75;
/// ... or avg |grad f| >= (4 eps)^{-2}.
[[nodiscard]] inline double stop_gradient_threshold(double epsilon) {
  return 1.0 / (16.0 * epsilon * epsilon);
}

struct StoppingResult {
  std::vector<ParabolicCube> stopped;         // S': maximal stopped cubes
  std::vector<ParabolicCube> remainder;       // S'': subcubes not inside any stopped cube
  std::vector<Eigen::VectorXcd> remainder_mean;  // avg of grad f over each S'' cube
  double measure_ratio = 0.0;  // |union S'| / |Delta|
  double mu_ratio = 0.0;       // mu(union S') / mu(Delta)
};

/// Top-down selection of maximal subcubes of `root` (root included) with
/// avg Re(G . zeta) <= 3/4 or avg |G| >= (4 eps)^{-2}, unweighted averages.
[[nodiscard]] StoppingResult stopping_time(const DyadicGrid& grid, const RealField& w,
                                           const ParabolicCube& root, const VectorField& G,
                                           const Eigen::VectorXcd& zeta, double epsilon);
[[nodiscard]] StoppingResult stopping_time(const DyadicGrid& grid, const RealField& w,
                                           const TestFunction& tf);

/// Largest epsilon whose worst measure ratio is <= ceiling, from the sweep
/// values; nullopt if none qualifies.
[[nodiscard]] std::optional<double> calibrate_epsilon(const std::vector<double>& epsilons,
                                                      const std::vector<double>& worst_ratio,
                                                      double ceiling = 0.95);

// ---------------------------------------------------------------------------
// Main Carleson estimate

struct CarlesonMainConfig {
  double epsilon = 0.125;
  ConeMode mode = ConeMode::phase_resolved;
  int per_octave = 4;
  /// Octaves below one cell, all merged into generation 0.
  int sub_cell_shells = 4;
  /// Run the test-function reduction on cubes of generations
  /// [tb_min_gen, largest generation whose cutoff fits].
  bool tb = true;
  int tb_min_gen = 1;
  /// Cubes per generation for the reduction, spread evenly; 0 means all.
  int max_cubes_per_gen = 4;
  /// Evaluate the square-function terms of the final bound per pair; this
  /// costs a second factorization per scale.
  bool final_bound = true;
};

/// One (cone, cube) pair of the test-function reduction.
struct TbPair {
  int cone = 0;
  ParabolicCube cube;
  double mu_cube = 0.0;
  double measure_ratio = 0.0;  // of the stopping time
  double mu_ratio = 0.0;
  std::size_t stopped = 0;
  std::size_t remainder = 0;
  double gamma_box = 0.0;    // (1/mu) int over the Carleson box of |gamma_zeta|^2
  double term_stopped = 0.0; // (1/mu) sum of gamma boxes of S' cubes
  double term_whitney = 0.0; // (1/mu) sum of gamma Whitney masses of S'' cubes
  double reduction_rhs = 0.0;  // (1/mu) int_box |(U w^{-1}A) . A grad f|^2
  double ff1_term1 = 0.0;    // |||(lambda E H + (U w^{-1}A) A grad) f|||^2 on (0, l]
  double ff1_term2 = 0.0;    // int_box |lambda E H f|^2
  double ff1_term2_bound = 0.0;  // ||L - f||^2 / (2 eps^4 l^2)
  double d_norm2 = 0.0;      // ||D f||^2
  double split_residual = 0.0;  // relative defect of the splitting identity
  long est9_checks = 0;
  long est9_violations = 0;
  double est9_worst = 0.0;   // max |u| / (4 |u . v|)
};

struct CarlesonMainReport {
  std::vector<double> lambdas;  // evaluated scales, ascending
  double sup_ratio = 0.0;       // sup_Delta (1/mu(Delta)) int_box |U w^{-1}A|^2
  ParabolicCube argmax;
  std::vector<std::vector<double>> box_ratio;  // [gen][cube]
  double total_mass = 0.0;
  std::vector<double> cone_mass;     // gamma mass per cone
  std::vector<double> cone_sup;      // sup over cubes of the gamma box ratio per cone
  double uncovered_mass = 0.0;       // mass assigned by the classify fallback
  std::vector<TbPair> pairs;
  long est9_checks = 0;
  long est9_violations = 0;
  double worst_measure_ratio = 0.0;
  double worst_mu_ratio = 0.0;
  /// max over pairs of 16 reduction_rhs / (1 - mu_ratio): the absorbed bound
  /// for the gamma box ratios of the cubes in the reduction.
  double absorbed_bound = 0.0;
  double max_split_residual = 0.0;
  double max_partition_defect = 0.0;  // |gamma_box - term_stopped - term_whitney| / gamma_box
};

/// |U_lambda w^{-1}A|^2 dmu dlambda/lambda on shells (2^{j-1} hx, 2^j hx],
/// midpoint rule in log lambda; the Tb reduction per (cone, cube) pair when
/// enabled. Each scale factorizes once and drops the factorization.
[[nodiscard]] CarlesonMainReport carleson_main(const ParabolicOperator& op,
                                               const CarlesonMainConfig& config);

/// Shell scales and weights used by carleson_main: shell j covers
/// (2^{j-1} hx, 2^j hx] for j = 1 - sub_cell_shells .. top.
struct ShellQuadrature {
  std::vector<double> nodes;
  std::vector<double> weights;
  std::vector<int> generation;  // max(j, 0)
};
[[nodiscard]] ShellQuadrature shell_quadrature(const DyadicGrid& grid, int per_octave,
                                               int sub_cell_shells);

}  // namespace kato
