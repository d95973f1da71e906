#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <vector>

#include <Eigen/Sparse>
#include <Eigen/SparseLU>

#include "kato/grid.hpp"
#include "kato/rng.hpp"
#include "kato/weights.hpp"

namespace kato {

/// n x n complex matrix per node; entry (i, j) at node k is data(k, i*n + j).
struct CoefficientField {
  GridSpec spec;
  Eigen::MatrixXcd data;

  [[nodiscard]] cplx operator()(Index node, int i, int j) const {
    return data(node, i * spec.n + j);
  }
  [[nodiscard]] Eigen::MatrixXcd at(Index node) const;
};

/// A = scale * w * I at every node.
[[nodiscard]] CoefficientField scaled_identity(const Weight& w, double scale = 1.0);

struct CoefficientParams {
  double kappa = 0.0;
  bool time_dependent = true;
  std::uint64_t seed = 0;
  /// Lattice carrying the random draws, cells per spatial axis and along
  /// time; 0 means the grid's own cells. A lattice coarser than the grid
  /// gives the same piecewise-constant coefficients at every resolution
  /// that refines it.
  int lattice_x = 0;
  int lattice_t = 0;
};

/// A = w (I + kappa B) with B iid per lattice cell (per spatial cell when
/// time-independent), complex, spectral norm <= 1. Certifies
/// (c1, c2) = (1 - kappa, 1 + kappa). Throws std::invalid_argument when the
/// lattice does not divide the grid.
[[nodiscard]] CoefficientField random_coefficients(const Weight& w, const CoefficientParams& p);

struct Ellipticity {
  double c1 = 1.0;
  double c2 = 1.0;
};

/// c1 = min over nodes of the smallest eigenvalue of the Hermitian part of
/// w^{-1}A; c2 = max over nodes of the spectral norm of w^{-1}A. Throws
/// std::domain_error when c1 <= 0.
[[nodiscard]] Ellipticity ellipticity_constants(const CoefficientField& A, const Weight& w);

/// Discrete H = d_t - w^{-1} div(A grad) with d_t realized as
/// D_half * Hilbert * D_half and the divergence as the negative mu-adjoint
/// of grad_x, so Re <Hu, u>_mu >= 0 holds exactly.
class ParabolicOperator {
 public:
  ParabolicOperator(Weight w, CoefficientField A);

  [[nodiscard]] const GridSpec& spec() const { return weight_.spec; }
  [[nodiscard]] const Weight& weight() const { return weight_; }
  [[nodiscard]] const RealField& w() const { return weight_.values; }
  [[nodiscard]] const CoefficientField& coefficients() const { return coef_; }
  [[nodiscard]] const Ellipticity& ellipticity() const { return ellipticity_; }
  [[nodiscard]] const Eigen::MatrixXcd& time_operator() const { return time_op_; }

  [[nodiscard]] GridFunction apply(const GridFunction& u) const;
  [[nodiscard]] GridFunction apply_adjoint(const GridFunction& u) const;
  /// w^{-1} A grad_x u (or w^{-1} A^* grad_x u).
  [[nodiscard]] VectorField flux(const GridFunction& u, bool adjoint = false) const;
  /// w^{-1} A F applied nodewise to a vector field.
  [[nodiscard]] VectorField apply_coefficients(const VectorField& F, bool adjoint = false) const;

  /// Matrix of H (or H*) acting on nodal values.
  [[nodiscard]] Eigen::SparseMatrix<cplx> sparse(bool adjoint = false) const;
  [[nodiscard]] Eigen::MatrixXcd dense(bool adjoint = false) const;

  /// Operator with coefficients A^T(x, -t). With J u = conj(u(x, -t)) one
  /// has H* = J K J exactly, including the Nyquist time mode.
  [[nodiscard]] ParabolicOperator reversed_transpose() const;

  /// Hash of grid, weight and coefficient bits.
  [[nodiscard]] std::uint64_t fingerprint() const;

 private:
  Weight weight_;
  CoefficientField coef_;
  Ellipticity ellipticity_;
  Eigen::MatrixXcd time_op_;
};

[[nodiscard]] inline GridFunction apply_H(const ParabolicOperator& op, const GridFunction& u) {
  return op.apply(u);
}

/// J u (x, t) = conj(u(x, -t)).
[[nodiscard]] GridFunction reverse_conjugate(const GridSpec& spec, const GridFunction& u);

/// sigma <u, (1 + delta Ht) v> + <w^{-1}A grad u, grad (1 + delta Ht) v>
///   + <Ht Dh u, Dh (1 + delta Ht) v>, all in L^2(mu).
[[nodiscard]] cplx form_B(const ParabolicOperator& op, const GridFunction& u,
                          const GridFunction& v, double delta, cplx sigma);
/// min(c1 / (c2 + 1), Re sigma / (|Im sigma| + 1)).
[[nodiscard]] double explicit_delta(const Ellipticity& e, cplx sigma);

/// ||grad u||^2 + ||D_half u||^2 in L^2(mu).
[[nodiscard]] double parabolic_gradient_norm2(const ParabolicOperator& op, const GridFunction& u);
/// ||u||^2 + ||grad u||^2 + ||D_half u||^2.
[[nodiscard]] double energy_norm2(const ParabolicOperator& op, const GridFunction& u);
[[nodiscard]] double mu_norm(const ParabolicOperator& op, const GridFunction& u);

/// Factorization of alpha I + beta H (or H*) for repeated solves.
class ResolventSolver {
 public:
  ResolventSolver(const ParabolicOperator& op, cplx alpha, cplx beta, bool adjoint = false);

  [[nodiscard]] GridFunction solve(const GridFunction& f) const;
  [[nodiscard]] Eigen::MatrixXcd solve(const Eigen::MatrixXcd& F) const;
  [[nodiscard]] bool adjoint() const { return adjoint_; }

 private:
  const ParabolicOperator* op_;
  cplx alpha_, beta_;
  bool adjoint_;
  Eigen::SparseLU<Eigen::SparseMatrix<cplx>, Eigen::COLAMDOrdering<int>> lu_;
};

/// (sigma + H)^{-1} f, or (sigma + H*)^{-1} f. Requires Re sigma > 0.
[[nodiscard]] GridFunction resolvent_apply(const ParabolicOperator& op, cplx sigma,
                                           const GridFunction& f, bool adjoint = false);

/// Factorizations of I + lambda^2 H keyed by (lambda bits, adjoint).
/// Thread-safe; each factorization is computed once.
class ResolventCache {
 public:
  explicit ResolventCache(const ParabolicOperator& op) : op_(&op) {}

  [[nodiscard]] std::shared_ptr<const ResolventSolver> get(double lambda, bool adjoint = false);
  /// E_lambda f or E*_lambda f.
  [[nodiscard]] GridFunction E(double lambda, const GridFunction& f, bool adjoint = false) {
    return get(lambda, adjoint)->solve(f);
  }
  [[nodiscard]] const ParabolicOperator& op() const { return *op_; }
  [[nodiscard]] std::size_t size() const;

 private:
  const ParabolicOperator* op_;
  mutable std::mutex mutex_;
  std::map<std::pair<std::uint64_t, bool>, std::shared_ptr<const ResolventSolver>> cache_;
};

/// Measured constants of the three uniform resolvent estimates for E and E*.
struct ResolventEstimates {
  static constexpr std::array<const char*, 6> names = {"i", "ii", "iii", "i_adj", "ii_adj",
                                                       "iii_adj"};
  std::vector<double> lambdas;
  std::array<std::vector<double>, 6> per_lambda;
  std::array<double, 6> max_ratio{};
  bool within_ceiling = true;
  bool upward_trend = false;
};

[[nodiscard]] ResolventEstimates lemma_le8_suite(ResolventCache& cache,
                                                 const std::vector<double>& lambdas,
                                                 int samples, CounterRng rng,
                                                 double ceiling = 10.0);

enum class OffDiagVariant { E_f, grad_E_f, E_div };

struct OffDiagSample {
  double ratio = 0.0;
  double d = 0.0;
  double lambda = 0.0;
};

/// Energy on F of the resolvent image of data supported on E, relative to
/// the data energy on E. `data` is a scalar field for E_f / grad_E_f and a
/// vector field for E_div; it must vanish off E. Throws std::domain_error
/// if E and F overlap.
[[nodiscard]] OffDiagSample offdiag_profile(ResolventCache& cache, double lambda,
                                            const std::vector<Index>& E,
                                            const std::vector<Index>& F, OffDiagVariant variant,
                                            const VectorField& data, bool adjoint = false);

/// Parabolic distance between node sets on the torus.
[[nodiscard]] double set_distance(const GridSpec& spec, const std::vector<Index>& E,
                                  const std::vector<Index>& F);

struct DecayFit {
  double c = 0.0;
  double intercept = 0.0;
  double r2 = 0.0;
  int used = 0;
};

/// Least squares of log(ratio) against d/lambda on the window [lo, hi];
/// slope -1/c.
[[nodiscard]] DecayFit fit_decay(const std::vector<OffDiagSample>& samples, double lo = 2.0,
                                 double hi = 20.0);

/// Spatial-slab sweep: E is a slab of `width` cells at x = 0 spanning all
/// times, F ranges over one-cell slabs at every distance; one random f per
/// lambda.
[[nodiscard]] std::vector<OffDiagSample> offdiag_sweep(ResolventCache& cache,
                                                       const std::vector<double>& lambdas,
                                                       int width, OffDiagVariant variant,
                                                       CounterRng rng);

}  // namespace kato
