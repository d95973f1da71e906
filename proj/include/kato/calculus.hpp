#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "kato/operator.hpp"

namespace kato {

/// Trapezoidal rule in log(lambda) on [lambda_min, lambda_max]; nodes are
/// geometric with about `per_octave` nodes per doubling.
struct LambdaQuadrature {
  double lambda_min = 0.0;
  double lambda_max = 0.0;
  int per_octave = 8;
  std::vector<double> nodes;
  std::vector<double> weights;  // sum to ln(lambda_max / lambda_min)

  /// Throws std::invalid_argument unless 0 < lambda_min < lambda_max, q >= 1.
  [[nodiscard]] static LambdaQuadrature make(double lambda_min, double lambda_max, int per_octave);
  /// [hx/8, 8 Lx] with 8 nodes per octave.
  [[nodiscard]] static LambdaQuadrature standard(const GridSpec& spec, int per_octave = 8);
  [[nodiscard]] std::size_t size() const { return nodes.size(); }
};

enum class SqrtMethod { schur_oracle, calderon };

struct SqrtResult {
  Eigen::MatrixXcd matrix;  // acts on nodal values
  SqrtMethod method = SqrtMethod::schur_oracle;
  double residual = 0.0;    // ||R^2 - H||_F / ||H||_F
};

/// Principal square root of an accretive matrix by complex Schur form and
/// the triangular recurrence. Throws std::domain_error for an eigenvalue on
/// the closed negative real axis (other than 0).
[[nodiscard]] Eigen::MatrixXcd principal_sqrt(const Eigen::MatrixXcd& M);

/// Dense root of H (or H*). The constants, a common kernel of H and H*,
/// are split off with the mu-orthogonal projector P: sqrt(H) =
/// sqrt(H + P) - P, which keeps the zero eigenvalue out of the recurrence.
[[nodiscard]] SqrtResult sqrt_schur(const ParabolicOperator& op, bool adjoint = false);

/// Matrix-free sqrt(H) f = (16/pi) int lambda^3 H^2 (1 + lambda^2 H)^{-3} f dlambda/lambda
/// with one factorization per quadrature node.
class CalderonRoot {
 public:
  /// With retain = false each node's factorization is dropped after use,
  /// which bounds memory on large grids at the price of refactoring.
  CalderonRoot(const ParabolicOperator& op, LambdaQuadrature quad, bool adjoint = false,
               bool retain = true);

  struct Value {
    GridFunction value;
    double tail = 0.0;       // relative estimate of the truncated integral
    double tail_low = 0.0;   // share below lambda_min
    double tail_high = 0.0;  // share above lambda_max
    int widenings = 0;       // number of 4x range extensions applied
  };

  /// Evaluation under the tail check of apply_many.
  [[nodiscard]] Value apply(const GridFunction& f);
  /// Batched evaluation: one factorization per node serves every input.
  /// While the largest tail estimate exceeds tail_tolerance, the offending
  /// ends of [lambda_min, lambda_max] move out by 4x, at most max_widenings
  /// times. The widened range is kept for later calls.
  [[nodiscard]] std::vector<Value> apply_many(const std::vector<GridFunction>& fs);
  /// Same check with an explicit tolerance; 0 disables widening.
  [[nodiscard]] Value apply_checked(const GridFunction& f, double tolerance,
                                    int max_widenings = 3);

  [[nodiscard]] const LambdaQuadrature& quadrature() const { return quad_; }
  [[nodiscard]] ResolventCache& cache() { return cache_; }
  [[nodiscard]] bool adjoint() const { return adjoint_; }

  /// Leading constant, exposed so the linearity probe can rescale it.
  double prefactor;
  double tail_tolerance = 1e-4;
  int max_widenings = 3;

 private:
  std::vector<Value> evaluate(const std::vector<GridFunction>& fs);
  std::vector<Value> widen_until(const std::vector<GridFunction>& fs, double tolerance,
                                 int max_widenings);

  const ParabolicOperator* op_;
  LambdaQuadrature quad_;
  bool adjoint_;
  bool retain_;
  ResolventCache cache_;
};

/// sqrt(H*) g = J sqrt(K) J g with K the reversed-transpose operator.
[[nodiscard]] std::vector<GridFunction> reversed_root_apply(CalderonRoot& reversed_root,
                                                            const std::vector<GridFunction>& gs);

/// |||lambda E_lambda H f|||^2 = sum_j weight_j ||lambda_j E_j H f||^2.
[[nodiscard]] double quadratic_functional(ResolventCache& cache, const GridFunction& f,
                                          const LambdaQuadrature& quad);
/// Right factor of the duality bound: |||lambda^2 H* E*_lambda^2 g|||^2.
[[nodiscard]] double dual_quadratic_functional(ResolventCache& cache, const GridFunction& g,
                                               const LambdaQuadrature& quad);

/// Applies a square root to a batch of vectors.
using RootApply = std::function<std::vector<GridFunction>(const std::vector<GridFunction>&)>;
[[nodiscard]] RootApply dense_root(const Eigen::MatrixXcd& R);
[[nodiscard]] RootApply calderon_root(CalderonRoot& root);
/// sqrt(H*) through the reversed-transpose operator's root.
[[nodiscard]] RootApply reversed_calderon_root(CalderonRoot& reversed_root);

/// Random mean-free field: 1 to 3 Fourier modes with spatial wavenumbers
/// |k| <= min(4, Nx/4) and time modes |m| <= min(4, Nt/4), not both zero,
/// complex normal amplitudes. Defined by continuum modes so draws compare
/// across resolutions.
[[nodiscard]] GridFunction random_mode_field(const GridSpec& spec, CounterRng& rng);

/// random_mode_field times a periodized Gaussian envelope of width Lx/8 around
/// a random centre, so weighted norms see where the field lives.
[[nodiscard]] GridFunction random_packet_field(const GridSpec& spec, CounterRng& rng);

/// exp(2 pi i (kx x / Lx + ky y / Lx + m t / Lt)) sampled on the grid.
[[nodiscard]] GridFunction fourier_mode(const GridSpec& spec, int kx, int ky, int m);
/// Eigenvalue of H on that mode when w = 1 and A = I.
[[nodiscard]] cplx unit_symbol(const GridSpec& spec, int kx, int ky, int m);

struct KatoReport {
  double r_min = 0.0;
  double r_max = 0.0;
  std::vector<double> ratios;
};

/// ||sqrt(H) u|| / ||D u|| over random mode fields.
[[nodiscard]] KatoReport kato_ratios(const ParabolicOperator& op, const RootApply& root,
                                     int ensemble_size, CounterRng rng);

struct DualityCheck {
  double root_norm = 0.0;  // ||sqrt(H) f||
  double bound = 0.0;      // (16/pi) Q(f) Q*(g), g = sqrt(H) f / ||sqrt(H) f||
};
[[nodiscard]] DualityCheck duality_check(ResolventCache& cache, const LambdaQuadrature& quad,
                                         const GridFunction& f, const GridFunction& root_f);

struct LowerBoundCheck {
  double lhs = 0.0;  // delta (||grad f||^2 + ||D_half f||^2)
  double rhs = 0.0;  // ||sqrt(H) f|| ||sqrt(H*) (1 + delta Ht) f||
  double delta = 0.0;
};
/// delta = c1 / (c2 + 1), the sigma = 0 choice of the coercivity argument.
[[nodiscard]] LowerBoundCheck lower_bound_check(const ParabolicOperator& op, const GridFunction& f,
                                                const RootApply& root, const RootApply& adjoint_root);

}  // namespace kato
