#pragma once

#include <array>
#include <functional>
#include <vector>

#include "kato/calculus.hpp"
#include "kato/dyadic.hpp"

namespace kato {

enum class BumpProfile {
  smooth,  // exp(-1/(1 - s^2)) on (-1, 1)
  cosine,  // (1 + cos(pi s)) / 2 on (-1, 1)
};

[[nodiscard]] double bump(BumpProfile profile, double s);

enum class MollifierPart { space, time, both };

/// Product-form kernel P_lambda = P1_lambda(x) P2_lambda(t) sampled on the
/// lattice and renormalized to unit sum. P1 is radial with radius lambda,
/// P2 has radius lambda^2. Below one cell the kernel is the identity.
class Mollifier {
 public:
  Mollifier(const GridSpec& spec, BumpProfile profile = BumpProfile::smooth);

  /// Spatial weights for offsets (dx, dy); returned with the offsets.
  struct SpaceKernel {
    std::vector<std::array<int, 2>> offsets;
    std::vector<double> weights;
  };
  struct TimeKernel {
    std::vector<int> offsets;
    std::vector<double> weights;
  };
  [[nodiscard]] SpaceKernel space_kernel(double lambda) const;
  [[nodiscard]] TimeKernel time_kernel(double lambda) const;

  [[nodiscard]] GridFunction apply(const GridFunction& f, double lambda,
                                   MollifierPart part = MollifierPart::both) const;
  [[nodiscard]] VectorField apply_field(const VectorField& F, double lambda,
                                        MollifierPart part = MollifierPart::both) const;
  [[nodiscard]] const GridSpec& spec() const { return spec_; }
  [[nodiscard]] BumpProfile profile() const { return profile_; }

 private:
  GridSpec spec_;
  BumpProfile profile_;
};

/// conv_P: P_lambda f, or only its spatial or temporal factor.
[[nodiscard]] GridFunction conv_P(const Mollifier& P, const GridFunction& f, double lambda,
                                  MollifierPart part = MollifierPart::both);

/// Family lambda -> field; a scalar family returns one column.
using FieldFamily = std::function<VectorField(double lambda)>;

/// |||g|||^2 = sum_j weight_j ||g_{lambda_j}||^2 in L^2(mu).
[[nodiscard]] double square_norm(const GridSpec& spec, const RealField& w,
                                 const FieldFamily& family, const LambdaQuadrature& quad);

/// Quadrature for the Littlewood-Paley experiments: [hx/4, lambda_max] with
/// lambda_max = min(Lx/2, top cube side), so kernels do not wrap and the
/// dyadic averages are defined on the whole range.
[[nodiscard]] LambdaQuadrature lp_quadrature(const DyadicGrid& grid, int per_octave = 8);

struct LPReport {
  double gradient = 0.0;  // |||lambda grad_x P f|||
  double time = 0.0;      // |||lambda^2 d_t P f|||
  double half = 0.0;      // |||lambda D_half P f|||
  double smoothing = 0.0; // |||lambda^{-1} (I - P) f|||
  double averaging = 0.0; // |||(A - P) f|||
  double f_norm = 0.0;
  double d_norm = 0.0;

  /// (gradient + time + half) / ||f||.
  [[nodiscard]] double little1() const { return f_norm > 0 ? (gradient + time + half) / f_norm : 0; }
  /// smoothing / ||D f||.
  [[nodiscard]] double little2() const { return d_norm > 0 ? smoothing / d_norm : 0; }
  /// averaging / ||f||.
  [[nodiscard]] double little3() const { return f_norm > 0 ? averaging / f_norm : 0; }
};

[[nodiscard]] LPReport lp_suite(const Mollifier& P, const DyadicGrid& grid, const RealField& w,
                                const GridFunction& f, const LambdaQuadrature& quad);

/// Both sides of (I - P) f = P2 (I - P1) f + (I - P2) f.
struct SplitCheck {
  GridFunction lhs;
  GridFunction rhs;
};
[[nodiscard]] SplitCheck smoothing_split(const Mollifier& P, const GridFunction& f, double lambda);
/// Both sides of (A - P) f = A2 (A1 - P1) f + P1 (A2 - P2) f.
[[nodiscard]] SplitCheck averaging_split(const Mollifier& P, const DyadicGrid& grid,
                                         const GridFunction& f, double lambda);

}  // namespace kato
