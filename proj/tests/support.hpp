#pragma once

#include <cmath>
#include <cstdint>

#include "kato/operator.hpp"
#include "kato/rng.hpp"

namespace kato::test {

inline GridSpec grid1(int Nx = 16, int Nt = 16) { return GridSpec{1, Nx, Nt, 1.0, 1.0}; }
inline GridSpec grid2(int Nx = 8, int Nt = 4) { return GridSpec{2, Nx, Nt, 1.0, 1.0}; }

inline ParabolicOperator unit_operator(const GridSpec& spec) {
  const Weight w = make_weight(WeightParams{}, spec);
  return ParabolicOperator(w, scaled_identity(w));
}

/// Power weight |x|^a with rough complex coefficients.
inline ParabolicOperator rough_operator(const GridSpec& spec, std::uint64_t seed, double kappa = 0.5,
                                        double power = 0.5, bool time_dependent = true) {
  const Weight w = make_weight(WeightParams{WeightKind::power, power, 0.0, 0}, spec);
  return ParabolicOperator(w, random_coefficients(w, {kappa, time_dependent, seed}));
}

inline GridFunction noise(const GridSpec& spec, CounterRng& rng) {
  GridFunction u(spec.size());
  for (Index k = 0; k < u.size(); ++k) u[k] = rng.complex_normal();
  return u;
}

inline VectorField noise_field(const GridSpec& spec, CounterRng& rng) {
  VectorField F(spec.size(), spec.n);
  for (Index k = 0; k < F.size(); ++k) F.data()[k] = rng.complex_normal();
  return F;
}

inline double rel(double a, double b) { return std::abs(a - b) / std::max(std::abs(b), 1e-300); }

}  // namespace kato::test
