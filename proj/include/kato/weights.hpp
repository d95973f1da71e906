#pragma once

#include <cstdint>
#include <iosfwd>
#include <vector>

#include "kato/grid.hpp"

namespace kato {

/// Exponents of the A-infinity sandwich
///   beta^{-1} r^{1/(2 eta)} <= w(E)/w(Q) <= beta r^{2 eta},  r = |E|/|Q|.
struct AInfExponents {
  double eta = 0.5;
  double beta = 1.0;
};

/// Positive, time-independent spatial weight with cached constants.
struct Weight {
  GridSpec spec;
  RealField values;  // one entry per spatial node
  double a2 = 1.0;
  double doubling = 1.0;
  AInfExponents ainf;

  /// Parabolic doubling constant of mu = w dx dt.
  [[nodiscard]] double mu_doubling() const { return 4.0 * doubling; }
};

enum class WeightKind { unit, power, dyadic_random };

struct WeightParams {
  WeightKind kind = WeightKind::unit;
  double exponent = 0.0;   // power
  double amplitude = 0.0;  // dyadic_random
  std::uint64_t seed = 0;  // dyadic_random
};

/// Builds a weight family member and fills the cached constants.
/// Throws std::domain_error for parameters outside the admissible range.
[[nodiscard]] Weight make_weight(const WeightParams& params, const GridSpec& spec);
/// Wraps given node values and computes the cached constants.
[[nodiscard]] Weight make_weight(const GridSpec& spec, RealField values);

/// sup over all discrete periodic cubes of avg(w) * avg(1/w).
[[nodiscard]] double a2_constant(const GridSpec& spec, const RealField& w);
/// sup over cubes of w(2Q)/w(Q); 2Q is concentric with side min(2m, Nx).
[[nodiscard]] double doubling_constant(const GridSpec& spec, const RealField& w);

/// Cube sides (in cells) over which the A-infinity fit is exhaustive.
[[nodiscard]] std::vector<int> ainf_cube_sides(const GridSpec& spec);
/// Fits (eta, beta): for every cube of an admissible side and every cell
/// count k the extremal subsets (k heaviest, k lightest cells) are used,
/// so the result holds for every union of cells E inside such a cube.
[[nodiscard]] AInfExponents fit_ainf(const GridSpec& spec, const RealField& w);
/// Checks the sandwich for one (E, Q) pair given the two ratios.
[[nodiscard]] bool ainf_sandwich_holds(const AInfExponents& ex, double measure_ratio,
                                       double weight_ratio, double rel_tol = 1e-12);

/// Sum of w over the periodic cube with corner (cx, cy) and side m cells.
[[nodiscard]] double cube_mass(const GridSpec& spec, const RealField& w, int cx, int cy, int m);
/// Spatial indices of that cube.
[[nodiscard]] std::vector<Index> cube_cells(const GridSpec& spec, int cx, int cy, int m);

/// CSV with header "index,value".
void write_weight_csv(std::ostream& os, const RealField& w);
[[nodiscard]] RealField read_weight_csv(std::istream& is);

}  // namespace kato
