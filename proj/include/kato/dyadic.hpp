#pragma once

#include <iosfwd>
#include <vector>

#include "kato/grid.hpp"
#include "kato/weights.hpp"

namespace kato {

/// Dyadic parabolic cube of generation j: 2^j spatial cells per axis and
/// 4^j time cells, corners anchored at multiples of the side.
struct ParabolicCube {
  int gen = 0;
  int qx = 0, qy = 0, qt = 0;  // position in units of the cube's own sides

  bool operator==(const ParabolicCube&) const = default;
};

enum class AverageAxis { x, t, both };

/// The tree of dyadic parabolic cubes on a grid, generations 0..J with
/// J = min(log2 Nx, log4 Nt).
class DyadicGrid {
 public:
  explicit DyadicGrid(const GridSpec& spec);

  [[nodiscard]] const GridSpec& spec() const { return spec_; }
  [[nodiscard]] int top() const { return top_; }
  /// Side in spatial length units: 2^j hx.
  [[nodiscard]] double side(int gen) const;
  [[nodiscard]] int cells_x(int gen) const { return 1 << gen; }
  [[nodiscard]] int cells_t(int gen) const { return 1 << (2 * gen); }
  /// Number of cubes per spatial axis and along time in generation j.
  [[nodiscard]] int count_x(int gen) const { return spec_.Nx >> gen; }
  [[nodiscard]] int count_t(int gen) const { return spec_.Nt >> (2 * gen); }
  [[nodiscard]] Index cube_count(int gen) const;

  /// Dense index within a generation and its inverse.
  [[nodiscard]] Index index(const ParabolicCube& c) const;
  [[nodiscard]] ParabolicCube cube(int gen, Index idx) const;
  /// Cube of generation j containing a node.
  [[nodiscard]] ParabolicCube containing(Index node, int gen) const;

  [[nodiscard]] ParabolicCube parent(const ParabolicCube& c) const;
  /// 2^n * 4 children; empty for generation 0.
  [[nodiscard]] std::vector<ParabolicCube> children(const ParabolicCube& c) const;
  /// True when b lies inside a (a == b included).
  [[nodiscard]] bool contains(const ParabolicCube& a, const ParabolicCube& b) const;
  /// Nodes of the cube in s-major, then t order.
  [[nodiscard]] std::vector<Index> nodes(const ParabolicCube& c) const;
  [[nodiscard]] double mu(const ParabolicCube& c, const RealField& w) const;
  /// Generation matching scale lambda: the smallest j with lambda <= 2^j hx,
  /// clamped to [0, J]. Sets *clamped when lambda exceeds the top side.
  [[nodiscard]] int generation_for(double lambda, bool* clamped = nullptr) const;

 private:
  GridSpec spec_;
  int top_;
};

/// Unweighted dyadic average at generation j along the chosen axes.
[[nodiscard]] GridFunction average_generation(const DyadicGrid& grid, const GridFunction& f,
                                              int gen, AverageAxis axis = AverageAxis::both);
/// A_lambda f with the generation picked by generation_for.
[[nodiscard]] GridFunction average(const DyadicGrid& grid, const GridFunction& f, double lambda,
                                   AverageAxis axis = AverageAxis::both, bool* clamped = nullptr);
/// Column-wise average of a vector field.
[[nodiscard]] VectorField average_field(const DyadicGrid& grid, const VectorField& F, int gen);

/// Unweighted centered maximal function of |f| in x (cubes of odd side up to
/// Nx, and discrete Euclidean disks when n = 2) or in t (odd intervals).
[[nodiscard]] RealField maximal(const GridSpec& spec, const GridFunction& f, AverageAxis axis);
[[nodiscard]] RealField maximal(const GridSpec& spec, const RealField& f, AverageAxis axis);

/// Mass per (generation, cube): nu(Delta x (l/2, l]).
struct CarlesonMeasure {
  std::vector<std::vector<double>> mass;  // mass[gen][cube index]

  [[nodiscard]] static CarlesonMeasure zero(const DyadicGrid& grid);
  /// mass of (j, Delta) = sum over nodes of Delta of density[j](node) * w * cell volume,
  /// where density[j] is the dlambda/lambda integral of |g|^2 over shell j.
  [[nodiscard]] static CarlesonMeasure from_shell_density(const DyadicGrid& grid,
                                                          const std::vector<RealField>& density,
                                                          const RealField& w);
  [[nodiscard]] double total() const;
};

/// nu(Delta x (0, l(Delta)]) for every cube, generation by generation.
[[nodiscard]] std::vector<std::vector<double>> carleson_boxes(const DyadicGrid& grid,
                                                              const CarlesonMeasure& nu);

struct CarlesonNorm {
  double value = 0.0;
  ParabolicCube argmax;
};
/// sup over all cubes of nu(box) / mu(Delta).
[[nodiscard]] CarlesonNorm carleson_norm(const DyadicGrid& grid, const CarlesonMeasure& nu,
                                         const RealField& w);

struct CarlesonEmbedding {
  double lhs_direct = 0.0;      // sum over cubes of |avg f|^2 nu
  double lhs_layer_cake = 0.0;  // same sum through maximal stopping cubes per level
  double stopping_bound = 0.0;  // sum over levels of dr^2 * nu(boxes of stopping cubes)
  double norm = 0.0;            // ||nu||_C
  double f_norm2 = 0.0;         // ||f||^2 in L^2(mu)
  double maximal_norm2 = 0.0;   // ||M1 M2 f||^2 in L^2(mu)
  /// lhs / (||nu||_C ||f||^2).
  [[nodiscard]] double constant() const;
};
[[nodiscard]] CarlesonEmbedding carleson_embedding(const DyadicGrid& grid,
                                                   const CarlesonMeasure& nu,
                                                   const GridFunction& f, const RealField& w);

struct WhitneyPartition {
  std::vector<ParabolicCube> carleson_boxes;  // Delta' x (0, l']
  std::vector<ParabolicCube> whitney_boxes;   // Delta'' x (l''/2, l'']
};
/// Splits the Carleson box of `root` into the boxes of the stopped cubes and
/// the Whitney boxes of every subcube not inside a stopped one. Throws
/// std::domain_error when `stopped` is not an antichain inside root.
[[nodiscard]] WhitneyPartition whitney_partition(const DyadicGrid& grid, const ParabolicCube& root,
                                                 const std::vector<ParabolicCube>& stopped);
/// Cell count check: every (node, generation) pair of the root's box is
/// covered exactly once.
[[nodiscard]] bool partition_is_exact(const DyadicGrid& grid, const ParabolicCube& root,
                                      const WhitneyPartition& part);

/// CSV columns: generation,cube,mass,mu,ratio (ratio of the Carleson box).
void write_carleson_csv(std::ostream& os, const DyadicGrid& grid, const CarlesonMeasure& nu,
                        const RealField& w);

}  // namespace kato
