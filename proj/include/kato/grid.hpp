#pragma once

#include <array>
#include <cmath>
#include <complex>
#include <functional>
#include <stdexcept>
#include <type_traits>

#include <Eigen/Dense>

namespace kato {

using cplx = std::complex<double>;
using Index = Eigen::Index;

template <class Scalar>
using Field = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
/// Nodal values, flattened as node = s + S*t with s the spatial index.
using GridFunction = Field<cplx>;
using RealField = Field<double>;
/// One column per spatial direction, rows indexed like GridFunction.
template <class Scalar>
using FieldMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
using VectorField = FieldMatrix<cplx>;

enum class MeasureKind { mu, mu_inverse, lebesgue };

/// Periodic space-time grid. Spatial axes carry Nx points of spacing
/// hx = Lx/Nx; the time axis carries Nt points of spacing ht = Lt/Nt.
struct GridSpec {
  int n = 1;
  int Nx = 8;
  int Nt = 4;
  double Lx = 1.0;
  double Lt = 1.0;

  [[nodiscard]] double hx() const { return Lx / Nx; }
  [[nodiscard]] double ht() const { return Lt / Nt; }
  [[nodiscard]] double cell_volume() const { return std::pow(hx(), n) * ht(); }
  [[nodiscard]] Index spatial_size() const { return n == 1 ? Nx : Index(Nx) * Nx; }
  [[nodiscard]] Index size() const { return spatial_size() * Nt; }
  /// log2 Nx and log4 Nt.
  [[nodiscard]] int space_levels() const;
  [[nodiscard]] int time_levels() const;
  /// Largest dyadic generation that tiles the grid.
  [[nodiscard]] int max_generation() const;

  /// Throws std::invalid_argument unless n in {1,2}, Nx = 2^p with p >= 3,
  /// Nt = 4^r with r >= 1 and both periods positive.
  void validate() const;

  [[nodiscard]] Index node(Index s, Index t) const { return s + spatial_size() * t; }
  [[nodiscard]] Index spatial_of(Index node) const { return node % spatial_size(); }
  [[nodiscard]] Index time_of(Index node) const { return node / spatial_size(); }
  /// Grid coordinate of spatial index s along axis (0 or 1).
  [[nodiscard]] int coord(Index s, int axis) const {
    return axis == 0 ? int(s % Nx) : int(s / Nx);
  }
  [[nodiscard]] Index spatial_index(int ix, int iy = 0) const {
    const int wx = ((ix % Nx) + Nx) % Nx;
    const int wy = n == 1 ? 0 : ((iy % Nx) + Nx) % Nx;
    return wx + Index(Nx) * wy;
  }
  /// Spatial neighbour of s shifted by `step` cells along `axis`.
  [[nodiscard]] Index shifted(Index s, int axis, int step) const {
    int c[2] = {coord(s, 0), n == 2 ? coord(s, 1) : 0};
    c[axis] += step;
    return spatial_index(c[0], c[1]);
  }

  bool operator==(const GridSpec&) const = default;
};

/// Angular frequency of discrete time mode k; k is read as a signed index
/// in [-Nt/2, Nt/2).
[[nodiscard]] double time_frequency(const GridSpec& spec, int k);
/// Signed spatial mode of DFT index k, in [-Nx/2, Nx/2).
[[nodiscard]] int signed_mode(int k, int N);

/// Density of the selected measure at spatial node s, times the cell volume.
[[nodiscard]] inline double node_mass(const GridSpec& spec, MeasureKind m,
                                      const RealField& w, Index s) {
  switch (m) {
    case MeasureKind::mu: return w[s] * spec.cell_volume();
    case MeasureKind::mu_inverse: return spec.cell_volume() / w[s];
    case MeasureKind::lebesgue: return spec.cell_volume();
  }
  return 0.0;
}

/// Neumaier compensated accumulator; order of add() calls is the only
/// source of variation, so fixed traversals give bit-stable sums.
template <class Scalar>
class CompensatedSum {
 public:
  void add(Scalar x) {
    if constexpr (std::is_same_v<Scalar, cplx>) {
      re_.add(x.real());
      im_.add(x.imag());
    } else {
      const Scalar t = sum_ + x;
      if (std::abs(sum_) >= std::abs(x))
        comp_ += (sum_ - t) + x;
      else
        comp_ += (x - t) + sum_;
      sum_ = t;
    }
  }
  [[nodiscard]] Scalar value() const {
    if constexpr (std::is_same_v<Scalar, cplx>)
      return {re_.value(), im_.value()};
    else
      return sum_ + comp_;
  }

 private:
  struct Empty {};
  Scalar sum_{};
  Scalar comp_{};
  std::conditional_t<std::is_same_v<Scalar, cplx>, CompensatedSum<double>, Empty> re_{};
  std::conditional_t<std::is_same_v<Scalar, cplx>, CompensatedSum<double>, Empty> im_{};
};

namespace detail {
inline void check_rows(const GridSpec& spec, Index rows) {
  if (rows != spec.size()) throw std::invalid_argument("grid shape mismatch");
}
inline void check_weight(const GridSpec& spec, MeasureKind m, const RealField& w) {
  if (m != MeasureKind::lebesgue && w.size() != spec.spatial_size())
    throw std::invalid_argument("weight shape mismatch");
}
}  // namespace detail

/// Weighted Riemann sum of f * conj(g) over every node and every column.
/// Works for scalar fields and vector fields alike.
template <class D1, class D2>
[[nodiscard]] typename D1::Scalar inner(const GridSpec& spec, const Eigen::MatrixBase<D1>& f,
                                        const Eigen::MatrixBase<D2>& g, MeasureKind m,
                                        const RealField& w) {
  using Scalar = typename D1::Scalar;
  detail::check_rows(spec, f.rows());
  detail::check_rows(spec, g.rows());
  if (f.cols() != g.cols()) throw std::invalid_argument("field width mismatch");
  detail::check_weight(spec, m, w);
  const Index S = spec.spatial_size();
  CompensatedSum<Scalar> acc;
  for (Index c = 0; c < f.cols(); ++c)
    for (Index i = 0; i < f.rows(); ++i) {
      const double mass = node_mass(spec, m, w, i % S);
      if constexpr (Eigen::NumTraits<Scalar>::IsComplex)
        acc.add(f(i, c) * std::conj(g(i, c)) * mass);
      else
        acc.add(f(i, c) * g(i, c) * mass);
    }
  return acc.value();
}

/// Squared norm in the selected measure.
template <class D>
[[nodiscard]] double norm2(const GridSpec& spec, const Eigen::MatrixBase<D>& f, MeasureKind m,
                           const RealField& w) {
  detail::check_rows(spec, f.rows());
  detail::check_weight(spec, m, w);
  const Index S = spec.spatial_size();
  CompensatedSum<double> acc;
  for (Index c = 0; c < f.cols(); ++c)
    for (Index i = 0; i < f.rows(); ++i)
      acc.add(std::norm(f(i, c)) * node_mass(spec, m, w, i % S));
  return acc.value();
}

/// Periodic forward differences, one column per axis.
template <class D>
[[nodiscard]] FieldMatrix<typename D::Scalar> grad_x(const GridSpec& spec,
                                                     const Eigen::MatrixBase<D>& f) {
  detail::check_rows(spec, f.rows());
  const Index S = spec.spatial_size();
  const double inv_h = 1.0 / spec.hx();
  FieldMatrix<typename D::Scalar> out(f.rows(), spec.n);
  for (int axis = 0; axis < spec.n; ++axis)
    for (Index s = 0; s < S; ++s) {
      const Index fwd = spec.shifted(s, axis, 1);
      for (Index t = 0; t < spec.Nt; ++t)
        out(s + S * t, axis) = (f(fwd + S * t) - f(s + S * t)) * inv_h;
    }
  return out;
}

/// w^{-1} times the backward difference of w*F, summed over axes. This is
/// the exact negative mu-adjoint of grad_x.
template <class D>
[[nodiscard]] Field<typename D::Scalar> wdiv(const GridSpec& spec, const Eigen::MatrixBase<D>& F,
                                             const RealField& w) {
  detail::check_rows(spec, F.rows());
  if (F.cols() != spec.n) throw std::invalid_argument("vector field width mismatch");
  const Index S = spec.spatial_size();
  if (w.size() != S) throw std::invalid_argument("weight shape mismatch");
  if ((w.array() <= 0.0).any()) throw std::domain_error("weight must be positive");
  const double inv_h = 1.0 / spec.hx();
  Field<typename D::Scalar> out = Field<typename D::Scalar>::Zero(F.rows());
  for (int axis = 0; axis < spec.n; ++axis)
    for (Index s = 0; s < S; ++s) {
      const Index back = spec.shifted(s, axis, -1);
      const double scale = inv_h / w[s];
      for (Index t = 0; t < spec.Nt; ++t)
        out(s + S * t) += (w[s] * F(s + S * t, axis) - w[back] * F(back + S * t, axis)) * scale;
    }
  return out;
}

using TimeSymbol = std::function<cplx(double tau)>;

[[nodiscard]] inline cplx symbol_d_half(double tau) { return std::sqrt(std::abs(tau)); }
[[nodiscard]] inline cplx symbol_hilbert(double tau) {
  return tau > 0 ? cplx(0, 1) : (tau < 0 ? cplx(0, -1) : cplx(0, 0));
}
[[nodiscard]] inline cplx symbol_d_t(double tau) { return {0.0, tau}; }

/// Nt x Nt circulant matrix of the multiplier: inverse DFT * diag * DFT.
[[nodiscard]] Eigen::MatrixXcd time_multiplier_matrix(const GridSpec& spec,
                                                      const TimeSymbol& symbol);

/// Applies an Nt x Nt time operator at every spatial node.
template <class D>
[[nodiscard]] GridFunction apply_time_matrix(const GridSpec& spec, const Eigen::MatrixXcd& M,
                                             const Eigen::MatrixBase<D>& f) {
  detail::check_rows(spec, f.rows());
  const GridFunction fc = f.template cast<cplx>();
  const Eigen::Map<const Eigen::MatrixXcd> X(fc.data(), spec.spatial_size(), spec.Nt);
  GridFunction out(spec.size());
  Eigen::Map<Eigen::MatrixXcd> Y(out.data(), spec.spatial_size(), spec.Nt);
  Y.noalias() = X * M.transpose();
  return out;
}

[[nodiscard]] GridFunction time_multiplier(const GridSpec& spec, const GridFunction& f,
                                           const TimeSymbol& symbol);
[[nodiscard]] GridFunction d_half(const GridSpec& spec, const GridFunction& f);
[[nodiscard]] GridFunction hilbert(const GridSpec& spec, const GridFunction& f);
[[nodiscard]] GridFunction d_t(const GridSpec& spec, const GridFunction& f);

/// ||grad_x f||^2 + ||D_half f||^2 in L^2(mu).
[[nodiscard]] double parabolic_gradient_norm2(const GridSpec& spec, const RealField& w,
                                              const GridFunction& f);

/// Spatial position of grid coordinate along one axis.
[[nodiscard]] inline double position(const GridSpec& spec, int c) { return c * spec.hx(); }
/// Periodic distance between spatial indices (Euclidean over axes).
[[nodiscard]] double periodic_distance(const GridSpec& spec, Index s1, Index s2);
/// Periodic parabolic distance max(|x - y|, |t - s|^{1/2}) between nodes.
[[nodiscard]] double parabolic_distance(const GridSpec& spec, Index a, Index b);

/// Evaluates fn(x, y, t) at every node; y is 0 when n = 1.
[[nodiscard]] GridFunction sample(const GridSpec& spec,
                                  const std::function<cplx(double, double, double)>& fn);

}  // namespace kato
