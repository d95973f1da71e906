#include "kato/grid.hpp"

#include <algorithm>
#include <numbers>

namespace kato {

namespace {
int exact_log(int value, int base) {
  int level = 0;
  while (value > 1 && value % base == 0) {
    value /= base;
    ++level;
  }
  return value == 1 ? level : -1;
}
}  // namespace

int GridSpec::space_levels() const { return exact_log(Nx, 2); }
int GridSpec::time_levels() const { return exact_log(Nt, 4); }
int GridSpec::max_generation() const { return std::min(space_levels(), time_levels()); }

void GridSpec::validate() const {
  if (n != 1 && n != 2) throw std::invalid_argument("spatial dimension must be 1 or 2");
  if (space_levels() < 3) throw std::invalid_argument("Nx must be 2^p with p >= 3");
  if (time_levels() < 1) throw std::invalid_argument("Nt must be 4^r with r >= 1");
  if (!(Lx > 0.0) || !(Lt > 0.0)) throw std::invalid_argument("periods must be positive");
}

int signed_mode(int k, int N) {
  k = ((k % N) + N) % N;
  return k < N / 2 ? k : k - N;
}

double time_frequency(const GridSpec& spec, int k) {
  return 2.0 * std::numbers::pi * signed_mode(k, spec.Nt) / spec.Lt;
}

Eigen::MatrixXcd time_multiplier_matrix(const GridSpec& spec, const TimeSymbol& symbol) {
  const int N = spec.Nt;
  Eigen::VectorXcd m(N);
  for (int k = 0; k < N; ++k) m[k] = symbol(time_frequency(spec, k));
  // Circulant column c(d) = (1/N) sum_k m_k e^{2 pi i k d / N}; the phase
  // index k*d is reduced mod N before evaluating the exponential.
  Eigen::VectorXcd c(N);
  for (int d = 0; d < N; ++d) {
    CompensatedSum<cplx> acc;
    for (int k = 0; k < N; ++k) {
      const double angle = 2.0 * std::numbers::pi * double((long(k) * d) % N) / N;
      acc.add(m[k] * cplx(std::cos(angle), std::sin(angle)));
    }
    c[d] = acc.value() / double(N);
  }
  Eigen::MatrixXcd M(N, N);
  for (int t = 0; t < N; ++t)
    for (int s = 0; s < N; ++s) M(t, s) = c[((t - s) % N + N) % N];
  return M;
}

GridFunction time_multiplier(const GridSpec& spec, const GridFunction& f,
                             const TimeSymbol& symbol) {
  return apply_time_matrix(spec, time_multiplier_matrix(spec, symbol), f);
}

GridFunction d_half(const GridSpec& spec, const GridFunction& f) {
  return time_multiplier(spec, f, symbol_d_half);
}
GridFunction hilbert(const GridSpec& spec, const GridFunction& f) {
  return time_multiplier(spec, f, symbol_hilbert);
}
GridFunction d_t(const GridSpec& spec, const GridFunction& f) {
  return time_multiplier(spec, f, symbol_d_t);
}

double parabolic_gradient_norm2(const GridSpec& spec, const RealField& w, const GridFunction& f) {
  return norm2(spec, grad_x(spec, f), MeasureKind::mu, w) +
         norm2(spec, d_half(spec, f), MeasureKind::mu, w);
}

double periodic_distance(const GridSpec& spec, Index s1, Index s2) {
  double sq = 0.0;
  for (int axis = 0; axis < spec.n; ++axis) {
    int d = std::abs(spec.coord(s1, axis) - spec.coord(s2, axis));
    d = std::min(d, spec.Nx - d);
    sq += std::pow(d * spec.hx(), 2);
  }
  return std::sqrt(sq);
}

double parabolic_distance(const GridSpec& spec, Index a, Index b) {
  const double dx = periodic_distance(spec, spec.spatial_of(a), spec.spatial_of(b));
  int dt = int(std::abs(spec.time_of(a) - spec.time_of(b)));
  dt = std::min(dt, spec.Nt - dt);
  return std::max(dx, std::sqrt(dt * spec.ht()));
}

GridFunction sample(const GridSpec& spec, const std::function<cplx(double, double, double)>& fn) {
  GridFunction out(spec.size());
  const Index S = spec.spatial_size();
  for (Index t = 0; t < spec.Nt; ++t)
    for (Index s = 0; s < S; ++s) {
      const double x = position(spec, spec.coord(s, 0));
      const double y = spec.n == 2 ? position(spec, spec.coord(s, 1)) : 0.0;
      out[s + S * t] = fn(x, y, t * spec.ht());
    }
  return out;
}

}  // namespace kato
