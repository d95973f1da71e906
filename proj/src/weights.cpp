#include "kato/weights.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>

#include "kato/rng.hpp"

namespace kato {

namespace {

/// Prefix sums over the doubled periodic array, giving O(1) sums over
/// periodic cubes of any side up to Nx.
class PeriodicSums {
 public:
  PeriodicSums(const GridSpec& spec, const RealField& v) : n_(spec.n), N_(spec.Nx) {
    const int M = 2 * N_ + 1;
    if (n_ == 1) {
      P_.assign(M, 0.0);
      for (int i = 0; i < 2 * N_; ++i) P_[i + 1] = P_[i] + v[i % N_];
    } else {
      P_.assign(std::size_t(M) * M, 0.0);
      for (int j = 0; j < 2 * N_; ++j)
        for (int i = 0; i < 2 * N_; ++i)
          at(i + 1, j + 1) = v[(i % N_) + N_ * (j % N_)] + at(i, j + 1) + at(i + 1, j) - at(i, j);
    }
  }

  [[nodiscard]] double cube(int cx, int cy, int m) const {
    cx = ((cx % N_) + N_) % N_;
    cy = ((cy % N_) + N_) % N_;
    if (n_ == 1) return P_[cx + m] - P_[cx];
    return at(cx + m, cy + m) - at(cx, cy + m) - at(cx + m, cy) + at(cx, cy);
  }

 private:
  double& at(int i, int j) { return P_[std::size_t(j) * (2 * N_ + 1) + i]; }
  [[nodiscard]] double at(int i, int j) const { return P_[std::size_t(j) * (2 * N_ + 1) + i]; }

  int n_;
  int N_;
  std::vector<double> P_;
};

int positions(const GridSpec& spec, int axis) { return axis < spec.n ? spec.Nx : 1; }

double cube_volume(const GridSpec& spec, int m) { return std::pow(double(m), spec.n); }

}  // namespace

double cube_mass(const GridSpec& spec, const RealField& w, int cx, int cy, int m) {
  double total = 0.0;
  for (Index s : cube_cells(spec, cx, cy, m)) total += w[s];
  return total;
}

std::vector<Index> cube_cells(const GridSpec& spec, int cx, int cy, int m) {
  std::vector<Index> cells;
  const int my = spec.n == 2 ? m : 1;
  cells.reserve(std::size_t(m) * my);
  for (int j = 0; j < my; ++j)
    for (int i = 0; i < m; ++i) cells.push_back(spec.spatial_index(cx + i, cy + j));
  return cells;
}

double a2_constant(const GridSpec& spec, const RealField& w) {
  const PeriodicSums sw(spec, w);
  const PeriodicSums sinv(spec, w.cwiseInverse());
  double best = 0.0;
  for (int m = 1; m <= spec.Nx; ++m) {
    const double vol = cube_volume(spec, m);
    for (int cy = 0; cy < positions(spec, 1); ++cy)
      for (int cx = 0; cx < positions(spec, 0); ++cx)
        best = std::max(best, (sw.cube(cx, cy, m) / vol) * (sinv.cube(cx, cy, m) / vol));
  }
  return best;
}

double doubling_constant(const GridSpec& spec, const RealField& w) {
  const PeriodicSums sw(spec, w);
  double best = 0.0;
  for (int m = 1; m <= spec.Nx; ++m) {
    const int big = std::min(2 * m, spec.Nx);
    const int shift = m / 2;
    for (int cy = 0; cy < positions(spec, 1); ++cy)
      for (int cx = 0; cx < positions(spec, 0); ++cx) {
        const int by = spec.n == 2 ? cy - shift : 0;
        best = std::max(best, sw.cube(cx - shift, by, big) / sw.cube(cx, cy, m));
      }
  }
  return best;
}

std::vector<int> ainf_cube_sides(const GridSpec& spec) {
  std::vector<int> sides;
  const int cap = spec.n == 1 ? spec.Nx : std::min(spec.Nx, 16);
  for (int m = 1; m <= cap; ++m) sides.push_back(m);
  if (cap < spec.Nx) sides.push_back(spec.Nx);
  return sides;
}

AInfExponents fit_ainf(const GridSpec& spec, const RealField& w) {
  // For each (side, k) keep the extremal weight fractions over positions.
  struct Extremes {
    double r;
    double lo;
    double hi;
  };
  std::vector<Extremes> table;
  for (int m : ainf_cube_sides(spec)) {
    const int count = int(cube_volume(spec, m));
    std::vector<double> lo(count + 1, 2.0), hi(count + 1, -1.0);
    const int py = m == spec.Nx ? 1 : positions(spec, 1);
    const int px = m == spec.Nx ? 1 : positions(spec, 0);
    for (int cy = 0; cy < py; ++cy)
      for (int cx = 0; cx < px; ++cx) {
        std::vector<double> vals;
        vals.reserve(count);
        for (Index s : cube_cells(spec, cx, cy, m)) vals.push_back(w[s]);
        std::sort(vals.begin(), vals.end());
        double total = 0.0;
        for (double v : vals) total += v;
        double light = 0.0, heavy = 0.0;
        for (int k = 1; k <= count; ++k) {
          light += vals[k - 1];
          heavy += vals[count - k];
          lo[k] = std::min(lo[k], light / total);
          hi[k] = std::max(hi[k], heavy / total);
        }
      }
    for (int k = 1; k <= count; ++k) table.push_back({double(k) / count, lo[k], hi[k]});
  }
  AInfExponents best{0.5, INFINITY};
  for (int step = 1; step < 200; ++step) {
    const double eta = step / 200.0;
    double beta = 1.0;
    for (const auto& e : table) {
      beta = std::max(beta, e.hi / std::pow(e.r, 2.0 * eta));
      beta = std::max(beta, std::pow(e.r, 1.0 / (2.0 * eta)) / e.lo);
    }
    // Ties go to the larger exponent.
    if (beta <= best.beta * (1.0 + 1e-12)) best = {eta, beta};
  }
  return best;
}

bool ainf_sandwich_holds(const AInfExponents& ex, double measure_ratio, double weight_ratio,
                         double rel_tol) {
  const double lower = std::pow(measure_ratio, 1.0 / (2.0 * ex.eta)) / ex.beta;
  const double upper = ex.beta * std::pow(measure_ratio, 2.0 * ex.eta);
  return weight_ratio >= lower * (1.0 - rel_tol) && weight_ratio <= upper * (1.0 + rel_tol);
}

Weight make_weight(const GridSpec& spec, RealField values) {
  spec.validate();
  if (values.size() != spec.spatial_size()) throw std::invalid_argument("weight shape mismatch");
  if (!values.allFinite() || (values.array() <= 0.0).any())
    throw std::domain_error("weight values must be positive and finite");
  Weight w{spec, std::move(values), 1.0, 1.0, {}};
  w.a2 = a2_constant(spec, w.values);
  w.doubling = doubling_constant(spec, w.values);
  w.ainf = fit_ainf(spec, w.values);
  return w;
}

Weight make_weight(const WeightParams& params, const GridSpec& spec) {
  spec.validate();
  const Index S = spec.spatial_size();
  RealField v = RealField::Ones(S);
  switch (params.kind) {
    case WeightKind::unit:
      break;
    case WeightKind::power: {
      const double a = params.exponent;
      const double limit = spec.n - 0.05;
      if (!(a > -limit && a < limit)) throw std::domain_error("power exponent outside A2 range");
      for (Index s = 0; s < S; ++s)
        v[s] = std::pow(std::max(periodic_distance(spec, s, 0), spec.hx()), a);
      break;
    }
    case WeightKind::dyadic_random: {
      const double amp = params.amplitude;
      if (!(amp >= 0.0 && amp <= 0.5)) throw std::domain_error("amplitude outside [0, 0.5]");
      // log w is a dyadic martingale: one increment per dyadic cube per scale.
      RealField logw = RealField::Zero(S);
      const CounterRng root(params.seed, 0x77656967ULL);
      for (int level = 0; level < spec.space_levels(); ++level) {
        const int side = 1 << level;
        const int cubes = spec.Nx / side;
        const int cubes_y = spec.n == 2 ? cubes : 1;
        CounterRng rng = root.substream(std::uint64_t(level));
        std::vector<double> inc(std::size_t(cubes) * cubes_y);
        for (auto& x : inc) x = rng.uniform(-amp, amp);
        for (Index s = 0; s < S; ++s) {
          const int qx = spec.coord(s, 0) / side;
          const int qy = spec.n == 2 ? spec.coord(s, 1) / side : 0;
          logw[s] += inc[std::size_t(qy) * cubes + qx];
        }
      }
      v = logw.array().exp();
      break;
    }
  }
  return make_weight(spec, std::move(v));
}

void write_weight_csv(std::ostream& os, const RealField& w) {
  os << "index,value\n";
  os.precision(17);
  for (Index i = 0; i < w.size(); ++i) os << i << ',' << w[i] << '\n';
}

RealField read_weight_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line.rfind("index,value", 0) != 0)
    throw std::invalid_argument("weight CSV must start with header index,value");
  std::vector<std::pair<long, double>> rows;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) throw std::invalid_argument("malformed weight CSV row");
    rows.emplace_back(std::stol(line.substr(0, comma)), std::stod(line.substr(comma + 1)));
  }
  RealField w(Index(rows.size()));
  for (const auto& [i, value] : rows) {
    if (i < 0 || i >= w.size()) throw std::invalid_argument("weight CSV index out of range");
    w[i] = value;
  }
  return w;
}

}  // namespace kato
