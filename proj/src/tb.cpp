#include "kato/tb.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numbers>
#include <stdexcept>

#include "kato/parallel.hpp"

namespace kato {

namespace {

double mu_norm2(const GridSpec& spec, const RealField& w, const GridFunction& f) {
  return norm2(spec, f, MeasureKind::mu, w);
}

/// Sum of |f|^2 w dx dt over a node list.
double local_norm2(const GridSpec& spec, const RealField& w, const GridFunction& f,
                   const std::vector<Index>& nodes) {
  const Index S = spec.spatial_size();
  CompensatedSum<double> acc;
  for (Index k : nodes) acc.add(std::norm(f[k]) * w[k % S]);
  return acc.value() * spec.cell_volume();
}

double sup_norm(const VectorField& b) {
  double m = 0.0;
  for (Index i = 0; i < b.rows(); ++i) m = std::max(m, b.row(i).norm());
  return m;
}

/// Columns w^{-1} A e_j, j < n.
VectorField coefficient_columns(const ParabolicOperator& op, int j) {
  const GridSpec& spec = op.spec();
  VectorField e = VectorField::Zero(spec.size(), spec.n);
  e.col(j).setOnes();
  return op.apply_coefficients(e);
}

VectorField principal_part_with(const ParabolicOperator& op, const ResolventSolver& solver,
                                double lambda) {
  const GridSpec& spec = op.spec();
  Eigen::MatrixXcd rhs(spec.size(), spec.n);
  for (int j = 0; j < spec.n; ++j) rhs.col(j) = wdiv(spec, coefficient_columns(op, j), op.w());
  return lambda * solver.solve(rhs);
}

/// (U w^{-1}A) . G row by row.
GridFunction contract(const VectorField& U, const VectorField& G) {
  GridFunction out = GridFunction::Zero(U.rows());
  for (Index j = 0; j < U.cols(); ++j) out += U.col(j).cwiseProduct(G.col(j));
  return out;
}

/// Axis window [start, start + length) of the dilate, or the full axis.
struct Window {
  int start = 0;
  int length = 0;
  bool clamped = false;
};

Window dilate_window(int q, int side, int factor, int period) {
  const long length = long(side) * factor;
  if (length > period) return {0, period, true};
  // Floor division keeps the generation-0 offset an integer.
  const long shift = (long(factor - 1) * side) / 2;
  return {int(long(q) * side - shift), int(length), false};
}

}  // namespace

// ---------------------------------------------------------------------------
// Principal part

GridFunction u_lambda(ResolventCache& cache, double lambda, const VectorField& F) {
  const ParabolicOperator& op = cache.op();
  return lambda * cache.E(lambda, wdiv(op.spec(), F, op.w()));
}

VectorField principal_part(ResolventCache& cache, double lambda) {
  return principal_part_with(cache.op(), *cache.get(lambda), lambda);
}

GridFunction r_lambda(ResolventCache& cache, const DyadicGrid& grid, double lambda,
                      const VectorField& F) {
  const ParabolicOperator& op = cache.op();
  detail::check_rows(op.spec(), F.rows());
  if (F.cols() != op.spec().n) throw std::invalid_argument("vector field width mismatch");
  const GridFunction whole = u_lambda(cache, lambda, op.apply_coefficients(F));
  const VectorField avg = average_field(grid, F, grid.generation_for(lambda));
  return whole - contract(principal_part(cache, lambda), avg);
}

double principal_ratio(ResolventCache& cache, const DyadicGrid& grid, double lambda,
                       const VectorField& F) {
  const GridSpec& spec = grid.spec();
  const RealField& w = cache.op().w();
  const double num = std::sqrt(mu_norm2(spec, w, r_lambda(cache, grid, lambda, F)));
  double gx = 0.0, gt = 0.0;
  for (Index c = 0; c < F.cols(); ++c) {
    const GridFunction col = F.col(c);
    gx += norm2(spec, grad_x(spec, col), MeasureKind::mu, w);
    gt += mu_norm2(spec, w, d_t(spec, col));
  }
  const double den = lambda * std::sqrt(gx) + lambda * lambda * std::sqrt(gt);
  return den > 0.0 ? num / den : 0.0;
}

double bounded_product_ratio(ResolventCache& cache, const DyadicGrid& grid, double lambda,
                             const VectorField& b, const GridFunction& f) {
  const GridSpec& spec = grid.spec();
  const RealField& w = cache.op().w();
  const GridFunction Ub = u_lambda(cache, lambda, b);
  const GridFunction Af = average(grid, f, lambda);
  const double den = sup_norm(b) * std::sqrt(mu_norm2(spec, w, f));
  return den > 0.0 ? std::sqrt(mu_norm2(spec, w, Ub.cwiseProduct(Af))) / den : 0.0;
}

std::vector<Index> dilate_nodes(const DyadicGrid& grid, const ParabolicCube& c, int m,
                                bool* clamped) {
  const GridSpec& spec = grid.spec();
  if (m < 0) throw std::invalid_argument("dilation exponent must be nonnegative");
  const Window wx = dilate_window(c.qx, grid.cells_x(c.gen), 1 << m, spec.Nx);
  const Window wy = spec.n == 2 ? dilate_window(c.qy, grid.cells_x(c.gen), 1 << m, spec.Nx)
                                : Window{0, 1, false};
  const Window wt = m > 15 ? Window{0, spec.Nt, true}
                           : dilate_window(c.qt, grid.cells_t(c.gen), 1 << (2 * m), spec.Nt);
  if (clamped) *clamped = wx.clamped || wy.clamped || wt.clamped;
  std::vector<Index> out;
  out.reserve(std::size_t(wx.length) * wy.length * wt.length);
  for (int t = 0; t < wt.length; ++t) {
    const Index tt = ((wt.start + t) % spec.Nt + spec.Nt) % spec.Nt;
    for (int y = 0; y < wy.length; ++y)
      for (int x = 0; x < wx.length; ++x)
        out.push_back(spec.node(spec.spatial_index(wx.start + x, wy.start + y), tt));
  }
  return out;
}

std::vector<double> expansion_profile(ResolventCache& cache, const DyadicGrid& grid, double lambda,
                                      const VectorField& b, const ParabolicCube& cube) {
  const GridSpec& spec = grid.spec();
  const RealField& w = cache.op().w();
  const std::vector<Index> inside = grid.nodes(cube);
  const double scale = std::sqrt(grid.mu(cube, w)) * sup_norm(b);
  if (!(scale > 0.0)) throw std::domain_error("expansion needs a nonzero field");
  std::vector<double> out;
  for (int k = 0;; ++k) {
    const std::vector<Index> region = dilate_nodes(grid, cube, k);
    const bool covers = Index(region.size()) == spec.size();
    VectorField bk = VectorField::Zero(b.rows(), b.cols());
    for (Index node : region) bk.row(node) = b.row(node);
    const GridFunction U = u_lambda(cache, lambda, bk);
    out.push_back(std::sqrt(local_norm2(spec, w, U, inside)) / scale);
    if (covers) break;
  }
  return out;
}

PoincareRatio poincare_ratio(const DyadicGrid& grid, const RealField& w, const GridFunction& f,
                             const ParabolicCube& cube, int k) {
  const GridSpec& spec = grid.spec();
  detail::check_rows(spec, f.rows());
  if (k < 0) throw std::invalid_argument("annulus index must be nonnegative");
  PoincareRatio out;
  const std::vector<Index> inside = grid.nodes(cube);
  CompensatedSum<cplx> mean;
  for (Index node : inside) mean.add(f[node]);
  const cplx avg = mean.value() / double(inside.size());

  const std::vector<Index> outer = dilate_nodes(grid, cube, k + 1, &out.clamped);
  std::vector<char> excluded(std::size_t(spec.size()), 0);
  if (k >= 1)
    for (Index node : dilate_nodes(grid, cube, k)) excluded[std::size_t(node)] = 1;

  const Index S = spec.spatial_size();
  const double l2 = std::pow(grid.side(cube.gen), 2) * std::pow(4.0, k);
  const double T = double(grid.cells_t(cube.gen)) * spec.ht();
  const double T2 = T * T * std::pow(16.0, k);
  const VectorField G = grad_x(spec, f);
  const GridFunction Dt = d_t(spec, f);
  CompensatedSum<double> lhs, rhs;
  for (Index node : outer) {
    const double mass = w[node % S];
    if (!excluded[std::size_t(node)]) lhs.add(std::norm(f[node] - avg) * mass);
    rhs.add((l2 * G.row(node).squaredNorm() + T2 * std::norm(Dt[node])) * mass);
  }
  out.lhs = lhs.value() * spec.cell_volume();
  out.rhs = rhs.value() * spec.cell_volume();
  if (out.rhs > 0.0)
    out.ratio = out.lhs / ((k + 1) * out.rhs);
  else
    out.ratio = out.lhs > 0.0 ? std::numeric_limits<double>::infinity() : 0.0;
  return out;
}

// ---------------------------------------------------------------------------
// Cones

cplx Cone::project(const cplx* u) const {
  cplx p = 0.0;
  for (Index i = 0; i < zeta.size(); ++i) p += u[i] * std::conj(zeta[i]);
  return p;
}

bool Cone::contains(const cplx* u) const {
  const cplx p = project(u);
  double off = 0.0;
  for (Index i = 0; i < zeta.size(); ++i) off += std::norm(u[i] - p * zeta[i]);
  return std::sqrt(off) <= epsilon * std::abs(p) * (1.0 + 1e-12) + 1e-300;
}

bool Cone::contains(const cplx* u, ConeMode mode) const {
  if (!contains(u)) return false;
  if (mode == ConeMode::literal) return true;
  return std::abs(std::arg(project(u))) <= std::numbers::pi / 8.0 * (1.0 + 1e-12);
}

ConeSet ConeSet::make(int n, double epsilon, ConeMode mode) {
  if (n != 1 && n != 2) throw std::invalid_argument("cones are defined for n in {1, 2}");
  if (!(epsilon > 0.0 && epsilon < 1.0)) throw std::domain_error("aperture must lie in (0, 1)");
  ConeSet set;
  set.n_ = n;
  set.epsilon_ = epsilon;
  set.mode_ = mode;

  std::vector<Eigen::VectorXcd> directions;
  if (n == 1) {
    directions.push_back(Eigen::VectorXcd::Constant(1, 1.0));
  } else {
    // Complex lines of C^2 form a sphere; the angle between lines is half the
    // sphere angle. Rings spaced g apart with arcs of at most g keep every
    // point within g of a grid point, so tan(g/2) <= epsilon suffices.
    const double target = 2.0 * std::atan(epsilon);
    const int rings = int(std::ceil(std::numbers::pi / target));
    const double g = std::numbers::pi / rings;
    for (int i = 0; i <= rings; ++i) {
      const double beta = i * g;
      const int count =
          (i == 0 || i == rings)
              ? 1
              : int(std::ceil(2.0 * std::numbers::pi * std::min(1.0, std::sin(beta) + g / 2) / g));
      for (int k = 0; k < count; ++k) {
        const double phi = 2.0 * std::numbers::pi * k / count;
        Eigen::VectorXcd d(2);
        d << std::cos(beta / 2), std::polar(std::sin(beta / 2), phi);
        directions.push_back(d);
      }
    }
  }
  for (const auto& d : directions) {
    if (mode == ConeMode::literal) {
      set.cones_.push_back({d, epsilon});
      continue;
    }
    for (int p = 0; p < phases; ++p)
      set.cones_.push_back({d * std::polar(1.0, 2.0 * std::numbers::pi * p / phases), epsilon});
  }
  return set;
}

int ConeSet::first_match(const cplx* u) const {
  for (int i = 0; i < size(); ++i)
    if (cones_[std::size_t(i)].contains(u, mode_)) return i;
  return -1;
}

int ConeSet::classify(const cplx* u) const {
  if (const int i = first_match(u); i >= 0) return i;
  int best = 0;
  double score = -std::numeric_limits<double>::infinity();
  for (int i = 0; i < size(); ++i) {
    const double s = cones_[std::size_t(i)].project(u).real();
    if (s > score) {
      score = s;
      best = i;
    }
  }
  return best;
}

double ConeSet::uncovered_fraction(int samples, CounterRng rng) const {
  if (samples <= 0) return 0.0;
  int missed = 0;
  std::vector<cplx> u(static_cast<std::size_t>(n_));
  for (int s = 0; s < samples; ++s) {
    for (auto& z : u) z = rng.complex_normal();
    if (first_match(u.data()) < 0) ++missed;
  }
  return double(missed) / samples;
}

// ---------------------------------------------------------------------------
// Test functions

double plateau(double s, double inner, double outer) {
  const double a = std::abs(s);
  if (a <= inner) return 1.0;
  if (a >= outer) return 0.0;
  const double u = (outer - a) / (outer - inner);
  const double p = std::exp(-1.0 / u), q = std::exp(-1.0 / (1.0 - u));
  return p / (p + q);
}

bool test_function_fits(const DyadicGrid& grid, const ParabolicCube& cube) {
  const GridSpec& spec = grid.spec();
  return 2L * grid.cells_x(cube.gen) <= spec.Nx && 4L * grid.cells_t(cube.gen) <= spec.Nt;
}

TestFunction build_test_function(ResolventCache& cache, const DyadicGrid& grid,
                                 const ParabolicCube& cube, const Eigen::VectorXcd& zeta,
                                 double epsilon) {
  const ParabolicOperator& op = cache.op();
  const GridSpec& spec = grid.spec();
  if (!(spec == op.spec())) throw std::invalid_argument("grid and operator disagree");
  if (zeta.size() != spec.n || std::abs(zeta.norm() - 1.0) > 1e-12)
    throw std::domain_error("direction must be a unit vector in C^n");
  if (!(epsilon > 0.0 && epsilon <= 0.25)) throw std::domain_error("epsilon must lie in (0, 1/4]");
  if (!test_function_fits(grid, cube)) throw std::domain_error("cutoff support exceeds the torus");

  TestFunction tf;
  tf.cube = cube;
  tf.zeta = zeta;
  tf.epsilon = epsilon;
  const int sx = grid.cells_x(cube.gen), st = grid.cells_t(cube.gen);
  const double cx = cube.qx * double(sx) + 0.5 * sx;
  const double cy = cube.qy * double(sx) + 0.5 * sx;
  const double ct = cube.qt * double(st) + 0.5 * st;
  const Index S = spec.spatial_size();
  tf.cutoff.resize(spec.size());
  tf.profile.resize(spec.size());
  for (Index s = 0; s < S; ++s) {
    const double dx = std::remainder(spec.coord(s, 0) - cx, double(spec.Nx));
    const double dy = spec.n == 2 ? std::remainder(spec.coord(s, 1) - cy, double(spec.Nx)) : 0.0;
    double chi = plateau(dx / sx, 0.5, 1.0);
    cplx phase = dx * spec.hx() * std::conj(zeta[0]);
    if (spec.n == 2) {
      chi *= plateau(dy / sx, 0.5, 1.0);
      phase += dy * spec.hx() * std::conj(zeta[1]);
    }
    for (Index t = 0; t < spec.Nt; ++t) {
      const double dt = std::remainder(double(t) - ct, double(spec.Nt));
      const double c = chi * plateau(dt / (2.0 * st), 0.25, 1.0);
      tf.cutoff[s + S * t] = c;
      tf.profile[s + S * t] = c * phase;
    }
  }
  const double side = grid.side(cube.gen);
  const double scale = epsilon * side;
  tf.f = cache.E(scale, tf.profile);
  tf.gradient = grad_x(spec, tf.f);

  const RealField& w = op.w();
  LaaReport& r = tf.laa;
  const GridFunction diff = tf.f - tf.profile;
  r.diff_norm2 = mu_norm2(spec, w, diff);
  r.mu_cube = grid.mu(cube, w);
  r.side = side;
  r.i_const = r.diff_norm2 / (scale * scale * r.mu_cube);
  r.ii_const = parabolic_gradient_norm2(spec, w, diff) / r.mu_cube;
  r.iii_const = parabolic_gradient_norm2(spec, w, tf.f) / r.mu_cube;
  CompensatedSum<cplx> defect;
  CompensatedSum<double> size;
  const std::vector<Index> inside = grid.nodes(cube);
  for (Index k : inside) {
    cplx dot = 0.0;
    for (int i = 0; i < spec.n; ++i) dot += tf.gradient(k, i) * zeta[i];
    defect.add(1.0 - dot);
    size.add(tf.gradient.row(k).norm());
  }
  r.mean_defect = std::abs(defect.value()) / double(inside.size());
  r.mean_gradient = size.value() / double(inside.size());
  const double eta = op.weight().ainf.eta;
  r.defect_scale = std::pow(epsilon, eta / (eta + 1.0));
  return tf;
}

double laa_slope(const std::vector<double>& epsilons, const std::vector<double>& diff_norm2) {
  if (epsilons.size() != diff_norm2.size() || epsilons.size() < 2)
    throw std::invalid_argument("slope needs matching samples, at least two");
  double mx = 0, my = 0;
  const double m = double(epsilons.size());
  for (std::size_t i = 0; i < epsilons.size(); ++i) {
    mx += std::log(epsilons[i]) / m;
    my += std::log(diff_norm2[i]) / m;
  }
  double sxy = 0, sxx = 0;
  for (std::size_t i = 0; i < epsilons.size(); ++i) {
    const double dx = std::log(epsilons[i]) - mx;
    sxy += dx * (std::log(diff_norm2[i]) - my);
    sxx += dx * dx;
  }
  return sxy / sxx;
}

// ---------------------------------------------------------------------------
// Stopping time

StoppingResult stopping_time(const DyadicGrid& grid, const RealField& w, const ParabolicCube& root,
                             const VectorField& G, const Eigen::VectorXcd& zeta, double epsilon) {
  const GridSpec& spec = grid.spec();
  detail::check_rows(spec, G.rows());
  if (G.cols() != spec.n || zeta.size() != spec.n)
    throw std::invalid_argument("gradient and direction must have n components");
  const double threshold = stop_gradient_threshold(epsilon);
  StoppingResult out;
  const Index S = spec.spatial_size();
  std::function<void(const ParabolicCube&)> visit = [&](const ParabolicCube& q) {
    const std::vector<Index> nodes = grid.nodes(q);
    CompensatedSum<double> re, size;
    Eigen::VectorXcd mean = Eigen::VectorXcd::Zero(spec.n);
    for (Index k : nodes) {
      cplx dot = 0.0;
      for (int i = 0; i < spec.n; ++i) {
        dot += G(k, i) * zeta[i];
        mean[i] += G(k, i);
      }
      re.add(dot.real());
      size.add(G.row(k).norm());
    }
    const double count = double(nodes.size());
    if (re.value() / count <= stop_real_threshold || size.value() / count >= threshold) {
      out.stopped.push_back(q);
      return;
    }
    out.remainder.push_back(q);
    out.remainder_mean.push_back(mean / count);
    for (const auto& ch : grid.children(q)) visit(ch);
  };
  visit(root);

  const std::vector<Index> all = grid.nodes(root);
  double cells = 0.0, mass = 0.0, total_mass = 0.0;
  for (Index k : all) total_mass += w[k % S];
  for (const auto& q : out.stopped)
    for (Index k : grid.nodes(q)) {
      cells += 1.0;
      mass += w[k % S];
    }
  out.measure_ratio = cells / double(all.size());
  out.mu_ratio = mass / total_mass;
  return out;
}

StoppingResult stopping_time(const DyadicGrid& grid, const RealField& w, const TestFunction& tf) {
  return stopping_time(grid, w, tf.cube, tf.gradient, tf.zeta, tf.epsilon);
}

std::optional<double> calibrate_epsilon(const std::vector<double>& epsilons,
                                        const std::vector<double>& worst_ratio, double ceiling) {
  if (epsilons.size() != worst_ratio.size()) throw std::invalid_argument("sweep size mismatch");
  std::optional<double> best;
  for (std::size_t i = 0; i < epsilons.size(); ++i)
    if (worst_ratio[i] <= ceiling && (!best || epsilons[i] > *best)) best = epsilons[i];
  return best;
}

// ---------------------------------------------------------------------------
// Main Carleson estimate

ShellQuadrature shell_quadrature(const DyadicGrid& grid, int per_octave, int sub_cell_shells) {
  if (per_octave < 1 || sub_cell_shells < 1)
    throw std::invalid_argument("shell quadrature needs at least one node and one sub-cell shell");
  ShellQuadrature q;
  const double hx = grid.spec().hx();
  for (int j = 1 - sub_cell_shells; j <= grid.top(); ++j) {
    const double lo = std::ldexp(hx, j - 1);
    for (int i = 0; i < per_octave; ++i) {
      q.nodes.push_back(lo * std::exp2((i + 0.5) / per_octave));
      q.weights.push_back(std::numbers::ln2 / per_octave);
      q.generation.push_back(std::max(j, 0));
    }
  }
  return q;
}

namespace {

struct PairWork {
  TbPair rep;
  GridFunction f;
  VectorField gradient;
  GridFunction Hf, dtf, divf;
  StoppingResult stop;
  std::vector<Index> inside;
};

/// Per-scale contributions of one pair.
struct PairSlot {
  bool active = false;
  double local_b = 0.0;   // int_Delta |(U w^{-1}A) . A grad f|^2 dmu
  double whole = 0.0;     // ||(lambda E H + (U w^{-1}A) A grad) f||^2
  double local_a = 0.0;   // int_Delta |lambda E H f|^2 dmu
  double residual = 0.0;
};

}  // namespace

CarlesonMainReport carleson_main(const ParabolicOperator& op, const CarlesonMainConfig& config) {
  const GridSpec& spec = op.spec();
  const RealField& w = op.w();
  const DyadicGrid grid(spec);
  const int J = grid.top();
  const Index N = spec.size(), S = spec.spatial_size();
  const double vol = spec.cell_volume();
  const ShellQuadrature shells = shell_quadrature(grid, config.per_octave, config.sub_cell_shells);
  const std::size_t L = shells.nodes.size();
  const ConeSet cones = ConeSet::make(spec.n, config.epsilon, config.mode);

  CarlesonMainReport rep;
  rep.lambdas = shells.nodes;

  // Pass 1: U_lambda w^{-1}A at every scale; factorizations are not kept.
  std::vector<VectorField> U(L);
  parallel_for(L, [&](std::size_t l) {
    const double lam = shells.nodes[l];
    const ResolventSolver solver(op, 1.0, lam * lam);
    U[l] = principal_part_with(op, solver, lam);
  });

  std::vector<std::vector<Index>> cube_of(std::size_t(J) + 1, std::vector<Index>(std::size_t(N)));
  for (int g = 0; g <= J; ++g)
    for (Index k = 0; k < N; ++k) cube_of[std::size_t(g)][std::size_t(k)] = grid.index(grid.containing(k, g));

  CarlesonMeasure total = CarlesonMeasure::zero(grid);
  std::vector<CarlesonMeasure> per_cone(std::size_t(cones.size()));
  rep.cone_mass.assign(std::size_t(cones.size()), 0.0);
  std::vector<std::vector<int>> cls(L, std::vector<int>(std::size_t(N)));
  std::vector<cplx> u(std::size_t(spec.n));
  for (std::size_t l = 0; l < L; ++l) {
    const int g = shells.generation[l];
    for (Index k = 0; k < N; ++k) {
      for (int i = 0; i < spec.n; ++i) u[std::size_t(i)] = U[l](k, i);
      const double m = shells.weights[l] * w[k % S] * vol * U[l].row(k).squaredNorm();
      const Index c = cube_of[std::size_t(g)][std::size_t(k)];
      total.mass[std::size_t(g)][std::size_t(c)] += m;
      int cone = cones.first_match(u.data());
      if (cone < 0) {
        cone = cones.classify(u.data());
        rep.uncovered_mass += m;
      }
      cls[l][std::size_t(k)] = cone;
      auto& nu = per_cone[std::size_t(cone)];
      if (nu.mass.empty()) nu = CarlesonMeasure::zero(grid);
      nu.mass[std::size_t(g)][std::size_t(c)] += m;
      rep.cone_mass[std::size_t(cone)] += m;
    }
  }
  rep.total_mass = total.total();

  const auto boxes = carleson_boxes(grid, total);
  rep.box_ratio.resize(std::size_t(J) + 1);
  for (int g = 0; g <= J; ++g) {
    rep.box_ratio[std::size_t(g)].resize(std::size_t(grid.cube_count(g)));
    for (Index c = 0; c < grid.cube_count(g); ++c) {
      const ParabolicCube q = grid.cube(g, c);
      const double r = boxes[std::size_t(g)][std::size_t(c)] / grid.mu(q, w);
      rep.box_ratio[std::size_t(g)][std::size_t(c)] = r;
      if (r > rep.sup_ratio) {
        rep.sup_ratio = r;
        rep.argmax = q;
      }
    }
  }
  std::vector<std::vector<std::vector<double>>> cone_boxes(std::size_t(cones.size()));
  rep.cone_sup.assign(std::size_t(cones.size()), 0.0);
  for (int c = 0; c < cones.size(); ++c) {
    if (per_cone[std::size_t(c)].mass.empty()) continue;
    cone_boxes[std::size_t(c)] = carleson_boxes(grid, per_cone[std::size_t(c)]);
    for (int g = 0; g <= J; ++g)
      for (Index q = 0; q < grid.cube_count(g); ++q)
        rep.cone_sup[std::size_t(c)] =
            std::max(rep.cone_sup[std::size_t(c)],
                     cone_boxes[std::size_t(c)][std::size_t(g)][std::size_t(q)] /
                         grid.mu(grid.cube(g, q), w));
  }
  if (!config.tb) return rep;

  // Pass 2: the test-function reduction on selected cubes.
  std::vector<ParabolicCube> cubes;
  for (int g = std::max(config.tb_min_gen, 0); g <= J; ++g) {
    if (!test_function_fits(grid, grid.cube(g, 0))) break;
    const Index count = grid.cube_count(g);
    const Index take = config.max_cubes_per_gen > 0 ? std::min<Index>(count, config.max_cubes_per_gen)
                                                    : count;
    for (Index i = 0; i < take; ++i) cubes.push_back(grid.cube(g, (i * count) / take));
  }
  ResolventCache test_cache(op);
  std::vector<PairWork> pairs;
  for (const auto& q : cubes) {
    const Index qi = grid.index(q);
    const double mu_q = grid.mu(q, w);
    for (int c = 0; c < cones.size(); ++c) {
      if (cone_boxes[std::size_t(c)].empty()) continue;
      const double gamma_box = cone_boxes[std::size_t(c)][std::size_t(q.gen)][std::size_t(qi)] / mu_q;
      if (!(gamma_box > 0.0)) continue;
      PairWork p;
      p.rep.cone = c;
      p.rep.cube = q;
      p.rep.mu_cube = mu_q;
      p.rep.gamma_box = gamma_box;
      pairs.push_back(std::move(p));
    }
  }
  parallel_for(pairs.size(), [&](std::size_t i) {
    PairWork& p = pairs[i];
    const Cone& cone = cones[p.rep.cone];
    TestFunction tf = build_test_function(test_cache, grid, p.rep.cube, cone.zeta, config.epsilon);
    p.stop = stopping_time(grid, w, tf);
    p.f = std::move(tf.f);
    p.gradient = std::move(tf.gradient);
    p.Hf = op.apply(p.f);
    p.dtf = apply_time_matrix(spec, op.time_operator(), p.f);
    p.divf = wdiv(spec, op.flux(p.f), w);
    p.inside = grid.nodes(p.rep.cube);
    const double l = grid.side(p.rep.cube.gen);
    const double e = config.epsilon;
    p.rep.ff1_term2_bound = tf.laa.diff_norm2 / (2.0 * std::pow(e, 4) * l * l);
    p.rep.d_norm2 = parabolic_gradient_norm2(spec, w, p.f);
  });

  std::vector<std::vector<PairSlot>> slots(L, std::vector<PairSlot>(pairs.size()));
  parallel_for(config.final_bound ? L : 0, [&](std::size_t l) {
    const double lam = shells.nodes[l];
    std::vector<std::size_t> active;
    for (std::size_t i = 0; i < pairs.size(); ++i)
      if (lam <= grid.side(pairs[i].rep.cube.gen) * (1.0 + 1e-12)) active.push_back(i);
    if (active.empty()) return;
    const ResolventSolver solver(op, 1.0, lam * lam);
    Eigen::MatrixXcd rhs(N, Index(3 * active.size()));
    for (std::size_t a = 0; a < active.size(); ++a) {
      const PairWork& p = pairs[active[a]];
      rhs.col(Index(3 * a)) = p.Hf;
      rhs.col(Index(3 * a + 1)) = p.dtf;
      rhs.col(Index(3 * a + 2)) = p.divf;
    }
    const Eigen::MatrixXcd sol = lam * solver.solve(rhs);
    const int g = shells.generation[l];
    for (std::size_t a = 0; a < active.size(); ++a) {
      const PairWork& p = pairs[active[a]];
      const GridFunction A = sol.col(Index(3 * a));
      const GridFunction B = contract(U[l], average_field(grid, p.gradient, g));
      // lambda E d_t f - R_lambda(grad f) with R through its definition.
      const GridFunction R = GridFunction(sol.col(Index(3 * a + 2))) - B;
      const GridFunction split = GridFunction(sol.col(Index(3 * a + 1))) - R;
      const GridFunction sum = A + B;
      PairSlot& s = slots[l][active[a]];
      s.active = true;
      s.local_b = local_norm2(spec, w, B, p.inside);
      s.whole = mu_norm2(spec, w, sum);
      s.local_a = local_norm2(spec, w, A, p.inside);
      const double scale = std::sqrt(s.whole);
      s.residual = scale > 0.0 ? std::sqrt(mu_norm2(spec, w, sum - split)) / scale : 0.0;
    }
  });

  for (std::size_t i = 0; i < pairs.size(); ++i) {
    PairWork& p = pairs[i];
    TbPair& r = p.rep;
    const int c = r.cone;
    const auto& cb = cone_boxes[std::size_t(c)];
    const auto& cm = per_cone[std::size_t(c)].mass;
    r.measure_ratio = p.stop.measure_ratio;
    r.mu_ratio = p.stop.mu_ratio;
    r.stopped = p.stop.stopped.size();
    r.remainder = p.stop.remainder.size();
    for (const auto& q : p.stop.stopped)
      r.term_stopped += cb[std::size_t(q.gen)][std::size_t(grid.index(q))] / r.mu_cube;
    for (const auto& q : p.stop.remainder)
      r.term_whitney += cm[std::size_t(q.gen)][std::size_t(grid.index(q))] / r.mu_cube;
    for (std::size_t l = 0; l < L; ++l) {
      const PairSlot& s = slots[l][i];
      if (!s.active) continue;
      r.reduction_rhs += shells.weights[l] * s.local_b / r.mu_cube;
      r.ff1_term1 += shells.weights[l] * s.whole;
      r.ff1_term2 += shells.weights[l] * s.local_a;
      r.split_residual = std::max(r.split_residual, s.residual);
    }
    // est9 on the Whitney boxes of S'': u in the cone, v the mean gradient.
    for (std::size_t b = 0; b < p.stop.remainder.size(); ++b) {
      const ParabolicCube& q = p.stop.remainder[b];
      const Eigen::VectorXcd& v = p.stop.remainder_mean[b];
      const std::vector<Index> nodes = grid.nodes(q);
      for (std::size_t l = 0; l < L; ++l) {
        if (shells.generation[l] != q.gen) continue;
        for (Index k : nodes) {
          if (cls[l][std::size_t(k)] != c) continue;
          const double size = U[l].row(k).norm();
          if (size == 0.0) continue;
          cplx dot = 0.0;
          for (int j = 0; j < spec.n; ++j) dot += U[l](k, j) * v[j];
          const double ratio = size / (4.0 * std::abs(dot));
          ++r.est9_checks;
          if (ratio > 1.0 + 1e-12) ++r.est9_violations;
          r.est9_worst = std::max(r.est9_worst, ratio);
        }
      }
    }
    rep.est9_checks += r.est9_checks;
    rep.est9_violations += r.est9_violations;
    rep.worst_measure_ratio = std::max(rep.worst_measure_ratio, r.measure_ratio);
    rep.worst_mu_ratio = std::max(rep.worst_mu_ratio, r.mu_ratio);
    if (r.mu_ratio < 1.0)
      rep.absorbed_bound = std::max(rep.absorbed_bound, 16.0 * r.reduction_rhs / (1.0 - r.mu_ratio));
    rep.max_split_residual = std::max(rep.max_split_residual, r.split_residual);
    rep.max_partition_defect =
        std::max(rep.max_partition_defect,
                 std::abs(r.gamma_box - r.term_stopped - r.term_whitney) / r.gamma_box);
    rep.pairs.push_back(r);
  }
  return rep;
}

}  // namespace kato
