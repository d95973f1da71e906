#include "kato/calculus.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include <Eigen/Eigenvalues>

#include "kato/parallel.hpp"

namespace kato {

LambdaQuadrature LambdaQuadrature::make(double lambda_min, double lambda_max, int per_octave) {
  if (!(lambda_min > 0.0) || !(lambda_max > lambda_min) || per_octave < 1)
    throw std::invalid_argument("quadrature needs 0 < lambda_min < lambda_max and q >= 1");
  LambdaQuadrature q;
  q.lambda_min = lambda_min;
  q.lambda_max = lambda_max;
  q.per_octave = per_octave;
  const double span = std::log(lambda_max / lambda_min);
  const int intervals = std::max(1, int(std::lround(per_octave * span / std::numbers::ln2)));
  const double h = span / intervals;
  for (int j = 0; j <= intervals; ++j) {
    q.nodes.push_back(j == intervals ? lambda_max : lambda_min * std::exp(j * h));
    q.weights.push_back(j == 0 || j == intervals ? 0.5 * h : h);
  }
  return q;
}

LambdaQuadrature LambdaQuadrature::standard(const GridSpec& spec, int per_octave) {
  return make(spec.hx() / 8.0, 8.0 * spec.Lx, per_octave);
}

Eigen::MatrixXcd principal_sqrt(const Eigen::MatrixXcd& M) {
  const Eigen::ComplexSchur<Eigen::MatrixXcd> schur(M);
  const Eigen::MatrixXcd& T = schur.matrixT();
  const Eigen::MatrixXcd& U = schur.matrixU();
  const Index N = T.rows();
  const double scale = T.cwiseAbs().maxCoeff();
  Eigen::MatrixXcd R = Eigen::MatrixXcd::Zero(N, N);
  // Row-major mirror so both factors of the inner sum are contiguous.
  Eigen::Matrix<cplx, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> Rrow(N, N);
  Rrow.setZero();
  for (Index i = 0; i < N; ++i) {
    const cplx d = T(i, i);
    if (d.real() < 0.0 && std::abs(d.imag()) <= 1e-14 * scale)
      throw std::domain_error("eigenvalue on the negative real axis");
    R(i, i) = Rrow(i, i) = std::sqrt(d);
  }
  for (Index j = 1; j < N; ++j)
    for (Index i = j - 1; i >= 0; --i) {
      const Index len = j - i - 1;
      cplx s = T(i, j);
      if (len > 0)
        s -= (Rrow.row(i).segment(i + 1, len).transpose().cwiseProduct(R.col(j).segment(i + 1, len)))
                 .sum();
      const cplx denom = R(i, i) + R(j, j);
      if (denom == cplx(0.0)) throw std::domain_error("repeated zero eigenvalue");
      R(i, j) = Rrow(i, j) = s / denom;
    }
  return U * R * U.adjoint();
}

SqrtResult sqrt_schur(const ParabolicOperator& op, bool adjoint) {
  const GridSpec& g = op.spec();
  const Index N = g.size();
  const Index S = g.spatial_size();
  const Eigen::MatrixXcd H = op.dense(adjoint);
  // P u = (sum_k mass_k u_k / total) 1.
  Eigen::VectorXd mass(N);
  for (Index k = 0; k < N; ++k) mass[k] = op.w()[k % S];
  const Eigen::MatrixXcd P =
      Eigen::VectorXcd::Ones(N) * (mass / mass.sum()).cast<cplx>().transpose();
  SqrtResult out;
  out.method = SqrtMethod::schur_oracle;
  out.matrix = principal_sqrt(H + P) - P;
  const double hn = H.norm();
  out.residual = hn > 0.0 ? (out.matrix * out.matrix - H).norm() / hn : out.matrix.norm();
  return out;
}

CalderonRoot::CalderonRoot(const ParabolicOperator& op, LambdaQuadrature quad, bool adjoint,
                           bool retain)
    : prefactor(16.0 / std::numbers::pi),
      op_(&op),
      quad_(std::move(quad)),
      adjoint_(adjoint),
      retain_(retain),
      cache_(op) {}

std::vector<CalderonRoot::Value> CalderonRoot::evaluate(const std::vector<GridFunction>& fs) {
  const GridSpec& g = op_->spec();
  auto H = [&](const GridFunction& u) { return adjoint_ ? op_->apply_adjoint(u) : op_->apply(u); };
  std::vector<GridFunction> sources;
  sources.reserve(fs.size());
  for (const auto& f : fs) sources.push_back(H(H(f)));

  const std::size_t J = quad_.size();
  // slots[j][i]: weighted integrand of input i at node j.
  std::vector<std::vector<GridFunction>> slots(J);
  std::vector<std::vector<double>> sizes(J);
  parallel_for(J, [&](std::size_t j) {
    const double lam = quad_.nodes[j];
    std::shared_ptr<const ResolventSolver> solver =
        retain_ ? cache_.get(lam, adjoint_)
                : std::make_shared<const ResolventSolver>(*op_, 1.0, lam * lam, adjoint_);
    for (const auto& src : sources) {
      GridFunction y = solver->solve(solver->solve(solver->solve(src)));
      y *= lam * lam * lam;
      sizes[j].push_back(std::sqrt(norm2(g, y, MeasureKind::mu, op_->w())));
      slots[j].push_back(quad_.weights[j] * y);
    }
  });

  std::vector<Value> out(fs.size());
  for (std::size_t i = 0; i < fs.size(); ++i) {
    GridFunction acc = GridFunction::Zero(g.size());
    for (std::size_t j = 0; j < J; ++j) acc += slots[j][i];
    acc *= prefactor;
    const double total = std::sqrt(norm2(g, acc, MeasureKind::mu, op_->w()));
    // The integrand behaves like lambda^3 below the range and lambda^-3
    // above it, so each missing tail is about a third of the end value.
    auto relative = [&](double t) { return total > 0.0 ? t / total : (t > 0.0 ? INFINITY : 0.0); };
    out[i].value = std::move(acc);
    out[i].tail_low = relative(prefactor * sizes[0][i] / 3.0);
    out[i].tail_high = relative(prefactor * sizes[J - 1][i] / 3.0);
    out[i].tail = out[i].tail_low + out[i].tail_high;
  }
  return out;
}

std::vector<CalderonRoot::Value> CalderonRoot::widen_until(const std::vector<GridFunction>& fs,
                                                           double tolerance, int max_widenings) {
  std::vector<Value> vs = evaluate(fs);
  int widenings = 0;
  while (tolerance > 0.0 && widenings < max_widenings) {
    double low = 0.0, high = 0.0, tail = 0.0;
    for (const Value& v : vs) {
      low = std::max(low, v.tail_low);
      high = std::max(high, v.tail_high);
      tail = std::max(tail, v.tail);
    }
    if (tail <= tolerance) break;
    // Only the ends carrying at least half the budget move.
    const bool lo = low > tolerance / 2.0, hi = high > tolerance / 2.0;
    quad_ = LambdaQuadrature::make(lo ? quad_.lambda_min / 4.0 : quad_.lambda_min,
                                   hi ? quad_.lambda_max * 4.0 : quad_.lambda_max,
                                   quad_.per_octave);
    ++widenings;
    vs = evaluate(fs);
  }
  for (Value& v : vs) v.widenings = widenings;
  return vs;
}

std::vector<CalderonRoot::Value> CalderonRoot::apply_many(const std::vector<GridFunction>& fs) {
  return widen_until(fs, tail_tolerance, max_widenings);
}

CalderonRoot::Value CalderonRoot::apply(const GridFunction& f) {
  return std::move(apply_many({f}).front());
}

CalderonRoot::Value CalderonRoot::apply_checked(const GridFunction& f, double tolerance,
                                                int max_widenings) {
  return std::move(widen_until({f}, tolerance, max_widenings).front());
}

std::vector<GridFunction> reversed_root_apply(CalderonRoot& reversed_root,
                                              const std::vector<GridFunction>& gs) {
  const GridSpec& spec = reversed_root.cache().op().spec();
  std::vector<GridFunction> flipped;
  for (const auto& g : gs) flipped.push_back(reverse_conjugate(spec, g));
  std::vector<GridFunction> out;
  for (auto& v : reversed_root.apply_many(flipped))
    out.push_back(reverse_conjugate(spec, v.value));
  return out;
}

double quadratic_functional(ResolventCache& cache, const GridFunction& f,
                            const LambdaQuadrature& quad) {
  const ParabolicOperator& op = cache.op();
  const GridFunction Hf = op.apply(f);
  std::vector<double> terms(quad.size());
  parallel_for(quad.size(), [&](std::size_t j) {
    const double lam = quad.nodes[j];
    terms[j] = quad.weights[j] * norm2(op.spec(), lam * cache.E(lam, Hf), MeasureKind::mu, op.w());
  });
  CompensatedSum<double> acc;
  for (double t : terms) acc.add(t);
  return acc.value();
}

double dual_quadratic_functional(ResolventCache& cache, const GridFunction& g,
                                 const LambdaQuadrature& quad) {
  const ParabolicOperator& op = cache.op();
  const GridFunction Hg = op.apply_adjoint(g);
  std::vector<double> terms(quad.size());
  parallel_for(quad.size(), [&](std::size_t j) {
    const double lam = quad.nodes[j];
    const GridFunction y = cache.E(lam, cache.E(lam, Hg, true), true);
    terms[j] = quad.weights[j] * norm2(op.spec(), lam * lam * y, MeasureKind::mu, op.w());
  });
  CompensatedSum<double> acc;
  for (double t : terms) acc.add(t);
  return acc.value();
}

RootApply dense_root(const Eigen::MatrixXcd& R) {
  return [R](const std::vector<GridFunction>& fs) {
    std::vector<GridFunction> out;
    for (const auto& f : fs) out.push_back(R * f);
    return out;
  };
}

RootApply calderon_root(CalderonRoot& root) {
  return [&root](const std::vector<GridFunction>& fs) {
    std::vector<GridFunction> out;
    for (auto& v : root.apply_many(fs)) out.push_back(std::move(v.value));
    return out;
  };
}

RootApply reversed_calderon_root(CalderonRoot& reversed_root) {
  return [&reversed_root](const std::vector<GridFunction>& gs) {
    return reversed_root_apply(reversed_root, gs);
  };
}

GridFunction fourier_mode(const GridSpec& spec, int kx, int ky, int m) {
  const Index S = spec.spatial_size();
  GridFunction out(spec.size());
  const long Nx = spec.Nx, Nt = spec.Nt;
  for (Index t = 0; t < spec.Nt; ++t)
    for (Index s = 0; s < S; ++s) {
      const long ix = spec.coord(s, 0);
      const long iy = spec.n == 2 ? spec.coord(s, 1) : 0;
      const long space = (((kx * ix + ky * iy) % Nx) + Nx) % Nx;
      const long time = ((m * long(t)) % Nt + Nt) % Nt;
      const double angle =
          2.0 * std::numbers::pi * (double(space) / double(Nx) + double(time) / double(Nt));
      out[s + S * t] = cplx(std::cos(angle), std::sin(angle));
    }
  return out;
}

cplx unit_symbol(const GridSpec& spec, int kx, int ky, int m) {
  const double h = spec.hx();
  auto lap = [&](int k) {
    const double s = std::sin(std::numbers::pi * k * h / spec.Lx);
    return 4.0 * s * s / (h * h);
  };
  double space = lap(kx);
  if (spec.n == 2) space += lap(ky);
  return {space, time_frequency(spec, m)};
}

GridFunction random_mode_field(const GridSpec& spec, CounterRng& rng) {
  const int K = std::min(4, spec.Nx / 4);
  const int M = std::min(4, spec.Nt / 4);
  const int modes = 1 + int(rng.below(3));
  GridFunction u = GridFunction::Zero(spec.size());
  for (int i = 0; i < modes; ++i) {
    int kx = 0, ky = 0, m = 0;
    while (kx == 0 && ky == 0 && m == 0) {
      kx = int(rng.below(2 * K + 1)) - K;
      ky = spec.n == 2 ? int(rng.below(2 * K + 1)) - K : 0;
      m = int(rng.below(2 * M + 1)) - M;
    }
    u += rng.complex_normal() * fourier_mode(spec, kx, ky, m);
  }
  return u;
}

GridFunction random_packet_field(const GridSpec& spec, CounterRng& rng) {
  GridFunction u = random_mode_field(spec, rng);
  const double cx = rng.uniform(0.0, spec.Lx);
  const double cy = spec.n == 2 ? rng.uniform(0.0, spec.Lx) : 0.0;
  const double width = spec.Lx / 8.0;
  auto wrap = [&](double d) { return d - spec.Lx * std::round(d / spec.Lx); };
  const GridFunction envelope = sample(spec, [&](double x, double y, double) {
    const double dx = wrap(x - cx), dy = spec.n == 2 ? wrap(y - cy) : 0.0;
    return cplx(std::exp(-(dx * dx + dy * dy) / (2.0 * width * width)), 0.0);
  });
  return u.cwiseProduct(envelope);
}

KatoReport kato_ratios(const ParabolicOperator& op, const RootApply& root, int ensemble_size,
                       CounterRng rng) {
  if (ensemble_size < 1) throw std::invalid_argument("ensemble size must be positive");
  std::vector<GridFunction> us;
  for (int i = 0; i < ensemble_size; ++i) us.push_back(random_mode_field(op.spec(), rng));
  const std::vector<GridFunction> roots = root(us);
  KatoReport rep;
  rep.r_min = INFINITY;
  for (std::size_t i = 0; i < us.size(); ++i) {
    const double r = mu_norm(op, roots[i]) / std::sqrt(parabolic_gradient_norm2(op, us[i]));
    rep.ratios.push_back(r);
    rep.r_min = std::min(rep.r_min, r);
    rep.r_max = std::max(rep.r_max, r);
  }
  return rep;
}

DualityCheck duality_check(ResolventCache& cache, const LambdaQuadrature& quad,
                           const GridFunction& f, const GridFunction& root_f) {
  const ParabolicOperator& op = cache.op();
  DualityCheck out;
  out.root_norm = mu_norm(op, root_f);
  if (out.root_norm == 0.0) return out;
  const GridFunction g = root_f / out.root_norm;
  out.bound = 16.0 / std::numbers::pi * std::sqrt(quadratic_functional(cache, f, quad)) *
              std::sqrt(dual_quadratic_functional(cache, g, quad));
  return out;
}

LowerBoundCheck lower_bound_check(const ParabolicOperator& op, const GridFunction& f,
                                  const RootApply& root, const RootApply& adjoint_root) {
  const Ellipticity& e = op.ellipticity();
  LowerBoundCheck out;
  out.delta = e.c1 / (e.c2 + 1.0);
  out.lhs = out.delta * parabolic_gradient_norm2(op, f);
  const GridFunction twisted = f + out.delta * hilbert(op.spec(), f);
  out.rhs = mu_norm(op, root({f}).front()) * mu_norm(op, adjoint_root({twisted}).front());
  return out;
}

}  // namespace kato
