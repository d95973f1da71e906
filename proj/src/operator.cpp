#include "kato/operator.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <limits>
#include <stdexcept>

#include "kato/parallel.hpp"

namespace kato {

Eigen::MatrixXcd CoefficientField::at(Index node) const {
  Eigen::MatrixXcd M(spec.n, spec.n);
  for (int i = 0; i < spec.n; ++i)
    for (int j = 0; j < spec.n; ++j) M(i, j) = (*this)(node, i, j);
  return M;
}

CoefficientField scaled_identity(const Weight& w, double scale) {
  const GridSpec& spec = w.spec;
  CoefficientField A{spec, Eigen::MatrixXcd::Zero(spec.size(), spec.n * spec.n)};
  const Index S = spec.spatial_size();
  for (Index k = 0; k < spec.size(); ++k)
    for (int i = 0; i < spec.n; ++i) A.data(k, i * spec.n + i) = scale * w.values[k % S];
  return A;
}

CoefficientField random_coefficients(const Weight& w, const CoefficientParams& p) {
  if (!(p.kappa >= 0.0 && p.kappa <= 0.9)) throw std::domain_error("kappa outside [0, 0.9]");
  const GridSpec& spec = w.spec;
  const int n = spec.n;
  const Index S = spec.spatial_size();
  CoefficientField A{spec, Eigen::MatrixXcd::Zero(spec.size(), n * n)};
  const int mx = p.lattice_x > 0 ? p.lattice_x : spec.Nx;
  const int mt = p.lattice_t > 0 ? p.lattice_t : spec.Nt;
  if (spec.Nx % mx != 0 || spec.Nt % mt != 0)
    throw std::invalid_argument("coefficient lattice must divide the grid");
  const int rx = spec.Nx / mx, rt = spec.Nt / mt;
  const Index my = n == 2 ? mx : 1;
  const CounterRng root(p.seed, 0x636f6566ULL);
  for (Index k = 0; k < spec.size(); ++k) {
    const Index s = k % S;
    const Index lx = spec.coord(s, 0) / rx;
    const Index ly = n == 2 ? spec.coord(s, 1) / rx : 0;
    const Index lt = p.time_dependent ? spec.time_of(k) / rt : 0;
    const Index cell = lx + mx * (ly + my * lt);
    CounterRng rng = root.substream(std::uint64_t(cell));
    Eigen::MatrixXcd G(n, n);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) G(i, j) = rng.complex_normal();
    const double norm = n == 1 ? std::abs(G(0, 0))
                               : Eigen::JacobiSVD<Eigen::MatrixXcd>(G).singularValues()(0);
    const double scale = norm > 0.0 ? rng.uniform() / norm : 0.0;
    const Eigen::MatrixXcd M =
        w.values[k % S] * (Eigen::MatrixXcd::Identity(n, n) + p.kappa * scale * G);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) A.data(k, i * n + j) = M(i, j);
  }
  return A;
}

Ellipticity ellipticity_constants(const CoefficientField& A, const Weight& w) {
  const GridSpec& spec = A.spec;
  const Index S = spec.spatial_size();
  Ellipticity e{std::numeric_limits<double>::infinity(), 0.0};
  for (Index k = 0; k < spec.size(); ++k) {
    const Eigen::MatrixXcd M = A.at(k) / w.values[k % S];
    const Eigen::MatrixXcd herm = 0.5 * (M + M.adjoint());
    const double low = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd>(herm, Eigen::EigenvaluesOnly)
                           .eigenvalues()(0);
    const double top = Eigen::JacobiSVD<Eigen::MatrixXcd>(M).singularValues()(0);
    e.c1 = std::min(e.c1, low);
    e.c2 = std::max(e.c2, top);
  }
  if (!(e.c1 > 0.0)) throw std::domain_error("coefficients are not elliptic (c1 <= 0)");
  return e;
}

ParabolicOperator::ParabolicOperator(Weight w, CoefficientField A)
    : weight_(std::move(w)), coef_(std::move(A)) {
  const GridSpec& g = spec();
  g.validate();
  if (!(coef_.spec == g) || coef_.data.rows() != g.size() || coef_.data.cols() != g.n * g.n)
    throw std::invalid_argument("coefficient field does not match the grid");
  ellipticity_ = ellipticity_constants(coef_, weight_);
  time_op_ = time_multiplier_matrix(g, [](double tau) {
    return symbol_d_half(tau) * symbol_hilbert(tau) * symbol_d_half(tau);
  });
}

VectorField ParabolicOperator::apply_coefficients(const VectorField& F, bool adjoint) const {
  const GridSpec& g = spec();
  const Index S = g.spatial_size();
  VectorField out = VectorField::Zero(F.rows(), g.n);
  for (Index k = 0; k < F.rows(); ++k) {
    const double inv_w = 1.0 / w()[k % S];
    for (int i = 0; i < g.n; ++i)
      for (int j = 0; j < g.n; ++j) {
        const cplx a = adjoint ? std::conj(coef_(k, j, i)) : coef_(k, i, j);
        out(k, i) += a * inv_w * F(k, j);
      }
  }
  return out;
}

VectorField ParabolicOperator::flux(const GridFunction& u, bool adjoint) const {
  return apply_coefficients(grad_x(spec(), u), adjoint);
}

GridFunction ParabolicOperator::apply(const GridFunction& u) const {
  GridFunction out = apply_time_matrix(spec(), time_op_, u);
  out -= wdiv(spec(), flux(u), w());
  return out;
}

GridFunction ParabolicOperator::apply_adjoint(const GridFunction& u) const {
  GridFunction out = apply_time_matrix(spec(), Eigen::MatrixXcd(time_op_.adjoint()), u);
  out -= wdiv(spec(), flux(u, true), w());
  return out;
}

Eigen::SparseMatrix<cplx> ParabolicOperator::sparse(bool adjoint) const {
  const GridSpec& g = spec();
  const Index S = g.spatial_size();
  const Index N = g.size();
  const int Nt = g.Nt;
  const double h2 = g.hx() * g.hx();
  std::vector<Eigen::Triplet<cplx>> trip;
  trip.reserve(std::size_t(N) * (Nt + 4 * g.n * g.n + 1));
  const Eigen::MatrixXcd T = adjoint ? Eigen::MatrixXcd(time_op_.adjoint()) : time_op_;
  for (Index s = 0; s < S; ++s)
    for (int t = 0; t < Nt; ++t)
      for (int tp = 0; tp < Nt; ++tp) trip.emplace_back(s + S * t, s + S * tp, T(t, tp));
  // Flux component i at node x is sum_j a_ij(x) (u(x + e_j) - u(x)) / hx with
  // a = A / w; -wdiv sends it to row x with -1/hx and to row x + e_i with
  // +w(x)/(w(x + e_i) hx).
  for (Index k = 0; k < N; ++k) {
    const Index s = k % S;
    const Index t = k / S;
    const double inv_w = 1.0 / w()[s];
    for (int i = 0; i < g.n; ++i) {
      const Index fwd_i = g.shifted(s, i, 1) + S * t;
      const double ratio = w()[s] / w()[g.shifted(s, i, 1)];
      for (int j = 0; j < g.n; ++j) {
        const cplx a = (adjoint ? std::conj(coef_(k, j, i)) : coef_(k, i, j)) * inv_w / h2;
        const Index fwd_j = g.shifted(s, j, 1) + S * t;
        trip.emplace_back(k, fwd_j, -a);
        trip.emplace_back(k, k, a);
        trip.emplace_back(fwd_i, fwd_j, a * ratio);
        trip.emplace_back(fwd_i, k, -a * ratio);
      }
    }
  }
  Eigen::SparseMatrix<cplx> M(N, N);
  M.setFromTriplets(trip.begin(), trip.end());
  M.makeCompressed();
  return M;
}

Eigen::MatrixXcd ParabolicOperator::dense(bool adjoint) const {
  return Eigen::MatrixXcd(sparse(adjoint));
}

ParabolicOperator ParabolicOperator::reversed_transpose() const {
  const GridSpec& g = spec();
  const Index S = g.spatial_size();
  CoefficientField B{g, Eigen::MatrixXcd(g.size(), g.n * g.n)};
  for (Index k = 0; k < g.size(); ++k) {
    const Index s = k % S;
    const Index t = k / S;
    const Index src = s + S * ((g.Nt - t) % g.Nt);
    for (int i = 0; i < g.n; ++i)
      for (int j = 0; j < g.n; ++j) B.data(k, i * g.n + j) = coef_(src, j, i);
  }
  return ParabolicOperator(weight_, std::move(B));
}

std::uint64_t ParabolicOperator::fingerprint() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto eat = [&h](const void* p, std::size_t bytes) {
    const auto* c = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < bytes; ++i) {
      h ^= c[i];
      h *= 0x100000001b3ULL;
    }
  };
  const GridSpec& g = spec();
  eat(&g.n, sizeof g.n);
  eat(&g.Nx, sizeof g.Nx);
  eat(&g.Nt, sizeof g.Nt);
  eat(&g.Lx, sizeof g.Lx);
  eat(&g.Lt, sizeof g.Lt);
  eat(w().data(), sizeof(double) * std::size_t(w().size()));
  eat(coef_.data.data(), sizeof(cplx) * std::size_t(coef_.data.size()));
  return h;
}

GridFunction reverse_conjugate(const GridSpec& spec, const GridFunction& u) {
  const Index S = spec.spatial_size();
  GridFunction out(u.size());
  for (Index t = 0; t < spec.Nt; ++t) {
    const Index src = (spec.Nt - t) % spec.Nt;
    out.segment(S * t, S) = u.segment(S * src, S).conjugate();
  }
  return out;
}

cplx form_B(const ParabolicOperator& op, const GridFunction& u, const GridFunction& v,
            double delta, cplx sigma) {
  const GridSpec& g = op.spec();
  const GridFunction tv = v + delta * hilbert(g, v);
  const cplx zeroth = sigma * inner(g, u, tv, MeasureKind::mu, op.w());
  const cplx spatial = inner(g, op.flux(u), grad_x(g, tv), MeasureKind::mu, op.w());
  const cplx temporal =
      inner(g, hilbert(g, d_half(g, u)), d_half(g, tv), MeasureKind::mu, op.w());
  return zeroth + spatial + temporal;
}

double explicit_delta(const Ellipticity& e, cplx sigma) {
  return std::min(e.c1 / (e.c2 + 1.0), sigma.real() / (std::abs(sigma.imag()) + 1.0));
}

double parabolic_gradient_norm2(const ParabolicOperator& op, const GridFunction& u) {
  return parabolic_gradient_norm2(op.spec(), op.w(), u);
}

double energy_norm2(const ParabolicOperator& op, const GridFunction& u) {
  return norm2(op.spec(), u, MeasureKind::mu, op.w()) + parabolic_gradient_norm2(op, u);
}

double mu_norm(const ParabolicOperator& op, const GridFunction& u) {
  return std::sqrt(norm2(op.spec(), u, MeasureKind::mu, op.w()));
}

ResolventSolver::ResolventSolver(const ParabolicOperator& op, cplx alpha, cplx beta, bool adjoint)
    : op_(&op), alpha_(alpha), beta_(beta), adjoint_(adjoint) {
  Eigen::SparseMatrix<cplx> M = op.sparse(adjoint) * beta;
  Eigen::SparseMatrix<cplx> I(M.rows(), M.cols());
  I.setIdentity();
  M += alpha * I;
  M.makeCompressed();
  lu_.analyzePattern(M);
  lu_.factorize(M);
  if (lu_.info() != Eigen::Success)
    throw std::runtime_error("resolvent factorization failed: " + lu_.lastErrorMessage());
}

GridFunction ResolventSolver::solve(const GridFunction& f) const {
  GridFunction u = lu_.solve(f);
  // One step of refinement against the matrix-free operator.
  const GridFunction Hu = adjoint_ ? op_->apply_adjoint(u) : op_->apply(u);
  const GridFunction r = f - (alpha_ * u + beta_ * Hu);
  u += lu_.solve(r);
  return u;
}

Eigen::MatrixXcd ResolventSolver::solve(const Eigen::MatrixXcd& F) const {
  Eigen::MatrixXcd U = lu_.solve(F);
  Eigen::MatrixXcd R(F.rows(), F.cols());
  for (Index c = 0; c < F.cols(); ++c) {
    const GridFunction u = U.col(c);
    R.col(c) = F.col(c) - (alpha_ * u + beta_ * (adjoint_ ? op_->apply_adjoint(u) : op_->apply(u)));
  }
  U += lu_.solve(R);
  return U;
}

GridFunction resolvent_apply(const ParabolicOperator& op, cplx sigma, const GridFunction& f,
                             bool adjoint) {
  if (!(sigma.real() > 0.0)) throw std::domain_error("resolvent requires Re sigma > 0");
  return ResolventSolver(op, sigma, 1.0, adjoint).solve(f);
}

std::shared_ptr<const ResolventSolver> ResolventCache::get(double lambda, bool adjoint) {
  if (!(lambda > 0.0)) throw std::domain_error("scale must be positive");
  const auto key = std::make_pair(std::bit_cast<std::uint64_t>(lambda), adjoint);
  {
    std::lock_guard lock(mutex_);
    if (auto it = cache_.find(key); it != cache_.end()) return it->second;
  }
  auto solver = std::make_shared<const ResolventSolver>(*op_, 1.0, lambda * lambda, adjoint);
  std::lock_guard lock(mutex_);
  return cache_.try_emplace(key, std::move(solver)).first->second;
}

std::size_t ResolventCache::size() const {
  std::lock_guard lock(mutex_);
  return cache_.size();
}

namespace {

GridFunction random_field(const GridSpec& g, CounterRng& rng) {
  GridFunction f(g.size());
  for (Index i = 0; i < f.size(); ++i) f[i] = rng.complex_normal();
  return f;
}

VectorField random_vector_field(const GridSpec& g, CounterRng& rng) {
  VectorField F(g.size(), g.n);
  for (Index c = 0; c < F.cols(); ++c)
    for (Index i = 0; i < F.rows(); ++i) F(i, c) = rng.complex_normal();
  return F;
}

}  // namespace

ResolventEstimates lemma_le8_suite(ResolventCache& cache, const std::vector<double>& lambdas,
                                   int samples, CounterRng rng, double ceiling) {
  if (lambdas.empty()) throw std::invalid_argument("lambda grid must be nonempty");
  const ParabolicOperator& op = cache.op();
  const GridSpec& g = op.spec();
  ResolventEstimates rep;
  rep.lambdas = lambdas;
  for (auto& v : rep.per_lambda) v.assign(lambdas.size(), 0.0);
  parallel_for(lambdas.size(), [&](std::size_t li) {
    const double lam = lambdas[li];
    CounterRng local = rng.substream(li);
    auto dnorm = [&](const GridFunction& u) { return std::sqrt(parabolic_gradient_norm2(op, u)); };
    for (int adj = 0; adj < 2; ++adj) {
      for (int k = 0; k < samples; ++k) {
        const GridFunction f = random_field(g, local);
        const VectorField F = random_vector_field(g, local);
        const double nf = mu_norm(op, f);
        const double nF = std::sqrt(norm2(g, F, MeasureKind::mu, op.w()));
        const GridFunction e1 = cache.E(lam, f, adj);
        const GridFunction e2 = cache.E(lam, d_half(g, f), adj);
        const GridFunction e3 = cache.E(lam, wdiv(g, F, op.w()), adj);
        const double r1 = (mu_norm(op, e1) + lam * dnorm(e1)) / nf;
        const double r2 = (lam * mu_norm(op, e2) + lam * lam * dnorm(e2)) / nf;
        const double r3 = (lam * mu_norm(op, e3) + lam * lam * dnorm(e3)) / nF;
        const double r[3] = {r1, r2, r3};
        for (int e = 0; e < 3; ++e) {
          auto& slot = rep.per_lambda[3 * adj + e][li];
          slot = std::max(slot, r[e]);
        }
      }
    }
  });
  for (int e = 0; e < 6; ++e) {
    const auto& v = rep.per_lambda[e];
    rep.max_ratio[e] = *std::max_element(v.begin(), v.end());
    rep.within_ceiling = rep.within_ceiling && rep.max_ratio[e] <= ceiling;
    // Upward trend: the top third of the grid rises by more than half an
    // octave in log2 per octave of lambda.
    const std::size_t m = v.size();
    if (m >= 3) {
      const std::size_t a = m - 1 - (m - 1) / 3;
      const double slope = std::log2(v[m - 1] / v[a]) / std::log2(lambdas[m - 1] / lambdas[a]);
      if (slope > 0.5) rep.upward_trend = true;
    }
  }
  return rep;
}

double set_distance(const GridSpec& spec, const std::vector<Index>& E,
                    const std::vector<Index>& F) {
  double best = std::numeric_limits<double>::infinity();
  for (Index a : E)
    for (Index b : F) best = std::min(best, parabolic_distance(spec, a, b));
  return best;
}

OffDiagSample offdiag_profile(ResolventCache& cache, double lambda, const std::vector<Index>& E,
                              const std::vector<Index>& F, OffDiagVariant variant,
                              const VectorField& data, bool adjoint) {
  const ParabolicOperator& op = cache.op();
  const GridSpec& g = op.spec();
  const double d = set_distance(g, E, F);
  if (!(d > 0.0)) throw std::domain_error("E and F must be disjoint");
  const Index S = g.spatial_size();
  CompensatedSum<double> den;
  for (Index k : E)
    for (Index c = 0; c < data.cols(); ++c) den.add(std::norm(data(k, c)) * op.w()[k % S]);
  CompensatedSum<double> num;
  if (variant == OffDiagVariant::E_div) {
    const GridFunction u = lambda * cache.E(lambda, wdiv(g, data, op.w()), adjoint);
    for (Index k : F) num.add(std::norm(u[k]) * op.w()[k % S]);
  } else {
    const GridFunction u = cache.E(lambda, GridFunction(data.col(0)), adjoint);
    const VectorField grad = lambda * grad_x(g, u);
    for (Index k : F) {
      double e = grad.row(k).squaredNorm();
      if (variant == OffDiagVariant::E_f) e += std::norm(u[k]);
      num.add(e * op.w()[k % S]);
    }
  }
  return {num.value() / den.value(), d, lambda};
}

DecayFit fit_decay(const std::vector<OffDiagSample>& samples, double lo, double hi) {
  std::vector<std::pair<double, double>> pts;
  for (const auto& s : samples) {
    const double x = s.d / s.lambda;
    if (x >= lo && x <= hi && s.ratio > 0.0 && std::isfinite(s.ratio))
      pts.emplace_back(x, std::log(s.ratio));
  }
  DecayFit fit;
  fit.used = int(pts.size());
  if (pts.size() < 3) return fit;
  double mx = 0, my = 0;
  for (auto [x, y] : pts) {
    mx += x;
    my += y;
  }
  mx /= pts.size();
  my /= pts.size();
  double sxx = 0, sxy = 0, syy = 0;
  for (auto [x, y] : pts) {
    sxx += (x - mx) * (x - mx);
    sxy += (x - mx) * (y - my);
    syy += (y - my) * (y - my);
  }
  const double slope = sxy / sxx;
  fit.intercept = my - slope * mx;
  fit.c = slope < 0.0 ? -1.0 / slope : std::numeric_limits<double>::infinity();
  fit.r2 = syy > 0.0 ? (sxy * sxy) / (sxx * syy) : 1.0;
  return fit;
}

std::vector<OffDiagSample> offdiag_sweep(ResolventCache& cache, const std::vector<double>& lambdas,
                                         int width, OffDiagVariant variant, CounterRng rng) {
  const ParabolicOperator& op = cache.op();
  const GridSpec& g = op.spec();
  const Index S = g.spatial_size();
  std::vector<Index> E;
  for (Index k = 0; k < g.size(); ++k)
    if (g.coord(k % S, 0) < width) E.push_back(k);
  std::vector<std::vector<Index>> slabs;
  for (int c = width; c <= (g.Nx + width) / 2; ++c) {
    std::vector<Index> F;
    for (Index k = 0; k < g.size(); ++k)
      if (g.coord(k % S, 0) == c) F.push_back(k);
    slabs.push_back(std::move(F));
  }
  std::vector<std::vector<OffDiagSample>> per(lambdas.size());
  parallel_for(lambdas.size(), [&](std::size_t li) {
    CounterRng local = rng.substream(li);
    const int cols = variant == OffDiagVariant::E_div ? g.n : 1;
    VectorField data = VectorField::Zero(g.size(), cols);
    for (Index k : E)
      for (int c = 0; c < cols; ++c) data(k, c) = local.complex_normal();
    for (const auto& F : slabs)
      per[li].push_back(offdiag_profile(cache, lambdas[li], E, F, variant, data));
  });
  std::vector<OffDiagSample> out;
  for (auto& v : per) out.insert(out.end(), v.begin(), v.end());
  return out;
}

}  // namespace kato
