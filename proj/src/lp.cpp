#include "kato/lp.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

#include "kato/parallel.hpp"

namespace kato {

double bump(BumpProfile profile, double s) {
  if (std::abs(s) >= 1.0) return 0.0;
  switch (profile) {
    case BumpProfile::smooth: return std::exp(-1.0 / (1.0 - s * s));
    case BumpProfile::cosine: return 0.5 * (1.0 + std::cos(std::numbers::pi * s));
  }
  return 0.0;
}

Mollifier::Mollifier(const GridSpec& spec, BumpProfile profile) : spec_(spec), profile_(profile) {
  spec_.validate();
}

Mollifier::SpaceKernel Mollifier::space_kernel(double lambda) const {
  if (!(lambda > 0.0)) throw std::domain_error("scale must be positive");
  SpaceKernel k;
  const int reach = spec_.Nx / 2 - 1;
  const int ry = spec_.n == 2 ? reach : 0;
  double total = 0.0;
  for (int dy = -ry; dy <= ry; ++dy)
    for (int dx = -reach; dx <= reach; ++dx) {
      const double r = std::hypot(dx, dy) * spec_.hx() / lambda;
      const double v = bump(profile_, r);
      if (v <= 0.0) continue;
      k.offsets.push_back({dx, dy});
      k.weights.push_back(v);
      total += v;
    }
  for (double& v : k.weights) v /= total;
  return k;
}

Mollifier::TimeKernel Mollifier::time_kernel(double lambda) const {
  if (!(lambda > 0.0)) throw std::domain_error("scale must be positive");
  TimeKernel k;
  const int reach = spec_.Nt / 2 - 1;
  double total = 0.0;
  for (int d = -reach; d <= reach; ++d) {
    const double v = bump(profile_, d * spec_.ht() / (lambda * lambda));
    if (v <= 0.0) continue;
    k.offsets.push_back(d);
    k.weights.push_back(v);
    total += v;
  }
  for (double& v : k.weights) v /= total;
  return k;
}

GridFunction Mollifier::apply(const GridFunction& f, double lambda, MollifierPart part) const {
  detail::check_rows(spec_, f.rows());
  const Index S = spec_.spatial_size();
  GridFunction g = f;
  if (part != MollifierPart::time) {
    const SpaceKernel k = space_kernel(lambda);
    GridFunction out = GridFunction::Zero(f.size());
    for (Index s = 0; s < S; ++s) {
      const int x = spec_.coord(s, 0), y = spec_.n == 2 ? spec_.coord(s, 1) : 0;
      for (std::size_t i = 0; i < k.offsets.size(); ++i) {
        const Index src = spec_.spatial_index(x - k.offsets[i][0], y - k.offsets[i][1]);
        for (Index t = 0; t < spec_.Nt; ++t) out[s + S * t] += k.weights[i] * g[src + S * t];
      }
    }
    g = std::move(out);
  }
  if (part != MollifierPart::space) {
    const TimeKernel k = time_kernel(lambda);
    GridFunction out = GridFunction::Zero(f.size());
    for (Index t = 0; t < spec_.Nt; ++t)
      for (std::size_t i = 0; i < k.offsets.size(); ++i) {
        const Index src = ((t - k.offsets[i]) % spec_.Nt + spec_.Nt) % spec_.Nt;
        out.segment(S * t, S) += k.weights[i] * g.segment(S * src, S);
      }
    g = std::move(out);
  }
  return g;
}

VectorField Mollifier::apply_field(const VectorField& F, double lambda, MollifierPart part) const {
  VectorField out(F.rows(), F.cols());
  for (Index c = 0; c < F.cols(); ++c) out.col(c) = apply(GridFunction(F.col(c)), lambda, part);
  return out;
}

GridFunction conv_P(const Mollifier& P, const GridFunction& f, double lambda, MollifierPart part) {
  return P.apply(f, lambda, part);
}

double square_norm(const GridSpec& spec, const RealField& w, const FieldFamily& family,
                   const LambdaQuadrature& quad) {
  std::vector<double> terms(quad.size());
  parallel_for(quad.size(), [&](std::size_t j) {
    terms[j] = quad.weights[j] * norm2(spec, family(quad.nodes[j]), MeasureKind::mu, w);
  });
  CompensatedSum<double> acc;
  for (double t : terms) acc.add(t);
  return acc.value();
}

LambdaQuadrature lp_quadrature(const DyadicGrid& grid, int per_octave) {
  const GridSpec& spec = grid.spec();
  return LambdaQuadrature::make(spec.hx() / 4.0,
                                std::min(spec.Lx / 2.0, grid.side(grid.top())), per_octave);
}

LPReport lp_suite(const Mollifier& P, const DyadicGrid& grid, const RealField& w,
                  const GridFunction& f, const LambdaQuadrature& quad) {
  const GridSpec& spec = P.spec();
  std::vector<std::array<double, 5>> terms(quad.size());
  parallel_for(quad.size(), [&](std::size_t j) {
    const double lam = quad.nodes[j];
    const GridFunction Pf = P.apply(f, lam);
    auto n2 = [&](const auto& g) { return norm2(spec, g, MeasureKind::mu, w); };
    terms[j] = {n2(lam * grad_x(spec, Pf)), n2(lam * lam * d_t(spec, Pf)),
                n2(lam * d_half(spec, Pf)), n2((f - Pf) / lam),
                n2(average(grid, f, lam) - Pf)};
    for (double& t : terms[j]) t *= quad.weights[j];
  });
  std::array<CompensatedSum<double>, 5> acc;
  for (const auto& t : terms)
    for (int i = 0; i < 5; ++i) acc[i].add(t[i]);
  LPReport rep;
  rep.gradient = std::sqrt(acc[0].value());
  rep.time = std::sqrt(acc[1].value());
  rep.half = std::sqrt(acc[2].value());
  rep.smoothing = std::sqrt(acc[3].value());
  rep.averaging = std::sqrt(acc[4].value());
  rep.f_norm = std::sqrt(norm2(spec, f, MeasureKind::mu, w));
  rep.d_norm = std::sqrt(parabolic_gradient_norm2(spec, w, f));
  return rep;
}

SplitCheck smoothing_split(const Mollifier& P, const GridFunction& f, double lambda) {
  SplitCheck out;
  out.lhs = f - P.apply(f, lambda);
  const GridFunction rest = f - P.apply(f, lambda, MollifierPart::space);
  out.rhs = P.apply(rest, lambda, MollifierPart::time) +
            (f - P.apply(f, lambda, MollifierPart::time));
  return out;
}

SplitCheck averaging_split(const Mollifier& P, const DyadicGrid& grid, const GridFunction& f,
                           double lambda) {
  SplitCheck out;
  out.lhs = average(grid, f, lambda) - P.apply(f, lambda);
  const GridFunction space_part =
      average(grid, f, lambda, AverageAxis::x) - P.apply(f, lambda, MollifierPart::space);
  const GridFunction time_part =
      average(grid, f, lambda, AverageAxis::t) - P.apply(f, lambda, MollifierPart::time);
  out.rhs = average(grid, space_part, lambda, AverageAxis::t) +
            P.apply(time_part, lambda, MollifierPart::space);
  return out;
}

}  // namespace kato
