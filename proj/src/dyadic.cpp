#include "kato/dyadic.hpp"

#include <algorithm>
#include <functional>
#include <ostream>
#include <set>
#include <stdexcept>

namespace kato {

DyadicGrid::DyadicGrid(const GridSpec& spec) : spec_(spec) {
  spec_.validate();
  top_ = spec_.max_generation();
}

double DyadicGrid::side(int gen) const { return std::ldexp(spec_.hx(), gen); }

Index DyadicGrid::cube_count(int gen) const {
  const Index cx = count_x(gen);
  return cx * (spec_.n == 2 ? cx : 1) * count_t(gen);
}

Index DyadicGrid::index(const ParabolicCube& c) const {
  const Index cx = count_x(c.gen);
  const Index cy = spec_.n == 2 ? cx : 1;
  return c.qx + cx * (c.qy + cy * c.qt);
}

ParabolicCube DyadicGrid::cube(int gen, Index idx) const {
  const Index cx = count_x(gen);
  const Index cy = spec_.n == 2 ? cx : 1;
  ParabolicCube c;
  c.gen = gen;
  c.qx = int(idx % cx);
  c.qy = int((idx / cx) % cy);
  c.qt = int(idx / (cx * cy));
  return c;
}

ParabolicCube DyadicGrid::containing(Index node, int gen) const {
  const Index s = spec_.spatial_of(node);
  ParabolicCube c;
  c.gen = gen;
  c.qx = spec_.coord(s, 0) >> gen;
  c.qy = spec_.n == 2 ? spec_.coord(s, 1) >> gen : 0;
  c.qt = int(spec_.time_of(node) >> (2 * gen));
  return c;
}

ParabolicCube DyadicGrid::parent(const ParabolicCube& c) const {
  if (c.gen >= top_) throw std::out_of_range("top generation has no parent");
  return {c.gen + 1, c.qx >> 1, c.qy >> 1, c.qt >> 2};
}

std::vector<ParabolicCube> DyadicGrid::children(const ParabolicCube& c) const {
  std::vector<ParabolicCube> out;
  if (c.gen == 0) return out;
  const int ny = spec_.n == 2 ? 2 : 1;
  for (int dt = 0; dt < 4; ++dt)
    for (int dy = 0; dy < ny; ++dy)
      for (int dx = 0; dx < 2; ++dx)
        out.push_back({c.gen - 1, 2 * c.qx + dx, spec_.n == 2 ? 2 * c.qy + dy : 0, 4 * c.qt + dt});
  return out;
}

bool DyadicGrid::contains(const ParabolicCube& a, const ParabolicCube& b) const {
  if (b.gen > a.gen) return false;
  const int d = a.gen - b.gen;
  return (b.qx >> d) == a.qx && (b.qy >> d) == a.qy && (b.qt >> (2 * d)) == a.qt;
}

std::vector<Index> DyadicGrid::nodes(const ParabolicCube& c) const {
  std::vector<Index> out;
  const int sx = cells_x(c.gen), st = cells_t(c.gen);
  const int sy = spec_.n == 2 ? sx : 1;
  out.reserve(std::size_t(sx) * sy * st);
  for (int t = 0; t < st; ++t)
    for (int y = 0; y < sy; ++y)
      for (int x = 0; x < sx; ++x)
        out.push_back(spec_.node(spec_.spatial_index(c.qx * sx + x, c.qy * sy + y),
                                 Index(c.qt) * st + t));
  return out;
}

double DyadicGrid::mu(const ParabolicCube& c, const RealField& w) const {
  double total = 0.0;
  for (Index k : nodes(c)) total += w[spec_.spatial_of(k)];
  return total * spec_.cell_volume();
}

int DyadicGrid::generation_for(double lambda, bool* clamped) const {
  if (!(lambda > 0.0)) throw std::domain_error("scale must be positive");
  int j = 0;
  while (j < top_ && side(j) < lambda * (1.0 - 1e-12)) ++j;
  if (clamped) *clamped = lambda > side(top_) * (1.0 + 1e-12);
  return j;
}

GridFunction average_generation(const DyadicGrid& grid, const GridFunction& f, int gen,
                                AverageAxis axis) {
  const GridSpec& spec = grid.spec();
  detail::check_rows(spec, f.rows());
  if (gen < 0 || gen > grid.top()) throw std::out_of_range("generation outside the tree");
  const Index S = spec.spatial_size();
  const int sx = grid.cells_x(gen);
  const int cx = grid.count_x(gen);
  const Index cy = spec.n == 2 ? cx : 1;
  const Index spatial_cubes = cx * cy;
  const bool in_x = axis != AverageAxis::t;
  const bool in_t = axis != AverageAxis::x;
  const Index rows_x = in_x ? spatial_cubes : S;
  const Index rows_t = in_t ? grid.count_t(gen) : spec.Nt;
  auto key = [&](Index node) {
    const Index s = node % S;
    const Index t = node / S;
    Index ks = s;
    if (in_x) {
      const Index qx = spec.coord(s, 0) / sx;
      const Index qy = spec.n == 2 ? spec.coord(s, 1) / sx : 0;
      ks = qx + cx * qy;
    }
    const Index kt = in_t ? (t >> (2 * gen)) : t;
    return ks + rows_x * kt;
  };
  const double count =
      (in_x ? std::pow(double(sx), spec.n) : 1.0) * (in_t ? double(grid.cells_t(gen)) : 1.0);
  GridFunction sums = GridFunction::Zero(rows_x * rows_t);
  for (Index k = 0; k < f.size(); ++k) sums[key(k)] += f[k];
  GridFunction out(f.size());
  for (Index k = 0; k < f.size(); ++k) out[k] = sums[key(k)] / count;
  return out;
}

GridFunction average(const DyadicGrid& grid, const GridFunction& f, double lambda,
                     AverageAxis axis, bool* clamped) {
  return average_generation(grid, f, grid.generation_for(lambda, clamped), axis);
}

VectorField average_field(const DyadicGrid& grid, const VectorField& F, int gen) {
  VectorField out(F.rows(), F.cols());
  for (Index c = 0; c < F.cols(); ++c)
    out.col(c) = average_generation(grid, GridFunction(F.col(c)), gen);
  return out;
}

namespace {

/// Sup of centered window averages on a periodic line; windows have odd
/// side 2m + 1 < N.
void line_maximal(const double* in, double* out, int N, std::ptrdiff_t stride) {
  std::vector<double> prefix(2 * N + 1, 0.0);
  for (int i = 0; i < 2 * N; ++i) prefix[i + 1] = prefix[i] + in[(i % N) * stride];
  for (int c = 0; c < N; ++c) {
    double best = 0.0;
    for (int m = 0; 2 * m + 1 < N; ++m) {
      const int lo = (c - m + N) % N;
      best = std::max(best, (prefix[lo + 2 * m + 1] - prefix[lo]) / (2 * m + 1));
    }
    out[c * stride] = best;
  }
}

}  // namespace

RealField maximal(const GridSpec& spec, const RealField& f, AverageAxis axis) {
  detail::check_rows(spec, f.rows());
  const Index S = spec.spatial_size();
  const int Nx = spec.Nx;
  RealField out(f.size());
  if (axis == AverageAxis::t) {
    for (Index s = 0; s < S; ++s) line_maximal(f.data() + s, out.data() + s, spec.Nt, S);
    return out;
  }
  if (axis != AverageAxis::x) throw std::invalid_argument("maximal acts in x or in t");
  if (spec.n == 1) {
    for (Index t = 0; t < spec.Nt; ++t)
      line_maximal(f.data() + S * t, out.data() + S * t, Nx, 1);
    return out;
  }
  // n = 2: odd squares through 2-D prefix sums, then discrete disks.
  const int M = 2 * Nx + 1;
  std::vector<double> P(std::size_t(M) * M);
  std::vector<std::pair<int, std::pair<int, int>>> offsets;
  const int rmax = Nx / 2 - 1;
  for (int dy = -rmax; dy <= rmax; ++dy)
    for (int dx = -rmax; dx <= rmax; ++dx)
      if (dx * dx + dy * dy <= rmax * rmax) offsets.push_back({dx * dx + dy * dy, {dx, dy}});
  std::stable_sort(offsets.begin(), offsets.end(),
                   [](const auto& a, const auto& b) { return a.first < b.first; });
  for (Index t = 0; t < spec.Nt; ++t) {
    const double* slice = f.data() + S * t;
    auto at = [&](int i, int j) -> double& { return P[std::size_t(j) * M + i]; };
    std::fill(P.begin(), P.end(), 0.0);
    for (int j = 0; j < 2 * Nx; ++j)
      for (int i = 0; i < 2 * Nx; ++i)
        at(i + 1, j + 1) = slice[(i % Nx) + Nx * (j % Nx)] + at(i, j + 1) + at(i + 1, j) - at(i, j);
    for (int y = 0; y < Nx; ++y)
      for (int x = 0; x < Nx; ++x) {
        double best = 0.0;
        for (int m = 0; 2 * m + 1 < Nx; ++m) {
          const int x0 = x - m + Nx, y0 = y - m + Nx, side = 2 * m + 1;
          const int ax = x0 >= Nx ? x0 - Nx : x0, ay = y0 >= Nx ? y0 - Nx : y0;
          const double sum =
              at(ax + side, ay + side) - at(ax, ay + side) - at(ax + side, ay) + at(ax, ay);
          best = std::max(best, sum / (side * side));
        }
        double acc = 0.0;
        for (std::size_t i = 0; i < offsets.size(); ++i) {
          const auto [dx, dy] = offsets[i].second;
          acc += slice[spec.spatial_index(x + dx, y + dy)];
          if (i + 1 == offsets.size() || offsets[i + 1].first != offsets[i].first)
            best = std::max(best, acc / double(i + 1));
        }
        out[S * t + x + Nx * y] = best;
      }
  }
  return out;
}

RealField maximal(const GridSpec& spec, const GridFunction& f, AverageAxis axis) {
  return maximal(spec, RealField(f.cwiseAbs()), axis);
}

CarlesonMeasure CarlesonMeasure::zero(const DyadicGrid& grid) {
  CarlesonMeasure nu;
  for (int j = 0; j <= grid.top(); ++j) nu.mass.emplace_back(grid.cube_count(j), 0.0);
  return nu;
}

CarlesonMeasure CarlesonMeasure::from_shell_density(const DyadicGrid& grid,
                                                    const std::vector<RealField>& density,
                                                    const RealField& w) {
  const GridSpec& spec = grid.spec();
  if (int(density.size()) != grid.top() + 1)
    throw std::invalid_argument("one density per generation required");
  CarlesonMeasure nu = zero(grid);
  const Index S = spec.spatial_size();
  for (int j = 0; j <= grid.top(); ++j) {
    detail::check_rows(spec, density[j].rows());
    for (Index k = 0; k < spec.size(); ++k)
      nu.mass[j][grid.index(grid.containing(k, j))] +=
          density[j][k] * w[k % S] * spec.cell_volume();
  }
  return nu;
}

double CarlesonMeasure::total() const {
  CompensatedSum<double> acc;
  for (const auto& gen : mass)
    for (double m : gen) acc.add(m);
  return acc.value();
}

std::vector<std::vector<double>> carleson_boxes(const DyadicGrid& grid, const CarlesonMeasure& nu) {
  std::vector<std::vector<double>> box = nu.mass;
  for (int j = 1; j <= grid.top(); ++j)
    for (Index c = 0; c < grid.cube_count(j); ++c) {
      double below = 0.0;
      for (const auto& ch : grid.children(grid.cube(j, c))) below += box[j - 1][grid.index(ch)];
      box[j][c] += below;
    }
  return box;
}

CarlesonNorm carleson_norm(const DyadicGrid& grid, const CarlesonMeasure& nu, const RealField& w) {
  const auto box = carleson_boxes(grid, nu);
  CarlesonNorm out;
  for (int j = 0; j <= grid.top(); ++j)
    for (Index c = 0; c < grid.cube_count(j); ++c) {
      const ParabolicCube q = grid.cube(j, c);
      const double r = box[j][c] / grid.mu(q, w);
      if (r > out.value) out = {r, q};
    }
  return out;
}

double CarlesonEmbedding::constant() const {
  const double denom = norm * f_norm2;
  return denom > 0.0 ? lhs_direct / denom : 0.0;
}

CarlesonEmbedding carleson_embedding(const DyadicGrid& grid, const CarlesonMeasure& nu,
                                     const GridFunction& f, const RealField& w) {
  const GridSpec& spec = grid.spec();
  const int J = grid.top();
  // Cube averages |f_Delta| per generation.
  std::vector<std::vector<double>> level(J + 1);
  for (int j = 0; j <= J; ++j) {
    const GridFunction a = average_generation(grid, f, j);
    level[j].assign(grid.cube_count(j), 0.0);
    for (Index c = 0; c < grid.cube_count(j); ++c)
      level[j][c] = std::abs(a[grid.nodes(grid.cube(j, c)).front()]);
  }

  CarlesonEmbedding out;
  CompensatedSum<double> direct;
  for (int j = 0; j <= J; ++j)
    for (Index c = 0; c < grid.cube_count(j); ++c)
      direct.add(level[j][c] * level[j][c] * nu.mass[j][c]);
  out.lhs_direct = direct.value();

  // Layer cake: on r in [L_{i+1}, L_i) the cubes with |f_Delta| > r are those
  // with |f_Delta| >= L_i; they are found below the maximal such cubes.
  std::vector<double> levels;
  for (const auto& g : level) levels.insert(levels.end(), g.begin(), g.end());
  std::sort(levels.begin(), levels.end(), std::greater<>());
  levels.erase(std::unique(levels.begin(), levels.end()), levels.end());
  const auto box = carleson_boxes(grid, nu);
  CompensatedSum<double> cake, stop;
  for (std::size_t i = 0; i < levels.size(); ++i) {
    const double r = levels[i];
    if (r <= 0.0) break;
    const double next = i + 1 < levels.size() ? levels[i + 1] : 0.0;
    const double dr2 = r * r - next * next;
    double inner = 0.0, boxes = 0.0;
    std::function<void(const ParabolicCube&)> sum_below = [&](const ParabolicCube& q) {
      if (level[q.gen][grid.index(q)] >= r) inner += nu.mass[q.gen][grid.index(q)];
      for (const auto& ch : grid.children(q)) sum_below(ch);
    };
    std::function<void(const ParabolicCube&)> find_stops = [&](const ParabolicCube& q) {
      if (level[q.gen][grid.index(q)] >= r) {
        boxes += box[q.gen][grid.index(q)];
        sum_below(q);
        return;
      }
      for (const auto& ch : grid.children(q)) find_stops(ch);
    };
    for (Index c = 0; c < grid.cube_count(J); ++c) find_stops(grid.cube(J, c));
    cake.add(dr2 * inner);
    stop.add(dr2 * boxes);
  }
  out.lhs_layer_cake = cake.value();
  out.stopping_bound = stop.value();
  out.norm = carleson_norm(grid, nu, w).value;
  out.f_norm2 = norm2(spec, f, MeasureKind::mu, w);
  const RealField mm = maximal(spec, maximal(spec, f, AverageAxis::t), AverageAxis::x);
  out.maximal_norm2 = norm2(spec, mm, MeasureKind::mu, w);
  return out;
}

WhitneyPartition whitney_partition(const DyadicGrid& grid, const ParabolicCube& root,
                                   const std::vector<ParabolicCube>& stopped) {
  std::set<std::pair<int, Index>> marks;
  for (std::size_t a = 0; a < stopped.size(); ++a) {
    if (!grid.contains(root, stopped[a])) throw std::domain_error("stopped cube outside the root");
    for (std::size_t b = 0; b < stopped.size(); ++b)
      if (a != b && grid.contains(stopped[a], stopped[b]))
        throw std::domain_error("stopped cubes must form an antichain");
    marks.insert({stopped[a].gen, grid.index(stopped[a])});
  }
  WhitneyPartition part;
  std::function<void(const ParabolicCube&)> walk = [&](const ParabolicCube& q) {
    if (marks.count({q.gen, grid.index(q)})) {
      part.carleson_boxes.push_back(q);
      return;
    }
    part.whitney_boxes.push_back(q);
    for (const auto& ch : grid.children(q)) walk(ch);
  };
  walk(root);
  return part;
}

bool partition_is_exact(const DyadicGrid& grid, const ParabolicCube& root,
                        const WhitneyPartition& part) {
  const std::vector<Index> root_nodes = grid.nodes(root);
  const int layers = root.gen + 1;
  const Index N = grid.spec().size();
  std::vector<int> hits(std::size_t(N) * layers, 0);
  auto mark = [&](const ParabolicCube& q, int g0, int g1) {
    if (!grid.contains(root, q)) return false;
    for (Index k : grid.nodes(q))
      for (int g = g0; g <= g1; ++g) ++hits[std::size_t(k) * layers + g];
    return true;
  };
  for (const auto& q : part.carleson_boxes)
    if (!mark(q, 0, q.gen)) return false;
  for (const auto& q : part.whitney_boxes)
    if (!mark(q, q.gen, q.gen)) return false;
  for (Index k : root_nodes)
    for (int g = 0; g < layers; ++g)
      if (hits[std::size_t(k) * layers + g] != 1) return false;
  // Nothing outside the root may be touched.
  long total = 0;
  for (int h : hits) total += h;
  return total == long(root_nodes.size()) * layers;
}

void write_carleson_csv(std::ostream& os, const DyadicGrid& grid, const CarlesonMeasure& nu,
                        const RealField& w) {
  const auto box = carleson_boxes(grid, nu);
  os << "generation,cube,mass,mu,ratio\n";
  os.precision(17);
  for (int j = 0; j <= grid.top(); ++j)
    for (Index c = 0; c < grid.cube_count(j); ++c) {
      const double m = grid.mu(grid.cube(j, c), w);
      os << j << ',' << c << ',' << nu.mass[j][c] << ',' << m << ',' << box[j][c] / m << '\n';
    }
}

}  // namespace kato
