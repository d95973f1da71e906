#include "kato/scenario.hpp"

#include <array>
#include <cmath>
#include <cstdio>
#include <set>

#include "kato/rng.hpp"
#include "kato/toml_lite.hpp"

namespace kato {

namespace {

using json = nlohmann::json;

constexpr std::array<std::string_view, experiment_count> kExperimentNames = {
    "ellipticity", "coercivity", "resolvents", "offdiag", "lp", "poincare",
    "principal_part", "carleson_embed", "tb", "carleson_main", "kato"};

[[noreturn]] void reject(const std::string& where, const std::string& what) {
  throw ScenarioError(where.empty() ? what : where + ": " + what);
}

/// Reads the keys of one table and remembers which were consumed.
class Table {
 public:
  Table(const json& doc, std::string where) : where_(std::move(where)) {
    if (doc.is_null()) return;
    if (!doc.is_object()) reject(where_, "expected a table");
    doc_ = &doc;
  }

  [[nodiscard]] const json* find(const char* key) {
    used_.insert(key);
    if (!doc_ || !doc_->contains(key)) return nullptr;
    return &(*doc_)[key];
  }

  [[nodiscard]] Table sub(const char* key) {
    static const json absent;
    const json* v = find(key);
    return Table(v ? *v : absent, where_.empty() ? key : where_ + "." + key);
  }

  bool read(const char* key, int& dst) {
    const json* v = find(key);
    if (!v) return false;
    if (!v->is_number_integer()) fail(key, "expected an integer");
    const auto x = v->get<long long>();
    if (x < -(1LL << 31) || x >= (1LL << 31)) fail(key, "integer out of range");
    dst = int(x);
    return true;
  }
  bool read(const char* key, std::uint64_t& dst) {
    const json* v = find(key);
    if (!v) return false;
    // Derived seeds span the full 64 bits, so unsigned values above 2^63 are valid.
    if (!v->is_number_unsigned() && !(v->is_number_integer() && v->get<long long>() >= 0))
      fail(key, "expected a non-negative integer");
    dst = v->get<std::uint64_t>();
    return true;
  }
  bool read(const char* key, double& dst) {
    const json* v = find(key);
    if (!v) return false;
    dst = number(key, *v);
    return true;
  }
  bool read(const char* key, std::optional<double>& dst) {
    double x = 0.0;
    if (!read(key, x)) return false;
    dst = x;
    return true;
  }
  bool read(const char* key, bool& dst) {
    const json* v = find(key);
    if (!v) return false;
    if (!v->is_boolean()) fail(key, "expected true or false");
    dst = v->get<bool>();
    return true;
  }
  bool read(const char* key, std::string& dst) {
    const json* v = find(key);
    if (!v) return false;
    if (!v->is_string()) fail(key, "expected a string");
    dst = v->get<std::string>();
    return true;
  }
  bool read(const char* key, std::vector<double>& dst) {
    const json* v = find(key);
    if (!v) return false;
    if (!v->is_array()) fail(key, "expected an array of numbers");
    dst.clear();
    for (const auto& x : *v) dst.push_back(number(key, x));
    return true;
  }
  bool read(const char* key, std::vector<int>& dst) {
    const json* v = find(key);
    if (!v) return false;
    if (!v->is_array()) fail(key, "expected an array of integers");
    dst.clear();
    for (const auto& x : *v) {
      if (!x.is_number_integer()) fail(key, "expected an array of integers");
      dst.push_back(x.get<int>());
    }
    return true;
  }
  /// Complex numbers are written as a number or as [re, im].
  bool read(const char* key, std::vector<cplx>& dst) {
    const json* v = find(key);
    if (!v) return false;
    if (!v->is_array()) fail(key, "expected an array of complex values");
    dst.clear();
    for (const auto& x : *v) {
      if (x.is_number()) {
        dst.emplace_back(number(key, x), 0.0);
      } else if (x.is_array() && x.size() == 2) {
        dst.emplace_back(number(key, x[0]), number(key, x[1]));
      } else {
        fail(key, "complex values are numbers or [re, im] pairs");
      }
    }
    return true;
  }
  template <class Enum, std::size_t N>
  bool read_enum(const char* key, Enum& dst,
                 const std::array<std::pair<std::string_view, Enum>, N>& names) {
    std::string s;
    if (!read(key, s)) return false;
    for (const auto& [name, value] : names)
      if (name == s) {
        dst = value;
        return true;
      }
    std::string allowed;
    for (const auto& [name, value] : names) allowed += (allowed.empty() ? "" : ", ") + std::string(name);
    fail(key, "unknown value '" + s + "' (expected one of " + allowed + ")");
  }

  /// Rejects keys that were never asked for.
  void finish() const {
    if (!doc_) return;
    for (auto it = doc_->begin(); it != doc_->end(); ++it)
      if (!used_.count(it.key())) reject(where_, "unknown key '" + it.key() + "'");
  }

 private:
  [[noreturn]] void fail(const char* key, const std::string& what) const {
    reject(where_.empty() ? key : where_ + "." + key, what);
  }
  double number(const char* key, const json& v) const {
    if (!v.is_number()) fail(key, "expected a number");
    return v.get<double>();
  }

  const json* doc_ = nullptr;
  std::string where_;
  std::set<std::string> used_;
};

constexpr std::array<std::pair<std::string_view, WeightKind>, 3> kWeightKinds = {{
    {"unit", WeightKind::unit}, {"power", WeightKind::power},
    {"dyadic_random", WeightKind::dyadic_random}}};
constexpr std::array<std::pair<std::string_view, CoefficientKind>, 2> kCoefficientKinds = {{
    {"identity", CoefficientKind::identity}, {"random", CoefficientKind::random}}};
constexpr std::array<std::pair<std::string_view, ConeMode>, 2> kConeModes = {{
    {"phase_resolved", ConeMode::phase_resolved}, {"literal", ConeMode::literal}}};
constexpr std::array<std::pair<std::string_view, SqrtMethod>, 2> kSqrtMethods = {{
    {"schur", SqrtMethod::schur_oracle}, {"calderon", SqrtMethod::calderon}}};
constexpr std::array<std::pair<std::string_view, BumpProfile>, 2> kProfiles = {{
    {"smooth", BumpProfile::smooth}, {"cosine", BumpProfile::cosine}}};

template <class Enum, std::size_t N>
std::string enum_name(Enum v, const std::array<std::pair<std::string_view, Enum>, N>& names) {
  for (const auto& [name, value] : names)
    if (value == v) return std::string(name);
  return "?";
}

json complex_list(const std::vector<cplx>& zs) {
  json out = json::array();
  for (const cplx& z : zs) out.push_back(json::array({z.real(), z.imag()}));
  return out;
}

void require(bool ok, const std::string& where, const std::string& what) {
  if (!ok) reject(where, what);
}

}  // namespace

std::string_view experiment_name(Experiment e) { return kExperimentNames[std::size_t(e)]; }

std::optional<Experiment> experiment_from_name(std::string_view name) {
  for (std::size_t i = 0; i < kExperimentNames.size(); ++i)
    if (kExperimentNames[i] == name) return Experiment(i);
  return std::nullopt;
}

std::uint64_t fnv1a(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const char c : bytes) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

void set_path(json& doc, std::string_view path, json value) {
  json* t = &doc;
  std::size_t start = 0;
  for (;;) {
    const std::size_t dot = path.find('.', start);
    const std::string key(path.substr(start, dot == std::string_view::npos ? path.npos : dot - start));
    if (key.empty()) throw ScenarioError("empty component in path '" + std::string(path) + "'");
    if (!t->is_object()) throw ScenarioError("path '" + std::string(path) + "' crosses a value");
    if (dot == std::string_view::npos) {
      (*t)[key] = std::move(value);
      return;
    }
    t = &(*t)[key];
    if (t->is_null()) *t = json::object();
    start = dot + 1;
  }
}

Scenario Scenario::from_json(const json& doc) {
  Scenario s;
  Table top(doc, "");
  top.read("name", s.name);
  top.read("seed", s.seed);
  top.read("out", s.out);
  top.read("threads", s.threads);
  if (const json* ex = top.find("experiments")) {
    if (!ex->is_array()) reject("experiments", "expected an array of names");
    std::set<Experiment> chosen;
    for (const auto& e : *ex) {
      if (!e.is_string()) reject("experiments", "expected an array of names");
      const auto which = experiment_from_name(e.get<std::string>());
      if (!which) reject("experiments", "unknown experiment '" + e.get<std::string>() + "'");
      chosen.insert(*which);
    }
    s.experiments.assign(chosen.begin(), chosen.end());  // dependency order
  }

  Table grid = top.sub("grid");
  grid.read("n", s.grid.n);
  grid.read("Nx", s.grid.Nx);
  grid.read("Nt", s.grid.Nt);
  grid.read("Lx", s.grid.Lx);
  grid.read("Lt", s.grid.Lt);
  grid.finish();

  Table weight = top.sub("weight");
  weight.read_enum("kind", s.weight.kind, kWeightKinds);
  weight.read("exponent", s.weight.exponent);
  weight.read("amplitude", s.weight.amplitude);
  s.weight_seed_set = weight.read("seed", s.weight.seed);
  weight.finish();

  Table coef = top.sub("coefficients");
  coef.read_enum("kind", s.coefficients.kind, kCoefficientKinds);
  coef.read("scale", s.coefficients.scale);
  coef.read("kappa", s.coefficients.random.kappa);
  coef.read("time_dependent", s.coefficients.random.time_dependent);
  s.coefficient_seed_set = coef.read("seed", s.coefficients.random.seed);
  coef.read("lattice_x", s.coefficients.random.lattice_x);
  coef.read("lattice_t", s.coefficients.random.lattice_t);
  coef.finish();

  Table quad = top.sub("quadrature");
  quad.read("per_octave", s.per_octave);
  quad.finish();

  Table co = top.sub("coercivity");
  co.read("samples", s.coercivity.samples);
  co.read("sigmas", s.coercivity.sigmas);
  co.finish();

  Table re = top.sub("resolvents");
  re.read("samples", s.resolvents.samples);
  re.read("sigmas", s.resolvents.sigmas);
  re.read("le8_samples", s.resolvents.le8_samples);
  re.read("le8_per_octave", s.resolvents.le8_per_octave);
  re.finish();

  Table od = top.sub("offdiag");
  od.read("lambda_cells", s.offdiag.lambda_cells);
  od.read("width", s.offdiag.width);
  od.finish();

  Table lp = top.sub("lp");
  lp.read("samples", s.lp.samples);
  lp.read("per_octave", s.lp.per_octave);
  lp.read_enum("profile", s.lp.profile, kProfiles);
  lp.finish();

  Table po = top.sub("poincare");
  po.read("samples", s.poincare.samples);
  po.read("max_k", s.poincare.max_k);
  po.read("generations", s.poincare.generations);
  po.read("cubes_per_gen", s.poincare.cubes_per_gen);
  po.finish();

  Table pp = top.sub("principal_part");
  pp.read("samples", s.principal_part.samples);
  pp.read("lambda_cells", s.principal_part.lambda_cells);
  pp.finish();

  Table ce = top.sub("carleson_embed");
  ce.read("samples", s.carleson_embed.samples);
  ce.read("density", s.carleson_embed.density);
  ce.finish();

  Table tb = top.sub("tb");
  tb.read("epsilons", s.tb.epsilons);
  tb.read("generation", s.tb.generation);
  tb.read("cubes", s.tb.cubes);
  tb.read("cones", s.tb.cones);
  tb.read_enum("mode", s.tb.mode, kConeModes);
  tb.finish();

  Table cm = top.sub("carleson_main");
  s.carleson_epsilon_set = cm.read("epsilon", s.carleson_main.epsilon);
  cm.read_enum("mode", s.carleson_main.mode, kConeModes);
  cm.read("per_octave", s.carleson_main.per_octave);
  cm.read("sub_cell_shells", s.carleson_main.sub_cell_shells);
  cm.read("tb", s.carleson_main.tb);
  cm.read("tb_min_gen", s.carleson_main.tb_min_gen);
  cm.read("max_cubes_per_gen", s.carleson_main.max_cubes_per_gen);
  cm.read("final_bound", s.carleson_main.final_bound);
  cm.finish();

  Table ka = top.sub("kato");
  ka.read_enum("method", s.kato.method, kSqrtMethods);
  ka.read("ensemble", s.kato.ensemble);
  ka.read("per_octave", s.kato.per_octave);
  ka.read("retain", s.kato.retain);
  ka.finish();

  Table tol = top.sub("tolerances");
  Tolerances& t = s.tolerances;
  tol.read("accretivity", t.accretivity);
  tol.read("coercivity", t.coercivity);
  tol.read("resolvent_ceiling", t.resolvent_ceiling);
  tol.read("offdiag_r2", t.offdiag_r2);
  tol.read("lp_ceiling", t.lp_ceiling);
  tol.read("poincare_ceiling", t.poincare_ceiling);
  tol.read("principal_ceiling", t.principal_ceiling);
  tol.read("embed_agreement", t.embed_agreement);
  tol.read("measure_ratio", t.measure_ratio);
  tol.read("est9_rate", t.est9_rate);
  tol.read("split_residual", t.split_residual);
  tol.read("kato_min", t.kato_min);
  tol.read("kato_max", t.kato_max);
  tol.read("carleson_ceiling", t.carleson_ceiling);
  tol.finish();

  top.finish();
  s.validate();
  return s;
}

Scenario Scenario::from_toml(std::string_view text) {
  try {
    return from_json(toml::parse(text));
  } catch (const toml::ParseError& e) {
    throw ScenarioError(e.what());
  }
}

Scenario Scenario::from_file(const std::string& path) {
  try {
    return from_json(toml::parse_file(path));
  } catch (const toml::ParseError& e) {
    throw ScenarioError(path + ": " + e.what());
  } catch (const ScenarioError&) {
    throw;
  } catch (const std::runtime_error& e) {
    throw ScenarioError(e.what());
  }
}

void Scenario::validate() const {
  try {
    grid.validate();
  } catch (const std::invalid_argument& e) {
    reject("grid", e.what());
  }
  require(threads >= 0, "threads", "must be non-negative");
  require(per_octave >= 1, "quadrature.per_octave", "must be at least 1");
  require(weight.kind != WeightKind::power || std::abs(weight.exponent) < grid.n, "weight.exponent",
          "power weights need |exponent| < n");
  require(coefficients.scale > 0.0, "coefficients.scale", "must be positive");
  const double kappa = coefficients.random.kappa;
  require(kappa >= 0.0 && kappa <= 0.9, "coefficients.kappa", "must lie in [0, 0.9]");
  require(coefficients.random.lattice_x >= 0 && coefficients.random.lattice_t >= 0,
          "coefficients", "lattice sizes must be non-negative");
  require(coercivity.samples >= 1 && resolvents.samples >= 1 && resolvents.le8_samples >= 1,
          "samples", "sample counts must be positive");
  for (const cplx& z : coercivity.sigmas)
    require(z.real() > 0.0, "coercivity.sigmas", "need Re sigma > 0");
  for (const cplx& z : resolvents.sigmas)
    require(z.real() > 0.0, "resolvents.sigmas", "need Re sigma > 0");
  require(resolvents.le8_per_octave >= 1, "resolvents.le8_per_octave", "must be at least 1");
  require(!offdiag.lambda_cells.empty(), "offdiag.lambda_cells", "must not be empty");
  for (double l : offdiag.lambda_cells) require(l > 0.0, "offdiag.lambda_cells", "must be positive");
  require(offdiag.width >= 1 && offdiag.width < grid.Nx / 2, "offdiag.width",
          "must lie in [1, Nx/2)");
  require(lp.samples >= 1 && lp.per_octave >= 1, "lp", "samples and per_octave must be positive");
  require(poincare.samples >= 1 && poincare.max_k >= 0 && poincare.cubes_per_gen >= 1, "poincare",
          "samples, max_k and cubes_per_gen out of range");
  for (int g : poincare.generations)
    require(g >= 0 && g <= grid.max_generation(), "poincare.generations", "outside the dyadic range");
  require(principal_part.samples >= 1, "principal_part.samples", "must be positive");
  for (double l : principal_part.lambda_cells)
    require(l > 0.0, "principal_part.lambda_cells", "must be positive");
  require(carleson_embed.samples >= 1, "carleson_embed.samples", "must be positive");
  require(carleson_embed.density > 0.0 && carleson_embed.density <= 1.0, "carleson_embed.density",
          "must lie in (0, 1]");
  require(!tb.epsilons.empty(), "tb.epsilons", "must not be empty");
  for (double e : tb.epsilons) require(e > 0.0 && e <= 0.25, "tb.epsilons", "must lie in (0, 1/4]");
  require(tb.generation >= -1 && tb.generation <= grid.max_generation(), "tb.generation",
          "outside the dyadic range");
  require(tb.cubes >= 1, "tb.cubes", "must be positive");
  require(tb.cones >= 0, "tb.cones", "must be non-negative");
  require(carleson_main.epsilon > 0.0 && carleson_main.epsilon <= 0.25, "carleson_main.epsilon",
          "must lie in (0, 1/4]");
  require(carleson_main.per_octave >= 1 && carleson_main.sub_cell_shells >= 0 &&
              carleson_main.tb_min_gen >= 0 && carleson_main.max_cubes_per_gen >= 0,
          "carleson_main", "quadrature or reduction parameters out of range");
  require(kato.ensemble >= 1 && kato.per_octave >= 1, "kato", "ensemble and per_octave must be positive");
  require(tolerances.measure_ratio > 0.0 && tolerances.measure_ratio <= 1.0,
          "tolerances.measure_ratio", "must lie in (0, 1]");
}

json Scenario::to_json() const {
  json j;
  j["name"] = name;
  j["seed"] = seed;
  j["out"] = out;
  j["threads"] = threads;
  json ex = json::array();
  for (Experiment e : experiments) ex.push_back(std::string(experiment_name(e)));
  j["experiments"] = ex;
  j["grid"] = {{"n", grid.n}, {"Nx", grid.Nx}, {"Nt", grid.Nt}, {"Lx", grid.Lx}, {"Lt", grid.Lt}};
  j["weight"] = {{"kind", enum_name(weight.kind, kWeightKinds)},
                 {"exponent", weight.exponent},
                 {"amplitude", weight.amplitude},
                 {"seed", weight_seed()}};
  j["coefficients"] = {{"kind", enum_name(coefficients.kind, kCoefficientKinds)},
                       {"scale", coefficients.scale},
                       {"kappa", coefficients.random.kappa},
                       {"time_dependent", coefficients.random.time_dependent},
                       {"seed", coefficient_seed()},
                       {"lattice_x", coefficients.random.lattice_x},
                       {"lattice_t", coefficients.random.lattice_t}};
  j["quadrature"] = {{"per_octave", per_octave}};
  j["coercivity"] = {{"samples", coercivity.samples}, {"sigmas", complex_list(coercivity.sigmas)}};
  j["resolvents"] = {{"samples", resolvents.samples},
                     {"sigmas", complex_list(resolvents.sigmas)},
                     {"le8_samples", resolvents.le8_samples},
                     {"le8_per_octave", resolvents.le8_per_octave}};
  j["offdiag"] = {{"lambda_cells", offdiag.lambda_cells}, {"width", offdiag.width}};
  j["lp"] = {{"samples", lp.samples},
             {"per_octave", lp.per_octave},
             {"profile", enum_name(lp.profile, kProfiles)}};
  j["poincare"] = {{"samples", poincare.samples},
                   {"max_k", poincare.max_k},
                   {"generations", poincare.generations},
                   {"cubes_per_gen", poincare.cubes_per_gen}};
  j["principal_part"] = {{"samples", principal_part.samples},
                         {"lambda_cells", principal_part.lambda_cells}};
  j["carleson_embed"] = {{"samples", carleson_embed.samples}, {"density", carleson_embed.density}};
  j["tb"] = {{"epsilons", tb.epsilons},
             {"generation", tb.generation},
             {"cubes", tb.cubes},
             {"cones", tb.cones},
             {"mode", enum_name(tb.mode, kConeModes)}};
  j["carleson_main"] = {{"mode", enum_name(carleson_main.mode, kConeModes)},
                        {"per_octave", carleson_main.per_octave},
                        {"sub_cell_shells", carleson_main.sub_cell_shells},
                        {"tb", carleson_main.tb},
                        {"tb_min_gen", carleson_main.tb_min_gen},
                        {"max_cubes_per_gen", carleson_main.max_cubes_per_gen},
                        {"final_bound", carleson_main.final_bound}};
  if (carleson_epsilon_set) j["carleson_main"]["epsilon"] = carleson_main.epsilon;
  j["kato"] = {{"method", enum_name(kato.method, kSqrtMethods)},
               {"ensemble", kato.ensemble},
               {"per_octave", kato.per_octave},
               {"retain", kato.retain}};
  const Tolerances& t = tolerances;
  json tol = {{"accretivity", t.accretivity},
              {"coercivity", t.coercivity},
              {"resolvent_ceiling", t.resolvent_ceiling},
              {"offdiag_r2", t.offdiag_r2},
              {"lp_ceiling", t.lp_ceiling},
              {"poincare_ceiling", t.poincare_ceiling},
              {"principal_ceiling", t.principal_ceiling},
              {"embed_agreement", t.embed_agreement},
              {"measure_ratio", t.measure_ratio},
              {"est9_rate", t.est9_rate},
              {"split_residual", t.split_residual}};
  if (t.kato_min) tol["kato_min"] = *t.kato_min;
  if (t.kato_max) tol["kato_max"] = *t.kato_max;
  if (t.carleson_ceiling) tol["carleson_ceiling"] = *t.carleson_ceiling;
  j["tolerances"] = tol;
  return j;
}

std::uint64_t Scenario::hash() const {
  json j = to_json();
  j.erase("out");
  j.erase("threads");
  return fnv1a(j.dump());
}

std::uint64_t Scenario::weight_seed() const {
  return weight_seed_set ? weight.seed : CounterRng(seed).substream(1).next_u64();
}

std::uint64_t Scenario::coefficient_seed() const {
  return coefficient_seed_set ? coefficients.random.seed : CounterRng(seed).substream(2).next_u64();
}

}  // namespace kato
