#pragma once

#include <complex>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "kato/calculus.hpp"
#include "kato/lp.hpp"
#include "kato/tb.hpp"
#include "kato/weights.hpp"

namespace kato {

/// Experiments in dependency order; a run executes them in this order.
enum class Experiment {
  ellipticity,
  coercivity,
  resolvents,
  offdiag,
  lp,
  poincare,
  principal_part,
  carleson_embed,
  tb,
  carleson_main,
  kato,
};
inline constexpr int experiment_count = 11;

[[nodiscard]] std::string_view experiment_name(Experiment e);
[[nodiscard]] std::optional<Experiment> experiment_from_name(std::string_view name);

/// Thrown for malformed or out-of-range scenarios; maps to the usage exit code.
class ScenarioError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class CoefficientKind { identity, random };

struct CoefficientSpec {
  CoefficientKind kind = CoefficientKind::identity;
  double scale = 1.0;  // identity: A = scale * w * I
  CoefficientParams random;
};

struct CoercivitySettings {
  int samples = 100;
  std::vector<cplx> sigmas{cplx(0.01, 0.0), cplx(1.0, 0.0), cplx(1.0, 10.0)};
};

struct ResolventSettings {
  int samples = 20;
  std::vector<cplx> sigmas{cplx(0.01, 0.0), cplx(1.0, 0.0), cplx(1.0, 10.0)};
  int le8_samples = 4;
  int le8_per_octave = 1;  // nodes per octave on [hx/4, 4 Lx]
};

struct OffDiagSettings {
  std::vector<double> lambda_cells{1.0, 2.0};  // lambda in units of hx
  int width = 2;
};

struct LPSettings {
  int samples = 4;
  int per_octave = 4;
  BumpProfile profile = BumpProfile::smooth;
};

struct PoincareSettings {
  int samples = 3;
  int max_k = 2;
  std::vector<int> generations{0, 1};
  int cubes_per_gen = 4;
};

struct PrincipalSettings {
  int samples = 3;
  std::vector<double> lambda_cells{1.0, 2.0, 4.0};
};

struct EmbedSettings {
  int samples = 10;
  double density = 0.3;  // fraction of (generation, cube) slots carrying mass
};

struct TbSettings {
  std::vector<double> epsilons{0.25, 0.125, 0.0625};
  int generation = -1;  // -1: largest generation whose cutoff fits
  int cubes = 4;
  int cones = 8;  // cones per cube, strided through the set; 0 means all
  ConeMode mode = ConeMode::phase_resolved;
};

struct KatoSettings {
  SqrtMethod method = SqrtMethod::schur_oracle;
  int ensemble = 20;
  int per_octave = 8;
  bool retain = true;
};

/// Bounds asserted by the run. Optional bounds are only asserted when set.
struct Tolerances {
  double accretivity = 1e-10;   // relative excess of ||(sigma+H)^{-1} f|| Re sigma / ||f||
  double coercivity = 1e-12;    // relative slack of the coercivity inequality
  double resolvent_ceiling = 10.0;
  double offdiag_r2 = 0.9;
  double lp_ceiling = 50.0;
  double poincare_ceiling = 10.0;
  double principal_ceiling = 50.0;
  double embed_agreement = 1e-10;
  double measure_ratio = 0.95;
  double est9_rate = 0.0;
  double split_residual = 1e-8;
  std::optional<double> kato_min;
  std::optional<double> kato_max;
  std::optional<double> carleson_ceiling;
};

/// Everything a run depends on. Two runs of equal scenarios produce
/// byte-identical summaries; `out` and `threads` do not enter the hash.
struct Scenario {
  std::string name = "scenario";
  std::uint64_t seed = 1;
  GridSpec grid;
  WeightParams weight;
  bool weight_seed_set = false;  // otherwise drawn from the master seed
  CoefficientSpec coefficients;
  bool coefficient_seed_set = false;
  int per_octave = 8;
  std::vector<Experiment> experiments;
  CoercivitySettings coercivity;
  ResolventSettings resolvents;
  OffDiagSettings offdiag;
  LPSettings lp;
  PoincareSettings poincare;
  PrincipalSettings principal_part;
  EmbedSettings carleson_embed;
  TbSettings tb;
  CarlesonMainConfig carleson_main;
  bool carleson_epsilon_set = false;  // otherwise the tb calibration, if run
  KatoSettings kato;
  Tolerances tolerances;
  std::string out = "out";
  int threads = 1;

  /// Throws ScenarioError. Unknown keys are errors so typos cannot silently
  /// fall back to defaults.
  [[nodiscard]] static Scenario from_json(const nlohmann::json& doc);
  [[nodiscard]] static Scenario from_toml(std::string_view text);
  [[nodiscard]] static Scenario from_file(const std::string& path);

  /// Normalized form with every default filled in.
  [[nodiscard]] nlohmann::json to_json() const;
  /// FNV-1a of the normalized form without `out` and `threads`.
  [[nodiscard]] std::uint64_t hash() const;
  /// Seeds actually used after deriving the unset ones from `seed`.
  [[nodiscard]] std::uint64_t weight_seed() const;
  [[nodiscard]] std::uint64_t coefficient_seed() const;
  /// Throws ScenarioError for inconsistent values.
  void validate() const;
};

/// Sets the value at a dotted path ("grid.Nx") in a scenario document,
/// creating tables as needed. Used by sweeps and CLI overrides.
void set_path(nlohmann::json& doc, std::string_view path, nlohmann::json value);

[[nodiscard]] std::string hex64(std::uint64_t v);
[[nodiscard]] std::uint64_t fnv1a(std::string_view bytes);

}  // namespace kato
