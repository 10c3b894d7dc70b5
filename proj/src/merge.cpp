#include "postkit/merge.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "postkit/error.hpp"
#include "postkit/keyed_random.hpp"
#include "postkit/parallel.hpp"

namespace postkit {

namespace {

constexpr MergeMethod kAllMethods[] = {
    MergeMethod::kLinear,   MergeMethod::kTaskArithmetic, MergeMethod::kTies,
    MergeMethod::kDareTies, MergeMethod::kConsensusTa,    MergeMethod::kDellaLinear,
};

// Probabilities computed from decimal parameters land a few ulps outside
// [0, 1) at the exact boundary (e.g. 1 - 0.9 - 0.1); snap those back.
constexpr double kProbabilitySlack = 1e-12;

// A value carried as the unevaluated sum hi + lo of two floats. Built from
// error-free transforms, so merges stay in 32-bit arithmetic while keeping
// the low bits that m - b loses when |b| dwarfs |m|.
struct Wide {
  float hi = 0.0f;
  float lo = 0.0f;

  float value() const { return hi + lo; }
  bool zero() const { return hi == 0.0f && lo == 0.0f; }
  bool positive() const { return hi > 0.0f || (hi == 0.0f && lo > 0.0f); }
};

Wide two_sum(float a, float b) {
  const float s = a + b;
  const float bb = s - a;
  return {s, (a - (s - bb)) + (b - bb)};
}

Wide add(Wide a, Wide b) {
  const Wide s = two_sum(a.hi, b.hi);
  return two_sum(s.hi, s.lo + (a.lo + b.lo));
}

Wide scale(Wide a, float w) {
  const float p = a.hi * w;
  return two_sum(p, std::fma(a.hi, w, -p) + a.lo * w);
}

Wide divide(Wide a, Wide d) {
  const float q = a.hi / d.hi;
  const float p = q * d.hi;
  const float r = ((a.hi - p) - std::fma(q, d.hi, -p)) + (a.lo - q * d.lo);
  return two_sum(q, r / d.hi);
}

// Ascending by leading part, so the sum ignores input order.
Wide ordered_sum(std::vector<Wide>& terms) {
  std::sort(terms.begin(), terms.end(), [](const Wide& a, const Wide& b) {
    return a.hi != b.hi ? a.hi < b.hi : a.lo < b.lo;
  });
  Wide acc;
  for (const Wide& t : terms) acc = add(acc, t);
  return acc;
}

// base + lambda * fused with a single final rounding.
float apply(float base, Wide fused, float lambda) {
  const Wide step = scale(fused, lambda);
  const Wide s = two_sum(base, step.hi);
  return s.hi + (s.lo + step.lo);
}

// Weighted disjoint mean of the entries agreeing with the elected sign.
Wide elect(std::span<const Wide> taus, std::span<const float> weights) {
  std::vector<Wide> mass(taus.size());
  for (std::size_t i = 0; i < taus.size(); ++i) mass[i] = scale(taus[i], weights[i]);
  const Wide total = ordered_sum(mass);
  if (total.zero()) return {};
  const bool positive = total.positive();
  std::vector<Wide> num, den;
  std::size_t last = 0;
  for (std::size_t i = 0; i < taus.size(); ++i) {
    const float t = taus[i].hi;
    if (t == 0.0f || (t > 0.0f) != positive) continue;
    num.push_back(scale(taus[i], weights[i]));
    den.push_back({weights[i]});
    last = i;
  }
  // A lone agreeing entry is its own mean; skipping w * t / w keeps it exact.
  if (num.size() == 1 && weights[last] > 0.0f) return taus[last];
  const Wide d = ordered_sum(den);
  return d.positive() ? divide(ordered_sum(num), d) : Wide{};
}

std::vector<std::string> names_of(const TensorMap& m) {
  std::vector<std::string> out;
  out.reserve(m.entries.size());
  for (const auto& [name, unused] : m.entries) out.push_back(name);
  return out;
}

void require_compatible(std::span<const TensorMap* const> maps, const char* what) {
  const auto report = validate_compat(maps);
  if (report.ok) return;
  std::string detail;
  if (!report.name_differences.empty()) {
    detail = "tensor '" + report.name_differences.front() + "' is not present in every input";
  } else if (!report.shape_mismatches.empty()) {
    detail = "shape mismatch on '" + report.shape_mismatches.front().name + "'";
  } else {
    detail = "dtype mismatch on '" + report.dtype_mismatches.front().name + "'";
  }
  throw Error(Errc::kIncompatibleCheckpoints, std::string(what) + ": " + detail);
}

// Names and shapes must agree; dtypes may differ (deltas are always F32).
void require_same_layout(const TensorMap& a, const TensorMap& b, const char* what) {
  if (a.entries.size() != b.entries.size()) {
    throw Error(Errc::kIncompatibleCheckpoints, std::string(what) + ": tensor sets differ");
  }
  for (const auto& [name, t] : a.entries) {
    auto it = b.entries.find(name);
    if (it == b.entries.end()) {
      throw Error(Errc::kIncompatibleCheckpoints,
                  std::string(what) + ": tensor '" + name + "' missing");
    }
    if (it->second.shape() != t.shape()) {
      throw Error(Errc::kIncompatibleCheckpoints,
                  std::string(what) + ": shape mismatch on '" + name + "'");
    }
  }
}

std::vector<float> float_weights(const MergeParams& params, std::size_t n) {
  std::vector<float> w(n);
  for (std::size_t i = 0; i < n; ++i) w[i] = static_cast<float>(params.weight_of(i));
  return w;
}

// Normalizer for weighted sums: sum of weights, or 1.
Wide normalizer(const MergeParams& params, std::size_t n) {
  if (!params.normalize) return {1.0f};
  std::vector<Wide> w;
  for (float x : float_weights(params, n)) w.push_back({x});
  const Wide z = ordered_sum(w);
  if (!z.positive()) throw Error(Errc::kZeroWeightSum, "weights sum to zero with normalize on");
  return z;
}

void require_finite(std::span<const float> values, const std::string& name) {
  for (float v : values) {
    if (!std::isfinite(v)) {
      throw Error(Errc::kNonFiniteValue, "tensor '" + name + "' became non-finite");
    }
  }
}

// Runs `body(name, base_values, model_values, out)` per tensor, in parallel,
// and assembles the output in the base's dtypes.
template <class Body>
TensorMap per_tensor(const TensorMap& layout, std::span<const TensorMap* const> models,
                     unsigned jobs, Body&& body) {
  const auto names = names_of(layout);
  std::vector<Tensor> results(names.size());
  parallel_for(names.size(), jobs, [&](std::size_t idx) {
    const std::string& name = names[idx];
    const Tensor& ref = layout.entries.at(name);
    const std::vector<float> base_values = ref.to_f32();
    std::vector<std::vector<float>> model_values;
    model_values.reserve(models.size());
    for (const auto* m : models) model_values.push_back(m->entries.at(name).to_f32());
    std::vector<float> out(base_values.size());
    body(name, base_values, model_values, out);
    require_finite(out, name);
    results[idx] = Tensor::from_f32(ref.dtype(), ref.shape(), out);
  });
  TensorMap merged;
  merged.metadata = layout.metadata;
  for (std::size_t i = 0; i < names.size(); ++i) {
    merged.entries.emplace(names[i], std::move(results[i]));
  }
  return merged;
}

void sparsify_inplace(std::span<float> values, SparsifyMode mode, double density,
                      const MergeParams& params, std::string_view name) {
  switch (mode) {
    case SparsifyMode::kTrim: kernels::trim(values, density); break;
    case SparsifyMode::kDare: kernels::dare(values, density, params.seed, name); break;
    case SparsifyMode::kMagprune:
      kernels::magprune(values, density, params.epsilon, params.seed, name);
      break;
  }
}

// Replaces each model by its delta's leading part and returns the residuals.
std::vector<std::vector<float>> deltas_of(const std::vector<float>& base,
                                          std::vector<std::vector<float>>& models) {
  std::vector<std::vector<float>> residuals;
  for (auto& m : models) {
    std::vector<float>& lo = residuals.emplace_back(m.size());
    for (std::size_t j = 0; j < m.size(); ++j) {
      const Wide d = two_sum(m[j], -base[j]);
      m[j] = d.hi;
      lo[j] = d.lo;
    }
  }
  return residuals;
}

// Sparsifies leading parts; residuals follow their element's fate and rescale.
void sparsify_delta(std::vector<float>& hi, std::vector<float>& lo, SparsifyMode mode,
                    double density, const MergeParams& params, std::string_view name) {
  const std::vector<float> before = hi;
  sparsify_inplace(hi, mode, density, params, name);
  for (std::size_t j = 0; j < hi.size(); ++j) {
    if (hi[j] == 0.0f) {
      lo[j] = 0.0f;
    } else if (hi[j] != before[j]) {
      lo[j] *= hi[j] / before[j];
    }
  }
}

std::vector<Wide> column(const std::vector<std::vector<float>>& hi,
                         const std::vector<std::vector<float>>& lo, std::size_t j) {
  std::vector<Wide> out(hi.size());
  for (std::size_t i = 0; i < hi.size(); ++i) out[i] = {hi[i][j], lo[i][j]};
  return out;
}

void prepare(const TensorMap& base, std::span<const TensorMap* const> models,
             const MergeParams& params, MergeMethod method) {
  if (models.size() < method_min_models(method)) {
    throw Error(Errc::kInvalidArgument, std::string(method_name(method)) + " needs at least " +
                                            std::to_string(method_min_models(method)) +
                                            " models, got " + std::to_string(models.size()));
  }
  check_params(params, models.size());
  if (method == MergeMethod::kConsensusTa &&
      (params.consensus_k < 1 || static_cast<std::size_t>(params.consensus_k) > models.size())) {
    throw Error(Errc::kInvalidConsensusK,
                "consensus_k must lie in [1, " + std::to_string(models.size()) + "]");
  }
  std::vector<const TensorMap*> all{&base};
  all.insert(all.end(), models.begin(), models.end());
  require_compatible(all, std::string(method_name(method)).c_str());
}

// Shared body of TIES and DARE-TIES.
TensorMap ties_family(const TensorMap& base, std::span<const TensorMap* const> models,
                      const MergeParams& params, SparsifyMode mode) {
  const auto w = float_weights(params, models.size());
  const float lambda = static_cast<float>(params.lambda);
  return per_tensor(base, models, params.jobs,
                    [&](const std::string& name, const std::vector<float>& b,
                        std::vector<std::vector<float>>& m, std::vector<float>& out) {
                      auto lo = deltas_of(b, m);
                      for (std::size_t i = 0; i < m.size(); ++i) {
                        sparsify_delta(m[i], lo[i], mode, params.density_of(i), params, name);
                      }
                      for (std::size_t j = 0; j < b.size(); ++j) {
                        out[j] = apply(b[j], elect(column(m, lo, j), w), lambda);
                      }
                    });
}

// base + lambda * (sum_i w_i tau_i) / Z with an optional sparsifier on each tau.
TensorMap linear_on_deltas(const TensorMap& base, std::span<const TensorMap* const> models,
                           const MergeParams& params, std::optional<SparsifyMode> mode) {
  const auto w = float_weights(params, models.size());
  const Wide z = normalizer(params, models.size());
  const float lambda = static_cast<float>(params.lambda);
  return per_tensor(base, models, params.jobs,
                    [&](const std::string& name, const std::vector<float>& b,
                        std::vector<std::vector<float>>& m, std::vector<float>& out) {
                      auto lo = deltas_of(b, m);
                      if (mode) {
                        for (std::size_t i = 0; i < m.size(); ++i) {
                          sparsify_delta(m[i], lo[i], *mode, params.density_of(i), params, name);
                        }
                      }
                      for (std::size_t j = 0; j < b.size(); ++j) {
                        auto terms = column(m, lo, j);
                        for (std::size_t i = 0; i < m.size(); ++i) terms[i] = scale(terms[i], w[i]);
                        out[j] = apply(b[j], divide(ordered_sum(terms), z), lambda);
                      }
                    });
}

}  // namespace

std::string_view method_name(MergeMethod method) noexcept {
  switch (method) {
    case MergeMethod::kLinear: return "linear";
    case MergeMethod::kTaskArithmetic: return "task_arithmetic";
    case MergeMethod::kTies: return "ties";
    case MergeMethod::kDareTies: return "dare_ties";
    case MergeMethod::kConsensusTa: return "consensus_ta";
    case MergeMethod::kDellaLinear: return "della_linear";
  }
  return "?";
}

std::optional<MergeMethod> parse_method(std::string_view name) noexcept {
  for (auto m : kAllMethods) {
    if (method_name(m) == name) return m;
  }
  return std::nullopt;
}

std::string method_list() {
  std::string out;
  for (auto m : kAllMethods) {
    if (!out.empty()) out += ", ";
    out += method_name(m);
  }
  return out;
}

bool method_needs_base(MergeMethod method) noexcept { return method != MergeMethod::kLinear; }

std::size_t method_min_models(MergeMethod method) noexcept {
  switch (method) {
    case MergeMethod::kTies:
    case MergeMethod::kDareTies:
    case MergeMethod::kConsensusTa: return 2;
    default: return 1;
  }
}

void check_params(const MergeParams& params, std::size_t n_models) {
  if (!params.weights.empty() && params.weights.size() != n_models) {
    throw Error(Errc::kInvalidArgument, "got " + std::to_string(params.weights.size()) +
                                            " weights for " + std::to_string(n_models) + " models");
  }
  for (double w : params.weights) {
    if (!std::isfinite(w) || w < 0.0) {
      throw Error(Errc::kInvalidArgument, "weights must be finite and non-negative");
    }
  }
  if (!params.densities.empty() && params.densities.size() != n_models) {
    throw Error(Errc::kInvalidArgument, "got " + std::to_string(params.densities.size()) +
                                            " densities for " + std::to_string(n_models) +
                                            " models");
  }
  auto check_density = [](double d) {
    if (!(d > 0.0 && d <= 1.0)) {
      throw Error(Errc::kInvalidDensity, "density " + std::to_string(d) + " not in (0, 1]");
    }
  };
  check_density(params.density);
  for (double d : params.densities) check_density(d);
  if (!std::isfinite(params.lambda) || params.lambda < 0.0) {
    throw Error(Errc::kInvalidArgument, "lambda must be finite and >= 0");
  }
  if (!std::isfinite(params.epsilon) || params.epsilon < 0.0) {
    throw Error(Errc::kInvalidArgument, "epsilon must be finite and >= 0");
  }
  if (!std::isfinite(params.tall_threshold) || params.tall_threshold <= 0.0) {
    throw Error(Errc::kInvalidArgument, "tall_threshold must be > 0");
  }
  if (params.consensus_k < 1) throw Error(Errc::kInvalidConsensusK, "consensus_k must be >= 1");
}

namespace kernels {

float ordered_sum(std::span<float> terms) {
  std::sort(terms.begin(), terms.end());
  float acc = 0.0f;
  for (float t : terms) acc += t;
  return acc;
}

std::size_t trim_keep_count(double density, std::size_t n) {
  const double x = density * static_cast<double>(n);
  // Relative slack absorbs representation error such as 0.3 * 10 > 3.
  auto k = static_cast<std::size_t>(std::ceil(x * (1.0 - 1e-12)));
  return std::min(k, n);
}

void trim(std::span<float> values, double density) {
  const std::size_t n = values.size();
  const std::size_t keep = trim_keep_count(density, n);
  if (keep >= n) return;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  // Larger magnitude first; equal magnitudes keep the lower index first.
  auto before = [&](std::size_t a, std::size_t b) {
    const float ma = std::fabs(values[a]);
    const float mb = std::fabs(values[b]);
    return ma != mb ? ma > mb : a < b;
  };
  std::nth_element(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(keep), order.end(),
                   before);
  for (std::size_t r = keep; r < n; ++r) values[order[r]] = 0.0f;
}

void dare(std::span<float> values, double density, std::uint64_t seed, std::string_view tensor) {
  if (density >= 1.0) return;
  const double drop = 1.0 - density;
  const std::uint64_t stream = fnv1a64(tensor);
  const float keep = static_cast<float>(density);
  for (std::size_t j = 0; j < values.size(); ++j) {
    if (keyed_uniform(seed, {stream, j}) < drop) {
      values[j] = 0.0f;
    } else {
      values[j] = values[j] / keep;
    }
  }
}

double magprune_drop_probability(double density, double epsilon, std::size_t rank,
                                 std::size_t n) {
  double p = 1.0 - density;
  if (n > 1) {
    p += epsilon * (0.5 - static_cast<double>(rank) / static_cast<double>(n - 1));
  }
  if (p < 0.0 && p > -kProbabilitySlack) p = 0.0;
  if (p < 0.0 || p >= 1.0) {
    throw Error(Errc::kProbabilityOutOfRange,
                "drop probability " + std::to_string(p) + " at rank " + std::to_string(rank) +
                    " of " + std::to_string(n) + " is outside [0, 1)");
  }
  return p;
}

void magprune(std::span<float> values, double density, double epsilon, std::uint64_t seed,
              std::string_view tensor) {
  const std::size_t n = values.size();
  if (n == 0) return;
  // Validate the extreme ranks up front so nothing is written on failure.
  magprune_drop_probability(density, epsilon, 0, n);
  magprune_drop_probability(density, epsilon, n - 1, n);
  if (density >= 1.0 && epsilon == 0.0) return;

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const float ma = std::fabs(values[a]);
    const float mb = std::fabs(values[b]);
    return ma != mb ? ma < mb : a < b;
  });
  const std::uint64_t stream = fnv1a64(tensor);
  for (std::size_t rank = 0; rank < n; ++rank) {
    const std::size_t j = order[rank];
    const double p = magprune_drop_probability(density, epsilon, rank, n);
    if (keyed_uniform(seed, {stream, j}) < p) {
      values[j] = 0.0f;
    } else {
      values[j] = values[j] / static_cast<float>(1.0 - p);
    }
  }
}

void elect_disjoint(std::span<const std::span<const float>> taus, std::span<const float> weights,
                    std::span<float> out) {
  std::vector<Wide> at(taus.size());
  for (std::size_t j = 0; j < out.size(); ++j) {
    for (std::size_t i = 0; i < taus.size(); ++i) at[i] = {taus[i][j], 0.0f};
    out[j] = elect(at, weights).value();
  }
}

}  // namespace kernels

TaskVector task_vector(const TensorMap& model, const TensorMap& base, std::string base_id) {
  require_compatible(std::vector<const TensorMap*>{&model, &base}, "task_vector");
  TaskVector tv;
  tv.base_id = std::move(base_id);
  for (const auto& [name, b] : base.entries) {
    const Tensor& m = model.entries.at(name);
    std::vector<float> d(b.numel());
    for (std::size_t j = 0; j < d.size(); ++j) d[j] = m.get(j) - b.get(j);
    require_finite(d, name);
    tv.deltas.entries.emplace(name, Tensor::from_f32(DType::kF32, b.shape(), d));
  }
  return tv;
}

TensorMap apply_delta(const TensorMap& base, const TaskVector& delta, double lambda,
                      unsigned jobs) {
  require_same_layout(base, delta.deltas, "apply_delta");
  if (!std::isfinite(lambda)) throw Error(Errc::kInvalidArgument, "lambda must be finite");
  if (lambda == 0.0) return base;
  const float scale = static_cast<float>(lambda);
  std::vector<const TensorMap*> deltas{&delta.deltas};
  return per_tensor(base, deltas, jobs,
                    [&](const std::string&, const std::vector<float>& b,
                        std::vector<std::vector<float>>& d, std::vector<float>& out) {
                      for (std::size_t j = 0; j < b.size(); ++j) out[j] = b[j] + scale * d[0][j];
                    });
}

TaskVector sparsify(const TaskVector& tv, SparsifyMode mode, const MergeParams& params) {
  check_params(params, params.weights.empty() ? 1 : params.weights.size());
  TaskVector out;
  out.base_id = tv.base_id;
  for (const auto& [name, t] : tv.deltas.entries) {
    auto values = t.to_f32();
    sparsify_inplace(values, mode, params.density, params, name);
    out.deltas.entries.emplace(name, Tensor::from_f32(DType::kF32, t.shape(), values));
  }
  return out;
}

TaskVector elect_and_disjoint(std::span<const TaskVector* const> tvs,
                              std::span<const double> weights, unsigned jobs) {
  if (tvs.empty()) throw Error(Errc::kInvalidArgument, "elect_and_disjoint needs a task vector");
  if (weights.size() != tvs.size()) {
    throw Error(Errc::kInvalidArgument, "one weight per task vector required");
  }
  std::vector<const TensorMap*> maps;
  for (const auto* tv : tvs) maps.push_back(&tv->deltas);
  require_compatible(maps, "elect_and_disjoint");
  std::vector<float> w(weights.begin(), weights.end());
  TaskVector out;
  out.base_id = tvs.front()->base_id;
  // The first delta map provides names and shapes; its own values enter via `m`.
  out.deltas = per_tensor(tvs.front()->deltas, maps, jobs,
                          [&](const std::string&, const std::vector<float>&,
                              std::vector<std::vector<float>>& m, std::vector<float>& fused) {
                            std::vector<std::span<const float>> taus(m.begin(), m.end());
                            kernels::elect_disjoint(taus, w, fused);
                          });
  return out;
}

TensorMap merge_linear(std::span<const TensorMap* const> models, const MergeParams& params) {
  if (models.empty()) throw Error(Errc::kInvalidArgument, "linear merge needs at least one model");
  check_params(params, models.size());
  require_compatible(models, "linear");
  const auto w = float_weights(params, models.size());
  const Wide z = normalizer(params, models.size());
  return per_tensor(*models.front(), models, params.jobs,
                    [&](const std::string&, const std::vector<float>&,
                        std::vector<std::vector<float>>& m, std::vector<float>& out) {
                      std::vector<Wide> terms(m.size());
                      for (std::size_t j = 0; j < out.size(); ++j) {
                        for (std::size_t i = 0; i < m.size(); ++i) terms[i] = scale({m[i][j]}, w[i]);
                        out[j] = divide(ordered_sum(terms), z).value();
                      }
                    });
}

TensorMap merge_task_arithmetic(const TensorMap& base, std::span<const TensorMap* const> models,
                                const MergeParams& params) {
  prepare(base, models, params, MergeMethod::kTaskArithmetic);
  if (params.lambda == 0.0) return base;
  return linear_on_deltas(base, models, params, std::nullopt);
}

TensorMap merge_ties(const TensorMap& base, std::span<const TensorMap* const> models,
                     const MergeParams& params) {
  prepare(base, models, params, MergeMethod::kTies);
  if (params.lambda == 0.0) return base;
  return ties_family(base, models, params, SparsifyMode::kTrim);
}

TensorMap merge_dare_ties(const TensorMap& base, std::span<const TensorMap* const> models,
                          const MergeParams& params) {
  prepare(base, models, params, MergeMethod::kDareTies);
  if (params.lambda == 0.0) return base;
  return ties_family(base, models, params, SparsifyMode::kDare);
}

TensorMap merge_consensus_ta(const TensorMap& base, std::span<const TensorMap* const> models,
                             const MergeParams& params) {
  prepare(base, models, params, MergeMethod::kConsensusTa);
  if (params.lambda == 0.0) return base;
  const auto w = float_weights(params, models.size());
  const Wide z = normalizer(params, models.size());
  const float lambda = static_cast<float>(params.lambda);
  const float tall = static_cast<float>(params.tall_threshold);
  const auto k = static_cast<std::size_t>(params.consensus_k);
  return per_tensor(base, models, params.jobs,
                    [&](const std::string&, const std::vector<float>& b,
                        std::vector<std::vector<float>>& m, std::vector<float>& out) {
                      const auto lo = deltas_of(b, m);
                      for (std::size_t j = 0; j < b.size(); ++j) {
                        const auto taus = column(m, lo, j);
                        auto terms = taus;
                        for (std::size_t i = 0; i < m.size(); ++i) terms[i] = scale(terms[i], w[i]);
                        const Wide mtl = divide(ordered_sum(terms), z);
                        std::size_t votes = 0;
                        for (const Wide& t : taus) {
                          const float gap = add(mtl, {-t.hi, -t.lo}).value();
                          if (std::fabs(t.value()) >= tall * std::fabs(gap)) ++votes;
                        }
                        out[j] = votes >= k ? apply(b[j], mtl, lambda) : b[j];
                      }
                    });
}

TensorMap merge_della_linear(const TensorMap& base, std::span<const TensorMap* const> models,
                             const MergeParams& params) {
  prepare(base, models, params, MergeMethod::kDellaLinear);
  if (params.lambda == 0.0) return base;
  return linear_on_deltas(base, models, params, SparsifyMode::kMagprune);
}

TensorMap merge(MergeMethod method, const TensorMap* base,
                std::span<const TensorMap* const> models, const MergeParams& params) {
  if (method_needs_base(method) && base == nullptr) {
    throw Error(Errc::kInvalidArgument, std::string(method_name(method)) + " needs a base model");
  }
  switch (method) {
    case MergeMethod::kLinear: return merge_linear(models, params);
    case MergeMethod::kTaskArithmetic: return merge_task_arithmetic(*base, models, params);
    case MergeMethod::kTies: return merge_ties(*base, models, params);
    case MergeMethod::kDareTies: return merge_dare_ties(*base, models, params);
    case MergeMethod::kConsensusTa: return merge_consensus_ta(*base, models, params);
    case MergeMethod::kDellaLinear: return merge_della_linear(*base, models, params);
  }
  throw Error(Errc::kUnknownMethod, "unhandled merge method");
}

}  // namespace postkit
