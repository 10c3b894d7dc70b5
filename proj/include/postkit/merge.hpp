#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "postkit/tensor_store.hpp"

namespace postkit {

enum class MergeMethod {
  kLinear,
  kTaskArithmetic,
  kTies,
  kDareTies,
  kConsensusTa,
  kDellaLinear,
};

std::string_view method_name(MergeMethod method) noexcept;
std::optional<MergeMethod> parse_method(std::string_view name) noexcept;
// "linear, task_arithmetic, ties, dare_ties, consensus_ta, della_linear"
std::string method_list();
// Linear merges model weights directly; every other method works on deltas
// against a base checkpoint.
bool method_needs_base(MergeMethod method) noexcept;
std::size_t method_min_models(MergeMethod method) noexcept;

enum class SparsifyMode { kTrim, kDare, kMagprune };

struct MergeParams {
  // Per-input weights w_i >= 0. Empty means 1 for every input.
  std::vector<double> weights;
  // Per-input densities in (0, 1]. Empty means `density` for every input.
  std::vector<double> densities;
  double density = 1.0;
  // Scale applied to the fused delta.
  double lambda = 1.0;
  // Spread of MAGPRUNE drop probabilities around 1 - density.
  double epsilon = 0.0;
  // Consensus-TA mask threshold and minimum number of agreeing tasks.
  double tall_threshold = 1.0;
  int consensus_k = 2;
  std::uint64_t seed = 0;
  bool normalize = true;
  // Worker threads for per-tensor processing; results do not depend on it.
  unsigned jobs = 1;

  double weight_of(std::size_t i) const { return weights.empty() ? 1.0 : weights[i]; }
  double density_of(std::size_t i) const { return densities.empty() ? density : densities[i]; }
};

// Per-tensor deltas (always F32) of a fine-tuned checkpoint against its base.
struct TaskVector {
  TensorMap deltas;
  std::string base_id;
};

TaskVector task_vector(const TensorMap& model, const TensorMap& base, std::string base_id = {});

// base + lambda * delta, accumulated in 32-bit and cast back to each base dtype.
TensorMap apply_delta(const TensorMap& base, const TaskVector& delta, double lambda,
                      unsigned jobs = 1);

// TRIM keeps the ceil(d*n) largest magnitudes per tensor. DARE and MAGPRUNE
// drop at random and rescale survivors; draws are keyed on
// (seed, tensor name, flat index) only.
TaskVector sparsify(const TaskVector& tv, SparsifyMode mode, const MergeParams& params);

// TIES sign election by weighted mass followed by the disjoint weighted mean.
TaskVector elect_and_disjoint(std::span<const TaskVector* const> tvs,
                              std::span<const double> weights, unsigned jobs = 1);

// Merges run in 32-bit float pairs (value = hi + lo) built from error-free
// transforms, with one rounding per output element. Merging identical
// fine-tunes returns them exactly.
TensorMap merge_linear(std::span<const TensorMap* const> models, const MergeParams& params);
TensorMap merge_task_arithmetic(const TensorMap& base, std::span<const TensorMap* const> models,
                                const MergeParams& params);
TensorMap merge_ties(const TensorMap& base, std::span<const TensorMap* const> models,
                     const MergeParams& params);
TensorMap merge_dare_ties(const TensorMap& base, std::span<const TensorMap* const> models,
                          const MergeParams& params);
TensorMap merge_consensus_ta(const TensorMap& base, std::span<const TensorMap* const> models,
                             const MergeParams& params);
TensorMap merge_della_linear(const TensorMap& base, std::span<const TensorMap* const> models,
                             const MergeParams& params);

// Dispatch by method. `base` may be null only for kLinear.
TensorMap merge(MergeMethod method, const TensorMap* base,
                std::span<const TensorMap* const> models, const MergeParams& params);

// Throws on any MergeParams invariant violation for `n_models` inputs.
void check_params(const MergeParams& params, std::size_t n_models);

namespace kernels {

// Sum in ascending value order so the result is independent of input order.
float ordered_sum(std::span<float> terms);

void trim(std::span<float> values, double density);
void dare(std::span<float> values, double density, std::uint64_t seed, std::string_view tensor);
void magprune(std::span<float> values, double density, double epsilon, std::uint64_t seed,
              std::string_view tensor);
// Number of elements TRIM keeps: ceil(density * n).
std::size_t trim_keep_count(double density, std::size_t n);
// Drop probability of the element at ascending-magnitude rank k of n.
double magprune_drop_probability(double density, double epsilon, std::size_t rank, std::size_t n);

void elect_disjoint(std::span<const std::span<const float>> taus, std::span<const float> weights,
                    std::span<float> out);

}  // namespace kernels

}  // namespace postkit
