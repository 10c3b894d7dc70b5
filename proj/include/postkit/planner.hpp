#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace postkit {

enum class Category { kSea, kEn, kCode };

std::string_view category_name(Category c) noexcept;
std::optional<Category> parse_category(std::string_view name) noexcept;

struct SourceSpec {
  std::string name;
  Category category = Category::kSea;
  std::uint64_t available_tokens = 0;
};

struct Allocation {
  std::string name;
  Category category = Category::kSea;
  std::uint64_t tokens = 0;
};

struct MixPlan {
  std::vector<Allocation> allocations;  // same order as the input sources
  std::map<Category, std::uint64_t> category_totals;
  std::uint64_t total_budget = 0;
};

// Splits `budget` across categories by `ratios`, then across each category's
// sources proportionally to availability. All token arithmetic is integral;
// rounding residue goes to the largest source of the category.
MixPlan plan_mix(const std::vector<SourceSpec>& sources,
                 const std::map<Category, double>& ratios, std::uint64_t budget);

// Parses integer token counts written in plain or scientific notation
// ("200e9", "47.58e9", "1000"). Rejects values that are not whole numbers.
std::uint64_t parse_token_count(std::string_view text);

// {"sources":[{"name","category","available_tokens"}]}. Token counts may be
// JSON integers or strings accepted by parse_token_count.
std::vector<SourceSpec> sources_from_json(std::string_view text);

enum class DecayShape { kLinear, kCosine };

struct WsdSchedule {
  double total = 0.0;  // tokens or steps
  double warmup_fraction = 0.10;
  double decay_fraction = 0.10;
  double eta_max = 1e-5;
  double eta_min = 1e-7;
  DecayShape decay_shape = DecayShape::kLinear;
};

void check_schedule(const WsdSchedule& s);

// Warmup-stable-decay learning rate at position t in [0, total].
double lr_at(const WsdSchedule& s, double t);

struct OptimizerConfig {
  std::string name = "adamw";
  double beta1 = 0.9;
  double beta2 = 0.95;
  double eps = 1e-15;
  double weight_decay = 0.0;
};

void check_optimizer(const OptimizerConfig& o);

// Deterministic JSON document: mix plan, lr sampled at every 1% of the
// schedule, and optimizer fields.
std::string emit_train_config(const MixPlan& plan, const WsdSchedule& schedule,
                              const OptimizerConfig& opt);

std::string plan_to_json(const MixPlan& plan);

}  // namespace postkit
