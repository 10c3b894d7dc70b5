#include "postkit/planner.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <set>

#include "json.hpp"
#include "postkit/error.hpp"

namespace postkit {

namespace {

using json = nlohmann::json;
using u128 = unsigned __int128;

constexpr Category kCategories[] = {Category::kSea, Category::kEn, Category::kCode};
constexpr double kRatioSumSlack = 1e-9;

std::uint64_t mul_div_floor(std::uint64_t a, std::uint64_t b, std::uint64_t c) {
  return static_cast<std::uint64_t>(static_cast<u128>(a) * b / c);
}

// Hands out `target` tokens across `members` (indices into sources)
// proportionally to availability.
void allocate_category(const std::vector<SourceSpec>& sources,
                       const std::vector<std::size_t>& members, std::uint64_t target,
                       std::vector<Allocation>& out) {
  std::uint64_t available = 0;
  for (auto i : members) available += sources[i].available_tokens;
  std::uint64_t given = 0;
  for (auto i : members) {
    const std::uint64_t share =
        available == 0 ? 0 : mul_div_floor(target, sources[i].available_tokens, available);
    out[i].tokens = share;
    given += share;
  }
  // Residue to the largest source first (earliest on ties); spill over only
  // if that source has no headroom left.
  std::vector<std::size_t> by_size = members;
  std::stable_sort(by_size.begin(), by_size.end(), [&](std::size_t a, std::size_t b) {
    return sources[a].available_tokens > sources[b].available_tokens;
  });
  std::uint64_t residue = target - given;
  for (auto i : by_size) {
    if (residue == 0) break;
    const std::uint64_t room = sources[i].available_tokens - out[i].tokens;
    const std::uint64_t add = std::min(room, residue);
    out[i].tokens += add;
    residue -= add;
  }
}

}  // namespace

std::string_view category_name(Category c) noexcept {
  switch (c) {
    case Category::kSea: return "SEA";
    case Category::kEn: return "EN";
    case Category::kCode: return "CODE";
  }
  return "?";
}

std::optional<Category> parse_category(std::string_view name) noexcept {
  for (auto c : kCategories) {
    if (category_name(c) == name) return c;
  }
  return std::nullopt;
}

MixPlan plan_mix(const std::vector<SourceSpec>& sources,
                 const std::map<Category, double>& ratios, std::uint64_t budget) {
  if (budget == 0) throw Error(Errc::kInvalidArgument, "budget must be positive");
  double ratio_sum = 0.0;
  for (const auto& [c, r] : ratios) {
    if (!std::isfinite(r) || r < 0.0 || r > 1.0) {
      throw Error(Errc::kRatioSumInvalid,
                  "ratio for " + std::string(category_name(c)) + " must lie in [0, 1]");
    }
    ratio_sum += r;
  }
  if (std::fabs(ratio_sum - 1.0) > kRatioSumSlack) {
    throw Error(Errc::kRatioSumInvalid, "ratios sum to " + std::to_string(ratio_sum) + ", not 1");
  }
  std::set<std::string> names;
  for (const auto& s : sources) {
    if (s.name.empty() || !names.insert(s.name).second) {
      throw Error(Errc::kInvalidArgument, "source names must be unique and non-empty");
    }
  }

  // Category targets: nearest integer to ratio * budget, residue to the
  // category with the largest target so the targets sum to the budget.
  std::map<Category, std::uint64_t> targets;
  std::uint64_t assigned = 0;
  for (auto c : kCategories) {
    const auto it = ratios.find(c);
    const long double r = it == ratios.end() ? 0.0L : static_cast<long double>(it->second);
    const auto t = static_cast<std::uint64_t>(std::llroundl(r * static_cast<long double>(budget)));
    targets[c] = std::min(t, budget);
    assigned += targets[c];
  }
  auto largest = std::max_element(targets.begin(), targets.end(), [](auto& a, auto& b) {
    return a.second < b.second;
  });
  if (assigned > budget) {
    largest->second -= assigned - budget;
  } else {
    largest->second += budget - assigned;
  }

  MixPlan plan;
  plan.total_budget = budget;
  for (const auto& s : sources) plan.allocations.push_back({s.name, s.category, 0});
  for (auto c : kCategories) {
    std::vector<std::size_t> members;
    std::uint64_t available = 0;
    for (std::size_t i = 0; i < sources.size(); ++i) {
      if (sources[i].category == c) {
        members.push_back(i);
        available += sources[i].available_tokens;
      }
    }
    const std::uint64_t target = targets[c];
    if (available < target) {
      throw Error(Errc::kBudgetInfeasible,
                  std::string(category_name(c)) + " needs " + std::to_string(target) +
                      " tokens but only " + std::to_string(available) + " are available");
    }
    allocate_category(sources, members, target, plan.allocations);
    plan.category_totals[c] = target;
  }
  return plan;
}

std::uint64_t parse_token_count(std::string_view text) {
  auto fail = [&]() -> Error {
    return Error(Errc::kInvalidArgument,
                 "'" + std::string(text) + "' is not a whole non-negative token count");
  };
  std::size_t i = 0;
  std::string digits;
  std::int64_t frac_len = 0;
  bool seen_dot = false;
  for (; i < text.size(); ++i) {
    const char c = text[i];
    if (c >= '0' && c <= '9') {
      digits.push_back(c);
      if (seen_dot) ++frac_len;
    } else if (c == '.' && !seen_dot) {
      seen_dot = true;
    } else {
      break;
    }
  }
  if (digits.empty()) throw fail();
  std::int64_t exponent = 0;
  if (i < text.size()) {
    if (text[i] != 'e' && text[i] != 'E') throw fail();
    ++i;
    bool negative = false;
    if (i < text.size() && (text[i] == '+' || text[i] == '-')) negative = text[i++] == '-';
    if (i == text.size()) throw fail();
    for (; i < text.size(); ++i) {
      if (text[i] < '0' || text[i] > '9' || exponent > 1000) throw fail();
      exponent = exponent * 10 + (text[i] - '0');
    }
    if (negative) exponent = -exponent;
  }
  std::int64_t scale = exponent - frac_len;
  // A negative scale may only strip trailing zeros.
  while (scale < 0 && !digits.empty() && digits.back() == '0') {
    digits.pop_back();
    ++scale;
  }
  if (scale < 0) {
    if (std::all_of(digits.begin(), digits.end(), [](char c) { return c == '0'; })) return 0;
    throw fail();
  }
  u128 value = 0;
  constexpr u128 kMax = std::numeric_limits<std::uint64_t>::max();
  for (char c : digits) {
    value = value * 10 + static_cast<unsigned>(c - '0');
    if (value > kMax) throw fail();
  }
  for (std::int64_t s = 0; s < scale; ++s) {
    value *= 10;
    if (value > kMax) throw fail();
  }
  return static_cast<std::uint64_t>(value);
}

std::vector<SourceSpec> sources_from_json(std::string_view text) {
  json doc = json::parse(text, nullptr, false);
  if (doc.is_discarded()) throw Error(Errc::kSyntaxError, "sources file is not valid JSON");
  if (!doc.is_object() || !doc.contains("sources") || !doc["sources"].is_array()) {
    throw Error(Errc::kInvalidArgument, "sources file needs a 'sources' array");
  }
  std::vector<SourceSpec> out;
  for (const auto& s : doc["sources"]) {
    if (!s.is_object() || !s.contains("name") || !s["name"].is_string() ||
        !s.contains("category") || !s["category"].is_string() || !s.contains("available_tokens")) {
      throw Error(Errc::kInvalidArgument,
                  "each source needs 'name', 'category' and 'available_tokens'");
    }
    SourceSpec spec;
    spec.name = s["name"].get<std::string>();
    const auto cat = parse_category(s["category"].get<std::string>());
    if (!cat) {
      throw Error(Errc::kInvalidArgument, "source '" + spec.name + "' has unknown category '" +
                                              s["category"].get<std::string>() + "'");
    }
    spec.category = *cat;
    const auto& tokens = s["available_tokens"];
    if (tokens.is_number_unsigned()) {
      spec.available_tokens = tokens.get<std::uint64_t>();
    } else if (tokens.is_string()) {
      spec.available_tokens = parse_token_count(tokens.get<std::string>());
    } else {
      throw Error(Errc::kInvalidArgument,
                  "source '" + spec.name + "' needs a non-negative integer token count");
    }
    out.push_back(std::move(spec));
  }
  return out;
}

void check_schedule(const WsdSchedule& s) {
  if (!std::isfinite(s.total) || s.total <= 0.0) {
    throw Error(Errc::kInvalidArgument, "schedule total must be positive");
  }
  if (!(s.warmup_fraction >= 0.0) || !(s.decay_fraction >= 0.0) ||
      s.warmup_fraction + s.decay_fraction > 1.0) {
    throw Error(Errc::kInvalidArgument, "need 0 <= warmup_fraction + decay_fraction <= 1");
  }
  if (!std::isfinite(s.eta_max) || !std::isfinite(s.eta_min) || s.eta_min < 0.0 ||
      s.eta_min > s.eta_max) {
    throw Error(Errc::kInvalidArgument, "need 0 <= eta_min <= eta_max");
  }
}

double lr_at(const WsdSchedule& s, double t) {
  check_schedule(s);
  if (!(t >= 0.0 && t <= s.total)) {
    throw Error(Errc::kOutOfRange,
                "t = " + std::to_string(t) + " outside [0, " + std::to_string(s.total) + "]");
  }
  if (t == s.total) return s.eta_min;
  const double warmup_end = s.warmup_fraction * s.total;
  const double decay_start = (1.0 - s.decay_fraction) * s.total;
  if (t < warmup_end) return s.eta_max * (t / warmup_end);
  if (t < decay_start) return s.eta_max;
  const double frac = (t - decay_start) / (s.total - decay_start);
  if (s.decay_shape == DecayShape::kCosine) {
    return s.eta_min +
           (s.eta_max - s.eta_min) * 0.5 * (1.0 + std::cos(std::numbers::pi * frac));
  }
  return s.eta_max + (s.eta_min - s.eta_max) * frac;
}

void check_optimizer(const OptimizerConfig& o) {
  if (o.name != "adamw") throw Error(Errc::kInvalidArgument, "only adamw is supported");
  if (!(o.beta1 >= 0.0 && o.beta1 < 1.0) || !(o.beta2 >= 0.0 && o.beta2 < 1.0)) {
    throw Error(Errc::kInvalidArgument, "betas must lie in [0, 1)");
  }
  if (!(o.eps > 0.0)) throw Error(Errc::kInvalidArgument, "eps must be positive");
  if (!std::isfinite(o.weight_decay) || o.weight_decay < 0.0) {
    throw Error(Errc::kInvalidArgument, "weight_decay must be >= 0");
  }
}

namespace {

json plan_json(const MixPlan& plan) {
  json allocations = json::array();
  for (const auto& a : plan.allocations) {
    allocations.push_back(
        {{"name", a.name}, {"category", category_name(a.category)}, {"tokens", a.tokens}});
  }
  json totals = json::object();
  for (const auto& [c, t] : plan.category_totals) totals[std::string(category_name(c))] = t;
  return json{{"total_budget", plan.total_budget},
              {"category_totals", totals},
              {"allocations", allocations}};
}

}  // namespace

std::string plan_to_json(const MixPlan& plan) { return plan_json(plan).dump(); }

std::string emit_train_config(const MixPlan& plan, const WsdSchedule& schedule,
                              const OptimizerConfig& opt) {
  check_schedule(schedule);
  check_optimizer(opt);
  json table = json::array();
  for (int pct = 0; pct <= 100; ++pct) {
    const double t = pct == 100 ? schedule.total : schedule.total * pct / 100.0;
    table.push_back({{"percent", pct}, {"t", t}, {"lr", lr_at(schedule, t)}});
  }
  json doc{
      {"mix", plan_json(plan)},
      {"schedule",
       {{"kind", "wsd"},
        {"total", schedule.total},
        {"warmup_fraction", schedule.warmup_fraction},
        {"decay_fraction", schedule.decay_fraction},
        {"eta_max", schedule.eta_max},
        {"eta_min", schedule.eta_min},
        {"decay_shape", schedule.decay_shape == DecayShape::kCosine ? "cosine" : "linear"},
        {"table", table}}},
      {"optimizer",
       {{"name", opt.name},
        {"beta1", opt.beta1},
        {"beta2", opt.beta2},
        {"eps", opt.eps},
        {"weight_decay", opt.weight_decay}}},
  };
  return doc.dump(2);
}

}  // namespace postkit
