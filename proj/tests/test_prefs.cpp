#include <random>
#include <sstream>

#include "doctest.h"
#include "json.hpp"
#include "postkit/prefs.hpp"
#include "test_support.hpp"

using namespace postkit;
using testing::errc_of;

namespace {

ScoredResponse resp(double reward, std::vector<double> lp = {-1.0}) {
  return {"r" + std::to_string(reward), reward, std::move(lp)};
}

PreferencePair pair_of(std::vector<double> chosen, std::vector<double> rejected) {
  PreferencePair p;
  p.prompt = "q";
  p.chosen = {"w", 1.0, std::move(chosen)};
  p.rejected = {"l", 0.0, std::move(rejected)};
  return p;
}

PreferencePair random_pair(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> len(1, 20);
  std::uniform_real_distribution<double> lp(-3.0, 0.0);
  std::vector<double> c(len(rng)), r(len(rng));
  for (auto& x : c) x = lp(rng);
  for (auto& x : r) x = lp(rng);
  return pair_of(c, r);
}

}  // namespace

TEST_CASE("build_pairs picks the best and the worst") {
  const std::vector<ScoredResponse> rs = {resp(0.9), resp(0.2), resp(0.5)};
  const auto p = build_pairs("prompt", rs);
  CHECK(p.chosen_index == 0);
  CHECK(p.rejected_index == 1);
  CHECK(p.prompt == "prompt");
  CHECK(p.chosen.reward == 0.9);

  const std::vector<ScoredResponse> tie = {resp(0.5), resp(0.5)};
  const auto t = build_pairs("p", tie);
  CHECK(t.chosen_index == 0);
  CHECK(t.rejected_index == 1);

  const std::vector<ScoredResponse> tie3 = {resp(0.1), resp(0.7), resp(0.1), resp(0.7)};
  const auto t3 = build_pairs("p", tie3);
  CHECK(t3.chosen_index == 1);
  CHECK(t3.rejected_index == 0);

  const std::vector<ScoredResponse> one = {resp(1.0)};
  CHECK(errc_of([&] { build_pairs("p", one); }) == Errc::kNotEnoughResponses);
  const std::vector<ScoredResponse> nan = {resp(1.0), resp(std::nan(""))};
  CHECK(errc_of([&] { build_pairs("p", nan); }) == Errc::kNonFiniteValue);
}

TEST_CASE("simpo loss at zero margin is ln 2") {
  SimpoParams params;
  params.gamma = 0.0;
  const auto p = pair_of({-1.0, -3.0}, {-2.0, -2.0, -2.0});
  CHECK(std::fabs(simpo_loss(p, params) - std::log(2.0)) <= 1e-12);
  const auto g = simpo_grad(p, params);
  for (double x : g.chosen) CHECK(x == doctest::Approx(-0.5 * params.beta / 2).epsilon(1e-12));
  for (double x : g.rejected) CHECK(x == doctest::Approx(0.5 * params.beta / 3).epsilon(1e-12));
}

TEST_CASE("simpo worked example") {
  const auto p = pair_of({-0.5, -0.5}, {-1.0, -1.0, -1.0, -1.0});
  CHECK(simpo_margin(p, SimpoParams{}) == doctest::Approx(0.5).epsilon(1e-15));
  // -ln sigmoid(0.5) to 30 digits: 0.474076984180106680872997355081
  CHECK(std::fabs(simpo_loss(p, SimpoParams{}) - 0.474076984180106681) <= 1e-12);
}

TEST_CASE("simpo loss shrinks toward zero as the margin grows") {
  double prev = std::numeric_limits<double>::infinity();
  for (double cap = 1.0; cap <= 50.0; cap += 1.0) {
    const auto p = pair_of({-0.1}, {-cap, -cap});
    const double loss = simpo_loss(p, SimpoParams{});
    CHECK(loss < prev);
    CHECK(loss > 0.0);
    prev = loss;
  }
  CHECK(prev < 1e-40);
}

TEST_CASE("softplus and sigmoid are stable at the extremes") {
  CHECK(softplus(-1000.0) == 0.0);
  CHECK(softplus(1000.0) == 1000.0);
  CHECK(sigmoid(-1000.0) == 0.0);
  CHECK(sigmoid(1000.0) == 1.0);
  CHECK(sigmoid(0.0) == 0.5);
  CHECK(softplus(0.0) == doctest::Approx(std::log(2.0)));
}

TEST_CASE("simpo gradients match central finite differences") {
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> beta(0.5, 3.0), gamma(0.0, 1.0);
  constexpr double h = 1e-6;
  for (int trial = 0; trial < 100; ++trial) {
    const auto p = random_pair(rng);
    const SimpoParams params{beta(rng), gamma(rng)};
    const auto g = simpo_grad(p, params);
    auto check = [&](bool chosen, std::size_t j, double analytic) {
      auto plus = p, minus = p;
      (chosen ? plus.chosen : plus.rejected).token_logprobs[j] += h;
      (chosen ? minus.chosen : minus.rejected).token_logprobs[j] -= h;
      const double fd = (simpo_loss(plus, params) - simpo_loss(minus, params)) / (2 * h);
      CHECK(std::fabs(fd - analytic) <= 1e-4 * std::fabs(analytic));
    };
    for (std::size_t j = 0; j < g.chosen.size(); ++j) {
      CHECK(g.chosen[j] <= 0.0);
      CHECK(g.chosen[j] == g.chosen[0]);
      check(true, j, g.chosen[j]);
    }
    for (std::size_t j = 0; j < g.rejected.size(); ++j) {
      CHECK(g.rejected[j] >= 0.0);
      check(false, j, g.rejected[j]);
    }
  }
}

TEST_CASE("simpo loss ignores token order within a response") {
  const auto a = pair_of({-0.25, -1.0, -2.0}, {-3.0, -0.5});
  const auto b = pair_of({-2.0, -0.25, -1.0}, {-0.5, -3.0});
  CHECK(simpo_loss(a, SimpoParams{}) == simpo_loss(b, SimpoParams{}));
}

TEST_CASE("simpo parameter and value errors") {
  const auto p = pair_of({-1.0}, {-1.0});
  CHECK(errc_of([&] { simpo_loss(p, SimpoParams{0.0, 0.5}); }) == Errc::kInvalidArgument);
  CHECK(errc_of([&] { simpo_loss(p, SimpoParams{1.0, -0.5}); }) == Errc::kInvalidArgument);
  CHECK(errc_of([&] {
          simpo_loss(pair_of({-std::numeric_limits<double>::infinity()}, {-1.0}), SimpoParams{});
        }) == Errc::kNonFiniteValue);
  CHECK(errc_of([&] { check_response(resp(1.0, {})); }) == Errc::kInvalidArgument);
  CHECK(errc_of([&] { check_response(resp(1.0, {0.5})); }) == Errc::kInvalidArgument);
}

TEST_CASE("pairs and evaluation over JSONL") {
  std::ostringstream src;
  src << R"({"prompt":"a","responses":[)"
      << R"({"text":"x","reward":0.9,"token_logprobs":[-0.5,-0.5]},)"
      << R"({"text":"y","reward":0.1,"token_logprobs":[-1,-1,-1,-1]},)"
      << R"({"text":"z","reward":0.4,"token_logprobs":[-0.2]}]})"
      << "\n\n"
      << R"({"prompt":"b","responses":[)"
      << R"({"text":"u","reward":0.0,"token_logprobs":[-3]},)"
      << R"({"text":"v","reward":1.0,"token_logprobs":[-0.1]}]})"
      << "\n";
  std::istringstream in(src.str());
  std::ostringstream pairs;
  CHECK(pairs_jsonl(in, pairs) == 2);

  std::istringstream lines(pairs.str());
  std::string first;
  std::getline(lines, first);
  const auto doc = nlohmann::json::parse(first);
  CHECK(doc["chosen"]["text"] == "x");
  CHECK(doc["rejected"]["text"] == "y");
  CHECK(doc["chosen_index"] == 0);
  CHECK(doc["rejected_index"] == 1);

  std::istringstream eval_in(pairs.str());
  const auto stats = simpo_eval_jsonl(eval_in, SimpoParams{});
  CHECK(stats.count == 2);
  const double l1 = 0.474076984180106681;
  const double l2 = softplus(-(2.0 * -0.1 - 2.0 * -3.0 - 0.5));
  CHECK(stats.mean_loss == doctest::Approx((l1 + l2) / 2).epsilon(1e-12));
  CHECK(stats.min_loss == doctest::Approx(l2).epsilon(1e-12));
  CHECK(stats.accuracy == 1.0);

  std::istringstream again(pairs.str());
  CHECK(simpo_eval_jsonl(again, SimpoParams{}, 4).mean_loss == stats.mean_loss);

  std::istringstream bad(R"({"prompt":"a","responses":[{"text":"x","reward":1,"token_logprobs":[-1]}]})");
  std::ostringstream sink;
  CHECK(errc_of([&] { pairs_jsonl(bad, sink); }) == Errc::kNotEnoughResponses);
  std::istringstream junk("{oops\n");
  CHECK(errc_of([&] { pairs_jsonl(junk, sink); }) == Errc::kSyntaxError);
}
