#include "postkit/prefs.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <ostream>

#include "json.hpp"
#include "postkit/error.hpp"
#include "postkit/parallel.hpp"

namespace postkit {

namespace {

using json = nlohmann::json;

double sum_logprobs(const ScoredResponse& r) {
  double s = 0.0;
  for (double v : r.token_logprobs) s += v;
  return s;
}

void check_finite_pair(const PreferencePair& pair) {
  for (const auto* r : {&pair.chosen, &pair.rejected}) {
    if (r->token_logprobs.empty()) {
      throw Error(Errc::kInvalidArgument, "response needs at least one token logprob");
    }
    for (double v : r->token_logprobs) {
      if (!std::isfinite(v)) throw Error(Errc::kNonFiniteValue, "token logprob is not finite");
    }
  }
}

ScoredResponse response_from_json(const json& j, std::size_t line) {
  auto fail = [&](const std::string& why) {
    return Error(Errc::kInvalidArgument, "line " + std::to_string(line) + ": " + why);
  };
  if (!j.is_object() || !j.contains("reward") || !j["reward"].is_number() ||
      !j.contains("token_logprobs") || !j["token_logprobs"].is_array()) {
    throw fail("response needs numeric 'reward' and array 'token_logprobs'");
  }
  ScoredResponse r;
  if (j.contains("text")) {
    if (!j["text"].is_string()) throw fail("response 'text' must be a string");
    r.text = j["text"].get<std::string>();
  }
  r.reward = j["reward"].get<double>();
  for (const auto& v : j["token_logprobs"]) {
    if (!v.is_number()) throw fail("token_logprobs must hold numbers");
    r.token_logprobs.push_back(v.get<double>());
  }
  check_response(r);
  return r;
}

json response_to_json(const ScoredResponse& r) {
  return json{{"text", r.text}, {"reward", r.reward}, {"token_logprobs", r.token_logprobs}};
}

json parse_line(const std::string& line, std::size_t lineno) {
  json j = json::parse(line, nullptr, false);
  if (j.is_discarded() || !j.is_object()) {
    throw Error(Errc::kSyntaxError, "line " + std::to_string(lineno) + " is not a JSON object");
  }
  return j;
}

bool blank(const std::string& s) {
  return s.find_first_not_of(" \t\r\n") == std::string::npos;
}

}  // namespace

double softplus(double x) noexcept {
  return std::max(x, 0.0) + std::log1p(std::exp(-std::fabs(x)));
}

double sigmoid(double x) noexcept {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

void check_response(const ScoredResponse& r) {
  if (!std::isfinite(r.reward)) throw Error(Errc::kNonFiniteValue, "reward is not finite");
  if (r.token_logprobs.empty()) {
    throw Error(Errc::kInvalidArgument, "response needs at least one token logprob");
  }
  for (double v : r.token_logprobs) {
    if (!std::isfinite(v)) throw Error(Errc::kNonFiniteValue, "token logprob is not finite");
    if (v > 0.0) throw Error(Errc::kInvalidArgument, "token logprobs must be <= 0");
  }
}

void check_simpo_params(const SimpoParams& p) {
  if (!(p.beta > 0.0) || !std::isfinite(p.beta)) {
    throw Error(Errc::kInvalidArgument, "beta must be positive");
  }
  if (!(p.gamma >= 0.0) || !std::isfinite(p.gamma)) {
    throw Error(Errc::kInvalidArgument, "gamma must be >= 0");
  }
}

PreferencePair build_pairs(const std::string& prompt, std::span<const ScoredResponse> responses) {
  if (responses.size() < 2) {
    throw Error(Errc::kNotEnoughResponses,
                "need at least 2 responses, got " + std::to_string(responses.size()));
  }
  for (const auto& r : responses) {
    if (!std::isfinite(r.reward)) throw Error(Errc::kNonFiniteValue, "reward is not finite");
  }
  std::size_t best = 0;
  for (std::size_t i = 1; i < responses.size(); ++i) {
    if (responses[i].reward > responses[best].reward) best = i;
  }
  std::size_t worst = best == 0 ? 1 : 0;
  for (std::size_t i = 0; i < responses.size(); ++i) {
    if (i != best && responses[i].reward < responses[worst].reward) worst = i;
  }
  return {prompt, responses[best], responses[worst], best, worst};
}

double simpo_margin(const PreferencePair& pair, const SimpoParams& params) {
  check_simpo_params(params);
  check_finite_pair(pair);
  const double rw = params.beta / static_cast<double>(pair.chosen.token_logprobs.size()) *
                    sum_logprobs(pair.chosen);
  const double rl = params.beta / static_cast<double>(pair.rejected.token_logprobs.size()) *
                    sum_logprobs(pair.rejected);
  const double m = rw - rl - params.gamma;
  if (!std::isfinite(m)) throw Error(Errc::kNonFiniteValue, "margin overflowed");
  return m;
}

double simpo_loss(const PreferencePair& pair, const SimpoParams& params) {
  return softplus(-simpo_margin(pair, params));
}

SimpoGrad simpo_grad(const PreferencePair& pair, const SimpoParams& params) {
  const double s = sigmoid(-simpo_margin(pair, params));
  const double nw = static_cast<double>(pair.chosen.token_logprobs.size());
  const double nl = static_cast<double>(pair.rejected.token_logprobs.size());
  SimpoGrad g;
  g.chosen.assign(pair.chosen.token_logprobs.size(), -s * params.beta / nw);
  g.rejected.assign(pair.rejected.token_logprobs.size(), s * params.beta / nl);
  return g;
}

std::size_t pairs_jsonl(std::istream& in, std::ostream& out) {
  std::string line;
  std::size_t lineno = 0;
  std::size_t written = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (blank(line)) continue;
    const json j = parse_line(line, lineno);
    if (!j.contains("prompt") || !j["prompt"].is_string() || !j.contains("responses") ||
        !j["responses"].is_array()) {
      throw Error(Errc::kInvalidArgument,
                  "line " + std::to_string(lineno) + " needs 'prompt' and 'responses'");
    }
    std::vector<ScoredResponse> responses;
    for (const auto& r : j["responses"]) responses.push_back(response_from_json(r, lineno));
    const auto pair = build_pairs(j["prompt"].get<std::string>(), responses);
    out << json{{"prompt", pair.prompt},
                {"chosen", response_to_json(pair.chosen)},
                {"rejected", response_to_json(pair.rejected)},
                {"chosen_index", pair.chosen_index},
                {"rejected_index", pair.rejected_index}}
               .dump(-1, ' ', false, json::error_handler_t::replace)
        << '\n';
    ++written;
  }
  if (!out) throw Error(Errc::kIoFailure, "failed writing pairs");
  return written;
}

SimpoStats simpo_eval_jsonl(std::istream& in, const SimpoParams& params, unsigned jobs) {
  check_simpo_params(params);
  std::vector<PreferencePair> pairs;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (blank(line)) continue;
    const json j = parse_line(line, lineno);
    if (!j.contains("chosen") || !j.contains("rejected")) {
      throw Error(Errc::kInvalidArgument,
                  "line " + std::to_string(lineno) + " needs 'chosen' and 'rejected'");
    }
    PreferencePair p;
    if (j.contains("prompt") && j["prompt"].is_string()) p.prompt = j["prompt"].get<std::string>();
    p.chosen = response_from_json(j["chosen"], lineno);
    p.rejected = response_from_json(j["rejected"], lineno);
    pairs.push_back(std::move(p));
  }

  std::vector<double> losses(pairs.size()), margins(pairs.size());
  parallel_for(pairs.size(), jobs, [&](std::size_t i) {
    margins[i] = simpo_margin(pairs[i], params);
    losses[i] = softplus(-margins[i]);
  });

  SimpoStats s;
  s.count = pairs.size();
  if (s.count == 0) return s;
  s.min_loss = std::numeric_limits<double>::infinity();
  s.max_loss = -std::numeric_limits<double>::infinity();
  std::size_t correct = 0;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    s.mean_loss += losses[i];
    s.mean_margin += margins[i];
    s.min_loss = std::min(s.min_loss, losses[i]);
    s.max_loss = std::max(s.max_loss, losses[i]);
    if (margins[i] > 0.0) ++correct;
  }
  const double n = static_cast<double>(s.count);
  s.mean_loss /= n;
  s.mean_margin /= n;
  s.accuracy = static_cast<double>(correct) / n;
  return s;
}

std::string simpo_stats_to_json(const SimpoStats& s) {
  return json{{"count", s.count},
              {"mean_loss", s.mean_loss},
              {"min_loss", s.min_loss},
              {"max_loss", s.max_loss},
              {"mean_margin", s.mean_margin},
              {"accuracy", s.accuracy}}
      .dump();
}

}  // namespace postkit
