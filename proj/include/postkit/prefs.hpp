#pragma once

#include <cstddef>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace postkit {

struct ScoredResponse {
  std::string text;
  double reward = 0.0;
  std::vector<double> token_logprobs;
};

struct PreferencePair {
  std::string prompt;
  ScoredResponse chosen;
  ScoredResponse rejected;
  std::size_t chosen_index = 0;
  std::size_t rejected_index = 0;
};

// Not taken from the source training run; these are runnable defaults.
struct SimpoParams {
  double beta = 2.0;
  double gamma = 0.5;
};

void check_response(const ScoredResponse& r);
void check_simpo_params(const SimpoParams& p);

// Chosen: highest reward. Rejected: lowest reward among the others.
// Both ties resolve to the lowest index.
PreferencePair build_pairs(const std::string& prompt, std::span<const ScoredResponse> responses);

// r_w - r_l - gamma, with r = beta / |y| * sum(logprobs).
double simpo_margin(const PreferencePair& pair, const SimpoParams& params);

// -log sigmoid(margin), evaluated without overflow.
double simpo_loss(const PreferencePair& pair, const SimpoParams& params);

struct SimpoGrad {
  std::vector<double> chosen;
  std::vector<double> rejected;
};

SimpoGrad simpo_grad(const PreferencePair& pair, const SimpoParams& params);

double softplus(double x) noexcept;
double sigmoid(double x) noexcept;

// Newline-delimited JSON {prompt, responses:[{text, reward, token_logprobs}]}
// in, {prompt, chosen, rejected, chosen_index, rejected_index} out.
// Returns the number of pairs written.
std::size_t pairs_jsonl(std::istream& in, std::ostream& out);

struct SimpoStats {
  std::size_t count = 0;
  double mean_loss = 0.0;
  double min_loss = 0.0;
  double max_loss = 0.0;
  double mean_margin = 0.0;
  double accuracy = 0.0;  // fraction of pairs with positive margin
};

// Reads pair lines as written by pairs_jsonl.
SimpoStats simpo_eval_jsonl(std::istream& in, const SimpoParams& params, unsigned jobs = 1);
std::string simpo_stats_to_json(const SimpoStats& s);

}  // namespace postkit
