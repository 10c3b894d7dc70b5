#include "postkit/bpe.hpp"

#include <fstream>
#include <map>
#include <sstream>

#include "postkit/error.hpp"
#include "postkit/keyed_random.hpp"
#include "postkit/utf8.hpp"

namespace postkit {

namespace {

constexpr std::string_view kHeader = "#postkit-bpe v1";

std::string pair_key(std::string_view left, std::string_view right) {
  std::string key = std::to_string(left.size());
  key.push_back(':');
  key.append(left);
  key.append(right);
  return key;
}

struct Run {
  std::string_view text;
  bool space;
};

std::vector<Run> split_runs(std::string_view text) {
  std::vector<Run> runs;
  for (const auto& cp : utf8::decode(text)) {
    const bool space = utf8::is_space(cp.value);
    if (!runs.empty() && runs.back().space == space) {
      const auto begin = static_cast<std::size_t>(runs.back().text.data() - text.data());
      runs.back().text = text.substr(begin, cp.offset + cp.length - begin);
    } else {
      runs.push_back({text.substr(cp.offset, cp.length), space});
    }
  }
  return runs;
}

std::vector<std::string> characters(std::string_view word) {
  std::vector<std::string> out;
  for (const auto& cp : utf8::decode(word)) out.emplace_back(word.substr(cp.offset, cp.length));
  return out;
}

void merge_all(std::vector<std::string>& symbols, const SymbolPair& pair) {
  std::vector<std::string> out;
  out.reserve(symbols.size());
  for (std::size_t i = 0; i < symbols.size(); ++i) {
    if (i + 1 < symbols.size() && symbols[i] == pair.first && symbols[i + 1] == pair.second) {
      out.push_back(symbols[i] + symbols[i + 1]);
      ++i;
    } else {
      out.push_back(std::move(symbols[i]));
    }
  }
  symbols = std::move(out);
}

bool has_space(std::string_view s) {
  for (const auto& cp : utf8::decode(s)) {
    if (utf8::is_space(cp.value)) return true;
  }
  return false;
}

}  // namespace

BpeModel::BpeModel(std::set<std::string> alphabet, std::vector<SymbolPair> merges)
    : alphabet_(std::move(alphabet)), merges_(std::move(merges)) {
  std::set<std::string> known = alphabet_;
  for (const auto& a : alphabet_) {
    if (a.empty() || has_space(a)) {
      throw Error(Errc::kInvalidArgument, "alphabet symbols must be non-empty and space-free");
    }
  }
  for (std::size_t r = 0; r < merges_.size(); ++r) {
    const auto& [left, right] = merges_[r];
    if (!known.contains(left) || !known.contains(right)) {
      throw Error(Errc::kInvalidArgument,
                  "merge " + std::to_string(r) + " uses a symbol not derivable from earlier ranks");
    }
    if (!ranks_.emplace(pair_key(left, right), static_cast<std::int64_t>(r)).second) {
      throw Error(Errc::kInvalidArgument, "merge " + std::to_string(r) + " is a duplicate");
    }
    known.insert(left + right);
  }
}

std::int64_t BpeModel::rank_of(std::string_view left, std::string_view right) const {
  const auto it = ranks_.find(pair_key(left, right));
  return it == ranks_.end() ? -1 : it->second;
}

std::vector<std::string_view> split_words(std::string_view text) {
  std::vector<std::string_view> words;
  for (const auto& run : split_runs(text)) {
    if (!run.space) words.push_back(run.text);
  }
  return words;
}

BpeModel learn_bpe(std::string_view corpus, std::size_t target_merges) {
  std::map<std::string_view, std::uint64_t> freq;
  for (auto w : split_words(corpus)) ++freq[w];
  if (freq.empty()) throw Error(Errc::kEmptyCorpus, "BPE corpus has no words");

  std::set<std::string> alphabet;
  std::vector<std::pair<std::vector<std::string>, std::uint64_t>> words;
  for (const auto& [w, n] : freq) {
    auto chars = characters(w);
    alphabet.insert(chars.begin(), chars.end());
    words.emplace_back(std::move(chars), n);
  }

  std::vector<SymbolPair> merges;
  while (merges.size() < target_merges) {
    std::map<SymbolPair, std::uint64_t> counts;
    for (const auto& [symbols, n] : words) {
      for (std::size_t i = 0; i + 1 < symbols.size(); ++i) counts[{symbols[i], symbols[i + 1]}] += n;
    }
    const SymbolPair* best = nullptr;
    std::uint64_t best_count = 0;
    for (const auto& [pair, n] : counts) {
      if (n > best_count) {
        best = &pair;
        best_count = n;
      }
    }
    if (best == nullptr || best_count < 2) break;
    merges.push_back(*best);
    for (auto& [symbols, n] : words) merge_all(symbols, merges.back());
  }
  return BpeModel(std::move(alphabet), std::move(merges));
}

std::vector<std::string> tokenize_word(const BpeModel& model, std::string_view word,
                                       double dropout_p, std::uint64_t seed,
                                       std::uint64_t word_index) {
  if (!(dropout_p >= 0.0 && dropout_p <= 1.0)) {
    throw Error(Errc::kInvalidArgument, "dropout_p must lie in [0, 1]");
  }
  auto symbols = characters(word);
  for (std::uint64_t pass = 0; symbols.size() > 1; ++pass) {
    std::int64_t best_rank = -1;
    std::size_t best_pos = 0;
    for (std::size_t i = 0; i + 1 < symbols.size(); ++i) {
      const std::int64_t r = model.rank_of(symbols[i], symbols[i + 1]);
      if (r < 0 || (best_rank >= 0 && r >= best_rank)) continue;
      if (dropout_p > 0.0 && keyed_uniform(seed, {word_index, pass, i}) < dropout_p) continue;
      best_rank = r;
      best_pos = i;
    }
    if (best_rank < 0) break;
    symbols[best_pos] += symbols[best_pos + 1];
    symbols.erase(symbols.begin() + static_cast<std::ptrdiff_t>(best_pos) + 1);
  }
  return symbols;
}

std::vector<std::string> tokenize_bpe(const BpeModel& model, std::string_view text,
                                      double dropout_p, std::uint64_t seed) {
  std::vector<std::string> tokens;
  std::uint64_t word_index = 0;
  for (const auto& run : split_runs(text)) {
    if (run.space) {
      tokens.emplace_back(run.text);
      continue;
    }
    auto pieces = tokenize_word(model, run.text, dropout_p, seed, word_index++);
    for (auto& p : pieces) tokens.push_back(std::move(p));
  }
  return tokens;
}

std::string bpe_to_text(const BpeModel& model) {
  std::string out(kHeader);
  out += "\nalphabet";
  for (const auto& a : model.alphabet()) out += ' ' + a;
  out += '\n';
  for (std::size_t r = 0; r < model.merges().size(); ++r) {
    const auto& [left, right] = model.merges()[r];
    out += std::to_string(r) + ' ' + left + ' ' + right + '\n';
  }
  return out;
}

BpeModel bpe_from_text(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::string line;
  auto fail = [](const std::string& why) { return Error(Errc::kSyntaxError, "BPE model: " + why); };
  if (!std::getline(in, line) || line != kHeader) throw fail("missing header line");
  if (!std::getline(in, line)) throw fail("missing alphabet line");
  std::istringstream alpha(line);
  std::string word;
  alpha >> word;
  if (word != "alphabet") throw fail("second line must start with 'alphabet'");
  std::set<std::string> alphabet;
  while (alpha >> word) alphabet.insert(word);

  std::vector<SymbolPair> merges;
  std::size_t lineno = 2;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream fields(line);
    std::string rank, left, right, extra;
    if (!(fields >> rank >> left >> right) || (fields >> extra)) {
      throw fail("line " + std::to_string(lineno) + " needs 'rank left right'");
    }
    if (rank != std::to_string(merges.size())) {
      throw fail("line " + std::to_string(lineno) + " has rank " + rank + ", expected " +
                 std::to_string(merges.size()));
    }
    merges.emplace_back(std::move(left), std::move(right));
  }
  return BpeModel(std::move(alphabet), std::move(merges));
}

void save_bpe(const BpeModel& model, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << bpe_to_text(model);
  if (!out) throw Error(Errc::kIoFailure, "cannot write " + path);
}

BpeModel load_bpe(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::kIoFailure, "cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return bpe_from_text(ss.str());
}

}  // namespace postkit
