#pragma once

#include <cstdint>
#include <unordered_map>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace postkit {

using SymbolPair = std::pair<std::string, std::string>;

class BpeModel {
 public:
  BpeModel() = default;
  // Validates that ranks are implied by position and that every merged
  // symbol is built from the alphabet or from earlier merges.
  BpeModel(std::set<std::string> alphabet, std::vector<SymbolPair> merges);

  const std::set<std::string>& alphabet() const noexcept { return alphabet_; }
  const std::vector<SymbolPair>& merges() const noexcept { return merges_; }

  // Rank of a merge, or -1.
  std::int64_t rank_of(std::string_view left, std::string_view right) const;

  friend bool operator==(const BpeModel& a, const BpeModel& b) {
    return a.alphabet_ == b.alphabet_ && a.merges_ == b.merges_;
  }

 private:
  std::set<std::string> alphabet_;
  std::vector<SymbolPair> merges_;
  std::unordered_map<std::string, std::int64_t> ranks_;
};

// Splits text into whitespace-delimited words (Unicode whitespace).
std::vector<std::string_view> split_words(std::string_view text);

// Frequency-greedy pair merging. Pair counts include overlapping
// occurrences; ties go to the lexicographically smallest pair. Stops after
// `target_merges` or when no pair occurs at least twice.
BpeModel learn_bpe(std::string_view corpus, std::size_t target_merges);

// Segments a single word. Each pass, every applicable merge occurrence is
// skipped with probability `dropout_p`; the lowest-rank surviving occurrence
// (leftmost on ties) is applied. Segmentation ends when nothing survives.
std::vector<std::string> tokenize_word(const BpeModel& model, std::string_view word,
                                       double dropout_p, std::uint64_t seed,
                                       std::uint64_t word_index);

// Whole-text segmentation. Whitespace runs are emitted as their own tokens,
// so concatenating the result reproduces the input byte for byte.
std::vector<std::string> tokenize_bpe(const BpeModel& model, std::string_view text,
                                      double dropout_p, std::uint64_t seed);

std::string bpe_to_text(const BpeModel& model);
BpeModel bpe_from_text(std::string_view text);
void save_bpe(const BpeModel& model, const std::string& path);
BpeModel load_bpe(const std::string& path);

}  // namespace postkit
