#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace postkit {

struct Document {
  std::string id;
  std::string text;
  std::optional<std::string> metadata_lang;
};

struct LabeledText {
  std::string label;
  std::string text;
};

// Character 1-, 2- and 3-grams over code points. N-grams made only of
// whitespace are skipped.
std::vector<std::string_view> char_ngrams(std::string_view text);

// Multinomial linear model over hashed character n-grams. A text scores
// mean_g weight[label][bucket(g)] per label; confidence is the softmax of
// those scores.
class LangIdModel {
 public:
  LangIdModel(std::vector<std::string> labels, std::uint32_t buckets);

  // Every weight equal: all labels score the same on any text.
  static LangIdModel uniform(std::vector<std::string> labels, std::uint32_t buckets);

  const std::vector<std::string>& labels() const noexcept { return labels_; }
  std::uint32_t buckets() const noexcept { return buckets_; }
  float weight(std::size_t label, std::uint32_t bucket) const {
    return weights_[label * buckets_ + bucket];
  }
  void set_weight(std::size_t label, std::uint32_t bucket, float w) {
    weights_[label * buckets_ + bucket] = w;
  }
  std::uint32_t bucket_of(std::string_view ngram) const noexcept;

  std::vector<double> scores(std::string_view text) const;

  friend bool operator==(const LangIdModel&, const LangIdModel&) = default;

 private:
  std::vector<std::string> labels_;
  std::uint32_t buckets_;
  std::vector<float> weights_;
};

inline constexpr std::uint32_t kDefaultLangIdBuckets = 1u << 16;

// Additive smoothing with alpha = 1 over per-label n-gram counts. Labels
// come out sorted, so the model is independent of document order.
LangIdModel train_langid(std::span<const LabeledText> corpus,
                         std::uint32_t buckets = kDefaultLangIdBuckets);

struct Prediction {
  std::string label;
  double confidence = 0.0;
};

Prediction predict_lang(const LangIdModel& model, std::string_view text);

// Removes anything between '<' and the next '>'.
std::string strip_html(std::string_view text);

struct FilterOptions {
  std::set<std::string> langs;
  double tau = 0.5;
  // Require metadata_lang (when present) to equal the predicted label.
  bool check_metadata = true;
  // When off, a document is kept iff its metadata_lang is in `langs`.
  bool check_classifier = true;
  // Cleans text before prediction; the retained document carries the result.
  std::function<std::string(std::string_view)> prefilter = strip_html;
  unsigned jobs = 1;
};

enum class DropReason {
  kNone,
  kMalformed,
  kEmpty,
  kNonTargetLanguage,
  kLowConfidence,
  kMetadataMismatch,
};

std::string_view drop_reason_name(DropReason r) noexcept;

struct FilterDecision {
  DropReason reason = DropReason::kNone;
  std::optional<Prediction> prediction;
  std::string text;  // after the prefilter

  bool retained() const noexcept { return reason == DropReason::kNone; }
};

FilterDecision judge_document(const LangIdModel& model, const Document& doc,
                              const FilterOptions& opts);

struct FilterStats {
  std::uint64_t total = 0;
  std::uint64_t retained = 0;
  std::uint64_t malformed = 0;
  std::uint64_t empty = 0;
  std::uint64_t non_target_language = 0;
  std::uint64_t low_confidence = 0;
  std::uint64_t metadata_mismatch = 0;

  void record(DropReason r) noexcept;
  FilterStats& operator+=(const FilterStats& o) noexcept;
  friend bool operator==(const FilterStats&, const FilterStats&) = default;
};

std::string stats_to_json(const FilterStats& stats);

// Retained documents in input order, with prefiltered text.
std::vector<Document> filter_docs(std::span<const Document> docs, const LangIdModel& model,
                                  const FilterOptions& opts, FilterStats& stats);

// Newline-delimited JSON {"id","text","lang"?} in, same format out.
// Malformed lines are counted and skipped.
FilterStats filter_jsonl(std::istream& in, std::ostream& out, const LangIdModel& model,
                         const FilterOptions& opts);

// Reads {"text","lang"} lines as training data.
std::vector<LabeledText> read_labeled_jsonl(std::istream& in);

}  // namespace postkit
